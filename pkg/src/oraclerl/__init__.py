"""Oracle-efficient PAC reinforcement learning for contextual decision processes."""
from .cdp_core import CdpSpec, exact_values, policy_value, rollout
from .function_classes import (ExplicitPolicyClass, ExplicitValueClass, TabularPolicyClass, TabularValueClass,
                               close_classes, synthesize_classes)
from .report import RunReport
from .valor import metaalg, practical_params

__all__ = [
    "CdpSpec", "exact_values", "policy_value", "rollout", "ExplicitPolicyClass", "ExplicitValueClass",
    "TabularPolicyClass", "TabularValueClass", "close_classes", "synthesize_classes", "RunReport",
    "metaalg", "practical_params",
]
__version__ = "0.1.0"
