"""Per-run reports shared by all algorithms."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class RunReport:
    algorithm: str
    seed: int | None = None
    returned: bool = False           # False on the algorithm's own failure exit
    policy: list | None = None
    v_star: float | None = None
    v_policy: float | None = None    # exact V of the returned policy
    estimated_value: float | None = None
    estimated_policy_value: float | None = None
    iterations: int = 0
    budget: dict = field(default_factory=dict)
    store_sizes: list = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)

    @property
    def exact_suboptimality(self) -> float | None:
        if self.v_star is None or self.v_policy is None:
            return None
        return self.v_star - self.v_policy

    @property
    def estimated_suboptimality(self) -> float | None:
        if self.estimated_value is None or self.estimated_policy_value is None:
            return None
        return self.estimated_value - self.estimated_policy_value

    def succeeded(self, eps: float) -> bool:
        """PAC success: a policy was returned and it is eps-optimal."""
        sub = self.exact_suboptimality
        return self.returned and self.error is None and sub is not None and sub <= eps + 1e-12

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exact_suboptimality"] = self.exact_suboptimality
        d["estimated_suboptimality"] = self.estimated_suboptimality
        return _plain(d)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj
