"""Alternatives to local values: a two-sample identity test and a global policy."""
from .global_policy import GlobalState, global_dfslearn, global_policy_run, global_test_learned, trajectory_bound
from .mmd import MmdRecord, MmdState, mmd_dfslearn, mmd_distance, mmd_metaalg, mmd_polvalfun
from .params import (GlobalParams, MmdParams, global_params, global_practical_params, mmd_params,
                     mmd_practical_params)

__all__ = [
    "GlobalParams", "GlobalState", "MmdParams", "MmdRecord", "MmdState", "global_dfslearn",
    "global_params", "global_policy_run", "global_practical_params", "global_test_learned",
    "mmd_dfslearn", "mmd_distance", "mmd_metaalg", "mmd_params", "mmd_polvalfun",
    "mmd_practical_params", "trajectory_bound",
]
