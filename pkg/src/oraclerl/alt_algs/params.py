"""Parameter bundles for the two-sample and global policy algorithms."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..valor import MAX_COUNT


def _count(x: float, name: str) -> int:
    if not math.isfinite(x) or x > MAX_COUNT:
        raise OverflowError(f"{name} = {x:.3g} does not fit a 64-bit count; use practical mode")
    return math.ceil(x)


@dataclass
class MmdParams:
    eps: float
    delta: float
    M: int
    K: int
    H: int
    tau: float        # two-sample test resolution
    tau_V: float
    tau_L: float
    n_train: int
    n_exp: int
    n_eval: int
    T_max: int
    mode: str = "practical"

    def to_dict(self) -> dict:
        return asdict(self)


def mmd_params(eps: float, delta: float, M: int, K: int, H: int, n_G: int, n_Pi: int) -> MmdParams:
    """Theoretical instantiation for the two-sample algorithm."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    n_exp = _count(8 / eps * math.log(4 * M * H / delta), "n_exp")
    n_eval = _count(32 / eps ** 2 * math.log(8 * M * H / delta), "n_eval")
    T_max = M * (K + 1) * (1 + H * n_exp)
    tau = eps / (2 ** 6 * 3 * H ** 2)
    tau_V = eps ** 2 / (2 ** 8 * 3 ** 4 * M ** 2 * H ** 4)
    tau_L = eps ** 2 / (2 ** 7 * 3 ** 2 * H ** 4 * T_max)
    log_term = math.log(12 * H * T_max * n_G ** 2 * n_Pi / delta)
    n_train = _count(16 * K * (2 / tau_L ** 2 + 1 / tau_V ** 2) * log_term, "n_train")
    return MmdParams(eps, delta, M, K, H, tau, tau_V, tau_L, n_train, n_exp, n_eval, T_max, "theoretical")


def mmd_practical_params(eps: float, delta: float, M: int, K: int, H: int, *, tau: float = 0.025,
                         n_train: int = 2000, n_exp: int = 20, n_eval: int = 3000) -> MmdParams:
    """User-chosen counts and test resolution; T_max keeps its formula."""
    T_max = M * (K + 1) * (1 + H * n_exp)
    return MmdParams(eps, delta, M, K, H, tau, float("nan"), float("nan"), n_train, n_exp, n_eval,
                     T_max, "practical")


@dataclass
class GlobalParams:
    eps: float
    delta: float
    M: int
    K: int
    H: int
    tau_pol: float
    tau_val: float
    phi_unit: float   # phi(h) = (H - h) * phi_unit with 0-based h
    n_test: int
    n_train: int
    T_max: int
    mode: str = "practical"

    def phi(self, level: int) -> float:
        return max(self.H - level, 0) * self.phi_unit

    def to_dict(self) -> dict:
        return asdict(self)


def global_params(eps: float, delta: float, M: int, K: int, H: int, n_G: int, n_Pi: int) -> GlobalParams:
    """Theoretical instantiation for the global policy algorithm.

    ``n_G`` and ``n_Pi`` are class sizes; pass the size of a finite cover
    for tabular classes.
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    tau_pol = tau_val = eps / (6 * H)
    T_max = 3 * M ** 2 * H * K
    log_term = math.log(16 * T_max * M * n_Pi * n_G / delta)
    n_test = _count(log_term / (2 * tau_val ** 2), "n_test")
    n_train = _count(16 * K * log_term / tau_pol ** 2, "n_train")
    return GlobalParams(eps, delta, M, K, H, tau_pol, tau_val, 8 * tau_val + 3 * tau_pol,
                        n_test, n_train, T_max, "theoretical")


def global_practical_params(eps: float, delta: float, M: int, K: int, H: int, *,
                            tau_pol: float = 0.02, tau_val: float = 0.02, phi_unit: float | None = None,
                            n_test: int = 2000, n_train: int = 2000) -> GlobalParams:
    unit = 8 * tau_val + 3 * tau_pol if phi_unit is None else phi_unit
    return GlobalParams(eps, delta, M, K, H, tau_pol, tau_val, unit, n_test, n_train,
                        3 * M ** 2 * H * K, "practical")
