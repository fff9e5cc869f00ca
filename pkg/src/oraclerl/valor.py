"""VaLoR: exploration with learned local values.

``metaalg`` runs the outer exploration-on-demand loop around ``dfslearn``
(depth-first learning of local values with an LP-based state identity
test) and one of two policy-fitting routines.

Levels are 0-based here. A record at level h holds samples
(x_h, a_h, r_h) drawn with uniform a_h from one path, the local value
estimate V and the successor values {V_a}.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cdp_core import CdpSpec, exact_values, is_deterministic, policy_value, rollout
from .function_classes import PolicyClass, ValueClass, check_realizability
from .oracles import (CscDataset, Infeasible, LpProblem, MultiCscProblem, OracleBudget,
                      csc_oracle, empirical_weights, lp_oracle, lp_oracle_relaxed,
                      multi_csc_oracle)
from .report import RunReport
from .rng import RngStreams

MAX_COUNT = 2 ** 63 - 1


class BudgetExceeded(RuntimeError):
    """More than T_max records were stored at some level."""


class PolicyInfeasible(RuntimeError):
    """The constrained policy program had no feasible policy."""


@dataclass
class ValorParams:
    eps: float
    delta: float
    M: int
    K: int
    H: int
    n_test: int
    n_train: int
    n_exp: int
    n_eval: int
    eps_stat: float
    eps_sub: float
    eps_feas: float
    T_max: int
    mode: str = "practical"

    @property
    def phi_unit(self) -> float:
        return 6 * self.eps_stat + 2 * self.eps_sub + self.eps_feas

    def phi(self, level: int) -> float:
        """Tolerance for records at 0-based ``level`` (zero past the last level)."""
        return max(self.H - level, 0) * self.phi_unit

    @property
    def consensus_slack(self) -> float:
        return 4 * self.eps_stat + 2 * self.eps_feas

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ceil_count(x: float, name: str) -> int:
    if not math.isfinite(x) or x > MAX_COUNT:
        raise OverflowError(f"{name} = {x:.3g} does not fit a 64-bit count; use practical mode")
    return math.ceil(x)


def default_params(eps: float, delta: float, M: int, K: int, H: int, n_G: int, n_Pi: int,
                   variant: str = "unconstrained") -> ValorParams:
    """Theoretical parameters.

    The unconstrained variant uses eps/(2^6 7 H^2 T_max) for all slacks;
    the constrained variant uses eps/(2^10 H^2).
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    n_exp = _ceil_count(8 * math.log(4 * M * H / delta) / eps, "n_exp")
    n_eval = _ceil_count(32 * math.log(8 * M * H / delta) / eps ** 2, "n_eval")
    T_max = M * H * n_exp + M
    if variant == "constrained":
        e = eps / (2 ** 10 * H ** 2)
    elif variant == "unconstrained":
        e = eps / (2 ** 6 * 7 * H ** 2 * T_max)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    n_test = _ceil_count(math.log(12 * K * H * T_max * n_G / delta) / (2 * e ** 2), "n_test")
    n_train = _ceil_count(16 * K * math.log(12 * H * T_max * n_G * n_Pi / delta) / e ** 2, "n_train")
    return ValorParams(eps, delta, M, K, H, n_test, n_train, n_exp, n_eval, e, e, e, T_max, "theoretical")


def practical_params(eps: float, delta: float, M: int, K: int, H: int, *, n_test: int = 2000,
                     n_train: int = 2000, n_exp: int = 20, n_eval: int = 3000,
                     eps_stat: float = 0.01, eps_sub: float = 0.0, eps_feas: float = 0.0) -> ValorParams:
    """User-chosen counts and slacks; phi and T_max follow the same formulas."""
    return ValorParams(eps, delta, M, K, H, n_test, n_train, n_exp, n_eval, eps_stat, eps_sub,
                       eps_feas, M * H * n_exp + M, "practical")


# ---------------------------------------------------------------------------
# state


@dataclass
class DatasetRecord:
    level: int
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    V: float
    succ_values: np.ndarray
    path: tuple
    hidden_state: int     # diagnostics only; never read by the algorithm
    obs_freq: np.ndarray = field(repr=False, default=None)


@dataclass
class ValorState:
    spec: CdpSpec
    G: ValueClass
    Pi: PolicyClass
    params: ValorParams
    streams: RngStreams
    budget: OracleBudget = field(default_factory=OracleBudget)
    records: list = None
    iteration: int = 0
    stats: dict = field(default_factory=lambda: {
        "dfslearn_calls": 0, "recursive_calls": 0, "consensus": 0,
        "infeasible_tests": 0, "recursions_into_learned": 0})

    def __post_init__(self):
        if self.records is None:
            self.records = [[] for _ in range(self.spec.horizon)]

    def store_sizes(self) -> list[int]:
        return [len(r) for r in self.records]

    def learned_states(self, level: int) -> set:
        return {r.hidden_state for r in self.records[level]}


def v_d(obs, actions, rewards, policy: np.ndarray, succ_values, num_actions: int) -> float:
    """Empirical mean of K 1{pi(x) = a} (r + V_a)."""
    obs = np.asarray(obs)
    actions = np.asarray(actions)
    hit = policy[obs] == actions
    y = np.asarray(rewards) + np.asarray(succ_values)[actions]
    return float(np.mean(num_actions * hit * y))


def _record_csc(rec: DatasetRecord, K: int, scale: float = 1.0) -> CscDataset:
    y = rec.rewards + rec.succ_values[rec.actions]
    return CscDataset.importance_weighted(rec.obs, rec.actions, y, K, scale)


# ---------------------------------------------------------------------------
# dfslearn


def _identity_values(state: ValorState, level: int, obs_next: np.ndarray) -> tuple[float, float, bool]:
    """Optimistic and pessimistic values of a successor sample (level ``level``)."""
    p = state.params
    X = state.spec.num_obs
    w = empirical_weights(obs_next, X)
    recs = state.records[level]
    if recs:
        A = np.stack([r.obs_freq for r in recs])
        V = np.array([r.V for r in recs])
    else:
        A, V = np.zeros((0, X)), np.zeros(0)
    phi = p.phi(level)
    problems = [LpProblem(w, A, V - phi, V + phi, maximize=mx, eps_sub=p.eps_sub, eps_feas=p.eps_feas)
                for mx in (True, False)]
    res = [lp_oracle(state.G, prob, state.budget) for prob in problems]
    infeasible = any(isinstance(r, Infeasible) for r in res)
    if infeasible:
        res = [lp_oracle_relaxed(state.G, prob, state.budget)[0] for prob in problems]
    return float(w @ res[0].table), float(w @ res[1].table), infeasible


def dfslearn(state: ValorState, path: tuple = (), recursive: bool = False) -> float:
    """Learn the local value of the state reached by ``path`` and return it."""
    spec, p = state.spec, state.params
    H, K = spec.horizon, spec.num_actions
    h = len(path)
    if h > H - 1:
        raise ValueError("path too long")
    state.stats["dfslearn_calls"] += 1
    if recursive:
        state.stats["recursive_calls"] += 1
    succ = np.zeros(K)
    for a in range(K):
        if h == H - 1:
            continue                       # G_{H+1} = {0}
        child = path + (a,)
        ro = rollout(spec, child, p.n_test, state.streams.next("valor.test"), [])
        state.budget.add("trajectories", p.n_test)
        v_opt, v_pes, infeasible = _identity_values(state, h + 1, ro.final_obs)
        if infeasible:
            state.stats["infeasible_tests"] += 1
        if infeasible or abs(v_opt - v_pes) <= 2 * p.phi(h + 1) + p.consensus_slack:
            state.stats["consensus"] += 1
            succ[a] = 0.5 * (v_opt + v_pes)
        else:
            if int(ro.final_states[0]) in state.learned_states(h + 1):
                state.stats["recursions_into_learned"] += 1
            succ[a] = dfslearn(state, child, recursive=True)

    ro = rollout(spec, path, p.n_train, state.streams.next("valor.train"), ["uniform"])
    state.budget.add("trajectories", p.n_train)
    obs, acts, rews = ro.obs[:, 0], ro.actions[:, 0], ro.rewards[:, 0]
    rec = DatasetRecord(h, obs, acts, rews, 0.0, succ, tuple(path), int(ro.states[0, 0]),
                        empirical_weights(obs, spec.num_obs))
    choice = csc_oracle(state.Pi, _record_csc(rec, K), p.eps_sub, state.budget)
    rec.V = v_d(obs, acts, rews, choice.table, succ, K)
    state.records[h].append(rec)
    if len(state.records[h]) > p.T_max:
        raise BudgetExceeded(f"level {h} holds {len(state.records[h])} records > T_max = {p.T_max}")
    return rec.V


# ---------------------------------------------------------------------------
# policy fitting


def _root_value(state: ValorState) -> float:
    if len(state.records[0]) != 1:
        raise RuntimeError(f"expected exactly one level-0 record, found {len(state.records[0])}")
    return state.records[0][0].V


def _first_policy(Pi) -> np.ndarray:
    return np.zeros(Pi.num_obs, dtype=np.int64) if Pi.tabular else Pi.actions[0]


def polvalfun_unconstrained(state: ValorState) -> tuple[np.ndarray, float]:
    """Per level, the policy maximising the summed V_D over stored records."""
    spec = state.spec
    K = spec.num_actions
    policy = np.zeros(spec.num_obs, dtype=np.int64)
    for h in range(spec.horizon):
        recs = state.records[h]
        if not recs:
            # empty objective: every policy is optimal, take the class's first
            policy[spec.level_obs[h]] = _first_policy(state.Pi)[spec.level_obs[h]]
            continue
        parts = [_record_csc(r, K, scale=1.0 / len(r.obs)) for r in recs]
        pooled = CscDataset(np.concatenate([d.obs for d in parts]), np.vstack([d.costs for d in parts]))
        choice = csc_oracle(state.Pi, pooled, state.params.eps_sub, state.budget)
        obs = spec.level_obs[h]
        policy[obs] = choice.table[obs]
    return policy, _root_value(state)


def polvalfun_constrained(state: ValorState) -> tuple[np.ndarray, float]:
    """Per level, a policy that is near-optimal on every stored record."""
    spec, p = state.spec, state.params
    K = spec.num_actions
    policy = np.zeros(spec.num_obs, dtype=np.int64)
    for h in range(spec.horizon):
        recs = state.records[h]
        if not recs:
            policy[spec.level_obs[h]] = _first_policy(state.Pi)[spec.level_obs[h]]
            continue    # no constraints at this level
        # E_D[K 1{pi=a}(r + V_a)] >= V - 2 phi_h + 4 eps_stat + eps_sub, negated into cost form
        lower = np.array([r.V for r in recs]) - 2 * p.phi(h) + 4 * p.eps_stat + p.eps_sub
        prob = MultiCscProblem([_record_csc(r, K) for r in recs], -lower, p.eps_feas)
        choice = multi_csc_oracle(state.Pi, prob, state.budget)
        if isinstance(choice, Infeasible):
            raise PolicyInfeasible(f"level {h}: no policy meets {len(recs)} record thresholds "
                                   f"(closest gap {choice.min_violation:.4g})")
        obs = spec.level_obs[h]
        policy[obs] = choice.table[obs]
    return policy, _root_value(state)


POLVAL = {"unconstrained": polvalfun_unconstrained, "constrained": polvalfun_constrained}


# ---------------------------------------------------------------------------
# outer loop


def metaalg(spec: CdpSpec, G: ValueClass, Pi: PolicyClass, params: ValorParams,
            variant: str = "unconstrained", seed: int = 0, check_assumptions: bool = True) -> RunReport:
    """Exploration on demand around dfslearn; returns a :class:`RunReport`."""
    if not is_deterministic(spec):
        raise ValueError("VaLoR requires deterministic hidden-state dynamics")
    if check_assumptions:
        rep = check_realizability(spec, G, Pi)
        if not (rep.policy_realizable and rep.value_realizable):
            warnings.warn("classes are not realizable on this spec; guarantees do not apply")
    polval = POLVAL[variant]
    t0 = time.perf_counter()
    state = ValorState(spec, G, Pi, params, RngStreams(seed))
    report = RunReport(f"valor-{variant}", seed=seed)
    ev = exact_values(spec)
    report.v_star = ev.v_star
    H = spec.horizon
    try:
        dfslearn(state, ())
        for k in range(1, params.M * H + 1):
            state.iteration = k
            policy, v_hat = polval(state)
            batch = rollout(spec, (), params.n_eval, state.streams.next("valor.eval"), [policy] * H)
            state.budget.add("trajectories", params.n_eval)
            v_pi = float(batch.returns.mean())
            report.metrics.append({"k": k, "v_hat": v_hat, "v_hat_pi": v_pi,
                                   **{f"store_{h}": n for h, n in enumerate(state.store_sizes())},
                                   **state.budget.to_dict()})
            report.policy, report.estimated_value, report.estimated_policy_value = policy.tolist(), v_hat, v_pi
            report.v_policy = policy_value(spec, policy)
            report.iterations = k
            if v_hat <= v_pi + params.eps / 2:
                report.returned = True
                break
            for h in range(1, H):
                for t in range(params.n_exp):
                    dfslearn(state, tuple(int(a) for a in batch.actions[t, :h]))
    except (BudgetExceeded, PolicyInfeasible) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    report.budget = state.budget.to_dict()
    report.store_sizes = state.store_sizes()
    report.diagnostics = {**state.stats, "T_max": params.T_max,
                          "duplicate_states": _duplicates(state)}
    report.wall_time = time.perf_counter() - t0
    return report


def _duplicates(state: ValorState) -> int:
    """Records whose hidden state already had a record at the same level."""
    return sum(len(r) - len({x.hidden_state for x in r}) for r in state.records)
