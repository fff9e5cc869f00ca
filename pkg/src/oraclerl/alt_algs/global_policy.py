"""Global policy algorithm.

No datasets are kept between calls. The algorithm maintains one
nonstationary policy, the learned paths and the pruned paths per level. A
path is pruned when a one-constraint LP bounds its optimal value by what
the current policy already collects from some learned path, checked with
Monte-Carlo roll-outs. Whenever the policy at a level changes, every
pruned path of that level is re-tested.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..cdp_core import (CdpSpec, exact_values, is_deterministic, policy_state_values, policy_value,
                        rollout, state_after_path)
from ..function_classes import PolicyClass, ValueClass
from ..oracles import (CscDataset, Infeasible, LpProblem, MultiCscProblem, OracleBudget, average_cost,
                       csc_oracle, empirical_weights, lp_oracle, multi_csc_oracle)
from ..report import RunReport
from ..rng import RngStreams
from ..valor import BudgetExceeded, PolicyInfeasible
from .params import GlobalParams


@dataclass
class GlobalState:
    spec: CdpSpec
    G: ValueClass
    Pi: PolicyClass
    params: GlobalParams
    streams: RngStreams
    budget: OracleBudget = field(default_factory=OracleBudget)
    policy: np.ndarray = None
    learned: list = None
    pruned: list = None
    ever_pruned: list = None
    v_hat: dict = field(default_factory=dict)
    debug: bool = False
    stats: dict = field(default_factory=lambda: {
        "dfslearn_calls": 0, "test_calls": 0, "rechecks_failed": 0, "train_sets": 0,
        "test_sets": 0, "deviation_violations": 0})

    def __post_init__(self):
        H = self.spec.horizon
        if self.policy is None:
            self.policy = (np.zeros(self.spec.num_obs, dtype=np.int64) if self.Pi.tabular
                           else self.Pi.actions[0].copy())
        self.learned = [[] for _ in range(H)]
        self.pruned = [[] for _ in range(H)]
        self.ever_pruned = [[] for _ in range(H)]

    def check_invariants(self) -> None:
        for lv, pr in zip(self.learned, self.pruned):
            assert not set(lv) & set(pr), "a path is both learned and pruned"


def _returns(state: GlobalState, path: tuple, first, n: int, site: str):
    """Samples (x_h, a_h, sum of rewards from h on) under the current policy."""
    spec = state.spec
    h = len(path)
    controls = [first] + [state.policy] * (spec.horizon - h - 1)
    ro = rollout(spec, path, n, state.streams.next(site), controls)
    state.budget.add("trajectories", n)
    return ro.obs[:, 0], ro.actions[:, 0], ro.rewards.sum(axis=1)


def _check_deviation(state: GlobalState, path: tuple, rbar: np.ndarray) -> None:
    spec = state.spec
    s = state_after_path(spec, path)
    v = policy_state_values(spec, state.policy)[s]
    if abs(float(rbar.mean()) - v) > state.params.tau_val:
        state.stats["deviation_violations"] += 1


def global_test_learned(state: GlobalState, path: tuple, h: int) -> bool:
    p = state.params
    spec = state.spec
    state.stats["test_calls"] += 1
    if state.stats["test_calls"] > p.T_max:
        raise BudgetExceeded(f"more than T_max = {p.T_max} identity tests")
    x, _, rbar = _returns(state, path, state.policy, p.n_test, "global.test")
    state.stats["test_sets"] += 1
    if state.debug:
        _check_deviation(state, path, rbar)
    w = empirical_weights(x, spec.num_obs)
    r_mean = float(rbar.mean())
    for q in state.learned[h]:
        xq, _, rq = _returns(state, q, state.policy, p.n_test, "global.test_q")
        state.stats["test_sets"] += 1
        wq = empirical_weights(xq, spec.num_obs)
        rq_mean = float(rq.mean())
        prob = LpProblem(w, wq, -np.inf, rq_mean + p.phi(h) + 2 * p.tau_val, maximize=True)
        choice = lp_oracle(state.G, prob, state.budget)
        if isinstance(choice, Infeasible):
            continue
        v_opt = float(w @ choice.table)
        if v_opt <= rq_mean + p.phi(h) + 4 * p.tau_val and r_mean >= rq_mean - 2 * p.tau_val:
            return True
    return False


def _fit_level(state: GlobalState, h: int) -> None:
    """Refresh V_hat(q) for every learned path and refit the level-h policy."""
    p = state.params
    spec = state.spec
    K = spec.num_actions
    datasets, lower = [], []
    for q in state.learned[h]:
        x, a, rbar = _returns(state, q, "uniform", p.n_train, "global.train")
        state.stats["train_sets"] += 1
        d = CscDataset.importance_weighted(x, a, rbar, K)
        best = csc_oracle(state.Pi, d, 0.0, state.budget)
        state.v_hat[q] = -average_cost(np.asarray(best.table), d)
        datasets.append(d)
        lower.append(state.v_hat[q] - 2 * p.tau_pol)
    prob = MultiCscProblem(datasets, -np.asarray(lower), 0.0)
    choice = multi_csc_oracle(state.Pi, prob, state.budget)
    if isinstance(choice, Infeasible):
        raise PolicyInfeasible(f"level {h}: no policy meets {len(datasets)} thresholds "
                               f"(closest gap {choice.min_violation:.4g})")
    obs = spec.level_obs[h]
    state.policy[obs] = np.asarray(choice.table)[obs]


def global_dfslearn(state: GlobalState, path: tuple = (), from_recheck: bool = False) -> None:
    spec = state.spec
    h = len(path)
    state.stats["dfslearn_calls"] += 1
    if not from_recheck and global_test_learned(state, path, h):
        state.pruned[h].append(path)
        state.ever_pruned[h].append(path)
        return
    if h + 1 < spec.horizon:
        for a in range(spec.num_actions):
            global_dfslearn(state, path + (a,))
    state.learned[h].append(path)
    _fit_level(state, h)
    for q in list(state.pruned[h]):
        if q in state.pruned[h] and not global_test_learned(state, q, h):
            state.stats["rechecks_failed"] += 1
            state.pruned[h].remove(q)
            global_dfslearn(state, q, from_recheck=True)


def trajectory_bound(params: GlobalParams) -> int:
    """(1 + M) T_max n_test + M^2 H n_train."""
    M, H = params.M, params.H
    return (1 + M) * params.T_max * params.n_test + M * M * H * params.n_train


def global_policy_run(spec: CdpSpec, G: ValueClass, Pi: PolicyClass, params: GlobalParams, seed: int = 0,
                      debug: bool = False) -> RunReport:
    if not is_deterministic(spec):
        raise ValueError("the global policy algorithm requires deterministic hidden-state dynamics")
    t0 = time.perf_counter()
    state = GlobalState(spec, G, Pi, params, RngStreams(seed), debug=debug)
    report = RunReport("global-policy", seed=seed)
    report.v_star = exact_values(spec).v_star
    try:
        global_dfslearn(state, ())
        report.returned = True
    except (BudgetExceeded, PolicyInfeasible) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    state.check_invariants()
    report.policy = state.policy.tolist()
    report.v_policy = policy_value(spec, state.policy)
    report.estimated_value = state.v_hat.get(())
    report.iterations = 1
    report.budget = state.budget.to_dict()
    report.store_sizes = [len(x) for x in state.learned]
    report.diagnostics = {**state.stats, "T_max": params.T_max,
                          "pruned_sizes": [len(x) for x in state.pruned],
                          "ever_pruned": [len(x) for x in state.ever_pruned],
                          "learned_states": [len({state_after_path(spec, q) for q in x}) for x in state.learned],
                          "trajectory_bound": trajectory_bound(params)}
    report.wall_time = time.perf_counter() - t0
    return report
