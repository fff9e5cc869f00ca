"""Exploration with a two-sample state identity test.

A new dataset is compared against the stored "value" datasets of its level
by the largest mean discrepancy any value function in G can see. States
that look new get their data stored for value regression; every dataset
is used for policy fitting. Runs inside the same exploration-on-demand
outer loop as VaLoR.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..cdp_core import CdpSpec, exact_values, is_deterministic, policy_value, rollout
from ..function_classes import PolicyClass, ValueClass, check_completeness
from ..oracles import CscDataset, LsDataset, OracleBudget, csc_oracle, empirical_weights, ls_oracle
from ..report import RunReport
from ..rng import RngStreams
from ..valor import BudgetExceeded
from .params import MmdParams


def mmd_distance(G: ValueClass, obs_a, obs_b, num_obs: int | None = None) -> float:
    """sup over g in G of |mean g on obs_a - mean g on obs_b|."""
    obs_a, obs_b = np.asarray(obs_a), np.asarray(obs_b)
    if obs_a.size == 0 or obs_b.size == 0:
        raise ValueError("both datasets must be nonempty")
    X = G.num_obs if num_obs is None else num_obs
    diff = empirical_weights(obs_a, X) - empirical_weights(obs_b, X)
    if G.tabular:
        # extreme points of the box: g = 1 where diff > 0, or where diff < 0
        return float(max(diff[diff > 0].sum(), -diff[diff < 0].sum()))
    return float(np.abs(G.values @ diff).max())


@dataclass
class MmdRecord:
    level: int
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray | None    # None at the last level
    path: tuple
    hidden_state: int               # diagnostics only


@dataclass
class MmdState:
    spec: CdpSpec
    G: ValueClass
    Pi: PolicyClass
    params: MmdParams
    streams: RngStreams
    budget: OracleBudget = field(default_factory=OracleBudget)
    learned: list = None
    val: list = None
    stats: dict = field(default_factory=lambda: {"dfslearn_calls": 0, "pruned": 0})

    def __post_init__(self):
        H = self.spec.horizon
        self.learned = self.learned if self.learned is not None else [[] for _ in range(H)]
        self.val = self.val if self.val is not None else [[] for _ in range(H)]

    def check_invariants(self) -> None:
        for lv, vl in zip(self.learned, self.val):
            ids = {id(r) for r in lv}
            assert all(id(r) in ids for r in vl), "val store must be a subset of the learned store"


def mmd_dfslearn(state: MmdState, path: tuple = (), is_recursive: bool = False) -> None:
    spec, p = state.spec, state.params
    H, K = spec.horizon, spec.num_actions
    h = len(path)
    state.stats["dfslearn_calls"] += 1
    ro = rollout(spec, path, p.n_train, state.streams.next("mmd.train"), ["uniform"])
    state.budget.add("trajectories", p.n_train)
    rec = MmdRecord(h, ro.obs[:, 0], ro.actions[:, 0], ro.rewards[:, 0], ro.final_obs,
                    tuple(path), int(ro.states[0, 0]))
    d = min((mmd_distance(state.G, r.obs, rec.obs, spec.num_obs) for r in state.val[h]), default=np.inf)
    if d <= 2 * p.tau and is_recursive:
        state.stats["pruned"] += 1
        return
    if d > 2 * p.tau:
        state.val[h].append(rec)
    state.learned[h].append(rec)
    if len(state.learned[h]) > p.T_max:
        raise BudgetExceeded(f"level {h} holds {len(state.learned[h])} datasets > T_max = {p.T_max}")
    if h + 1 < H:
        for a in range(K):
            mmd_dfslearn(state, path + (a,), is_recursive=True)


def _targets(rec: MmdRecord, g_next: np.ndarray | None) -> np.ndarray:
    if rec.next_obs is None or g_next is None:
        return rec.rewards
    return rec.rewards + g_next[rec.next_obs]


def mmd_polvalfun(state: MmdState) -> tuple[np.ndarray, float, list]:
    """Backward CSC then weighted LS per level; returns (policy, V_hat, g_hats)."""
    spec = state.spec
    H, K = spec.horizon, spec.num_actions
    policy = np.zeros(spec.num_obs, dtype=np.int64)
    g_next = None
    g_hats = [None] * H
    for h in range(H - 1, -1, -1):
        if not state.learned[h] or not state.val[h]:
            raise RuntimeError(f"empty store at level {h}")
        parts = [CscDataset.importance_weighted(r.obs, r.actions, _targets(r, g_next), K, 1.0 / len(r.obs))
                 for r in state.learned[h]]
        pooled = CscDataset(np.concatenate([d.obs for d in parts]), np.vstack([d.costs for d in parts]))
        obs_h = spec.level_obs[h]
        policy[obs_h] = csc_oracle(state.Pi, pooled, 0.0, state.budget).table[obs_h]

        obs, tgt, wts = [], [], []
        for r in state.val[h]:
            obs.append(r.obs)
            tgt.append(_targets(r, g_next))
            wts.append(K * (policy[r.obs] == r.actions) / len(r.obs))
        fit = ls_oracle(state.G, LsDataset(np.concatenate(obs), np.concatenate(tgt), np.concatenate(wts)),
                        0.0, state.budget)
        g_hats[h] = np.asarray(fit.table, dtype=float)
        g_next = g_hats[h]
    root = state.val[0]
    if len(root) != 1:
        raise RuntimeError(f"expected one level-0 value dataset, found {len(root)}")
    v_hat = float(g_hats[0][root[0].obs].mean())
    return policy, v_hat, g_hats


def mmd_metaalg(spec: CdpSpec, G: ValueClass, Pi: PolicyClass, params: MmdParams, seed: int = 0,
                check_assumptions: bool = True) -> RunReport:
    """Two-sample algorithm inside the exploration-on-demand loop."""
    if not is_deterministic(spec):
        raise ValueError("the two-sample algorithm requires deterministic hidden-state dynamics")
    if check_assumptions and not (G.tabular or Pi.tabular):
        rep = check_completeness(spec, G, Pi, n_suffix_samples=0)
        if rep.policy_value_complete is not True:
            warnings.warn("classes are not policy-value complete; guarantees do not apply")
    t0 = time.perf_counter()
    state = MmdState(spec, G, Pi, params, RngStreams(seed))
    report = RunReport("mmd", seed=seed)
    report.v_star = exact_values(spec).v_star
    H = spec.horizon
    try:
        mmd_dfslearn(state, ())
        for k in range(1, params.M * H + 1):
            policy, v_hat, _ = mmd_polvalfun(state)
            batch = rollout(spec, (), params.n_eval, state.streams.next("mmd.eval"), [policy] * H)
            state.budget.add("trajectories", params.n_eval)
            v_pi = float(batch.returns.mean())
            report.metrics.append({"k": k, "v_hat": v_hat, "v_hat_pi": v_pi,
                                   **{f"learned_{h}": len(x) for h, x in enumerate(state.learned)},
                                   **{f"val_{h}": len(x) for h, x in enumerate(state.val)},
                                   **state.budget.to_dict()})
            report.policy, report.estimated_value, report.estimated_policy_value = policy.tolist(), v_hat, v_pi
            report.v_policy = policy_value(spec, policy)
            report.iterations = k
            if v_hat <= v_pi + params.eps / 2:
                report.returned = True
                break
            for h in range(1, H):
                for t in range(params.n_exp):
                    mmd_dfslearn(state, tuple(int(a) for a in batch.actions[t, :h]))
    except BudgetExceeded as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    state.check_invariants()
    report.budget = state.budget.to_dict()
    report.store_sizes = [len(x) for x in state.learned]
    report.diagnostics = {**state.stats, "T_max": params.T_max,
                          "val_sizes": [len(x) for x in state.val],
                          "val_states": [len({r.hidden_state for r in x}) for x in state.val]}
    report.wall_time = time.perf_counter() - t0
    return report
