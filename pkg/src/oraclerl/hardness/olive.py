"""OLIVE by enumeration.

Each round solves

    max_{g, pi} E_{D_0}[g(x)]  s.t.  |E_{D_i}[K 1{a = pi(x)} (g(x) - r - g(x'))]| <= phi  for all i

by looping over the policy class. For an explicit value class the inner
problem is a scan over G; for the tabular box [0, 1]^X it is a linear
program. There is no oracle-efficient way to do this in general, which is
why the search is exhaustive.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from ..cdp_core import CdpSpec, exact_values, policy_value, rollout
from ..function_classes import ExplicitValueClass, PolicyClass, TabularValueClass, ValueClass
from ..oracles import FEAS_TOL, Infeasible, LpProblem, OracleBudget, empirical_weights, lp_oracle
from ..report import RunReport
from ..rng import as_generator


@dataclass
class ConstraintData:
    """Weighted (x, a, r, x') rows from one roll-in; ``next_obs`` is -1 past the end."""

    level: int
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.next_obs = np.asarray(self.next_obs, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.obs.size
        if not (self.actions.size == self.rewards.size == self.next_obs.size == self.weights.size == n):
            raise ValueError("constraint rows have inconsistent lengths")

    def __len__(self):
        return self.obs.size

    def linear_form(self, policy: np.ndarray, num_obs: int, K: int) -> tuple[np.ndarray, float]:
        """(c, const) with E[K 1{a = pi(x)}(g(x) - r - g(x'))] = c @ g - const."""
        w = self.weights * K * (policy[self.obs] == self.actions)
        c = np.bincount(self.obs, weights=w, minlength=num_obs)
        has_next = self.next_obs >= 0
        c -= np.bincount(self.next_obs[has_next], weights=w[has_next], minlength=num_obs)
        return c, float(w @ self.rewards)


@dataclass
class OliveProblem:
    d0: np.ndarray                       # weight vector over observations for E_{D_0}
    constraints: list = field(default_factory=list)
    phi: float = 0.0


@dataclass
class OliveSolution:
    g: np.ndarray
    policy: np.ndarray
    value: float
    g_index: int | None
    policy_index: int


def enumerate_policies(Pi: PolicyClass, limit: int = 1 << 12):
    """Yield (index, table) for every policy; tabular classes are expanded."""
    if not Pi.tabular:
        for i in range(Pi.size):
            yield i, Pi.actions[i]
        return
    X, K = Pi.num_obs, Pi.num_actions
    if K ** X > limit:
        raise ValueError(f"tabular policy class has {K}^{X} members, above the limit {limit}")
    for i, t in enumerate(itertools.product(range(K), repeat=X)):
        yield i, np.array(t, dtype=np.int64)


def olive_opt(G: ValueClass, Pi: PolicyClass, problem: OliveProblem, num_actions: int,
              budget: OracleBudget | None = None, policy_limit: int = 1 << 12):
    """Best feasible (g, pi) pair, or :class:`Infeasible`.

    Ties go to the lowest policy index, then to the lowest g index.
    """
    X = G.num_obs
    d0 = np.asarray(problem.d0, dtype=float)
    best: OliveSolution | None = None
    closest = np.inf
    for j, pol in enumerate_policies(Pi, limit=policy_limit):
        if budget is not None:
            budget.add("olive_pairs")
        forms = [c.linear_form(pol, X, num_actions) for c in problem.constraints]
        A = np.array([f[0] for f in forms]).reshape(-1, X)
        b = np.array([f[1] for f in forms])
        if G.tabular:
            if not np.isfinite(problem.phi):
                lo, hi = np.full(b.size, -np.inf), np.full(b.size, np.inf)
            else:
                lo, hi = b - problem.phi, b + problem.phi
            choice = lp_oracle(G, LpProblem(d0, A, lo, hi, maximize=True, eps_feas=1e-9), budget)
            if isinstance(choice, Infeasible):
                if choice.min_violation is not None:
                    closest = min(closest, choice.min_violation)
                continue
            g, gi = np.asarray(choice.table), None
        else:
            G.enumerations += 1
            viol = np.abs(G.values @ A.T - b).max(axis=1, initial=0.0) - problem.phi
            feas = viol <= FEAS_TOL
            if not feas.any():
                closest = min(closest, float(viol.min()))
                continue
            obj = np.where(feas, G.values @ d0, -np.inf)
            gi = int(np.argmax(obj))
            g = G.values[gi]
        val = float(d0 @ g)
        if best is None or val > best.value + 1e-12:
            best = OliveSolution(np.array(g, dtype=float), pol.copy(), val, gi, j)
    if best is None:
        return Infeasible(None if not np.isfinite(closest) else float(closest), "no feasible (g, pi) pair")
    return best


# ---------------------------------------------------------------------------
# data collection


def _obs_distribution(spec: CdpSpec, policy: np.ndarray, level: int) -> np.ndarray:
    """Exact distribution of x_level under ``policy``."""
    state = spec.initial.copy()
    for h in range(level):
        obs_dist = state @ spec.emissions
        nxt = np.zeros(spec.num_states)
        for x in spec.level_obs[h]:
            if obs_dist[x] > 0:
                nxt += obs_dist[x] * spec.transitions[spec.obs_state[x], policy[x]]
        state = nxt
    return state @ spec.emissions


def exact_constraint(spec: CdpSpec, policy: np.ndarray, level: int) -> ConstraintData:
    """Roll in with ``policy``, take a uniform action at ``level``; exact expectations."""
    K = spec.num_actions
    mu = _obs_distribution(spec, policy, level)
    rows = []
    last = level + 1 >= spec.horizon
    for x in spec.level_obs[level]:
        if mu[x] <= 0:
            continue
        for a in range(K):
            r = spec.reward_mean[x, a]
            if last:
                rows.append((x, a, r, -1, mu[x] / K))
                continue
            nxt_obs = spec.transitions[spec.obs_state[x], a] @ spec.emissions
            for x2 in np.flatnonzero(nxt_obs > 0):
                rows.append((x, a, r, x2, mu[x] / K * nxt_obs[x2]))
    o, a, r, x2, w = (np.array(col) for col in zip(*rows))
    return ConstraintData(level, o, a, r, x2, w)


def sampled_constraint(spec: CdpSpec, policy: np.ndarray, level: int, n: int, rng) -> ConstraintData:
    controls = [policy] * level + ["uniform"]
    ro = rollout(spec, (), n, rng, controls)
    nxt = ro.final_obs if ro.final_obs is not None else np.full(n, -1)
    return ConstraintData(level, ro.obs[:, level], ro.actions[:, level], ro.rewards[:, level], nxt,
                          np.full(n, 1.0 / n))


def average_bellman_error(g: np.ndarray, policy: np.ndarray, data: ConstraintData, K: int) -> float:
    c, const = data.linear_form(policy, g.size, K)
    return float(c @ g - const)


# ---------------------------------------------------------------------------
# the algorithm


def olive_run(spec: CdpSpec, G: ValueClass, Pi: PolicyClass, phi: float, eps: float, n_per_round: int = 2000,
              rng=None, exact: bool = False, max_rounds: int = 50, policy_limit: int = 1 << 12) -> RunReport:
    """Run OLIVE until the predicted value is within ``eps`` of the policy's value.

    With ``exact`` every expectation (initial value, policy value, Bellman
    errors and constraint data) is computed analytically from ``spec``.
    """
    rng = as_generator(rng)
    t0 = time.perf_counter()
    H, K, X = spec.horizon, spec.num_actions, spec.num_obs
    budget = OracleBudget()
    report = RunReport("olive")
    report.v_star = exact_values(spec).v_star
    if exact:
        d0 = spec.initial @ spec.emissions
    else:
        d0 = empirical_weights(rollout(spec, (), n_per_round, rng, []).final_obs, X)
        budget.add("trajectories", n_per_round)
    problem = OliveProblem(d0, [], phi)
    levels, row_counts = [], []
    for k in range(1, max_rounds + 1):
        sol = olive_opt(G, Pi, problem, K, budget, policy_limit)
        report.iterations = k
        if isinstance(sol, Infeasible):
            report.error = f"round {k}: {sol.detail}"
            break
        if exact:
            v_pi = policy_value(spec, sol.policy)
        else:
            v_pi = float(rollout(spec, (), n_per_round, rng, [sol.policy] * H).returns.mean())
            budget.add("trajectories", n_per_round)
        report.policy = sol.policy.tolist()
        report.v_policy = policy_value(spec, sol.policy)
        report.estimated_value, report.estimated_policy_value = sol.value, v_pi
        report.metrics.append({"round": k, "predicted": sol.value, "v_hat_pi": v_pi,
                               "constraints": len(problem.constraints)})
        if sol.value - v_pi <= eps:
            report.returned = True
            break
        datasets = []
        for h in range(H):
            if exact:
                datasets.append(exact_constraint(spec, sol.policy, h))
            else:
                datasets.append(sampled_constraint(spec, sol.policy, h, n_per_round, rng))
                budget.add("trajectories", n_per_round)
        errs = [abs(average_bellman_error(sol.g, sol.policy, d, K)) for d in datasets]
        h = int(np.argmax(errs))
        problem.constraints.append(datasets[h])
        levels.append(h)
        row_counts.append(sum(len(d) for d in datasets))
    else:
        report.error = f"no certificate within {max_rounds} rounds"
    report.budget = budget.to_dict()
    report.diagnostics = {"constraint_levels": levels, "rows_per_round": row_counts,
                          "num_constraints": len(problem.constraints)}
    report.wall_time = time.perf_counter() - t0
    return report


def grid_value_class(num_obs: int, step: float) -> ValueClass:
    """Tabular value class at a given grid resolution.

    The grid has (1/step + 1)^X members, so only the continuous box is
    practical beyond a handful of observations; callers pick which one.
    """
    if step <= 0:
        return TabularValueClass(num_obs)
    pts = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    return ExplicitValueClass(np.array(list(itertools.product(pts, repeat=num_obs))))
