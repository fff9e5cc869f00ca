"""CSC, LP, LS and multi-dataset CSC oracles with call accounting.

Explicit classes are solved by exact enumeration. Tabular classes use the
per-observation closed forms (CSC, LS) or a dense simplex over the box
``[0,1]^X`` (LP); they are never enumerated.

Set ``ORACLERL_AUDIT=<file>`` to append one JSON line per oracle call.
"""
from __future__ import annotations

import itertools
import json
import math
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .function_classes import Choice, PolicyClass, ValueClass
from .simplex import linprog_dense

FEAS_TOL = 1e-9


class Infeasible:
    """Marker returned when no element meets the constraints."""

    def __init__(self, min_violation: float | None = None, detail: str = ""):
        self.min_violation = min_violation
        self.detail = detail

    def __bool__(self):
        return False

    def __repr__(self):
        return f"Infeasible(min_violation={self.min_violation!r})"


@dataclass
class OracleBudget:
    csc_calls: int = 0
    lp_calls: int = 0
    ls_calls: int = 0
    multi_csc_calls: int = 0
    trajectories: int = 0
    extra: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, name: str, k: int = 1) -> None:
        with self._lock:
            if name in ("csc_calls", "lp_calls", "ls_calls", "multi_csc_calls", "trajectories"):
                setattr(self, name, getattr(self, name) + k)
            else:
                self.extra[name] = self.extra.get(name, 0) + k

    def to_dict(self) -> dict:
        return {"csc_calls": self.csc_calls, "lp_calls": self.lp_calls, "ls_calls": self.ls_calls,
                "multi_csc_calls": self.multi_csc_calls, "trajectories": self.trajectories,
                **dict(sorted(self.extra.items()))}


def _count(budget: OracleBudget | None, name: str, k: int = 1) -> None:
    if budget is not None:
        budget.add(name, k)


def _audit(kind: str, **info) -> None:
    path = os.environ.get("ORACLERL_AUDIT")
    if path:
        with open(path, "a") as fh:
            fh.write(json.dumps({"oracle": kind, **info}, default=float) + "\n")


# ---------------------------------------------------------------------------
# datasets


@dataclass
class CscDataset:
    """Rows of (observation, cost vector)."""

    obs: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.int64)
        self.costs = np.asarray(self.costs, dtype=float)
        if self.costs.ndim != 2 or self.costs.shape[0] != self.obs.size:
            raise ValueError("costs must have shape (n, K)")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("costs must be finite")

    def __len__(self):
        return self.obs.size

    def totals(self, num_obs: int) -> np.ndarray:
        """Summed cost per (observation, action)."""
        out = np.zeros((num_obs, self.costs.shape[1]))
        np.add.at(out, self.obs, self.costs)
        return out

    @classmethod
    def importance_weighted(cls, obs, actions, targets, num_actions: int, scale: float = 1.0):
        """Costs ``-K * 1{b = a_i} * y_i`` for uniformly logged actions."""
        obs = np.asarray(obs)
        costs = np.zeros((obs.size, num_actions))
        costs[np.arange(obs.size), actions] = -num_actions * np.asarray(targets, dtype=float) * scale
        return cls(obs, costs)


@dataclass
class LpProblem:
    """Optimise ``objective @ g`` s.t. ``lower <= A @ g <= upper`` (within ``eps_feas``).

    Weight vectors are over observation ids; empirical means are represented
    by frequency vectors (see :func:`empirical_weights`).
    """

    objective: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    maximize: bool = True
    eps_sub: float = 0.0
    eps_feas: float = 0.0

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        X = self.objective.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, X)
        m = self.A.shape[0]
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (m,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (m,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("constraint interval with lower > upper")

    def violations(self, tables: np.ndarray) -> np.ndarray:
        vals = np.atleast_2d(tables) @ self.A.T
        v = np.maximum(self.lower - vals, vals - self.upper)
        return np.maximum(v, 0.0).max(axis=1, initial=0.0)


def empirical_weights(obs, num_obs: int, weights=None) -> np.ndarray:
    """Frequency vector so that ``w @ g`` is the empirical mean of g(x)."""
    obs = np.asarray(obs, dtype=np.int64)
    w = np.bincount(obs, weights=weights, minlength=num_obs).astype(float)
    return w / obs.size


@dataclass
class LsDataset:
    obs: np.ndarray
    targets: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.shape != self.obs.shape or not np.all(np.isfinite(self.targets)):
            raise ValueError("targets must be finite and match the observations")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")

    def __len__(self):
        return self.obs.size


@dataclass
class MultiCscProblem:
    """Find a policy with average cost at most ``thresholds[j]`` on every dataset."""

    datasets: list
    thresholds: np.ndarray
    eps_feas: float = 0.0
    backend: str = "auto"            # auto | enumerate | mw
    mw_rounds: int | None = None     # default ceil(16 ln m / eps_feas^2)
    mw_eta: float | None = None      # default sqrt(ln m / T)
    max_rounds: int = 2000

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if len(self.datasets) < 1 or len(self.datasets) != self.thresholds.size:
            raise ValueError("need one threshold per dataset and at least one dataset")
        if any(len(d) == 0 for d in self.datasets):
            raise ValueError("empty dataset")


# ---------------------------------------------------------------------------
# CSC


def _policy_costs(Pi, tables: np.ndarray) -> np.ndarray:
    """Total cost of every explicit policy under (X, K) cost tables, stacked."""
    X = Pi.num_obs
    Pi.enumerations += 1
    if tables.ndim == 2:
        return tables[np.arange(X), Pi.actions].sum(axis=1)
    return tables[:, np.arange(X), Pi.actions].sum(axis=2).T   # (P, m)


def csc_from_totals(Pi: PolicyClass, totals: np.ndarray, budget=None) -> Choice:
    """CSC on pre-aggregated (observation, action) total costs."""
    if Pi.tabular:
        _count(budget, "csc_ops", totals.size)
        table = np.argmin(totals, axis=1)   # lowest action on ties; unseen rows -> action 0
        return Choice(table, None)
    costs = _policy_costs(Pi, totals)
    i = int(np.argmin(costs))
    return Choice(Pi.actions[i], i)


def csc_oracle(Pi: PolicyClass, d: CscDataset, eps_sub: float = 0.0, budget: OracleBudget | None = None) -> Choice:
    """Policy minimising average cost (exactly, so ``eps_sub`` is met with zero slack)."""
    if len(d) == 0:
        raise ValueError("empty CSC dataset")
    if d.costs.shape[1] != Pi.num_actions:
        raise ValueError("cost vectors must have one entry per action")
    _count(budget, "csc_calls")
    totals = d.totals(Pi.num_obs)
    if Pi.tabular:
        _count(budget, "csc_ops", d.costs.size)
    choice = csc_from_totals(Pi, totals, budget)
    _audit("csc", n=len(d), index=choice.index, eps_sub=eps_sub)
    return choice


def average_cost(policy: np.ndarray, d: CscDataset) -> float:
    return float(d.costs[np.arange(len(d)), policy[d.obs]].mean())


# ---------------------------------------------------------------------------
# LP


def _lp_explicit(G, p: LpProblem, tol: float):
    G.enumerations += 1
    viol = p.violations(G.values)
    obj = G.values @ p.objective
    feas = viol <= tol + FEAS_TOL
    if not feas.any():
        return None, float(viol.min())
    score = np.where(feas, obj if p.maximize else -obj, -np.inf)
    i = int(np.argmax(score))
    return Choice(G.values[i], i), 0.0


def _lp_tabular(G, p: LpProblem, tol: float):
    support = np.flatnonzero((p.objective != 0) | np.any(p.A != 0, axis=0))
    X = G.num_obs
    n = support.size
    if n == 0:
        viol = p.violations(np.zeros(X))[0]
        return (Choice(np.zeros(X), None), 0.0) if viol <= tol + FEAS_TOL else (None, float(viol))
    A = p.A[:, support]
    rows, rhs = [np.eye(n)], [np.ones(n)]
    fin_hi, fin_lo = np.isfinite(p.upper), np.isfinite(p.lower)
    rows += [A[fin_hi], -A[fin_lo]]
    rhs += [p.upper[fin_hi] + tol, -(p.lower[fin_lo] - tol)]
    c = -p.objective[support] if p.maximize else p.objective[support]
    sol = linprog_dense(c, np.vstack(rows), np.concatenate(rhs))
    if sol.status != "optimal":
        return None, None
    table = np.zeros(X)
    table[support] = np.clip(sol.x, 0.0, 1.0)
    return Choice(table, None), 0.0


def lp_oracle(G: ValueClass, p: LpProblem, budget: OracleBudget | None = None):
    """Extremise the objective over ``eps_feas``-feasible class elements.

    Returns a :class:`Choice` or :class:`Infeasible`. Ties go to the lowest
    function id.
    """
    _count(budget, "lp_calls")
    solve = _lp_tabular if G.tabular else _lp_explicit
    choice, viol = solve(G, p, p.eps_feas)
    if choice is None:
        _audit("lp", m=p.A.shape[0], result="infeasible")
        return Infeasible(viol)
    worst = p.violations(choice.table)[0]
    if worst > p.eps_feas + 1e-7:
        raise AssertionError(f"LP oracle returned a point violating a constraint by {worst}")
    _audit("lp", m=p.A.shape[0], index=choice.index, value=float(choice.table @ p.objective))
    return choice


def min_violation(G: ValueClass, p: LpProblem) -> float:
    """Smallest uniform constraint relaxation that makes ``p`` feasible."""
    if not G.tabular:
        return float(p.violations(G.values).min())
    support = np.flatnonzero(np.any(p.A != 0, axis=0))
    n = support.size
    A = p.A[:, support]
    fin_hi, fin_lo = np.isfinite(p.upper), np.isfinite(p.lower)
    # variables (g, t); minimise t
    blocks = [np.hstack([np.eye(n), np.zeros((n, 1))]),
              np.hstack([A[fin_hi], -np.ones((fin_hi.sum(), 1))]),
              np.hstack([-A[fin_lo], -np.ones((fin_lo.sum(), 1))])]
    rhs = np.concatenate([np.ones(n), p.upper[fin_hi], -p.lower[fin_lo]])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    sol = linprog_dense(c, np.vstack(blocks), rhs)
    return float(sol.fun)


def lp_oracle_relaxed(G: ValueClass, p: LpProblem, budget: OracleBudget | None = None):
    """Solve ``p`` after relaxing all constraints by the least feasible amount.

    Returns ``(choice, relaxation)``. Used only as a fallback when the plain
    oracle reports infeasibility; counted separately as ``lp_relaxed``.
    """
    _count(budget, "lp_relaxed")
    t = max(min_violation(G, p), 0.0)
    relaxed = LpProblem(p.objective, p.A, p.lower, p.upper, p.maximize, p.eps_sub, p.eps_feas + t + 1e-12)
    solve = _lp_tabular if G.tabular else _lp_explicit
    choice, _ = solve(G, relaxed, relaxed.eps_feas)
    if choice is None:   # numerical corner: widen slightly
        relaxed.eps_feas += 1e-9
        choice, _ = solve(G, relaxed, relaxed.eps_feas)
    return choice, t


# ---------------------------------------------------------------------------
# LS


def ls_oracle(G: ValueClass, d: LsDataset, eps_sub: float = 0.0, budget: OracleBudget | None = None) -> Choice:
    """Least-squares fit within the class (exact)."""
    if len(d) == 0:
        raise ValueError("empty LS dataset")
    _count(budget, "ls_calls")
    X = G.num_obs
    w = np.ones(len(d)) if d.weights is None else d.weights
    W = np.bincount(d.obs, weights=w, minlength=X)
    S = np.bincount(d.obs, weights=w * d.targets, minlength=X)
    if G.tabular:
        _count(budget, "ls_ops", len(d) + X)
        with np.errstate(invalid="ignore", divide="ignore"):
            table = np.where(W > 0, np.clip(S / np.where(W > 0, W, 1), 0.0, 1.0), 0.0)
        return Choice(table, None)
    G.enumerations += 1
    V = G.values
    loss = (V ** 2) @ W - 2 * V @ S   # constant term dropped
    i = int(np.argmin(loss))
    _audit("ls", n=len(d), index=i)
    return Choice(V[i], i)


def squared_loss(table: np.ndarray, d: LsDataset) -> float:
    w = np.ones(len(d)) if d.weights is None else d.weights
    return float(np.sum(w * (table[d.obs] - d.targets) ** 2) / len(d))


# ---------------------------------------------------------------------------
# multi-dataset CSC


def _avg_tables(Pi, datasets) -> np.ndarray:
    return np.stack([d.totals(Pi.num_obs) / len(d) for d in datasets])   # (m, X, K)


def _tabular_policy_costs(tables: np.ndarray, policy: np.ndarray) -> np.ndarray:
    X = policy.size
    return tables[:, np.arange(X), policy].sum(axis=1)


def _components(tables: np.ndarray, K: int, limit: int = 1 << 16):
    """Group observations that share a dataset; None if a group is too big to enumerate.

    A tabular policy picks actions per observation independently, so the
    program splits over groups of observations linked by common datasets.
    """
    used = np.abs(tables).sum(axis=2) > 0          # (m, X)
    obs = np.flatnonzero(used.any(axis=0))
    parent = {int(x): int(x) for x in obs}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for row in used:
        xs = np.flatnonzero(row)
        for x in xs[1:]:
            parent[find(int(x))] = find(int(xs[0]))
    groups: dict[int, list[int]] = {}
    for x in obs:
        groups.setdefault(find(int(x)), []).append(int(x))
    comps = list(groups.values())
    if any(K ** len(c) > limit for c in comps):
        return None
    return comps


def _multi_csc_tabular_exact(tables, U, tol, comps, budget):
    m, X, K = tables.shape
    table = np.zeros(X, dtype=np.int64)
    finite = np.isfinite(U)
    worst = -np.inf
    for comp in comps:
        rows = np.flatnonzero(np.abs(tables[:, comp]).sum(axis=(1, 2)) > 0)
        assign = np.array(list(itertools.product(range(K), repeat=len(comp))), dtype=np.int64)
        _count(budget, "csc_ops", assign.size * rows.size)
        sub = tables[np.ix_(rows, comp)]                        # (r, c, K)
        costs = sub[:, np.arange(len(comp)), assign].sum(axis=2).T   # (A, r)
        feas = np.all(costs <= np.where(finite[rows], U[rows], np.inf) + tol, axis=1)
        if not feas.any():
            gap = costs - np.where(finite[rows], U[rows], -np.inf)
            worst = max(worst, float(gap.max(axis=1).min()))
            continue
        score = np.where(feas, costs.sum(axis=1), np.inf)
        table[comp] = assign[int(np.argmin(score))]
    if worst > -np.inf:
        return Infeasible(worst)
    return Choice(table, None)


def multi_csc_oracle(Pi: PolicyClass, p: MultiCscProblem, budget: OracleBudget | None = None):
    """Policy meeting every dataset's cost threshold up to ``eps_feas``.

    The enumeration backend is exact and returns, among feasible policies,
    the one with least summed cost. For tabular classes it enumerates each
    group of observations linked by shared datasets separately. The multiplicative
    weights backend combines the datasets with the current weights into one
    CSC call per round and returns the first round's policy that is feasible.
    """
    _count(budget, "multi_csc_calls")
    tables = _avg_tables(Pi, p.datasets)
    U = p.thresholds
    tol = p.eps_feas + FEAS_TOL
    backend = p.backend
    if backend == "auto":
        backend = "enumerate"
        if Pi.tabular and _components(tables, Pi.num_actions) is None:
            backend = "mw"
    if backend == "enumerate" and Pi.tabular:
        comps = _components(tables, Pi.num_actions)
        if comps is None:
            raise ValueError("tabular problem too large to enumerate; use the mw backend")
        return _multi_csc_tabular_exact(tables, U, tol, comps, budget)
    if backend == "enumerate":
        costs = _policy_costs(Pi, tables)     # (P, m)
        feas = np.all(costs <= U + tol, axis=1)
        if not feas.any():
            return Infeasible(float(np.min(np.max(costs - U, axis=1))))
        score = np.where(feas, costs.sum(axis=1), np.inf)
        i = int(np.argmin(score))
        return Choice(Pi.actions[i], i)

    m = len(p.datasets)
    T = p.mw_rounds
    if T is None:
        T = 1 if m == 1 else math.ceil(16 * math.log(m) / max(p.eps_feas, 1e-12) ** 2)
    T = max(1, min(T, p.max_rounds))
    eta = p.mw_eta if p.mw_eta is not None else (math.sqrt(math.log(m) / T) if m > 1 else 0.0)
    finite = np.isfinite(U)
    # bound on |cost - threshold| so that clipped losses stay in [-1, 1]
    scale = np.abs(tables).max(axis=2).sum(axis=1).max() + np.abs(U[finite]).max(initial=0.0)
    scale = max(float(scale), 1e-12)
    w = np.full(m, 1.0 / m)
    best_gap = np.inf
    for _ in range(T):
        _count(budget, "csc_calls")
        choice = csc_from_totals(Pi, np.tensordot(w, tables, axes=1), budget)
        c = _tabular_policy_costs(tables, choice.table)
        gap = np.where(finite, c - np.where(finite, U, 0.0), -np.inf)
        best_gap = min(best_gap, float(gap.max()))
        if np.all(gap <= tol):
            return choice
        w = w * np.exp(eta * np.clip(np.where(finite, gap, 0.0) / scale, -1, 1))
        w = np.where(finite, w, 0.0)
        w /= w.sum()
    return Infeasible(best_gap, "multiplicative weights budget exhausted")
