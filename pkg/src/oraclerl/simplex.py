"""Dense two-phase simplex for small linear programs.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq`` and
``x >= 0``. Pivoting uses Bland's rule, so the method cannot cycle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9


@dataclass
class LpSolution:
    status: str          # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    fun: float | None
    pivots: int = 0


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])


def _run(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_pivots: int) -> tuple[str, int]:
    """Minimise the objective stored in the last row of ``T`` (reduced costs)."""
    m = T.shape[0] - 1
    pivots = 0
    while True:
        red = T[-1, :-1]
        cand = np.flatnonzero((red < -TOL) & allowed)
        if cand.size == 0:
            return "optimal", pivots
        col = int(cand[0])
        colv = T[:m, col]
        pos = colv > TOL
        if not pos.any():
            return "unbounded", pivots
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("simplex pivot limit reached")


def linprog_dense(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_pivots: int = 50_000) -> LpSolution:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # columns: x (n) | slack/surplus (m_ub) | artificial (m)
    n_slack = m_ub
    total = n + n_slack + m
    T = np.zeros((m + 1, total + 1))
    basis: list[int] = []
    art_cols = []
    for i in range(m_ub):
        sign = 1.0 if b_ub[i] >= 0 else -1.0
        T[i, :n] = sign * A_ub[i]
        T[i, n + i] = sign
        T[i, -1] = sign * b_ub[i]
        if sign > 0:
            basis.append(n + i)
        else:
            T[i, n + n_slack + i] = 1.0
            basis.append(n + n_slack + i)
            art_cols.append(n + n_slack + i)
    for j in range(m_eq):
        i = m_ub + j
        sign = 1.0 if b_eq[j] >= 0 else -1.0
        T[i, :n] = sign * A_eq[j]
        T[i, -1] = sign * b_eq[j]
        T[i, n + n_slack + i] = 1.0
        basis.append(n + n_slack + i)
        art_cols.append(n + n_slack + i)

    is_art = np.zeros(total, dtype=bool)
    is_art[art_cols] = True
    used = np.ones(total, dtype=bool)
    used[n + n_slack:] = False
    used[art_cols] = True
    pivots = 0

    if art_cols:
        # phase 1: minimise the sum of artificials
        T[-1, :] = 0.0
        T[-1, art_cols] = 1.0
        for r, b in enumerate(basis):
            if is_art[b]:
                T[-1] -= T[r]
        status, k = _run(T, basis, used, max_pivots)
        pivots += k
        if -T[-1, -1] > TOL * max(1.0, np.abs(T[:m, -1]).max(initial=0.0)):
            return LpSolution("infeasible", None, None, pivots)
        # drive artificials out of the basis
        keep = []
        for r in range(m):
            if is_art[basis[r]]:
                nz = np.flatnonzero((np.abs(T[r, :-1]) > TOL) & used & ~is_art)
                if nz.size:
                    _pivot(T, r, int(nz[0]))
                    basis[r] = int(nz[0])
                    keep.append(r)
            else:
                keep.append(r)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[r] for r in keep]
        m = len(keep)

    allowed = used & ~is_art
    T[-1, :] = 0.0
    T[-1, :n] = c
    for r, b in enumerate(basis):
        if T[-1, b] != 0.0:
            T[-1] -= T[-1, b] * T[r]
    status, k = _run(T, basis, allowed, max_pivots)
    pivots += k
    if status == "unbounded":
        return LpSolution("unbounded", None, None, pivots)
    x = np.zeros(total)
    x[basis] = T[:m, -1]
    x = np.maximum(x[:n], 0.0)
    return LpSolution("optimal", x, float(c @ x), pivots)
