"""Environment builders and the named-environment registry."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .cdp_core import CdpSpec
from .rng import as_generator


class CdpBuilder:
    """Incremental construction of a :class:`CdpSpec`."""

    def __init__(self, horizon: int, num_actions: int):
        self.horizon = horizon
        self.num_actions = num_actions
        self._levels: list[int] = []
        self._state_names: list[str] = []
        self._emit: list[dict[int, float]] = []
        self._obs_names: list[str] = []
        self._init: dict[int, float] = {}
        self._trans: dict[tuple[int, int], dict[int, float]] = {}
        self._rewards: dict[tuple[int, int], tuple[float, bool]] = {}

    def add_state(self, level: int, name: str | None = None, n_obs: int = 1,
                  obs_probs=None, obs_names=None) -> tuple[int, list[int]]:
        """Add a state emitting ``n_obs`` fresh observations; returns (state, obs ids)."""
        s = len(self._levels)
        self._levels.append(level)
        self._state_names.append(name or f"s{s}")
        probs = np.full(n_obs, 1.0 / n_obs) if obs_probs is None else np.asarray(obs_probs, float)
        obs = []
        emit = {}
        for i, p in enumerate(probs):
            x = len(self._obs_names)
            self._obs_names.append(obs_names[i] if obs_names else f"{self._state_names[s]}/o{i}")
            emit[x] = float(p)
            obs.append(x)
        self._emit.append(emit)
        return s, obs

    def set_initial(self, dist: dict[int, float]) -> None:
        self._init = dict(dist)

    def set_transition(self, s: int, a: int, dist: dict[int, float] | int) -> None:
        self._trans[(s, a)] = {dist: 1.0} if isinstance(dist, (int, np.integer)) else dict(dist)

    def set_reward(self, x: int, a: int, mean: float, fixed: bool = False) -> None:
        self._rewards[(x, a)] = (float(mean), bool(fixed))

    def build(self, action_names=None) -> CdpSpec:
        S, X, K = len(self._levels), len(self._obs_names), self.num_actions
        init = np.zeros(S)
        for s, p in self._init.items():
            init[s] = p
        trans = np.zeros((S, K, S))
        for (s, a), dist in self._trans.items():
            for t, p in dist.items():
                trans[s, a, t] += p
        emit = np.zeros((S, X))
        for s, dist in enumerate(self._emit):
            for x, p in dist.items():
                emit[s, x] = p
        rmean = np.zeros((X, K))
        fixed = np.zeros((X, K), dtype=bool)
        for (x, a), (mu, fx) in self._rewards.items():
            rmean[x, a], fixed[x, a] = mu, fx
        return CdpSpec(self.horizon, K, np.array(self._levels), init, trans, emit, rmean, fixed,
                       state_names=tuple(self._state_names), obs_names=tuple(self._obs_names),
                       action_names=None if action_names is None else tuple(action_names))


def random_deterministic_cdp(rng, horizon: int = 3, max_states: int = 4, num_actions: int = 3,
                             max_obs_per_level: int = 12, max_obs_per_state: int = 3,
                             reward_scale: float | None = None) -> CdpSpec:
    """Random CDP with deterministic dynamics and rich observations.

    Level 0 has a single state. Every later level has between 1 and
    ``max_states`` states and each is reachable. Reward means are uniform on
    ``[0, reward_scale]`` with ``reward_scale = 1/H`` by default.
    """
    rng = as_generator(rng)
    H, K = horizon, num_actions
    scale = 1.0 / H if reward_scale is None else reward_scale
    b = CdpBuilder(H, K)
    levels: list[list[int]] = []
    for h in range(H):
        n_states = 1 if h == 0 else int(rng.integers(1, min(max_states, len(levels[-1]) * K) + 1))
        per_state = max(1, min(max_obs_per_state, max_obs_per_level // n_states))
        ids = []
        for i in range(n_states):
            n_obs = int(rng.integers(1, per_state + 1))
            s, obs = b.add_state(h, f"h{h}s{i}", n_obs, rng.dirichlet(np.ones(n_obs)))
            for x in obs:
                for a in range(K):
                    b.set_reward(x, a, rng.uniform(0, scale))
            ids.append(s)
        levels.append(ids)
    b.set_initial({levels[0][0]: 1.0})
    for h in range(H - 1):
        pairs = [(s, a) for s in levels[h] for a in range(K)]
        nxt = levels[h + 1]
        # every next-level state gets at least one incoming pair
        order = rng.permutation(len(pairs))
        targets = np.empty(len(pairs), dtype=np.int64)
        targets[order[:len(nxt)]] = nxt
        targets[order[len(nxt):]] = rng.choice(nxt, size=len(pairs) - len(nxt))
        for (s, a), t in zip(pairs, targets):
            b.set_transition(s, a, int(t))
    return b.build()


def random_tabular_mdp(rng, horizon: int = 3, num_obs: int = 8, num_actions: int = 2,
                       reward_scale: float | None = None) -> CdpSpec:
    """Random stochastic tabular MDP (one observation per state).

    ``num_obs`` states are split over the levels with at least one per level.
    """
    rng = as_generator(rng)
    H, K = horizon, num_actions
    if num_obs < H:
        raise ValueError("need at least one state per level")
    scale = 1.0 / H if reward_scale is None else reward_scale
    sizes = np.ones(H, dtype=np.int64)
    for i in rng.integers(H, size=num_obs - H):
        sizes[i] += 1
    b = CdpBuilder(H, K)
    levels = []
    for h in range(H):
        ids = []
        for i in range(sizes[h]):
            s, (x,) = b.add_state(h, f"h{h}s{i}")
            for a in range(K):
                b.set_reward(x, a, rng.uniform(0, scale))
            ids.append(s)
        levels.append(ids)
    b.set_initial(dict(zip(levels[0], rng.dirichlet(np.ones(len(levels[0]))))))
    for h in range(H - 1):
        for s in levels[h]:
            for a in range(K):
                b.set_transition(s, a, dict(zip(levels[h + 1], rng.dirichlet(np.ones(len(levels[h + 1]))))))
    return b.build()


def gridworld(size: int = 3, horizon: int = 4, obs_per_state: int = 2, goal=None, seed=0) -> CdpSpec:
    """Deterministic grid walk with a terminal goal reward.

    Hidden states are (level, cell) pairs reachable from the corner (0, 0);
    actions are right, down and stay. Reaching ``goal`` at the final level
    pays reward 1 (terminal-only reward).
    """
    rng = as_generator(seed)
    goal = (size - 1, size - 1) if goal is None else tuple(goal)
    moves = [(0, 1), (1, 0), (0, 0)]
    b = CdpBuilder(horizon, len(moves))
    ids: list[dict[tuple[int, int], int]] = []
    frontier = {(0, 0)}
    for h in range(horizon):
        ids.append({})
        for cell in sorted(frontier):
            s, obs = b.add_state(h, f"h{h}{cell}", obs_per_state, rng.dirichlet(np.ones(obs_per_state)))
            ids[h][cell] = s
            if h == horizon - 1 and cell == goal:
                for x in obs:
                    for a in range(len(moves)):
                        b.set_reward(x, a, 1.0, fixed=True)
        frontier = {(min(r + dr, size - 1), min(c + dc, size - 1)) for r, c in frontier for dr, dc in moves}
    b.set_initial({ids[0][(0, 0)]: 1.0})
    for h in range(horizon - 1):
        for (r, c), s in ids[h].items():
            for a, (dr, dc) in enumerate(moves):
                b.set_transition(s, a, ids[h + 1][(min(r + dr, size - 1), min(c + dc, size - 1))])
    return b.build(action_names=["right", "down", "stay"])


def _backup_chain(horizon: int = 6, eps: float = 0.2):
    from .hardness.barriers import build_backup_chain
    return build_backup_chain(horizon, eps).spec


def _needle(m: int = 8):
    from .hardness.barriers import build_needle_env
    return build_needle_env(m).spec


def _rare(eps: float = 0.04):
    from .hardness.barriers import build_rare_reward_env
    return build_rare_reward_env(eps).spec


def _sat(clauses, n_vars: int | None = None, y=None, rescale: bool = True):
    from .hardness.sat import SatFormula, sat_to_mdp
    formula = SatFormula.from_clauses(clauses, n_vars)
    y = [1] * formula.n_vars if y is None else y
    return sat_to_mdp(formula, y, rescale=rescale).spec


def _random_cdp(seed: int = 0, **kw):
    return random_deterministic_cdp(seed, **kw)


def _random_mdp(seed: int = 0, **kw):
    return random_tabular_mdp(seed, **kw)


NAMED_ENVS: dict[str, Callable[..., CdpSpec]] = {
    "gridworld": gridworld,
    "backup-chain": _backup_chain,
    "needle": _needle,
    "rare-reward": _rare,
    "sat-mdp": _sat,
    "random-cdp": _random_cdp,
    "random-mdp": _random_mdp,
}


def build_named(name: str, **params) -> CdpSpec:
    try:
        builder = NAMED_ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(NAMED_ENVS)}") from None
    return builder(**params)
