"""Layered contextual decision processes: model, simulation and exact DP.

Levels are 0-based in code (level 0 is the first decision). Hidden states
and observations carry global integer ids. Each observation is emitted by
exactly one hidden state, so its level is well defined.

A policy is an integer array over *all* observation ids; since observation
sets are disjoint across levels, one array encodes a nonstationary policy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .rng import as_generator

_PROB_TOL = 1e-12

ActionRule = Union[int, str, np.ndarray]
"""Action source for one simulated step: a fixed action, ``"uniform"`` or a policy table."""


@dataclass(frozen=True, eq=False)
class CdpSpec:
    """Generative model of a layered CDP.

    Parameters
    ----------
    horizon : int
        Number of levels H.
    num_actions : int
        Number of actions K.
    state_level : array of shape (S,)
        Level of every hidden state.
    initial : array of shape (S,)
        Initial distribution, supported on level 0.
    transitions : array of shape (S, K, S)
        ``transitions[s, a]`` is a distribution over the next level's
        states; rows of last-level states are all zero.
    emissions : array of shape (S, X)
        Observation distribution of each state. Supports must be disjoint.
    reward_mean : array of shape (X, K)
        Mean reward for each observation/action pair.
    reward_fixed : array of shape (X, K), optional
        Entries flagged here pay their mean deterministically. Other entries
        are Bernoulli and need a mean in [0, 1].
    """

    horizon: int
    num_actions: int
    state_level: np.ndarray
    initial: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    reward_mean: np.ndarray
    reward_fixed: np.ndarray | None = None
    state_names: tuple[str, ...] | None = None
    obs_names: tuple[str, ...] | None = None
    action_names: tuple[str, ...] | None = None

    # derived
    obs_state: np.ndarray = field(init=False, repr=False)
    obs_level: np.ndarray = field(init=False, repr=False)
    level_states: tuple[np.ndarray, ...] = field(init=False, repr=False)
    level_obs: tuple[np.ndarray, ...] = field(init=False, repr=False)
    state_local: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H, K = int(self.horizon), int(self.num_actions)
        if H < 1 or K < 1:
            raise ValueError("horizon and num_actions must be >= 1")
        lvl = np.asarray(self.state_level, dtype=np.int64)
        S = lvl.size
        init = np.asarray(self.initial, dtype=float)
        trans = np.asarray(self.transitions, dtype=float)
        emit = np.asarray(self.emissions, dtype=float)
        X = emit.shape[1] if emit.ndim == 2 else -1
        rmean = np.asarray(self.reward_mean, dtype=float)
        fixed = (np.zeros((X, K), dtype=bool) if self.reward_fixed is None
                 else np.asarray(self.reward_fixed, dtype=bool))
        if lvl.min(initial=0) < 0 or lvl.max(initial=0) >= H:
            raise ValueError("state levels must lie in [0, horizon)")
        if init.shape != (S,) or trans.shape != (S, K, S) or emit.shape != (S, X):
            raise ValueError("inconsistent array shapes")
        if rmean.shape != (X, K) or fixed.shape != (X, K):
            raise ValueError("reward arrays must have shape (num_obs, num_actions)")
        if np.any(init < 0) or np.any(trans < 0) or np.any(emit < 0):
            raise ValueError("negative probability")
        if abs(init.sum() - 1) > _PROB_TOL or np.any(init[lvl != 0] > 0):
            raise ValueError("initial distribution must sum to 1 on level-0 states")
        for s in range(S):
            if abs(emit[s].sum() - 1) > _PROB_TOL:
                raise ValueError(f"emission row of state {s} does not sum to 1")
            for a in range(K):
                row = trans[s, a]
                if lvl[s] == H - 1:
                    if np.any(row > 0):
                        raise ValueError(f"last-level state {s} has successors")
                elif abs(row.sum() - 1) > _PROB_TOL or np.any(row[lvl != lvl[s] + 1] > 0):
                    raise ValueError(f"transition ({s}, {a}) is not a distribution on the next level")
        owners = emit > 0
        if np.any(owners.sum(axis=0) != 1):
            raise ValueError("every observation must be emitted by exactly one state")
        bern = ~fixed
        if np.any(bern & ((rmean < 0) | (rmean > 1))):
            raise ValueError("Bernoulli reward means must lie in [0, 1]")
        if np.any(np.abs(rmean) > 1):
            raise ValueError("reward means must lie in [-1, 1]")

        obs_state = owners.argmax(axis=0)
        for name, val in [("horizon", H), ("num_actions", K), ("state_level", lvl),
                          ("initial", init), ("transitions", trans), ("emissions", emit),
                          ("reward_mean", rmean), ("reward_fixed", fixed),
                          ("obs_state", obs_state), ("obs_level", lvl[obs_state]),
                          ("level_states", tuple(np.flatnonzero(lvl == h) for h in range(H))),
                          ("level_obs", tuple(np.flatnonzero(lvl[obs_state] == h) for h in range(H)))]:
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)
        local = np.zeros(S, dtype=np.int64)
        for states in self.level_states:
            local[states] = np.arange(states.size)
        object.__setattr__(self, "state_local", local)
        # per-level sampling tables
        object.__setattr__(self, "_emit_cdf", tuple(
            np.cumsum(emit[np.ix_(self.level_states[h], self.level_obs[h])], axis=1)
            for h in range(H)))
        object.__setattr__(self, "_trans_cdf", tuple(
            np.cumsum(trans[np.ix_(self.level_states[h], np.arange(K), self.level_states[h + 1])], axis=2)
            for h in range(H - 1)))

    @property
    def num_states(self) -> int:
        return self.state_level.size

    @property
    def num_obs(self) -> int:
        return self.emissions.shape[1]

    @property
    def max_states(self) -> int:
        """M, the largest number of states on any level."""
        return max(s.size for s in self.level_states)

    def check_policy(self, policy) -> np.ndarray:
        pol = np.asarray(policy, dtype=np.int64)
        if pol.shape != (self.num_obs,):
            raise ValueError(f"policy must give an action for all {self.num_obs} observations")
        if np.any(pol < 0) or np.any(pol >= self.num_actions):
            raise ValueError("policy action out of range")
        return pol


def is_deterministic(spec: CdpSpec) -> bool:
    """True iff the initial distribution and every transition row are point masses."""
    if np.count_nonzero(spec.initial) != 1:
        return False
    live = spec.state_level < spec.horizon - 1
    nz = np.count_nonzero(spec.transitions[live], axis=2)
    return bool(np.all(nz == 1))


# ---------------------------------------------------------------------------
# exact dynamic programming


@dataclass(frozen=True)
class ExactValues:
    q_star: np.ndarray        # (X, K)
    g_star: np.ndarray        # (X,)
    v_star_state: np.ndarray  # (S,)
    v_star: float

    def optimal_policy(self) -> np.ndarray:
        """Greedy policy with ties broken by lowest action."""
        return np.argmax(self.q_star, axis=1)


def exact_values(spec: CdpSpec) -> ExactValues:
    """Backward induction over levels H-1..0."""
    X, K = spec.num_obs, spec.num_actions
    q = np.zeros((X, K))
    g = np.zeros(X)
    v_state = np.zeros(spec.num_states)
    for h in range(spec.horizon - 1, -1, -1):
        obs = spec.level_obs[h]
        cont = spec.transitions[spec.obs_state[obs]] @ v_state  # (n_h, K)
        q[obs] = spec.reward_mean[obs] + cont
        g[obs] = q[obs].max(axis=1)
        states = spec.level_states[h]
        v_state[states] = spec.emissions[states] @ g
    return ExactValues(q, g, v_state, float(spec.initial @ v_state))


def policy_state_values(spec: CdpSpec, policy) -> np.ndarray:
    """V^pi(s) for every hidden state."""
    pol = spec.check_policy(policy)
    v_state = np.zeros(spec.num_states)
    g = np.zeros(spec.num_obs)
    for h in range(spec.horizon - 1, -1, -1):
        obs = spec.level_obs[h]
        a = pol[obs]
        g[obs] = spec.reward_mean[obs, a] + spec.transitions[spec.obs_state[obs], a] @ v_state
        states = spec.level_states[h]
        v_state[states] = spec.emissions[states] @ g
    return v_state


def policy_value(spec: CdpSpec, policy) -> float:
    """Exact V^pi."""
    return float(spec.initial @ policy_state_values(spec, policy))


def state_after_path(spec: CdpSpec, path: Sequence[int]) -> int:
    """Hidden state reached by a path in a deterministic spec (test-only helper)."""
    s = int(np.argmax(spec.initial))
    for a in path:
        s = int(np.argmax(spec.transitions[s, a]))
    return s


# ---------------------------------------------------------------------------
# simulation


def _categorical(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


@dataclass
class Rollout:
    """A batch of ``n`` partial trajectories.

    ``states``/``obs``/``actions``/``rewards`` have shape (n, L) for the L
    simulated steps starting at ``start_level``. ``final_obs`` holds the
    observation at level ``start_level + L`` when that level exists.
    Hidden states are kept for test-only inspection.
    """

    start_level: int
    states: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    final_states: np.ndarray | None
    final_obs: np.ndarray | None

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def _initial_states(spec: CdpSpec, n: int, rng) -> np.ndarray:
    states0 = spec.level_states[0]
    cdf = np.cumsum(spec.initial[states0])
    return states0[_categorical(np.broadcast_to(cdf, (n, cdf.size)), rng.random(n))]


def _step_states(spec: CdpSpec, h: int, states: np.ndarray, actions: np.ndarray, rng) -> np.ndarray:
    cdf = spec._trans_cdf[h][spec.state_local[states], actions]
    return spec.level_states[h + 1][_categorical(cdf, rng.random(states.size))]


def _emit(spec: CdpSpec, h: int, states: np.ndarray, rng) -> np.ndarray:
    cdf = spec._emit_cdf[h][spec.state_local[states]]
    return spec.level_obs[h][_categorical(cdf, rng.random(states.size))]


def _rewards(spec: CdpSpec, obs: np.ndarray, actions: np.ndarray, rng) -> np.ndarray:
    mean = spec.reward_mean[obs, actions]
    fixed = spec.reward_fixed[obs, actions]
    draw = (rng.random(obs.size) < mean).astype(float)
    return np.where(fixed, mean, draw)


def rollout(spec: CdpSpec, path: Sequence[int], n: int, rng, controls: Sequence[ActionRule]) -> Rollout:
    """Follow ``path`` from the start, then simulate one step per control.

    Each control is a fixed action, ``"uniform"`` or a policy table.
    """
    rng = as_generator(rng)
    path = [int(a) for a in path]
    start = len(path)
    L = len(controls)
    if start > spec.horizon - 1 and not (start == spec.horizon and L == 0):
        raise ValueError(f"path of length {start} is too long for horizon {spec.horizon}")
    if start + L > spec.horizon:
        raise ValueError("rollout runs past the last level")
    if any(a < 0 or a >= spec.num_actions for a in path):
        raise ValueError("path action out of range")
    states = _initial_states(spec, n, rng)
    for h, a in enumerate(path):
        states = _step_states(spec, h, states, np.full(n, a), rng)
    out_s = np.empty((n, L), dtype=np.int64)
    out_x = np.empty((n, L), dtype=np.int64)
    out_a = np.empty((n, L), dtype=np.int64)
    out_r = np.empty((n, L))
    for t, rule in enumerate(controls):
        h = start + t
        x = _emit(spec, h, states, rng)
        if isinstance(rule, str):
            if rule != "uniform":
                raise ValueError(f"unknown action rule {rule!r}")
            a = rng.integers(spec.num_actions, size=n)
        elif np.ndim(rule) == 0:
            a = np.full(n, int(rule))
        else:
            a = np.asarray(rule)[x]
        out_s[:, t], out_x[:, t], out_a[:, t] = states, x, a
        out_r[:, t] = _rewards(spec, x, a, rng)
        if h + 1 < spec.horizon:
            states = _step_states(spec, h, states, a, rng)
        else:
            states = None
    final_obs = None if states is None else _emit(spec, start + L, states, rng)
    return Rollout(start, out_s, out_x, out_a, out_r, states, final_obs)


def sample_from_path(spec: CdpSpec, path: Sequence[int], tail, n: int, rng) -> Rollout:
    """Samples starting at level ``len(path)``.

    ``tail`` may be a fixed action or ``"uniform"`` (one step), a policy
    table (roll out to the end), or an explicit list of per-step rules.
    """
    if isinstance(tail, list):
        controls = tail
    elif isinstance(tail, str) or np.ndim(tail) == 0:
        controls = [tail]
    else:
        controls = [tail] * (spec.horizon - len(path))
    return rollout(spec, path, n, rng, controls)


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    obs: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def sample_episode(spec: CdpSpec, policy, rng) -> Trajectory:
    pol = spec.check_policy(policy)
    ro = rollout(spec, [], 1, rng, [pol] * spec.horizon)
    return Trajectory(tuple(ro.states[0].tolist()), tuple(ro.obs[0].tolist()),
                      tuple(ro.actions[0].tolist()), tuple(ro.rewards[0].tolist()))


# ---------------------------------------------------------------------------
# JSON

FORMAT_VERSION = 1


def spec_to_dict(spec: CdpSpec) -> dict:
    X, K = spec.num_obs, spec.num_actions
    tr = np.argwhere(spec.transitions > 0)
    em = np.argwhere(spec.emissions > 0)
    rw = np.argwhere((spec.reward_mean != 0) | spec.reward_fixed)
    d = {
        "format": "cdp",
        "version": FORMAT_VERSION,
        "horizon": spec.horizon,
        "num_actions": K,
        "num_obs": X,
        "state_level": spec.state_level.tolist(),
        "initial": [[int(s), float(spec.initial[s])] for s in np.flatnonzero(spec.initial)],
        "emissions": [[int(s), int(x), float(spec.emissions[s, x])] for s, x in em],
        "transitions": [[int(s), int(a), int(t), float(spec.transitions[s, a, t])] for s, a, t in tr],
        "rewards": [[int(x), int(a), float(spec.reward_mean[x, a]), bool(spec.reward_fixed[x, a])]
                    for x, a in rw],
    }
    for key in ("state_names", "obs_names", "action_names"):
        if getattr(spec, key) is not None:
            d[key] = list(getattr(spec, key))
    return d


def spec_from_dict(d: dict) -> CdpSpec:
    if d.get("format") != "cdp" or d.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 cdp document")
    lvl = np.asarray(d["state_level"], dtype=np.int64)
    S, X, K = lvl.size, int(d["num_obs"]), int(d["num_actions"])
    init = np.zeros(S)
    for s, p in d["initial"]:
        init[s] = p
    emit = np.zeros((S, X))
    for s, x, p in d["emissions"]:
        emit[s, x] = p
    trans = np.zeros((S, K, S))
    for s, a, t, p in d["transitions"]:
        trans[s, a, t] = p
    rmean = np.zeros((X, K))
    fixed = np.zeros((X, K), dtype=bool)
    for x, a, mu, fx in d["rewards"]:
        rmean[x, a] = mu
        fixed[x, a] = fx
    names = {k: tuple(d[k]) for k in ("state_names", "obs_names", "action_names") if k in d}
    return CdpSpec(int(d["horizon"]), K, lvl, init, trans, emit, rmean, fixed, **names)


def save_spec(spec: CdpSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=1)


def load_spec(path) -> CdpSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))
