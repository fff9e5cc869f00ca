"""Value-function and policy classes with assumption checkers.

Classes are defined over all observation ids of a spec. Because observation
sets of different levels are disjoint, one table per element represents the
whole nonstationary family; the level-h class is the restriction to the
level-h observations.

Explicit elements are addressed by integer id. Tabular classes (the full box
``[0,1]^X`` or all maps ``X -> A``) are addressed by their table directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cdp_core import CdpSpec, exact_values
from .rng import as_generator


class Choice(NamedTuple):
    """An oracle answer: the element's table plus its id for explicit classes."""
    table: np.ndarray
    index: int | None


class ExplicitValueClass:
    def __init__(self, values):
        v = np.array(values, dtype=float, ndmin=2)
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("explicit values must lie in [0, 1]")
        v.setflags(write=False)
        self.values = v
        self.enumerations = 0

    tabular = False

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def num_obs(self) -> int:
        return self.values.shape[1]

    def table(self, handle) -> np.ndarray:
        return self.values[handle]

    def __len__(self):
        return self.size


class TabularValueClass:
    """All functions from ``num_obs`` observations into [0, 1]."""

    tabular = True

    def __init__(self, num_obs: int):
        self.num_obs = int(num_obs)
        self.enumerations = 0

    def table(self, handle) -> np.ndarray:
        t = np.asarray(handle, dtype=float)
        if t.shape != (self.num_obs,):
            raise ValueError("tabular handle has the wrong length")
        return t


class ExplicitPolicyClass:
    def __init__(self, actions, num_actions: int):
        p = np.array(actions, dtype=np.int64, ndmin=2)
        if p.size and (p.min() < 0 or p.max() >= num_actions):
            raise ValueError("policy action out of range")
        p.setflags(write=False)
        self.actions = p
        self.num_actions = int(num_actions)
        self.enumerations = 0

    tabular = False

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    @property
    def num_obs(self) -> int:
        return self.actions.shape[1]

    def table(self, handle) -> np.ndarray:
        return self.actions[handle]

    def __len__(self):
        return self.size


class TabularPolicyClass:
    """All maps from ``num_obs`` observations to actions."""

    tabular = True

    def __init__(self, num_obs: int, num_actions: int):
        self.num_obs = int(num_obs)
        self.num_actions = int(num_actions)
        self.enumerations = 0

    def table(self, handle) -> np.ndarray:
        t = np.asarray(handle, dtype=np.int64)
        if t.shape != (self.num_obs,):
            raise ValueError("tabular handle has the wrong length")
        return t


ValueClass = ExplicitValueClass | TabularValueClass
PolicyClass = ExplicitPolicyClass | TabularPolicyClass


def zero_class(num_obs: int) -> ExplicitValueClass:
    """The singleton class {x -> 0} used past the last level."""
    return ExplicitValueClass(np.zeros((1, num_obs)))


def eval_value(cls: ValueClass, handle, x: int) -> float:
    if not 0 <= x < cls.num_obs:
        raise KeyError(f"observation {x} is not in the class domain")
    return float(cls.table(handle)[x])


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionReport:
    """Flags for Assumptions 1-4.

    A flag is True/False, None when not checked, or one of the strings
    ``"sampled-true"`` and ``"inconclusive"`` for sampled checks.
    """

    policy_realizable: bool | None = None    # Assumption 1
    value_realizable: bool | None = None     # Assumption 2
    policy_value_complete: bool | str | None = None  # Assumption 3
    policy_complete: bool | str | None = None        # Assumption 4
    witnesses: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"assumption_1": self.policy_realizable, "assumption_2": self.value_realizable,
                "assumption_3": self.policy_value_complete, "assumption_4": self.policy_complete,
                "witnesses": self.witnesses}


def check_realizability(spec: CdpSpec, G: ValueClass, Pi: PolicyClass, tol: float = 1e-9) -> AssumptionReport:
    ev = exact_values(spec)
    rep = AssumptionReport()
    if G.tabular:
        rep.value_realizable = True
    else:
        dev = np.abs(G.values - ev.g_star).max(axis=1)
        rep.value_realizable = bool(dev.min() <= tol)
        if not rep.value_realizable:
            best = int(dev.argmin())
            gap = np.abs(G.values[best] - ev.g_star)
            rep.witnesses["assumption_2"] = {"function": best, "observation": int(gap.argmax()),
                                             "deviation": float(gap.max())}
    if Pi.tabular:
        rep.policy_realizable = True
    else:
        q_pi = np.take_along_axis(ev.q_star.T, Pi.actions, axis=0)  # (P, X)
        ok = q_pi >= ev.g_star - tol
        good = ok.all(axis=1)
        rep.policy_realizable = bool(good.any())
        if not rep.policy_realizable:
            best = int(ok.sum(axis=1).argmax())
            rep.witnesses["assumption_1"] = {"policy": best, "observation": int(np.flatnonzero(~ok[best])[0])}
    return rep


def backup_tables(spec: CdpSpec, g: np.ndarray, tol: float = 1e-12):
    """Q-values, greedy policy and backed-up values of ``g`` at every observation.

    For an observation at level h the continuation uses ``g`` on level h+1
    (zero past the last level). Greedy ties go to the lowest action.
    """
    v_state = spec.emissions @ g
    q = spec.reward_mean + spec.transitions[spec.obs_state] @ v_state
    best = q.max(axis=1)
    greedy = np.argmax(q >= best[:, None] - tol, axis=1)
    return q, greedy, best


def _policy_member(spec, Pi, q, best, obs, tol) -> bool:
    if Pi.tabular:
        return True
    acts = Pi.actions[:, obs]
    return bool(np.any(np.all(q[obs, acts] >= best[obs] - tol, axis=1)))


def _value_member(G, target, obs, tol) -> bool:
    if G.tabular:
        return True
    return bool(np.any(np.all(np.abs(G.values[:, obs] - target[obs]) <= tol, axis=1)))


def _candidate_levels(spec: CdpSpec, index: int) -> range:
    """Levels h for which g' is an element of G_{h+1}.

    Class rows serve every level but the last; the zero function (index -1)
    is G_{H+1} and serves only the last level.
    """
    H = spec.horizon
    return range(H - 1, H) if index < 0 else range(H - 1)


def check_completeness(spec: CdpSpec, G: ValueClass, Pi: PolicyClass, tol: float = 1e-9,
                       n_suffix_samples: int = 200, budget: int = 100_000, rng=0) -> AssumptionReport:
    """Assumption 3 exactly; Assumption 4 on sampled suffix policies."""
    rep = AssumptionReport()
    if G.tabular and Pi.tabular:
        rep.policy_value_complete = True
        rep.policy_complete = True
        return rep
    if G.tabular or Pi.tabular:
        raise ValueError("mixed tabular/explicit classes are not supported by the checker")
    rep.policy_value_complete = True
    for gi in [*range(G.size), -1]:
        gp = np.zeros(spec.num_obs) if gi < 0 else G.values[gi]
        q, _, best = backup_tables(spec, gp)
        for h in _candidate_levels(spec, gi):
            obs = spec.level_obs[h]
            if not _policy_member(spec, Pi, q, best, obs, tol):
                rep.policy_value_complete = False
                rep.witnesses.setdefault("assumption_3", {"function": gi, "level": h, "missing": "policy"})
            if not _value_member(G, best, obs, tol):
                rep.policy_value_complete = False
                rep.witnesses.setdefault("assumption_3", {"function": gi, "level": h, "missing": "value"})
    rep.policy_complete = _check_policy_completeness(spec, Pi, tol, n_suffix_samples, budget, rng, rep)
    return rep


def _suffix_q(spec: CdpSpec, pol: np.ndarray, h: int) -> np.ndarray:
    """Q-values at level h of following ``pol`` from level h+1 on."""
    v_state = np.zeros(spec.num_states)
    g = np.zeros(spec.num_obs)
    for l in range(spec.horizon - 1, h, -1):
        obs = spec.level_obs[l]
        a = pol[obs]
        g[obs] = spec.reward_mean[obs, a] + spec.transitions[spec.obs_state[obs], a] @ v_state
        states = spec.level_states[l]
        v_state[states] = spec.emissions[states] @ g
    obs = spec.level_obs[h]
    return spec.reward_mean[obs] + spec.transitions[spec.obs_state[obs]] @ v_state


def _check_policy_completeness(spec, Pi, tol, n_samples, budget, rng, rep):
    rng = as_generator(rng)
    H, P = spec.horizon, Pi.size
    work = 0
    sampled = False
    for h in range(H - 1, -1, -1):
        depth = H - 1 - h
        if depth == 0:
            suffixes = [np.zeros((0,), dtype=np.int64)]
        elif depth == 1:
            suffixes = [np.array([i]) for i in range(P)]
        else:
            sampled = True
            suffixes = [rng.integers(P, size=depth) for _ in range(n_samples)]
        for suf in suffixes:
            work += 1
            if work > budget:
                return "inconclusive"
            pol = np.zeros(spec.num_obs, dtype=np.int64)
            for j, pid in enumerate(suf):
                obs = spec.level_obs[h + 1 + j]
                pol[obs] = Pi.actions[pid, obs]
            q = _suffix_q(spec, pol, h)
            obs = spec.level_obs[h]
            qq = np.zeros((spec.num_obs, spec.num_actions))
            qq[obs] = q
            best = qq.max(axis=1)
            if not _policy_member(spec, Pi, qq, best, obs, tol):
                rep.witnesses["assumption_4"] = {"level": h, "suffix": [int(i) for i in suf]}
                return False
    return "sampled-true" if sampled else True


def close_classes(spec: CdpSpec, G: ExplicitValueClass, Pi: ExplicitPolicyClass,
                  tol: float = 1e-9, budget: int = 10_000):
    """Add greedy policies and backups until Assumption 3 holds.

    Returns ``(G', Pi', report)``. Every backup chain reaches g* after at
    most H steps, so the fixpoint is finite.
    """
    if Pi.size == 0 or G.size == 0:
        raise ValueError("cannot close an empty class")
    values = [row for row in G.values]
    policies = [row for row in Pi.actions]
    queue = list(range(len(values))) + [-1]   # -1 stands for the zero function
    added = 0
    while queue:
        i = queue.pop(0)
        gp = np.zeros(spec.num_obs) if i < 0 else values[i]
        q, greedy, best = backup_tables(spec, gp)
        pmat = np.array(policies)
        vmat = np.array(values)
        need_pol = need_val = False
        for h in _candidate_levels(spec, i):
            obs = spec.level_obs[h]
            acts = pmat[:, obs]
            if not np.any(np.all(q[obs, acts] >= best[obs] - tol, axis=1)):
                need_pol = True
            if not np.any(np.all(np.abs(vmat[:, obs] - best[obs]) <= tol, axis=1)):
                need_val = True
        if need_pol:
            policies.append(greedy)
            added += 1
        if need_val:
            values.append(np.clip(best, 0.0, 1.0))
            queue.append(len(values) - 1)
            added += 1
        if added > budget:
            raise RuntimeError(f"closure budget exceeded; {len(queue)} functions still unprocessed")
    G2 = ExplicitValueClass(np.array(values))
    P2 = ExplicitPolicyClass(np.array(policies), Pi.num_actions)
    return G2, P2, check_completeness(spec, G2, P2, tol, n_suffix_samples=0)


def value_bounds(spec: CdpSpec) -> np.ndarray:
    """Per-observation cap on any value: the largest reward still collectable, clipped to [0, 1]."""
    H = spec.horizon
    per_level = np.array([max(spec.reward_mean[spec.level_obs[h]].max(), 0.0) for h in range(H)])
    togo = np.cumsum(per_level[::-1])[::-1]
    return np.clip(togo[spec.obs_level], 0.0, 1.0)


def synthesize_classes(spec: CdpSpec, n_distractors: int, rng):
    """Realizable classes: g* and pi* hidden among random distractors.

    Distractor values at an observation are uniform on [0, cap], with the
    cap from :func:`value_bounds`, so backups of distractors stay in [0, 1].
    """
    rng = as_generator(rng)
    ev = exact_values(spec)
    n = n_distractors + 1
    values = rng.uniform(0, 1, size=(n, spec.num_obs)) * value_bounds(spec)
    actions = rng.integers(spec.num_actions, size=(n, spec.num_obs))
    gi, pi = rng.integers(n), rng.integers(n)
    values[gi] = np.clip(ev.g_star, 0, 1)
    actions[pi] = ev.optimal_policy()
    return ExplicitValueClass(values), ExplicitPolicyClass(actions, spec.num_actions)


# ---------------------------------------------------------------------------
# JSON


def classes_to_dict(G: ExplicitValueClass, Pi: ExplicitPolicyClass) -> dict:
    return {"format": "classes", "version": 1, "num_actions": Pi.num_actions,
            "values": G.values.tolist(), "policies": Pi.actions.tolist()}


def classes_from_dict(d: dict):
    if d.get("format") != "classes" or d.get("version") != 1:
        raise ValueError("not a version-1 classes document")
    return ExplicitValueClass(d["values"]), ExplicitPolicyClass(d["policies"], d["num_actions"])


def save_classes(G, Pi, path) -> None:
    with open(path, "w") as fh:
        json.dump(classes_to_dict(G, Pi), fh)


def load_classes(path):
    with open(path) as fh:
        return classes_from_dict(json.load(fh))
