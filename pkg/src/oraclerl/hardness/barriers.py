"""Counterexamples for decoupled learning rules.

* :func:`build_backup_chain` with :func:`bellman_backup`: fitted backups
  over a two-function class amplify a tiny statistical error at the last
  level into a wrong first action.
* :func:`build_needle_env` with :func:`needle_explorer`: matching average
  values on visited distributions cannot tell a needle from noise, so
  optimistic exploration stalls.
* :func:`build_rare_reward_env` with :func:`sqloss`: a square-loss fit to a
  slightly suboptimal roll-out cannot separate g* from a biased function.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..cdp_core import CdpSpec, exact_values, policy_value
from ..envs import CdpBuilder
from ..function_classes import ExplicitPolicyClass, ExplicitValueClass
from ..rng import as_generator

TIE_TOL = 1e-12


@dataclass
class Barrier:
    spec: CdpSpec
    G: ExplicitValueClass
    Pi: ExplicitPolicyClass
    labels: dict = field(default_factory=dict)   # name -> observation id


# ---------------------------------------------------------------------------
# backup chain


def build_backup_chain(H: int, eps: float) -> Barrier:
    """Start state x_0 plus two deterministic chains of length H.

    Action 0 (a) enters the a-chain, action 1 (b) the b-chain; inside a
    chain both actions move on. The last a-state pays Ber(1/2 + eps), the
    last b-state Ber(1/2). G = [g*, g_bad] with g_bad(x_{h,b}) =
    1/2 + eps / 2^(h-1); Pi = [pi* (a at x_0), pi_bad (b at x_0)].
    """
    if H < 1 or not 0 < eps < 0.5:
        raise ValueError("need H >= 1 and 0 < eps < 1/2")
    b = CdpBuilder(H + 1, 2)
    s0, (x0,) = b.add_state(0, "x0")
    chain = {z: [b.add_state(h, f"x{h},{z}") for h in range(1, H + 1)] for z in "ab"}
    b.set_initial({s0: 1.0})
    b.set_transition(s0, 0, chain["a"][0][0])
    b.set_transition(s0, 1, chain["b"][0][0])
    for z in "ab":
        for h in range(H):
            s, (x,) = chain[z][h]
            for act in range(2):
                if h + 1 < H:
                    b.set_transition(s, act, chain[z][h + 1][0])
                    b.set_reward(x, act, 0.0, fixed=True)
        x_last = chain[z][-1][1][0]
        for act in range(2):
            b.set_reward(x_last, act, 0.5 + eps if z == "a" else 0.5)
    for act in range(2):
        b.set_reward(x0, act, 0.0, fixed=True)
    spec = b.build(action_names=["a", "b"])

    g_star = np.zeros(spec.num_obs)
    g_bad = np.zeros(spec.num_obs)
    g_star[x0] = g_bad[x0] = 0.5 + eps
    labels = {"x0": x0}
    for h in range(1, H + 1):
        xa = chain["a"][h - 1][1][0]
        xb = chain["b"][h - 1][1][0]
        labels[f"x{h},a"], labels[f"x{h},b"] = xa, xb
        g_star[xa] = g_bad[xa] = 0.5 + eps
        g_star[xb] = 0.5
        g_bad[xb] = 0.5 + eps / 2 ** (h - 1)
    pi_star = np.zeros(spec.num_obs, dtype=np.int64)
    pi_bad = pi_star.copy()
    pi_bad[x0] = 1
    return Barrier(spec, ExplicitValueClass([g_star, g_bad]), ExplicitPolicyClass([pi_star, pi_bad], 2), labels)


@dataclass
class BackupResult:
    policy: np.ndarray
    g_choice: list        # chosen G index per level
    pi_choice: list       # chosen Pi index per level

    def value(self, spec: CdpSpec) -> float:
        return policy_value(spec, self.policy)


def _pick(scores: np.ndarray, tie_break: str, maximize: bool) -> int:
    s = scores if maximize else -scores
    best = s.max()
    ties = np.flatnonzero(s >= best - TIE_TOL)
    if tie_break == "prefer-bad":
        return int(ties[-1])
    if tie_break == "lowest-id":
        return int(ties[0])
    raise ValueError(f"unknown tie_break {tie_break!r}")


def _draw(p: np.ndarray, n: int, rng) -> np.ndarray:
    support = np.flatnonzero(p > 0)
    if support.size == 1:
        return np.full(n, support[0])
    idx = np.searchsorted(np.cumsum(p[support]), rng.random(n) * p[support].sum(), side="right")
    return support[np.minimum(idx, support.size - 1)]


def _state_samples(spec: CdpSpec, s: int, a: int, n: int, rng):
    """n draws of (x, r, x') from state s under action a; x' is -1 past the end.

    x' depends only on (s, a), so it is drawn from P(x' | s, a) directly.
    """
    x = _draw(spec.emissions[s], n, rng)
    mean = spec.reward_mean[x, a]
    fixed = spec.reward_fixed[x, a]
    r = mean if fixed.all() else np.where(fixed, mean, (rng.random(n) < mean).astype(float))
    row = spec.transitions[s, a]
    if row.sum() == 0:
        return x, r, np.full(n, -1)
    return x, r, _draw(row @ spec.emissions, n, rng)


def _state_expectation(spec: CdpSpec, s: int, a: int):
    """The same triples with their exact probabilities (x, r_mean, x', weight)."""
    rows = []
    nxt = spec.transitions[s, a] @ spec.emissions
    for x in np.flatnonzero(spec.emissions[s] > 0):
        px = spec.emissions[s, x]
        if nxt.sum() == 0:
            rows.append((x, spec.reward_mean[x, a], -1, px))
            continue
        for x2 in np.flatnonzero(nxt > 0):
            rows.append((x, spec.reward_mean[x, a], x2, px * nxt[x2]))
    x, r, x2, w = (np.array(c) for c in zip(*rows))
    return x.astype(np.int64), r.astype(float), x2.astype(np.int64), w.astype(float)


def bellman_backup(spec: CdpSpec, G: ExplicitValueClass, Pi: ExplicitPolicyClass, n: int | None, rng=None,
                   tie_break: str = "lowest-id") -> BackupResult:
    """Per-level argmax over Pi then least squares over G, from the last level up.

    Every hidden state gets ``n`` samples per action, drawn directly from
    the state (an analysis-only shortcut: a learner cannot reset to hidden
    states). ``n=None`` uses exact expectations instead of samples.
    """
    rng = as_generator(rng)
    K = spec.num_actions
    g_next = np.zeros(spec.num_obs)
    policy = np.zeros(spec.num_obs, dtype=np.int64)
    g_choice, pi_choice = [None] * spec.horizon, [None] * spec.horizon
    for h in range(spec.horizon - 1, -1, -1):
        batches = []
        for s in spec.level_states[h]:
            for a in range(K):
                if n is None:
                    x, r, x2, w = _state_expectation(spec, s, a)
                else:
                    x, r, x2 = _state_samples(spec, s, a, n, rng)
                    w = np.full(n, 1.0 / n)
                tgt = r + np.where(x2 >= 0, g_next[np.maximum(x2, 0)], 0.0)
                batches.append((a, x, tgt, w))
        # sum over states of E_s[r + g(x') | a = pi(x)]
        pol_scores = np.array([sum(float(w @ (tgt * (Pi.actions[j][x] == a))) for a, x, tgt, w in batches)
                               for j in range(Pi.size)])
        j = _pick(pol_scores, tie_break, maximize=True)
        pi_choice[h] = j
        obs_h = spec.level_obs[h]
        policy[obs_h] = Pi.actions[j][obs_h]
        losses = np.zeros(G.size)
        for a, x, tgt, w in batches:
            on = policy[x] == a
            losses += ((G.values[:, x] - tgt) ** 2 * (w * on)).sum(axis=1)
        i = _pick(losses, tie_break, maximize=False)
        g_choice[h] = i
        g_next[obs_h] = G.values[i][obs_h]
    return BackupResult(policy, g_choice, pi_choice)


def backup_failure_rate(H: int, eps: float, n: int, trials: int, seed: int = 0,
                        tie_break: str = "prefer-bad") -> float:
    """Fraction of trials whose output is at least eps worse than optimal."""
    env = build_backup_chain(H, eps)
    v_star = exact_values(env.spec).v_star
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(trials):
        res = bellman_backup(env.spec, env.G, env.Pi, n, rng, tie_break)
        fails += res.value(env.spec) <= v_star - eps + 1e-12
    return fails / trials


def backup_failure_probability(H: int, eps: float, n: int) -> float:
    """Exact P(mean of n Ber(1/2) draws >= 1/2 + eps / 2^H), the trigger event."""
    from scipy.stats import binom
    k = math.ceil(n * (0.5 + eps / 2 ** H) - 1e-9)
    return float(binom.sf(k - 1, n, 0.5))


def sample_threshold(H: int, eps: float) -> float:
    """4^H / (32 eps^2)."""
    return 4 ** H / (32 * eps ** 2)


# ---------------------------------------------------------------------------
# needle in a haystack


def build_needle_env(m: int = 8, max_bad: int | None = None) -> Barrier:
    """m equally likely contexts at s_0; a leads to s_1 (reward 1), b to s_2 (reward 0).

    Pi lists the balanced policies (a on exactly half the contexts, value
    1/2) first and pi* (always a) last. G = [g_half, g*].
    """
    if m < 2 or m % 2:
        raise ValueError("m must be an even number >= 2")
    b = CdpBuilder(2, 2)
    s0, ctx = b.add_state(0, "s0", n_obs=m, obs_names=[f"c{i}" for i in range(m)])
    s1, (x1,) = b.add_state(1, "s1")
    s2, (x2,) = b.add_state(1, "s2")
    b.set_initial({s0: 1.0})
    b.set_transition(s0, 0, s1)
    b.set_transition(s0, 1, s2)
    for x in ctx:
        for act in range(2):
            b.set_reward(x, act, 0.0, fixed=True)
    for act in range(2):
        b.set_reward(x1, act, 1.0, fixed=True)
        b.set_reward(x2, act, 0.0, fixed=True)
    spec = b.build(action_names=["a", "b"])
    X = spec.num_obs
    bad = []
    for ones in itertools.combinations(range(m), m // 2):
        p = np.zeros(X, dtype=np.int64)
        p[ctx] = 1
        p[[ctx[i] for i in ones]] = 0
        bad.append(p)
        if max_bad is not None and len(bad) >= max_bad:
            break
    pi_star = np.zeros(X, dtype=np.int64)
    g_half = np.full(X, 0.5)
    g_star = np.zeros(X)
    g_star[ctx] = 1.0
    g_star[x1] = 1.0
    return Barrier(spec, ExplicitValueClass([g_half, g_star]), ExplicitPolicyClass(bad + [pi_star], 2),
                   {"s1": x1, "s2": x2, "contexts": list(ctx)})


def next_level_distribution(env: Barrier, policy: np.ndarray) -> np.ndarray:
    """Exact distribution over observations at level 1 when following ``policy``."""
    spec = env.spec
    d0 = spec.initial @ spec.emissions
    state = np.zeros(spec.num_states)
    for x in spec.level_obs[0]:
        state += d0[x] * spec.transitions[spec.obs_state[x], policy[x]]
    return state @ spec.emissions


def needle_constraint(env: Barrier, policy: np.ndarray) -> tuple[np.ndarray, float]:
    """(w, target): the constraint E_D[g] = E_D[g*] from a roll-in with ``policy``."""
    w = next_level_distribution(env, policy)
    g_star = exact_values(env.spec).g_star
    return w, float(w @ g_star)


@dataclass
class NeedleTrace:
    policy: np.ndarray
    policy_index: int
    suboptimality: float
    new_distributions: int
    chosen_policies: list
    chosen_values: list


def needle_explorer(env: Barrier, iterations: int = 100, tol: float = 1e-9,
                    seed_policy: int = 0) -> NeedleTrace:
    """Optimistic explorer driven by average-value constraints.

    Starting from the roll-in of Pi[seed_policy], each iteration picks the
    g in G that matches E_D[g*] on every visited distribution D and has the
    largest average value on them, then the policy maximising
    E[r + g(x')] (ties to the lowest index), and finally rolls that policy
    in. A roll-in distribution not seen before counts as new exploration.
    """
    spec = env.spec
    G, Pi = env.G, env.Pi
    v_star = exact_values(spec).v_star
    visited = [needle_constraint(env, Pi.actions[seed_policy])]
    d0 = spec.initial @ spec.emissions
    ctx = spec.level_obs[0]
    new = 0
    chosen, values = [], []
    idx = seed_policy
    for _ in range(iterations):
        W = np.array([w for w, _ in visited])
        targets = np.array([t for _, t in visited])
        feas = np.all(np.abs(G.values @ W.T - targets) <= tol, axis=1)
        score = np.where(feas, (G.values @ W.T).mean(axis=1), -np.inf)
        gi = int(np.argmax(score))
        g = G.values[gi]
        # E_{x ~ s0}[r + g(x') | a = pi(x)] for every policy
        q = spec.reward_mean[ctx] + spec.transitions[spec.obs_state[ctx]] @ spec.emissions @ g
        obj = (d0[ctx][None, :] * q[np.arange(ctx.size)[None, :], Pi.actions[:, ctx]]).sum(axis=1)
        idx = int(np.argmax(obj >= obj.max() - TIE_TOL))
        chosen.append(idx)
        values.append(float(obj[idx]))
        w = next_level_distribution(env, Pi.actions[idx])
        if not any(np.abs(w - v).max() <= tol for v, _ in visited):
            visited.append(needle_constraint(env, Pi.actions[idx]))
            new += 1
    pol = Pi.actions[idx]
    return NeedleTrace(pol.copy(), idx, v_star - policy_value(spec, pol), new, chosen, values)


# ---------------------------------------------------------------------------
# rare reward


def build_rare_reward_env(eps: float) -> Barrier:
    """One state, observation x_1 w.p. 1 - eps and x_2 w.p. eps.

    Only (x_2, a) pays 1. G = [g_0, g*, g_bad] with g_bad = sqrt(eps)
    everywhere; Pi = [pi_hat (always b), pi* (always a)].
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    b = CdpBuilder(1, 2)
    s, (x1, x2) = b.add_state(0, "s", n_obs=2, obs_probs=[1 - eps, eps], obs_names=["x1", "x2"])
    b.set_initial({s: 1.0})
    for act in range(2):
        b.set_reward(x1, act, 0.0, fixed=True)
    b.set_reward(x2, 0, 1.0, fixed=True)
    b.set_reward(x2, 1, 0.0, fixed=True)
    spec = b.build(action_names=["a", "b"])
    r = math.sqrt(eps)
    G = ExplicitValueClass([[0.0, 0.0], [0.0, 1.0], [r, r]])
    Pi = ExplicitPolicyClass([[1, 1], [0, 0]], 2)
    return Barrier(spec, G, Pi, {"x1": x1, "x2": x2, "g_0": 0, "g_star": 1, "g_bad": 2})


def sqloss(spec: CdpSpec, g: np.ndarray, policy: np.ndarray, level: int = 0) -> float:
    """E[(g(x) - r)^2 | a = pi(x)] at a single-state level, exactly.

    Bernoulli rewards contribute their variance.
    """
    states = spec.level_states[level]
    if states.size != 1:
        raise ValueError("sqloss is defined for a level with one hidden state")
    p = spec.emissions[states[0]]
    obs = spec.level_obs[level]
    a = np.asarray(policy)[obs]
    mu = spec.reward_mean[obs, a]
    var = np.where(spec.reward_fixed[obs, a], 0.0, mu * (1 - mu))
    g = np.asarray(g)[obs]
    return float(p[obs] @ ((g - mu) ** 2 + var))


def rare_reward_table(eps: float) -> dict:
    """sqloss of g_0, g*, g_bad under pi_hat and the bias E[g_bad - g*]."""
    env = build_rare_reward_env(eps)
    pi_hat = env.Pi.actions[0]
    p = env.spec.emissions[0]
    out = {name: sqloss(env.spec, env.G.values[env.labels[name]], pi_hat) for name in ("g_0", "g_star", "g_bad")}
    out["bias"] = float(p @ (env.G.values[2] - env.G.values[1]))
    out["v_star"] = exact_values(env.spec).v_star
    out["v_pi_hat"] = policy_value(env.spec, pi_hat)
    return out
