import json

import numpy as np
import pytest

from oraclerl.cdp_core import (CdpSpec, exact_values, is_deterministic, load_spec, policy_value, rollout,
                               sample_episode, sample_from_path, save_spec, spec_from_dict, spec_to_dict,
                               state_after_path)
from oraclerl.envs import CdpBuilder, build_named, gridworld, random_deterministic_cdp
from oraclerl.hardness import build_backup_chain, build_needle_env, build_rare_reward_env


def one_step(r0=1.0, r1=0.0):
    b = CdpBuilder(1, 2)
    s, (x,) = b.add_state(0)
    b.set_initial({s: 1.0})
    b.set_reward(x, 0, r0, fixed=True)
    b.set_reward(x, 1, r1, fixed=True)
    return b.build()


def test_single_step_values():
    spec = one_step()
    ev = exact_values(spec)
    assert ev.v_star == 1.0
    assert ev.g_star[0] == 1.0
    assert sample_episode(spec, [0], 0).total_reward == 1.0
    assert sample_episode(spec, [1], 0).total_reward == 0.0


def test_rare_reward_values():
    eps = 0.04
    spec = build_rare_reward_env(eps).spec
    assert exact_values(spec).v_star == pytest.approx(eps, abs=1e-15)
    always_b = np.ones(spec.num_obs, dtype=int)
    for seed in range(20):
        assert sample_episode(spec, always_b, seed).total_reward == 0.0


def test_backup_chain_values():
    env = build_backup_chain(6, 0.2)
    assert exact_values(env.spec).v_star == pytest.approx(0.7)
    assert policy_value(env.spec, env.Pi.actions[1]) == pytest.approx(0.5)
    assert policy_value(env.spec, exact_values(env.spec).optimal_policy()) == pytest.approx(0.7)


def test_needle_uniform_value():
    env = build_needle_env(8)
    # a balanced policy plays a on half the contexts
    assert policy_value(env.spec, env.Pi.actions[0]) == pytest.approx(0.5)
    assert policy_value(env.spec, env.Pi.actions[-1]) == pytest.approx(1.0)


def test_is_deterministic():
    assert is_deterministic(one_step())
    b = CdpBuilder(2, 1)
    s0, _ = b.add_state(0)
    s1, _ = b.add_state(0)
    t, _ = b.add_state(1)
    b.set_initial({s0: 0.5, s1: 0.5})
    b.set_transition(s0, 0, t)
    b.set_transition(s1, 0, t)
    assert not is_deterministic(b.build())
    # point-mass start but one stochastic transition
    b = CdpBuilder(2, 2)
    s0, _ = b.add_state(0)
    t1, _ = b.add_state(1)
    t2, _ = b.add_state(1)
    b.set_initial({s0: 1.0})
    b.set_transition(s0, 0, {t1: 0.5, t2: 0.5})
    b.set_transition(s0, 1, t1)
    assert not is_deterministic(b.build())


def test_seeded_reproducibility():
    spec = random_deterministic_cdp(4, horizon=3, max_states=3, num_actions=2)
    pol = exact_values(spec).optimal_policy()
    assert sample_episode(spec, pol, 7) == sample_episode(spec, pol, 7)


def test_monte_carlo_mean_matches_policy_value():
    spec = gridworld(3, 4, seed=1)
    pol = np.random.default_rng(0).integers(spec.num_actions, size=spec.num_obs)
    ro = rollout(spec, (), 50_000, 11, [pol] * spec.horizon)
    sd = ro.returns.std() / np.sqrt(50_000)
    assert abs(ro.returns.mean() - policy_value(spec, pol)) <= 4 * sd + 1e-12


def test_sample_from_path_uniform_tail(fork_cdp):
    ro = sample_from_path(fork_cdp, (), "uniform", 10_000, 3)
    freq = np.bincount(ro.actions[:, 0], minlength=2) / 10_000
    assert np.all(np.abs(freq - 0.5) <= 3 * np.sqrt(0.25 / 10_000))
    ro = sample_from_path(fork_cdp, (1,), "uniform", 5, 3)
    assert ro.start_level == 1 and ro.obs.shape == (5, 1)
    assert set(ro.states[:, 0]) == {state_after_path(fork_cdp, (1,))}


def test_sample_from_path_policy_tail(fork_cdp):
    pol = np.array([0, 1, 0])
    ro = sample_from_path(fork_cdp, (), pol, 20_000, 5)
    sd = ro.returns.std() / np.sqrt(20_000)
    assert abs(ro.returns.mean() - policy_value(fork_cdp, pol)) <= 3 * sd + 1e-12


def test_path_too_long(fork_cdp):
    with pytest.raises(ValueError):
        rollout(fork_cdp, (0, 0), 1, 0, ["uniform"])


def test_policy_must_cover_observations(fork_cdp):
    with pytest.raises(ValueError):
        sample_episode(fork_cdp, [0], 0)


def test_invalid_specs():
    with pytest.raises(ValueError):
        CdpSpec(1, 1, [0], [0.5], np.zeros((1, 1, 1)), [[1.0]], [[0.0]])
    with pytest.raises(ValueError):   # shared observation
        CdpSpec(1, 1, [0, 0], [1.0, 0.0], np.zeros((2, 1, 2)), [[1.0], [1.0]], [[0.0]])
    with pytest.raises(ValueError):   # Bernoulli mean above 1
        CdpSpec(1, 1, [0], [1.0], np.zeros((1, 1, 1)), [[1.0]], [[1.5]])


def test_json_round_trip(tmp_path):
    spec = random_deterministic_cdp(2, horizon=3, max_states=4, num_actions=3)
    path = tmp_path / "spec.json"
    save_spec(spec, path)
    again = load_spec(path)
    assert exact_values(again).v_star == exact_values(spec).v_star
    assert spec_to_dict(again) == json.loads(path.read_text())
    assert np.array_equal(spec_from_dict(spec_to_dict(spec)).transitions, spec.transitions)


def test_random_cdp_shape():
    for seed in range(20):
        spec = random_deterministic_cdp(seed, horizon=3, max_states=4, num_actions=3)
        assert is_deterministic(spec)
        assert spec.max_states <= 4
        assert all(o.size <= 12 for o in spec.level_obs)
        # every state is reachable
        reach = {state_after_path(spec, p) for h in range(3)
                 for p in np.ndindex(*([3] * h))}
        assert reach == set(range(spec.num_states))
        assert exact_values(spec).v_star <= 1.0


def test_named_registry():
    assert build_named("gridworld", size=2, horizon=2).horizon == 2
    assert build_named("rare-reward", eps=0.25).num_obs == 2
    with pytest.raises(ValueError):
        build_named("nope")
