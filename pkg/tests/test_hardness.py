import numpy as np
import pytest

from oraclerl.cdp_core import exact_values
from oraclerl.function_classes import TabularPolicyClass, TabularValueClass
from oraclerl.hardness import (SatFormula, SearchBudgetExceeded, adversarial_olive_trace, backup_failure_probability,
                               backup_failure_rate, bellman_backup, brute_force_sat, build_backup_chain,
                               build_needle_env, build_rare_reward_env, exact_constraint, grid_value_class,
                               needle_explorer, olive_opt, olive_run, olive_sat_constraints, parse_dimacs,
                               random_formula, rare_reward_table, sample_threshold, sat_decision_via_olive, sat_to_mdp)
from oraclerl.hardness.olive import OliveProblem
from oraclerl.hardness.sat import compact_mdp, literal_target
from oraclerl.oracles import Infeasible


# ---------------------------------------------------------------------------
# DIMACS and brute force


def test_parse_dimacs_round_trip():
    f = SatFormula.from_clauses([(1, -2, 3), (-1, 2, 2)])
    assert parse_dimacs(f.to_dimacs()) == f


def test_parse_dimacs_pads_short_clauses():
    f = parse_dimacs("c comment\np cnf 2 2\n1 0\n-1 2 0\n")
    assert f.clauses == ((1, 1, 1), (-1, 2, 2))


@pytest.mark.parametrize("text", [
    "1 2 3 0\n",                        # no header
    "p cnf 3 2\n1 2 3 0\n",             # wrong clause count
    "p cnf 4 1\n1 2 3 4 0\n",           # too long
    "p cnf 3 1\n0\n",                   # empty clause
    "p cnf 2 1\n1 2 5 0\n",             # literal out of range
])
def test_parse_dimacs_errors(text):
    with pytest.raises(ValueError):
        parse_dimacs(text)


def test_brute_force():
    sat, z = brute_force_sat(SatFormula.from_clauses([(1, 1, 1), (-1, 2, 2)]))
    assert sat and z == (1, 1)
    assert brute_force_sat(SatFormula.from_clauses([(1, 1, 1), (-1, -1, -1)])) == (False, None)


# ---------------------------------------------------------------------------
# reduction


def test_literal_target():
    assert literal_target(1, 1) == (0, 1)
    assert literal_target(-1, 1) == (0, 0)
    assert literal_target(2, 0) == (1, 0)


def test_compact_mdp_rejects_bad_y():
    f = SatFormula.from_clauses([(1, 2, 3)])
    with pytest.raises(ValueError):
        compact_mdp(f, (1, 0))
    with pytest.raises(ValueError):
        compact_mdp(f, (1, 2, 0))


def test_constraint_count_small():
    assert len(olive_sat_constraints(SatFormula.from_clauses([(1, 1, 1)]))) == 11


@pytest.mark.parametrize("y, expected", [((1, 1, 1), 1.0), ((0, 0, 0), 2 / 3)])
def test_sat_mdp_values(y, expected):
    sat = sat_to_mdp(SatFormula.from_clauses([(1, 2, 3)]), y)
    spec = sat.spec
    ev = exact_values(spec)
    assert spec.horizon == 3 and spec.num_actions == 7
    assert sat.unscale(ev.v_star) == pytest.approx(expected)
    q = [sat.unscale(v) for v in ev.q_star[sat.s0]]
    assert sat.s0_labels[:3] == ["[try x1]", "[try x2]", "[try x3]"]
    assert q[:3] == pytest.approx([0.5] * 3)
    # [try C1] costs 1/m on top of the clause value
    assert q[3] == pytest.approx(expected - 1)


def test_sat_mdp_rewards_in_unit_interval():
    sat = sat_to_mdp(SatFormula.from_clauses([(1, -2, 3), (-1, 2, -3)]), (0, 1, 0))
    assert sat.spec.reward_mean.min() >= 0 and sat.spec.reward_mean.max() <= 1
    raw = sat_to_mdp(sat.formula, sat.y, rescale=False)
    assert raw.unscale(exact_values(raw.spec).v_star) == pytest.approx(sat.unscale(exact_values(sat.spec).v_star))


def test_decision_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(15):
        f = random_formula(rng, int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        assert sat_decision_via_olive(f) == brute_force_sat(f)[0]


def test_decision_budget():
    f = SatFormula.from_clauses([(1, 2, 3)])
    with pytest.raises(SearchBudgetExceeded):
        sat_decision_via_olive(f, budget=4)


def test_adversarial_trace_rounds():
    f = SatFormula.from_clauses([(1, 2, 3), (-1, -2, 3)])
    rounds = adversarial_olive_trace(f)
    assert len(rounds) == f.m + f.n_vars + 1
    assert [r.level for r in rounds] == [1] * (f.m + f.n_vars) + [0]
    assert set().union(*(r.added for r in rounds)) == olive_sat_constraints(f)


# ---------------------------------------------------------------------------
# OLIVE


def test_olive_opt_unconstrained_is_optimistic(fork_cdp):
    d0 = fork_cdp.initial @ fork_cdp.emissions
    sol = olive_opt(TabularValueClass(fork_cdp.num_obs), TabularPolicyClass(fork_cdp.num_obs, 2),
                    OliveProblem(d0, [], 0.0), 2)
    assert sol.value == pytest.approx(1.0)
    assert sol.policy_index == 0


def test_olive_opt_exact_constraints_pin_value(fork_cdp):
    ev = exact_values(fork_cdp)
    pol = ev.optimal_policy()
    cons = [exact_constraint(fork_cdp, pol, h) for h in range(fork_cdp.horizon)]
    d0 = fork_cdp.initial @ fork_cdp.emissions
    G, Pi = grid_value_class(fork_cdp.num_obs, 0.1), TabularPolicyClass(fork_cdp.num_obs, 2)
    sol = olive_opt(G, Pi, OliveProblem(d0, cons, 0.0), 2)
    assert not isinstance(sol, Infeasible)
    assert sol.value >= ev.v_star - 1e-9


def test_olive_run_exact(fork_cdp):
    G, Pi = TabularValueClass(fork_cdp.num_obs), TabularPolicyClass(fork_cdp.num_obs, 2)
    rep = olive_run(fork_cdp, G, Pi, phi=0.0, eps=0.05, exact=True)
    assert rep.returned
    assert rep.v_star - rep.v_policy <= 0.05 + 1e-9
    assert rep.diagnostics["num_constraints"] == rep.iterations - 1


def test_olive_run_sampled(fork_cdp):
    G, Pi = TabularValueClass(fork_cdp.num_obs), TabularPolicyClass(fork_cdp.num_obs, 2)
    rep = olive_run(fork_cdp, G, Pi, phi=0.05, eps=0.1, n_per_round=4000, rng=0)
    assert rep.returned
    assert rep.v_star - rep.v_policy <= 0.2


def test_grid_value_class_size():
    assert grid_value_class(2, 0.5).size == 9
    assert grid_value_class(3, 0).tabular


# ---------------------------------------------------------------------------
# barriers


def test_backup_chain_exact_backup():
    env = build_backup_chain(3, 0.2)
    assert exact_values(env.spec).v_star == pytest.approx(0.7)
    for tb in ("lowest-id", "prefer-bad"):
        assert bellman_backup(env.spec, env.G, env.Pi, None, tie_break=tb).value(env.spec) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        bellman_backup(env.spec, env.G, env.Pi, None, tie_break="random")


def test_backup_chain_validation():
    with pytest.raises(ValueError):
        build_backup_chain(0, 0.2)
    with pytest.raises(ValueError):
        build_backup_chain(3, 0.6)


def test_backup_sampled_failure_shrinks_with_n():
    assert backup_failure_rate(2, 0.2, 50, 100, seed=0) > 0.05
    assert backup_failure_rate(2, 0.2, 50_000, 100, seed=0) == 0.0


def test_failure_probability_and_threshold():
    assert sample_threshold(6, 0.2) == pytest.approx(3200)
    assert backup_failure_probability(6, 0.2, 3199) == pytest.approx(0.362, abs=0.002)
    assert backup_failure_probability(6, 0.2, 40960) == pytest.approx(0.104, abs=0.002)
    assert backup_failure_probability(2, 0.2, 10) > backup_failure_probability(2, 0.2, 1000)


def test_needle():
    env = build_needle_env(4)
    assert env.Pi.size == 6 + 1
    trace = needle_explorer(env, 20)
    assert trace.suboptimality == pytest.approx(0.5)
    assert trace.new_distributions == 0
    # starting from pi* there is nothing left to find
    assert needle_explorer(env, 5, seed_policy=env.Pi.size - 1).suboptimality == pytest.approx(0.0)
    with pytest.raises(ValueError):
        build_needle_env(3)


def test_rare_reward():
    eps = 0.04
    t = rare_reward_table(eps)
    assert t["g_0"] == 0.0
    assert t["g_star"] == pytest.approx(eps)
    assert t["g_bad"] == pytest.approx(eps)
    assert t["bias"] == pytest.approx(np.sqrt(eps) - eps)
    assert t["v_star"] == pytest.approx(eps) and t["v_pi_hat"] == 0.0
    with pytest.raises(ValueError):
        build_rare_reward_env(1.0)
