from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamegen import random_policy, reference_values, suite_model
from probnash.bellman import MixedAction
from probnash.evaluation import (
    MarkovMultipolicy,
    OracleBudgetExceeded,
    SweepPlan,
    enumerate_oracle,
    evaluate_best_response,
    evaluate_policy,
    greedy_policy,
    simulate,
    truncation_bound,
)
from probnash.model import GameModel, build_goal_lattice, make_stage
from probnash.scenarios import build_insurance_model


def pure_insurance(goal, horizon=10):
    model, _ = build_insurance_model()
    lattice = build_goal_lattice(model, [goal], horizon)
    return model, lattice, MarkovMultipolicy.stationary_pure(model, lattice, horizon, {1: ("a11", "b11")})


def test_truncation_bound_values():
    assert truncation_bound(F(2, 5), 0) == pytest.approx(2.5)
    assert truncation_bound(F(1), 3) == 0.0
    assert truncation_bound(F(2, 5), 10) == pytest.approx(0.6**10 / 0.4)
    with pytest.raises(ValueError):
        truncation_bound(0, 3)


@pytest.mark.parametrize("goal,closed_form", [((2, 2), 0.55), ((3, 2), 0.55**2)])
def test_geometric_closed_form(goal, closed_form):
    model, lattice, pol = pure_insurance(goal)
    table = evaluate_policy(model, pol, lattice, 0, 10)
    assert table.bound == pytest.approx(0.6**10 / 0.4)
    assert abs(table.value(0, 1, goal) - closed_form) <= table.bound
    # survival to the goal is the only way to succeed, so truncation is exact here
    assert table.value(0, 1, goal) == pytest.approx(closed_form, abs=1e-12)


def test_table_invariants_and_boundary():
    model, lattice, pol = pure_insurance((2, 3), 6)
    for k in range(2):
        for table in (evaluate_policy(model, pol, lattice, k, 6), evaluate_best_response(model, pol, lattice, k, 6)):
            for n, s, g, v in table.rows():
                assert 0.0 <= v <= 1.0
                if g[k] == 0:
                    assert v == 1.0


def test_zero_beta_table_is_uncertified():
    stage = make_stage(0, [0, "d"], {0: (("a",),)}, {(0, ("a",)): (1,)}, {(0, ("a",)): [(0, 1)]})
    model = GameModel(1, frozenset(["d"]), (), stage)
    lattice = build_goal_lattice(model, [(3,)], 4)
    pol = MarkovMultipolicy.uniform(model, lattice, 4)
    table = evaluate_policy(model, pol, lattice, 0, 4)
    assert not table.certified
    assert table.value(0, 0, (3,)) == 1.0  # goal met after three steps, never absorbed


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5))
def test_sweep_matches_scalar_reference(seed, m):
    model, lattice = suite_model(seed, m)
    pol = random_policy(model, lattice, m, seed)
    for k in range(model.num_players):
        ref_u = reference_values(model, pol, lattice, k, m)
        ref_v = reference_values(model, pol, lattice, k, m, best=True)
        u = evaluate_policy(model, pol, lattice, k, m)
        v = evaluate_best_response(model, pol, lattice, k, m)
        for n in range(m):
            for (s, g), val in ref_u[n].items():
                assert u.value(n, s, g) == pytest.approx(val, abs=1e-12)
                assert v.value(n, s, g) == pytest.approx(ref_v[n][(s, g)], abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5))
def test_one_step_consistency(seed, m):
    # u at stage n is the mixed operator applied to the table at stage n + 1
    from probnash.bellman import apply_mixed

    model, lattice = suite_model(seed, m)
    pol = random_policy(model, lattice, m, seed)
    table = evaluate_policy(model, pol, lattice, 0, m)
    for n in range(m):
        nxt = table.cell_values(n + 1)
        for s in model.nontarget_states(n):
            for g in lattice.goals(n):
                if g[0] == 0:
                    continue
                val = apply_mixed(model.stage(n), model.target, 0, s, g, pol.profile(model, n, s, g), nxt)
                assert table.value(n, s, g) == pytest.approx(val, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5))
def test_oracle_brackets_truncated_value(seed, m):
    model, lattice = suite_model(seed, m)
    pol = random_policy(model, lattice, m, seed)
    for k in range(model.num_players):
        table = evaluate_policy(model, pol, lattice, k, m)
        for s in model.nontarget_states(0):
            for g in lattice.goals(0):
                lo, hi = enumerate_oracle(model, pol, s, g, k, m)
                assert 0 <= lo <= hi <= 1
                assert float(lo) - 1e-12 <= table.value(0, s, g) <= float(hi) + 1e-12


def test_oracle_single_state_example():
    model, lattice, pol = pure_insurance((2, 2), 4)
    lo, hi = enumerate_oracle(model, pol, 1, (2, 2), 0, 4)
    p = F(11, 20)
    assert lo == p * (1 - p**3)
    assert hi == p
    with pytest.raises(OracleBudgetExceeded):
        enumerate_oracle(model, MarkovMultipolicy.uniform(model, lattice, 4), 1, (2, 2), 0, 4, budget=3)


def test_greedy_policy_attains_best_response():
    model, lattice, pol = pure_insurance((2, 3), 5)
    br = evaluate_best_response(model, pol, lattice, 1, 5)
    greedy = greedy_policy(pol, model, 1, br)
    u = evaluate_policy(model, greedy, lattice, 1, 5)
    assert np.allclose(u.values[0], br.values[0], atol=1e-12)


def test_plan_requires_lattice_coverage():
    model, _ = build_insurance_model()
    lattice = build_goal_lattice(model, [(2, 3)], 2)
    with pytest.raises(ValueError):
        SweepPlan(model, lattice, 3)


def test_simulate_matches_closed_form_and_is_reproducible():
    model, lattice, pol = pure_insurance((3, 2))
    est, err = simulate(model, pol, 1, (3, 2), 0, 20_000, 200, seed=11)
    assert abs(est - 0.3025) <= 4 * err
    assert simulate(model, pol, 1, (3, 2), 0, 3000, 200, seed=11) == simulate(model, pol, 1, (3, 2), 0, 3000, 200, seed=11)


def test_simulate_independent_of_jobs():
    model, lattice, pol = pure_insurance((2, 3))
    uni = MarkovMultipolicy.uniform(model, lattice, 10)
    a = simulate(model, uni, 1, (2, 3), 1, 5000, 100, seed=5, jobs=1)
    b = simulate(model, uni, 1, (2, 3), 1, 5000, 100, seed=5, jobs=2)
    assert a == b


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 100_000))
def test_simulation_agrees_with_sweep(seed):
    model, lattice = suite_model(seed, 40)
    pol = random_policy(model, lattice, 40, seed)
    s = model.nontarget_states(0)[0]
    g = lattice.goals(0)[0]
    table = evaluate_policy(model, pol, lattice, 0, 40)
    est, err = simulate(model, pol, s, g, 0, 4000, 40, seed=seed)
    # both truncate at 40 steps; allow five standard errors plus a small floor
    assert abs(est - table.value(0, s, g)) <= 5 * err + 0.01
