from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from gamegen import random_small_model
from probnash.model import (
    GameModel,
    LatticeError,
    as_rational,
    build_goal_lattice,
    canonicalize_goal,
    check_divergence,
    compute_beta,
    make_stage,
    stage_beta,
    validate_model,
)
from probnash.scenarios import build_insurance_model

rationals = st.fractions(min_value=-20, max_value=20, max_denominator=12)


def one_state_model(stay=F(1, 2), reward=(1,), actions=(("a",),)):
    stage = make_stage(
        0,
        [0, "d"],
        {0: actions},
        {(0, ("a",)): reward},
        {(0, ("a",)): [(0, stay), ("d", 1 - stay)]},
    )
    return GameModel(len(actions), frozenset(["d"]), (), stage)


def test_as_rational_conversions():
    assert as_rational(0.1) == F(1, 10)
    assert as_rational("11/20") == F(11, 20)
    assert as_rational(" 3 ") == 3
    with pytest.raises(TypeError):
        as_rational(True)
    with pytest.raises(ZeroDivisionError):
        as_rational("1/0")


@given(st.lists(rationals, min_size=1, max_size=4))
def test_canonicalize_idempotent(goal):
    once = canonicalize_goal(goal)
    assert canonicalize_goal(once) == once
    assert all(x >= 0 for x in once)


@given(st.lists(st.tuples(rationals, rationals), min_size=1, max_size=4))
def test_canonicalize_order_preserving(pairs):
    lo = [min(a, b) for a, b in pairs]
    hi = [max(a, b) for a, b in pairs]
    assert all(x <= y for x, y in zip(canonicalize_goal(lo), canonicalize_goal(hi)))


def test_insurance_validates_clean():
    model, goal = build_insurance_model()
    report = validate_model(model)
    assert report.findings == []
    assert report.beta == F(2, 5)
    assert report.beta_sequence == [F(2, 5), F(2, 5)]
    assert goal == (2, 3)


def test_insurance_divergence_probe():
    model, _ = build_insurance_model()
    assert check_divergence(model, 5) == ("diverges (proven)", F(2))


def test_non_stochastic_row_reported():
    model = one_state_model()
    bad = make_stage(0, [0, "d"], {0: (("a",),)}, {(0, ("a",)): (1,)}, {(0, ("a",)): [(0, F(1, 2)), ("d", F(1, 3))]})
    report = validate_model(GameModel(1, frozenset(["d"]), (), bad))
    assert not report.ok
    assert any("not stochastic" in f.message and "5/6" in f.message for f in report.findings)
    assert validate_model(model).ok


def test_negative_reward_and_missing_row():
    stage = make_stage(
        0,
        [0, "d"],
        {0: (("a", "b"),)},
        {(0, ("a",)): (-1,)},
        {(0, ("a",)): [("d", 1)]},
    )
    report = validate_model(GameModel(1, frozenset(["d"]), (), stage))
    messages = [f.message for f in report.errors()]
    assert any("negative reward" in m for m in messages)
    assert any("missing kernel row" in m for m in messages)
    assert any("missing reward" in m for m in messages)


def test_unknown_successor_and_empty_action_list():
    stage = make_stage(0, [0, "d"], {0: ((),)}, {}, {})
    report = validate_model(GameModel(1, frozenset(["d"]), (), stage))
    assert any("empty action list" in f.message for f in report.errors())
    stage = make_stage(0, [0, "d"], {0: (("a",),)}, {(0, ("a",)): (0,)}, {(0, ("a",)): [("z", 1)]})
    report = validate_model(GameModel(1, frozenset(["d"]), (), stage))
    assert any("not in successor" in f.message for f in report.errors())


def test_zero_beta_warns_and_fails_divergence():
    model = one_state_model(stay=F(1))
    report = validate_model(model)
    assert report.ok and report.beta == 0
    assert any(f.severity == "warning" for f in report.findings)
    assert check_divergence(model, 3) == ("fails (proven)", 0)


def test_beta_is_min_over_prefix_and_tail():
    first = one_state_model(stay=F(1, 4)).tail
    tail = one_state_model(stay=F(2, 3)).tail
    model = GameModel(1, frozenset(["d"]), (first,), tail)
    assert stage_beta(model, 0) == F(3, 4)
    assert stage_beta(model, 7) == F(1, 3)
    assert compute_beta(model) == F(1, 3)


def test_insurance_lattice_stage_one():
    model, goal = build_insurance_model()
    lattice = build_goal_lattice(model, [goal], 3)
    assert lattice.goals(0) == ((2, 3),)
    assert set(lattice.goals(1)) == {(1, 2), (2, 2), (2, 3)}
    assert lattice.restrict(1).horizon == 1
    with pytest.raises(ValueError):
        lattice.restrict(4)


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_lattice_is_forward_closure(seed, horizon):
    model = random_small_model(seed)
    lattice = build_goal_lattice(model, model.initial_goals, horizon)
    for n in range(horizon):
        st_ = model.stage(n)
        image = {
            canonicalize_goal(x - y for x, y in zip(g, st_.rewards[(s, a)]))
            for g in lattice.goals(n)
            for s in model.nontarget_states(n)
            for a in st_.joint_actions(s)
        }
        assert image == set(lattice.goals(n + 1))
        assert list(lattice.goals(n + 1)) == sorted(image)


def test_goal_length_checked():
    model, _ = build_insurance_model()
    with pytest.raises(ValueError):
        build_goal_lattice(model, [(1,)], 2)


def test_lattice_error_is_keyerror():
    assert issubclass(LatticeError, KeyError)
