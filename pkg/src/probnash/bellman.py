"""One-step backward operators for a single player's first-passage probability.

For a non-target state ``i`` with residual goals ``goal`` and a joint action
``a``, the pure operator is::

    1[r_k(i, a) >= goal_k] * p(D | i, a)
        + sum_{j not in D} next(j, clamp(goal - r(i, a))) * p(j | i, a)

The reward test is done on exact rationals; only the result is a float.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .model import ONE, ZERO, GoalVector, LatticeError, StageModel, as_rational, canonicalize_goal

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class MixedAction:
    """A probability distribution over one player's action list at one cell.

    ``weights`` is aligned with ``actions`` and sums exactly to 1.
    """

    actions: tuple
    weights: tuple

    def __post_init__(self):
        ws = tuple(as_rational(w) for w in self.weights)
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "weights", ws)
        if len(ws) != len(self.actions):
            raise ValueError("weights and actions differ in length")
        if not self.actions:
            raise ValueError("empty action list")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("duplicate actions")
        if any(w < 0 for w in ws):
            raise ValueError("negative weight")
        if sum(ws, ZERO) != 1:
            raise ValueError(f"weights sum to {sum(ws, ZERO)}, not 1")

    @classmethod
    def point(cls, actions: Sequence, chosen) -> "MixedAction":
        actions = tuple(actions)
        if chosen not in actions:
            raise ValueError(f"{chosen!r} not among {actions!r}")
        return cls(actions, tuple(ONE if a == chosen else ZERO for a in actions))

    @classmethod
    def uniform(cls, actions: Sequence) -> "MixedAction":
        actions = tuple(actions)
        w = Fraction(1, len(actions))
        return cls(actions, (w,) * len(actions))

    @classmethod
    def from_mapping(cls, actions: Sequence, weights: Mapping) -> "MixedAction":
        unknown = set(weights) - set(actions)
        if unknown:
            raise ValueError(f"weights on actions outside the cell: {sorted(map(repr, unknown))}")
        return cls(tuple(actions), tuple(as_rational(weights.get(a, 0)) for a in actions))

    def weight(self, action) -> Fraction:
        return self.weights[self.actions.index(action)]

    def support(self) -> list[tuple]:
        return [(a, w) for a, w in zip(self.actions, self.weights) if w > 0]


class CellValues:
    """Continuation values of one player on the non-target cells of a stage.

    Lookups at goals whose ``player`` component is zero return 1 without
    consulting the table: the goal is already met and rewards are nonnegative.
    """

    def __init__(self, player: int, values: Mapping | None = None, default: float | None = None):
        self.player = player
        self.values = dict(values or {})
        self.default = default

    @classmethod
    def constant(cls, player: int, value: float) -> "CellValues":
        return cls(player, default=float(value))

    @classmethod
    def indicator(cls, player: int) -> "CellValues":
        """The truncation initializer: 1 iff the player's residual goal is 0."""
        return cls(player, default=0.0)

    def __call__(self, state, goal: GoalVector) -> float:
        if goal[self.player] == 0:
            return 1.0
        try:
            return self.values[(state, goal)]
        except KeyError:
            if self.default is not None:
                return self.default
            raise LatticeError(f"no continuation value for cell ({state!r}, {goal!r})") from None


def apply_pure(
    stage: StageModel,
    target,
    k: int,
    state,
    goal: GoalVector,
    action: tuple,
    next_values: CellValues,
) -> float:
    reward = stage.rewards[(state, action)]
    residual = canonicalize_goal(g - r for g, r in zip(goal, reward))
    absorbed = ZERO
    value = 0.0
    for j, p in stage.kernel[(state, action)]:
        if j in target:
            absorbed += p
        elif p:
            value += float(p) * next_values(j, residual)
    if reward[k] >= goal[k]:
        value += float(absorbed)
    return value


def _profile_terms(profile: Sequence[MixedAction]):
    for combo in itertools.product(*(m.support() for m in profile)):
        weight = ONE
        for _, w in combo:
            weight *= w
        yield tuple(a for a, _ in combo), weight


def apply_mixed(
    stage: StageModel,
    target,
    k: int,
    state,
    goal: GoalVector,
    profile: Sequence[MixedAction],
    next_values: CellValues,
) -> float:
    """Expectation of :func:`apply_pure` under independent per-player mixing."""
    _check_profile(stage, state, profile)
    return sum(
        float(w) * apply_pure(stage, target, k, state, goal, a, next_values)
        for a, w in _profile_terms(profile)
    )


def best_response(
    stage: StageModel,
    target,
    k: int,
    state,
    goal: GoalVector,
    others: Sequence,
    next_values: CellValues,
) -> tuple[float, list]:
    """Maximize :func:`apply_mixed` over player ``k``'s mixed actions.

    ``others`` has one entry per player; entry ``k`` is ignored.  The objective
    is linear in player k's weights, so the supremum over the simplex is the
    best vertex.  Returns the value and every maximizing action in declared order.
    """
    own = stage.actions[state][k]
    values = []
    for a in own:
        profile = list(others)
        profile[k] = MixedAction.point(own, a)
        values.append(apply_mixed(stage, target, k, state, goal, profile, next_values))
    best = max(values)
    tol = TIE_RTOL * max(1.0, abs(best))
    return best, [a for a, v in zip(own, values) if best - v <= tol]


def _check_profile(stage: StageModel, state, profile: Sequence[MixedAction]) -> None:
    lists = stage.actions[state]
    if len(profile) != len(lists):
        raise ValueError(f"profile has {len(profile)} entries for {len(lists)} players")
    for k, (m, acts) in enumerate(zip(profile, lists)):
        if not set(a for a, _ in m.support()) <= set(acts):
            raise ValueError(f"player {k} mixes over actions outside {acts!r}")
