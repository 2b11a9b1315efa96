"""Nonstationary game model, exact goal arithmetic and the reachable goal lattice.

A game is described by a finite prefix of stages followed by one tail stage that
repeats forever.  All model data (rewards, transition probabilities, goals) is
held as :class:`fractions.Fraction`; nothing in this module touches floats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

State = Hashable
Action = Hashable
JointAction = tuple
GoalVector = tuple  # canonical: a tuple of nonnegative Fractions, one per player

ZERO = Fraction(0)
ONE = Fraction(1)


class LatticeError(KeyError):
    """A value lookup fell outside the goal lattice the caller built."""


def as_rational(value) -> Fraction:
    """Convert ``value`` to an exact Fraction.

    Strings are parsed as ``"num/den"`` or decimal literals, floats through
    their shortest decimal repr (so ``0.1`` becomes ``1/10``).
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a rational")


def format_rational(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True, eq=True)
class StageModel:
    """Primitive data of a single decision epoch.

    ``actions[i]`` holds one action tuple per player.  ``rewards`` and
    ``kernel`` are keyed by ``(state, joint_action)``; the reward entry is the
    vector over players and the kernel entry a tuple of ``(next_state, prob)``.
    Rows for target states may be omitted since play stops on entering the
    target set.
    """

    index: int
    states: tuple
    actions: Mapping[State, tuple]
    rewards: Mapping[tuple, tuple]
    kernel: Mapping[tuple, tuple]

    __hash__ = None  # mappings inside

    def joint_actions(self, state: State) -> list[JointAction]:
        return list(itertools.product(*self.actions[state]))

    def reward(self, player: int, state: State, action: JointAction) -> Fraction:
        return self.rewards[(state, action)][player]

    def target_probability(self, state: State, action: JointAction, target) -> Fraction:
        return sum((p for j, p in self.kernel[(state, action)] if j in target), ZERO)


@dataclass(frozen=True, eq=True)
class GameModel:
    """An eventually-stationary N-player game: ``prefix`` stages, then ``tail`` forever.

    ``initial_goals`` is optional metadata carried by game files so the CLI
    has a default set of stage-0 goals.
    """

    num_players: int
    target: frozenset
    prefix: tuple
    tail: StageModel
    initial_goals: tuple = ()

    __hash__ = None

    @property
    def prefix_length(self) -> int:
        return len(self.prefix)

    def stage(self, n: int) -> StageModel:
        if n < 0:
            raise IndexError(n)
        return self.prefix[n] if n < len(self.prefix) else self.tail

    def represented_stages(self) -> list[StageModel]:
        return [*self.prefix, self.tail]

    def nontarget_states(self, n: int) -> tuple:
        return tuple(s for s in self.stage(n).states if s not in self.target)

    def max_action_counts(self, last_stage: int) -> list[int]:
        """Per player, the largest per-state action count over stages ``0..last_stage``."""
        counts = [1] * self.num_players
        for n in range(min(last_stage, len(self.prefix)) + 1):
            st = self.stage(n)
            for s in self.nontarget_states(n):
                for k, acts in enumerate(st.actions[s]):
                    counts[k] = max(counts[k], len(acts))
        return counts


# --------------------------------------------------------------------------- #
# validation


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    location: str
    message: str


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)
    beta: Fraction | None = None
    beta_sequence: list | None = None
    divergence: str | None = None

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]


def _successor(model: GameModel, stage_pos: int) -> StageModel:
    # stage_pos indexes represented_stages(); the tail feeds itself
    return model.stage(stage_pos + 1) if stage_pos < len(model.prefix) else model.tail


def validate_model(model: GameModel) -> ValidationReport:
    """Check every model invariant, collecting findings instead of raising."""
    report = ValidationReport()
    add = lambda sev, loc, msg: report.findings.append(Finding(sev, loc, msg))

    if model.num_players < 1:
        add("error", "header", "num_players must be at least 1")
    if not model.target:
        add("error", "header", "target set is empty")

    for pos, st in enumerate(model.represented_stages()):
        where = "tail" if pos == len(model.prefix) else f"stage {pos}"
        states = set(st.states)
        if len(states) != len(st.states):
            add("error", where, "duplicate state labels")
        missing_target = [d for d in model.target if d not in states]
        if missing_target:
            add("error", where, f"target states {missing_target!r} not in the state set")
        next_states = set(_successor(model, pos).states)

        for s in st.states:
            if s in model.target and s not in st.actions:
                continue
            loc = f"{where}, state {s!r}"
            acts = st.actions.get(s)
            if acts is None:
                add("error", loc, "no action lists declared")
                continue
            if len(acts) != model.num_players:
                add("error", loc, f"expected {model.num_players} action lists, got {len(acts)}")
                continue
            bad = False
            for k, a in enumerate(acts):
                if not a:
                    add("error", loc, f"player {k} has an empty action list")
                    bad = True
                elif len(set(a)) != len(a):
                    add("error", loc, f"player {k} has duplicate actions")
                    bad = True
            if bad:
                continue
            for a in st.joint_actions(s):
                cell = f"{loc}, action {a!r}"
                key = (s, a)
                rew = st.rewards.get(key)
                row = st.kernel.get(key)
                if s in model.target and rew is None and row is None:
                    continue
                if rew is None:
                    add("error", cell, "missing reward vector")
                elif len(rew) != model.num_players:
                    add("error", cell, "reward vector has wrong length")
                else:
                    for k, r in enumerate(rew):
                        if r < 0:
                            add("error", cell, f"negative reward {format_rational(r)} for player {k}")
                if row is None:
                    add("error", cell, "missing kernel row")
                    continue
                total = ZERO
                seen = set()
                for j, p in row:
                    if p < 0:
                        add("error", cell, f"negative probability {format_rational(p)}")
                    if j not in next_states:
                        add("error", cell, f"next state {j!r} not in successor stage")
                    if j in seen:
                        add("warning", cell, f"next state {j!r} listed twice")
                    seen.add(j)
                    total += p
                if total != 1:
                    add("error", cell, f"kernel row not stochastic (sums to {format_rational(total)})")
        extra = [key for key in st.kernel if key[0] not in states]
        if extra:
            add("error", where, f"kernel rows for undeclared states {sorted({k[0] for k in extra}, key=repr)!r}")

    if report.ok:
        report.beta = compute_beta(model)
        probe = len(model.prefix) + 1
        report.beta_sequence = [stage_beta(model, n) for n in range(probe)]
        report.divergence, _ = check_divergence(model, probe)
        if report.beta == 0:
            add("warning", "model", "Assumption B fails: some row never reaches the target set")
    return report


# --------------------------------------------------------------------------- #
# absorption constants


def stage_beta(model: GameModel, n: int) -> Fraction:
    """min over non-target states and joint actions of p_n(D | i, a)."""
    st = model.stage(n)
    best = ONE
    for s in model.nontarget_states(n):
        for a in st.joint_actions(s):
            best = min(best, st.target_probability(s, a, model.target))
    return best


def compute_beta(model: GameModel) -> Fraction:
    """Uniform one-step absorption bound over every represented stage.

    Because the tail repeats, this finite minimum is the infimum over all n.
    """
    return min(stage_beta(model, n) for n in range(len(model.prefix) + 1))


def check_divergence(model: GameModel, probe_horizon: int) -> tuple[str, Fraction]:
    """Decide whether the per-stage absorption bounds have a divergent sum.

    Returns the verdict and the exact partial sum over stages ``0..probe_horizon-1``.
    """
    partial = sum((stage_beta(model, n) for n in range(probe_horizon)), ZERO)
    tail_beta = stage_beta(model, len(model.prefix))
    if tail_beta > 0:
        return "diverges (proven)", partial
    if tail_beta == 0:
        return "fails (proven)", partial
    return "inconclusive", partial


# --------------------------------------------------------------------------- #
# goals


def canonicalize_goal(goal: Iterable) -> GoalVector:
    """Clamp each residual goal at zero: a goal already met stays met."""
    return tuple(g if g > 0 else ZERO for g in (as_rational(x) for x in goal))


@dataclass(frozen=True)
class GoalLattice:
    """Per stage n = 0..horizon, the sorted reachable canonical goal vectors."""

    stages: tuple

    @property
    def horizon(self) -> int:
        return len(self.stages) - 1

    def goals(self, n: int) -> tuple:
        return self.stages[n]

    def index(self, n: int) -> dict:
        return {g: idx for idx, g in enumerate(self.stages[n])}

    def restrict(self, horizon: int) -> "GoalLattice":
        if horizon > self.horizon:
            raise ValueError(f"lattice only covers stages 0..{self.horizon}")
        return GoalLattice(self.stages[: horizon + 1])


def stage_reward_vectors(model: GameModel, n: int) -> set:
    st = model.stage(n)
    return {st.rewards[(s, a)] for s in model.nontarget_states(n) for a in st.joint_actions(s)}


def build_goal_lattice(model: GameModel, initial_goals: Iterable, horizon: int) -> GoalLattice:
    """Forward closure of the initial goals under reward subtraction and clamping."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    current = {canonicalize_goal(g) for g in initial_goals}
    if not current:
        raise ValueError("at least one initial goal is required")
    for g in current:
        if len(g) != model.num_players:
            raise ValueError(f"goal {g!r} does not have {model.num_players} components")
    stages = [tuple(sorted(current))]
    for n in range(horizon):
        rewards = stage_reward_vectors(model, n)
        current = {
            canonicalize_goal(gk - rk for gk, rk in zip(g, r)) for g in current for r in rewards
        }
        stages.append(tuple(sorted(current)))
    return GoalLattice(tuple(stages))


def make_stage(
    index: int,
    states: Sequence,
    actions: Mapping,
    rewards: Mapping,
    kernel: Mapping,
) -> StageModel:
    """Build a StageModel, coercing probabilities and rewards to Fractions."""
    return StageModel(
        index=index,
        states=tuple(states),
        actions={s: tuple(tuple(a) for a in acts) for s, acts in actions.items()},
        rewards={key: tuple(as_rational(r) for r in vec) for key, vec in rewards.items()},
        kernel={key: tuple((j, as_rational(p)) for j, p in row) for key, row in kernel.items()},
    )
