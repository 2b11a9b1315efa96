"""Truncated backward recursions for policy values and best-response values.

``evaluate_policy`` computes u^m (the value of a fixed Markov multipolicy after
m backward steps from the indicator initialization) and ``evaluate_best_response``
computes v^m (player k optimizing against the others).  Both carry the
geometric truncation bound (1 - beta)^m / beta when beta > 0.

The sweep runs on a :class:`SweepPlan`: model data compiled once into integer
indices and float arrays so that each stage is a handful of numpy operations.
:func:`enumerate_oracle` and :func:`simulate` are deliberately separate code
paths that never touch the plan.
"""

from __future__ import annotations

import bisect
import itertools
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .bellman import TIE_RTOL, CellValues, MixedAction
from .model import (
    ONE,
    ZERO,
    GameModel,
    GoalLattice,
    LatticeError,
    as_rational,
    canonicalize_goal,
    compute_beta,
)


class OracleBudgetExceeded(RuntimeError):
    pass


# --------------------------------------------------------------------------- #
# policies


@dataclass
class MarkovMultipolicy:
    """One mixed action per player for every (stage, state, goal) cell below ``horizon``.

    ``rules[(n, state, goal)]`` is a tuple of MixedAction, one per player.
    Stages at or beyond ``horizon`` play uniformly over each action list.
    """

    horizon: int
    lattice: GoalLattice
    rules: dict = field(default_factory=dict)
    tail_rule: str = "uniform"

    def __post_init__(self):
        if self.tail_rule != "uniform":
            raise ValueError("only the uniform tail rule is supported")
        if self.lattice.horizon < self.horizon:
            raise ValueError("lattice shorter than policy horizon")

    def profile(self, model: GameModel, n: int, state, goal) -> tuple:
        if n >= self.horizon:
            return tuple(MixedAction.uniform(acts) for acts in model.stage(n).actions[state])
        try:
            return self.rules[(n, state, goal)]
        except KeyError:
            raise LatticeError(f"policy has no rule for stage {n}, state {state!r}, goal {goal!r}") from None

    def cells(self, model: GameModel):
        for n in range(self.horizon):
            for s in model.nontarget_states(n):
                for g in self.lattice.goals(n):
                    yield n, s, g

    @classmethod
    def from_chooser(cls, model: GameModel, lattice: GoalLattice, horizon: int, chooser: Callable) -> "MarkovMultipolicy":
        """Build a policy from ``chooser(n, state, goal, action_lists) -> tuple of MixedAction``."""
        pol = cls(horizon, lattice)
        for n, s, g in pol.cells(model):
            pol.rules[(n, s, g)] = tuple(chooser(n, s, g, model.stage(n).actions[s]))
        return pol

    @classmethod
    def uniform(cls, model: GameModel, lattice: GoalLattice, horizon: int) -> "MarkovMultipolicy":
        return cls.from_chooser(
            model, lattice, horizon, lambda n, s, g, lists: [MixedAction.uniform(a) for a in lists]
        )

    @classmethod
    def stationary_pure(
        cls, model: GameModel, lattice: GoalLattice, horizon: int, choice: Mapping
    ) -> "MarkovMultipolicy":
        """Play ``choice[state]`` (a joint action) at every stage and goal."""
        return cls.from_chooser(
            model,
            lattice,
            horizon,
            lambda n, s, g, lists: [MixedAction.point(acts, a) for acts, a in zip(lists, choice[s])],
        )

    def with_player(self, k: int, rules_k: Mapping) -> "MarkovMultipolicy":
        """Copy with player k's mixed action replaced on the cells in ``rules_k``."""
        new = dict(self.rules)
        for cell, m in rules_k.items():
            prof = list(new[cell])
            prof[k] = m
            new[cell] = tuple(prof)
        return MarkovMultipolicy(self.horizon, self.lattice, new, self.tail_rule)

    def first_problem(self, model: GameModel) -> str | None:
        """Describe the first cell whose rule is missing or malformed, else None."""
        for n, s, g in self.cells(model):
            prof = self.rules.get((n, s, g))
            where = f"stage {n}, state {s!r}, goal {tuple(str(x) for x in g)}"
            if prof is None:
                return f"missing rule at {where}"
            lists = model.stage(n).actions[s]
            if len(prof) != len(lists):
                return f"wrong number of players at {where}"
            for k, (m, acts) in enumerate(zip(prof, lists)):
                if set(m.actions) != set(acts):
                    return f"player {k} action list {m.actions!r} does not match {acts!r} at {where}"
        return None

    def to_arrays(self, plan: "SweepPlan") -> "ArrayPolicy":
        weights = {}
        for n in range(min(self.horizon, plan.horizon)):
            for si, s in enumerate(plan.states[n]):
                block = plan.blocks[n][si]
                per_player = []
                for k, acts in enumerate(block.actions):
                    arr = np.empty((len(plan.goals[n]), len(acts)))
                    for gi, g in enumerate(plan.goals[n]):
                        m = self.profile(plan.model, n, s, g)[k]
                        if m.actions == acts:
                            arr[gi] = [float(w) for w in m.weights]
                        else:
                            arr[gi] = [float(m.weight(a)) for a in acts]
                    per_player.append(arr)
                weights[(n, si)] = per_player
        return ArrayPolicy(self.horizon, weights)


class ArrayPolicy:
    """Float weight arrays ``(goals, actions)`` per (stage, state index, player)."""

    def __init__(self, horizon: int, weights: dict):
        self.horizon = horizon
        self.weights = weights

    def player_weights(self, plan: "SweepPlan", n: int, si: int) -> list:
        if n >= self.horizon:
            return plan.uniform_weights(n, si)
        return self.weights[(n, si)]


# --------------------------------------------------------------------------- #
# compiled sweep


@dataclass
class _StateBlock:
    state: object
    actions: tuple          # per player
    shape: tuple            # action count per player
    p_target: np.ndarray    # (A,)
    succ: np.ndarray        # (J,) indices of non-target successors at stage n+1
    prob: np.ndarray        # (A, J)
    next_goal: np.ndarray   # (G, A) goal index at stage n+1
    hit: np.ndarray         # (N, G, A) 1.0 where r_k >= goal_k


class SweepPlan:
    """Model data for stages 0..horizon-1 compiled against a goal lattice."""

    def __init__(self, model: GameModel, lattice: GoalLattice, horizon: int):
        if lattice.horizon < horizon:
            raise ValueError(f"lattice covers stages 0..{lattice.horizon}, need 0..{horizon}")
        self.model = model
        self.lattice = lattice
        self.horizon = horizon
        N = model.num_players
        self.states = [model.nontarget_states(n) for n in range(horizon + 1)]
        self.goals = [lattice.goals(n) for n in range(horizon + 1)]
        self.boundary = [
            np.array([[g[k] == 0 for g in goals] for k in range(N)], dtype=bool).reshape(N, len(goals))
            for goals in self.goals
        ]
        self.blocks = [
            [self._block(n, s) for s in self.states[n]] for n in range(horizon)
        ]
        self._uniform = {}

    def _block(self, n: int, s) -> _StateBlock:
        model = self.model
        st = model.stage(n)
        acts = st.actions[s]
        joint = list(itertools.product(*acts))
        goals = self.goals[n]
        next_index = {g: i for i, g in enumerate(self.goals[n + 1])}
        next_states = {j: i for i, j in enumerate(self.states[n + 1])}

        succ_order = []
        for a in joint:
            for j, p in st.kernel[(s, a)]:
                if j not in model.target and p and j not in succ_order:
                    succ_order.append(j)
        col = {j: c for c, j in enumerate(succ_order)}
        prob = np.zeros((len(joint), len(succ_order)))
        p_target = np.zeros(len(joint))
        for ai, a in enumerate(joint):
            absorbed = ZERO
            for j, p in st.kernel[(s, a)]:
                if j in model.target:
                    absorbed += p
                elif p:
                    prob[ai, col[j]] += float(p)
            p_target[ai] = float(absorbed)

        next_goal = np.zeros((len(goals), len(joint)), dtype=np.intp)
        hit = np.zeros((model.num_players, len(goals), len(joint)))
        memo = {}
        for ai, a in enumerate(joint):
            r = st.rewards[(s, a)]
            for gi, g in enumerate(goals):
                key = (g, r)
                if key not in memo:
                    residual = canonicalize_goal(x - y for x, y in zip(g, r))
                    try:
                        memo[key] = next_index[residual]
                    except KeyError:
                        raise LatticeError(
                            f"stage {n + 1} lattice lacks goal {residual!r} reached from {g!r}"
                        ) from None
                next_goal[gi, ai] = memo[key]
                for k in range(model.num_players):
                    hit[k, gi, ai] = 1.0 if r[k] >= g[k] else 0.0
        return _StateBlock(
            state=s,
            actions=acts,
            shape=tuple(len(x) for x in acts),
            p_target=p_target,
            succ=np.array([next_states[j] for j in succ_order], dtype=np.intp),
            prob=prob,
            next_goal=next_goal,
            hit=hit,
        )

    def uniform_weights(self, n: int, si: int) -> list:
        key = (n, si)
        if key not in self._uniform:
            G = len(self.goals[n])
            acts = self.model.stage(n).actions[self.states[n][si]]
            self._uniform[key] = [np.full((G, len(a)), 1.0 / len(a)) for a in acts]
        return self._uniform[key]

    def terminal(self, k: int, m: int) -> np.ndarray:
        """u^0 on stage m: 1 where player k's residual goal is 0."""
        return np.broadcast_to(self.boundary[m][k], (len(self.states[m]), len(self.goals[m]))).astype(float)

    def q_values(self, n: int, si: int, k: int, next_values: np.ndarray) -> np.ndarray:
        """Pure-action operator values, shape (goals, joint actions)."""
        b = self.blocks[n][si]
        q = b.hit[k] * b.p_target
        if b.succ.size:
            cont = next_values[b.succ][:, b.next_goal]  # (J, G, A)
            q = q + np.einsum("aj,jga->ga", b.prob, cont)
        return q


def _joint_weights(weights: list) -> np.ndarray:
    w = weights[0]
    for wk in weights[1:]:
        w = (w[:, :, None] * wk[:, None, :]).reshape(w.shape[0], -1)
    return w


def _finish(values: np.ndarray, boundary_k: np.ndarray) -> np.ndarray:
    np.minimum(values, 1.0, out=values)
    np.maximum(values, 0.0, out=values)
    values[:, boundary_k] = 1.0
    return values


def sweep_policy(plan: SweepPlan, policy: ArrayPolicy, k: int, m: int) -> list:
    """Stage-indexed arrays of u^{m-n}, n = 0..m."""
    if m > plan.horizon:
        raise ValueError("plan horizon too short")
    out = [None] * (m + 1)
    out[m] = plan.terminal(k, m)
    for n in range(m - 1, -1, -1):
        vals = np.empty((len(plan.states[n]), len(plan.goals[n])))
        for si in range(len(plan.states[n])):
            q = plan.q_values(n, si, k, out[n + 1])
            w = _joint_weights(policy.player_weights(plan, n, si))
            vals[si] = (w * q).sum(axis=1)
        out[n] = _finish(vals, plan.boundary[n][k])
    return out


def sweep_best_response(plan: SweepPlan, policy: ArrayPolicy, k: int, m: int, want_argmax: bool = True):
    """Stage-indexed arrays of v^{m-n} and, per stage, player k's maximizing action masks."""
    if m > plan.horizon:
        raise ValueError("plan horizon too short")
    N = plan.model.num_players
    out = [None] * (m + 1)
    masks = [None] * m
    out[m] = plan.terminal(k, m)
    for n in range(m - 1, -1, -1):
        vals = np.empty((len(plan.states[n]), len(plan.goals[n])))
        stage_masks = []
        for si in range(len(plan.states[n])):
            b = plan.blocks[n][si]
            q = plan.q_values(n, si, k, out[n + 1]).reshape((-1,) + b.shape)
            ws = policy.player_weights(plan, n, si)
            G = q.shape[0]
            for l in range(N):
                if l == k:
                    continue
                shape = [G] + [1] * N
                shape[l + 1] = b.shape[l]
                q = q * ws[l].reshape(shape)
            axes = tuple(l + 1 for l in range(N) if l != k)
            qk = q.sum(axis=axes) if axes else q  # (G, A_k)
            best = qk.max(axis=1)
            vals[si] = best
            if want_argmax:
                tol = TIE_RTOL * np.maximum(1.0, np.abs(best))
                stage_masks.append(qk >= (best - tol)[:, None])
        out[n] = _finish(vals, plan.boundary[n][k])
        masks[n] = stage_masks
    return out, masks


# --------------------------------------------------------------------------- #
# value tables


def truncation_bound(beta, m: int) -> float:
    """sum_{t >= m} (1 - beta)^t = (1 - beta)^m / beta."""
    beta = as_rational(beta)
    if beta <= 0:
        raise ValueError("truncation bound undefined for beta <= 0")
    if beta > 1:
        raise ValueError("beta cannot exceed 1")
    if m > 2000:
        return math.exp(m * math.log1p(-float(beta))) / float(beta) if beta < 1 else 0.0
    return float((1 - beta) ** m / beta)


@dataclass
class ValueTable:
    """Per-stage values of one player on (non-target state, lattice goal) cells.

    ``bound`` is the truncation error certified against the infinite-horizon
    criterion, or None when the model has no positive absorption constant.
    """

    player: int
    horizon: int
    states: list
    goals: list
    values: list
    bound: float | None
    argmax: list | None = None

    @property
    def certified(self) -> bool:
        return self.bound is not None

    def value(self, n: int, state, goal) -> float:
        goal = canonicalize_goal(goal)
        try:
            return float(self.values[n][self.states[n].index(state), self.goals[n].index(goal)])
        except ValueError:
            raise LatticeError(f"no cell ({state!r}, {goal!r}) at stage {n}") from None

    def cell_values(self, n: int) -> CellValues:
        vals = {
            (s, g): float(self.values[n][si, gi])
            for si, s in enumerate(self.states[n])
            for gi, g in enumerate(self.goals[n])
        }
        return CellValues(self.player, vals)

    def rows(self):
        for n in range(self.horizon + 1):
            for si, s in enumerate(self.states[n]):
                for gi, g in enumerate(self.goals[n]):
                    yield n, s, g, float(self.values[n][si, gi])


def _table(plan, k, m, arrays, bound, argmax=None) -> ValueTable:
    return ValueTable(
        player=k,
        horizon=m,
        states=[tuple(plan.states[n]) for n in range(m + 1)],
        goals=[tuple(plan.goals[n]) for n in range(m + 1)],
        values=arrays,
        bound=bound,
        argmax=argmax,
    )


def _bound(model: GameModel, m: int, beta=None):
    beta = compute_beta(model) if beta is None else as_rational(beta)
    return truncation_bound(beta, m) if beta > 0 else None


def _as_arrays(policy, plan):
    return policy if isinstance(policy, ArrayPolicy) else policy.to_arrays(plan)


def evaluate_policy(
    model: GameModel,
    policy,
    lattice: GoalLattice,
    k: int,
    m: int,
    *,
    plan: SweepPlan | None = None,
    beta=None,
) -> ValueTable:
    """u^m for player k under ``policy``; stages beyond the policy horizon play uniformly."""
    plan = plan or SweepPlan(model, lattice, m)
    arrays = sweep_policy(plan, _as_arrays(policy, plan), k, m)
    return _table(plan, k, m, arrays, _bound(model, m, beta))


def evaluate_best_response(
    model: GameModel,
    others,
    lattice: GoalLattice,
    k: int,
    m: int,
    *,
    plan: SweepPlan | None = None,
    beta=None,
) -> ValueTable:
    """v^m for player k against the other players' rules in ``others``.

    Player k's own rules in ``others`` are ignored.  ``argmax[n]`` maps each
    stage-n cell to player k's maximizing actions in declared order.
    """
    plan = plan or SweepPlan(model, lattice, m)
    arrays, masks = sweep_best_response(plan, _as_arrays(others, plan), k, m)
    argmax = []
    for n in range(m):
        cells = {}
        for si, s in enumerate(plan.states[n]):
            acts = plan.blocks[n][si].actions[k]
            mask = masks[n][si]
            for gi, g in enumerate(plan.goals[n]):
                cells[(s, g)] = tuple(a for a, hit in zip(acts, mask[gi]) if hit)
        argmax.append(cells)
    return _table(plan, k, m, arrays, _bound(model, m, beta), argmax)


def greedy_policy(base: MarkovMultipolicy, model: GameModel, k: int, table: ValueTable) -> MarkovMultipolicy:
    """Replace player k in ``base`` by the first maximizing pure action of ``table``."""
    rules = {}
    for n, s, g in base.cells(model):
        acts = model.stage(n).actions[s][k]
        rules[(n, s, g)] = MixedAction.point(acts, table.argmax[n][(s, g)][0])
    return base.with_player(k, rules)


# --------------------------------------------------------------------------- #
# independent oracles


def enumerate_oracle(
    model: GameModel,
    policy: MarkovMultipolicy,
    state,
    goal,
    k: int,
    horizon: int,
    budget: int = 1_000_000,
) -> tuple[Fraction, Fraction]:
    """Exact bracket [lower, upper] on player k's criterion by forward enumeration.

    Trajectory prefixes of length <= ``horizon`` are expanded with exact path
    probabilities and merged on (state, residual goal), which is lossless for
    Markov policies.  ``lower`` is the mass absorbed by ``horizon`` with the goal
    met; ``upper`` adds the mass still outside the target set.
    """
    frontier = {(state, canonicalize_goal(goal)): ONE}
    lower = ZERO
    pending = ZERO
    expansions = 0
    for t in range(horizon + 1):
        nxt = defaultdict(Fraction)
        for (s, g), mass in frontier.items():
            if s in model.target:
                if g[k] == 0:
                    lower += mass
                continue
            if t == horizon:
                pending += mass
                continue
            stage = model.stage(t)
            profile = policy.profile(model, t, s, g)
            for combo in itertools.product(*(m.support() for m in profile)):
                expansions += 1
                if expansions > budget:
                    raise OracleBudgetExceeded(f"more than {budget} expansions")
                a = tuple(x for x, _ in combo)
                w = mass
                for _, wk in combo:
                    w *= wk
                r = stage.rewards[(s, a)]
                g2 = canonicalize_goal(x - y for x, y in zip(g, r))
                for j, p in stage.kernel[(s, a)]:
                    if p:
                        nxt[(j, g2)] += w * p
        frontier = nxt
    return lower, lower + pending


SIM_CHUNK = 1024


def _cdf(weights) -> list:
    acc, out = 0.0, []
    for w in weights:
        acc += float(w)
        out.append(acc)
    out[-1] = 1.0
    return out


def _simulate_chunk(args) -> int:
    model, policy, state, goal, k, count, max_steps, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    draw = rng.random
    action_cache = {}
    kernel_cache = {}
    successes = 0
    for _ in range(count):
        s, g = state, goal
        for t in range(max_steps + 1):
            if g[k] == 0:
                successes += 1
                break
            if s in model.target or t == max_steps:
                break
            stage = model.stage(t)
            key = (t, s, g) if t < policy.horizon else (id(stage), s)
            if key not in action_cache:
                profile = policy.profile(model, t, s, g)
                action_cache[key] = [(m.actions, _cdf(m.weights)) for m in profile]
            a = tuple(acts[min(bisect.bisect_right(cdf, draw()), len(acts) - 1)] if len(acts) > 1 else acts[0]
                      for acts, cdf in action_cache[key])
            kkey = (id(stage), s, a)
            if kkey not in kernel_cache:
                row = stage.kernel[(s, a)]
                kernel_cache[kkey] = ([j for j, _ in row], _cdf(p for _, p in row), stage.rewards[(s, a)])
            nexts, cdf, r = kernel_cache[kkey]
            g = canonicalize_goal(x - y for x, y in zip(g, r))
            s = nexts[min(bisect.bisect_right(cdf, draw()), len(nexts) - 1)]
    return successes


def simulate(
    model: GameModel,
    policy: MarkovMultipolicy,
    state,
    goal,
    k: int,
    episodes: int,
    max_steps: int,
    seed: int,
    jobs: int = 1,
) -> tuple[float, float]:
    """Monte Carlo estimate of player k's criterion and its standard error.

    Episodes still outside the target set after ``max_steps`` count as
    failures unless the goal was already met.  Episodes are split into fixed
    chunks with spawned seeds, so the result does not depend on ``jobs``.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    goal = canonicalize_goal(goal)
    sizes = [SIM_CHUNK] * (episodes // SIM_CHUNK)
    if episodes % SIM_CHUNK:
        sizes.append(episodes % SIM_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    tasks = [(model, policy, state, goal, k, c, max_steps, ss) for c, ss in zip(sizes, seeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            hits = sum(pool.map(_simulate_chunk, tasks))
    else:
        hits = sum(map(_simulate_chunk, tasks))
    mean = hits / episodes
    if episodes == 1:
        return mean, 0.0
    var = mean * (1.0 - mean) * episodes / (episodes - 1)
    return mean, math.sqrt(var / episodes)
