"""Generators for the two worked models: a three-player energy storage game and an insurance duopoly."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from .model import ONE, ZERO, GameModel, as_rational, make_stage


def _dist(d: Mapping) -> dict:
    return {int(m): as_rational(p) for m, p in d.items() if as_rational(p) != 0}


def point_mass(m: int = 0) -> dict:
    return {m: ONE}


def uniform_on(lo: int, hi: int) -> dict:
    w = Fraction(1, hi - lo + 1)
    return {m: w for m in range(lo, hi + 1)}


def convolve_demand(q: Mapping, g: Mapping, M: int) -> dict:
    """Law of xi - eta for independent consumption xi ~ q and purchase eta ~ g on {0..M}.

    hq(m) = sum_{l=0}^{M} q(m+l) g(l)       for m >= 0
    hq(m) = sum_{l=|m|}^{M} q(l+m) g(l)     for -M <= m < 0
    """
    q, g = _dist(q), _dist(g)
    top = max(q) if q else 0
    out = {}
    for m in range(-M, top + 1):
        lo = 0 if m >= 0 else -m
        total = sum((q.get(m + l, ZERO) * g.get(l, ZERO) for l in range(lo, M + 1)), ZERO)
        if total:
            out[m] = total
    return out


# --------------------------------------------------------------------------- #
# energy storage game


@dataclass(frozen=True)
class EnergyStage:
    """Capacities and random inputs of one period.

    ``net_demand`` is player 1's consumed-minus-harvested energy on
    {-M1..M1}; ``consumption[k]`` and ``purchases[k]`` belong to players 2 and 3
    (consumption already truncated, its tail mass piled on the last atom).
    """

    capacities: tuple
    net_demand: Mapping
    consumption: tuple
    purchases: tuple

    def __post_init__(self):
        caps = tuple(int(c) for c in self.capacities)
        if len(caps) != 3 or min(caps) < 0:
            raise ValueError("three nonnegative capacities required")
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "net_demand", _dist(self.net_demand))
        object.__setattr__(self, "consumption", tuple(_dist(d) for d in self.consumption))
        object.__setattr__(self, "purchases", tuple(_dist(d) for d in self.purchases))
        if len(self.consumption) != 2 or len(self.purchases) != 2:
            raise ValueError("players 2 and 3 each need a consumption and a purchase law")
        M1 = caps[0]
        checks = [("net demand", self.net_demand, -M1, M1)]
        for k in (0, 1):
            checks.append((f"consumption of player {k + 2}", self.consumption[k], 0, None))
            checks.append((f"purchases of player {k + 2}", self.purchases[k], 0, caps[k + 1]))
        for name, d, lo, hi in checks:
            if sum(d.values(), ZERO) != 1:
                raise ValueError(f"{name} sums to {sum(d.values(), ZERO)}, not 1")
            if any(p < 0 for p in d.values()):
                raise ValueError(f"{name} has a negative probability")
            if any(m < lo or (hi is not None and m > hi) for m in d):
                raise ValueError(f"{name} has support outside [{lo}, {hi}]")

    def demand_difference(self, k: int) -> dict:
        """hq for player k in {2, 3}."""
        return convolve_demand(self.consumption[k - 2], self.purchases[k - 2], self.capacities[k - 1])

    def beta(self) -> Fraction:
        """q1(M1) * sum_{m >= M2} hq2(m) * sum_{m >= M3} hq3(m)."""
        M1, M2, M3 = self.capacities
        out = self.net_demand.get(M1, ZERO)
        for k, M in ((2, M2), (3, M3)):
            out *= sum((p for m, p in self.demand_difference(k).items() if m >= M), ZERO)
        return out


@dataclass(frozen=True)
class EnergyParams:
    """A prefix of periods followed by a stationary tail, or an arbitrary generator of periods."""

    prefix: tuple = ()
    tail: EnergyStage | None = None
    generator: Callable | None = None

    def __post_init__(self):
        if (self.tail is None) == (self.generator is None):
            raise ValueError("give exactly one of tail or generator")
        object.__setattr__(self, "prefix", tuple(self.prefix))

    def stage(self, n: int) -> EnergyStage:
        if n < len(self.prefix):
            return self.prefix[n]
        return self.tail if self.tail is not None else self.generator(n)


ENERGY_TARGET = (0, 0, 0)


def energy_actions(state: tuple, capacities: tuple, caps: tuple) -> tuple:
    i1, i2, i3 = state
    c1, c2, c3 = caps
    top = min(i1, c1)
    a1 = tuple((b1, b2) for b1 in range(top + 1) for b2 in range(top - b1 + 1))
    a2 = tuple(range(min(capacities[1] - i2, c2) + 1))
    a3 = tuple(range(min(capacities[2] - i3, c3) + 1))
    return a1, a2, a3


def unit_trade_rewards(n: int, state: tuple, action: tuple) -> tuple:
    """Demo reward profile: each unit actually traded pays one to both sides."""
    (b1, b2), a2, a3 = action
    t2, t3 = min(b1, a2), min(b2, a3)
    return (t2 + t3, t2, t3)


def energy_row(stage: EnergyStage, nxt: EnergyStage, state: tuple, action: tuple, diffs=None) -> tuple:
    """Transition row as the product of the three per-player marginals.

    ``diffs`` optionally carries precomputed demand differences for players 2 and 3.
    """
    if diffs is None:
        diffs = (stage.demand_difference(2), stage.demand_difference(3))
    i1, i2, i3 = state
    (b1, b2), a2, a3 = action
    t2, t3 = min(b1, a2), min(b2, a3)
    N1, N2, N3 = nxt.capacities
    m1 = {}
    for m, p in stage.net_demand.items():
        j = min(N1, max(0, i1 - t2 - t3 - m))
        m1[j] = m1.get(j, ZERO) + p
    marg = [m1]
    for diff, ik, tk, Nk in ((diffs[0], i2, t2, N2), (diffs[1], i3, t3, N3)):
        mk = {}
        for m, p in diff.items():
            j = min(Nk, max(0, ik + tk - m))
            mk[j] = mk.get(j, ZERO) + p
        marg.append(mk)
    row = []
    for (j1, p1), (j2, p2), (j3, p3) in itertools.product(*(sorted(d.items()) for d in marg)):
        row.append(((j1, j2, j3), p1 * p2 * p3))
    return tuple(row)


def _energy_stage(params: EnergyParams, n: int, caps: tuple, rewards: Callable, index: int):
    st, nxt = params.stage(n), params.stage(n + 1)
    states = list(itertools.product(*(range(M + 1) for M in st.capacities)))
    diffs = (st.demand_difference(2), st.demand_difference(3))
    actions, rew, kernel = {}, {}, {}
    for s in states:
        if s == ENERGY_TARGET:
            continue
        acts = energy_actions(s, st.capacities, caps)
        actions[s] = acts
        for a in itertools.product(*acts):
            rew[(s, a)] = rewards(n, s, a)
            kernel[(s, a)] = energy_row(st, nxt, s, a, diffs)
    return make_stage(index, states, actions, rew, kernel)


def build_energy_model(
    params: EnergyParams,
    action_caps: tuple = (1, 1, 1),
    rewards: Callable = unit_trade_rewards,
    initial_goals=(),
) -> GameModel:
    """Three-player storage game with target set {(0, 0, 0)}.

    ``action_caps`` (c1, c2, c3) limits player 1 to sales with b1 + b2 <= min(i1, c1)
    and player k to requests of at most min(M_k - i_k, c_k).
    """
    if params.tail is None:
        raise ValueError("the game model needs an eventually stationary parameter sequence")
    P = len(params.prefix)
    caps = tuple(action_caps)
    prefix = tuple(_energy_stage(params, n, caps, rewards, n) for n in range(P))
    tail = _energy_stage(params, P, caps, rewards, P)
    for st in (*prefix, tail):
        if any(x < 0 for r in st.rewards.values() for x in r):
            raise ValueError("rewards must be nonnegative")
    return GameModel(
        num_players=3,
        target=frozenset([ENERGY_TARGET]),
        prefix=prefix,
        tail=tail,
        initial_goals=tuple(tuple(as_rational(x) for x in g) for g in initial_goals),
    )


# --------------------------------------------------------------------------- #
# divergence of the absorption bounds


@dataclass(frozen=True)
class HarmonicSupplyFamily:
    """Declared family where player 1's top net demand decays at most harmonically.

    Claims, for every period n: q_n^1(M_n^1) >= delta / (n + M_n^1), capacities
    bounded by ``capacity_bound``, and sum_{m >= M_n^k} hq_n^k(m) >= floors[k] > 0
    for k = 2, 3.  Then the absorption bounds sum to infinity.
    """

    delta: Fraction
    floors: tuple
    capacity_bound: tuple

    def constants_ok(self) -> bool:
        return 0 < self.delta < 1 and all(f > 0 for f in self.floors)

    def holds_at(self, st: EnergyStage, n: int) -> bool:
        M1 = st.capacities[0]
        if any(M > B for M, B in zip(st.capacities, self.capacity_bound)):
            return False
        if n + M1 == 0 or st.net_demand.get(M1, ZERO) < Fraction(self.delta) / (n + M1):
            return False
        return all(_upper_tail(st, k) >= f for k, f in zip((2, 3), self.floors))


@dataclass(frozen=True)
class HarmonicDemandFamily:
    """Declared family where players 2 and 3 drain their storage with harmonically decaying odds.

    Claims, for every period n: q_n^1(M_n^1) >= floor1 > 0 and
    sum_{m >= M_n^k} hq_n^k(m) >= coeffs[k] / (n + capacity_bound[k]) for k = 2, 3.
    """

    floor1: Fraction
    coeffs: tuple
    capacity_bound: tuple

    def constants_ok(self) -> bool:
        return self.floor1 > 0 and all(c > 0 for c in self.coeffs)

    def holds_at(self, st: EnergyStage, n: int) -> bool:
        if any(M > B for M, B in zip(st.capacities, self.capacity_bound)):
            return False
        if st.net_demand.get(st.capacities[0], ZERO) < self.floor1:
            return False
        for idx, (k, c) in enumerate(zip((2, 3), self.coeffs)):
            if _upper_tail(st, k) < Fraction(c) / (n + self.capacity_bound[idx + 1]):
                return False
        return True


def _upper_tail(st: EnergyStage, k: int) -> Fraction:
    M = st.capacities[k - 1]
    return sum((p for m, p in st.demand_difference(k).items() if m >= M), ZERO)


@dataclass
class ConditionReport:
    verdict: str
    partial_sum: Fraction
    betas: list = field(default_factory=list)
    reason: str = ""


def check_condition_c(params: EnergyParams, probe: int, family=None) -> ConditionReport:
    """Decide whether sum_n beta_n diverges, from probed periods plus any declared family."""
    betas = [params.stage(n).beta() for n in range(probe)]
    partial = sum(betas, ZERO)
    if family is not None:
        if not family.constants_ok():
            return ConditionReport("inconclusive", partial, betas, "declared family constants out of range")
        for n in range(probe):
            if not family.holds_at(params.stage(n), n):
                return ConditionReport("inconclusive", partial, betas, f"declared family violated at period {n}")
        return ConditionReport("diverges (proven)", partial, betas, f"{type(family).__name__} holds")
    if params.tail is not None:
        tail_beta = params.tail.beta()
        if tail_beta > 0:
            return ConditionReport("diverges (proven)", partial, betas, "stationary tail with positive bound")
        return ConditionReport("inconclusive", partial, betas, "stationary tail bound is zero")
    return ConditionReport("inconclusive", partial, betas, "no closed form for the period sequence")


# --------------------------------------------------------------------------- #
# insurance duopoly


INSURANCE_GOAL = (Fraction(2), Fraction(3))

_STAY = {
    ("a11", "b11"): Fraction(11, 20),
    ("a11", "b12"): Fraction(3, 5),
    ("a12", "b11"): Fraction(9, 20),
    ("a12", "b12"): Fraction(3, 5),
}
_FIRST_REWARDS = {
    ("a11", "b11"): (1, 1),
    ("a11", "b12"): (0, 0),
    ("a12", "b11"): (0, 1),
    ("a12", "b12"): (1, 1),
}
_LATER_REWARDS = {
    ("a11", "b11"): (1, 0),
    ("a11", "b12"): (1, 1),
    ("a12", "b11"): (0, 0),
    ("a12", "b12"): (0, 0),
}


def _insurance_stage(index: int, table: Mapping):
    actions = {1: (("a11", "a12"), ("b11", "b12")), 2: (("a21",), ("b21",))}
    rewards = {(2, ("a21", "b21")): (0, 0)}
    kernel = {(2, ("a21", "b21")): ((2, ONE),)}
    for a, stay in _STAY.items():
        rewards[(1, a)] = table[a]
        kernel[(1, a)] = ((1, stay), (2, 1 - stay))
    return make_stage(index, (1, 2), actions, rewards, kernel)


def build_insurance_model():
    """Two companies, boom state 1 and absorbing slump state 2; returns (model, initial goal)."""
    model = GameModel(
        num_players=2,
        target=frozenset([2]),
        prefix=(_insurance_stage(0, _FIRST_REWARDS),),
        tail=_insurance_stage(1, _LATER_REWARDS),
        initial_goals=(INSURANCE_GOAL,),
    )
    return model, INSURANCE_GOAL


def demo_energy_params() -> EnergyParams:
    """Small stationary instance with capacities (2, 2, 2) and a positive absorption bound."""
    half, quarter = Fraction(1, 2), Fraction(1, 4)
    stage = EnergyStage(
        capacities=(2, 2, 2),
        net_demand={0: quarter, 1: quarter, 2: half},
        consumption=({1: quarter, 2: quarter, 3: half},) * 2,
        purchases=({0: half, 1: half},) * 2,
    )
    return EnergyParams(tail=stage)
