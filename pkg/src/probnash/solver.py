"""Approximate Nash equilibria: solver parameters, candidate generators and the gap certificate.

Every candidate multipolicy, whatever produced it, is accepted only through
:func:`certify`: for each player and each stage-0 lattice cell the policy value
u^T and the best-response value v^T must differ by less than 3*eps/5, where
T is the horizon from :func:`horizon_for`.  With truncation errors below eps/5
on each side this makes the policy an eps-equilibrium at the checked cells.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bellman import MixedAction
from .evaluation import (
    ArrayPolicy,
    MarkovMultipolicy,
    SweepPlan,
    greedy_policy,
    evaluate_best_response,
    sweep_best_response,
    sweep_policy,
    truncation_bound,
)
from .model import GameModel, GoalLattice, as_rational, build_goal_lattice, compute_beta, format_rational

GUARANTEE_NOTE = (
    "gap < 3*eps/5 at horizon T with truncation error < eps/5 on each side "
    "implies no player gains more than eps by deviating at any checked cell"
)


class AssumptionError(ValueError):
    """The model has no positive uniform absorption constant, so nothing can be certified."""


def _eps(epsilon) -> Fraction:
    eps = as_rational(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    return eps


# --------------------------------------------------------------------------- #
# parameters


def horizon_for(epsilon, beta) -> int:
    """Smallest horizon of the form floor+(log_{1-beta}(eps*beta/5)) + 1.

    The floor is evaluated exactly: it is the largest t >= 0 with
    (1 - beta)^t >= eps*beta/5.
    """
    eps = _eps(epsilon)
    beta = as_rational(beta)
    if beta <= 0:
        raise AssumptionError("beta must be positive")
    if beta > 1:
        raise ValueError("beta cannot exceed 1")
    if beta == 1:
        return 1
    x = eps * beta / 5
    if x >= 1:
        return 1
    q = 1 - beta

    def reaches(t: int) -> bool:  # (1 - beta)^t >= x
        if t <= 10_000:
            return q**t >= x
        return t * math.log(q) >= math.log(x)

    t = max(0, int(math.floor(math.log(x) / math.log(q))))
    while reaches(t + 1):
        t += 1
    while t > 0 and not reaches(t):
        t -= 1
    return t + 1


@dataclass(frozen=True)
class SolverParams:
    epsilon: Fraction
    beta: Fraction
    horizon: int
    K: int

    @property
    def delta(self) -> Fraction:
        return Fraction(1, self.K)

    def grid_point(self, j: int) -> Fraction:
        if not 0 <= j <= self.K:
            raise IndexError(j)
        return Fraction(j, self.K)


def grid_params(epsilon, model: GameModel, horizon: int | None = None, beta=None) -> SolverParams:
    """Grid resolution K = floor(10*T*N*prod_k max_{n<=T} max_i |A_n^k(i)| / eps) + 1."""
    eps = _eps(epsilon)
    beta = compute_beta(model) if beta is None else as_rational(beta)
    T = horizon_for(eps, beta) if horizon is None else horizon
    prod = math.prod(model.max_action_counts(T))
    K = math.floor(Fraction(10 * T * model.num_players * prod) / eps) + 1
    return SolverParams(eps, beta, T, K)


def enumeration_bound(epsilon, model: GameModel, params: SolverParams | None = None):
    """Worst-case number of grid candidates: prod_{n=0}^{T} (K+1)^{prod_k max_i |A_n^k(i)|}.

    Returns ``(value, digits)``; ``value`` is None when the integer would have
    more than a million digits.
    """
    params = params or grid_params(epsilon, model)
    exponent = 0
    for n in range(params.horizon + 1):
        counts = [1] * model.num_players
        st = model.stage(n)
        for s in model.nontarget_states(n):
            for k, acts in enumerate(st.actions[s]):
                counts[k] = max(counts[k], len(acts))
        exponent += math.prod(counts)
    digits_est = exponent * math.log10(params.K + 1)
    if digits_est > 1e6:
        return None, int(math.floor(digits_est)) + 1
    value = (params.K + 1) ** exponent
    return value, len(str(value))


def grid_round(weights: Sequence, K: int) -> tuple:
    """Round a probability vector onto multiples of 1/K, keeping the exact sum 1.

    Largest-remainder rounding: every coordinate moves by less than 1/K.
    """
    ws = [as_rational(w) for w in weights]
    if sum(ws) != 1:
        raise ValueError("weights must sum to 1")
    scaled = [w * K for w in ws]
    base = [math.floor(x) for x in scaled]
    deficit = K - sum(base)
    order = sorted(range(len(ws)), key=lambda i: (-(scaled[i] - base[i]), i))
    for i in order[:deficit]:
        base[i] += 1
    return tuple(Fraction(b, K) for b in base)


# --------------------------------------------------------------------------- #
# certificate


@dataclass
class Certificate:
    epsilon: Fraction
    beta: Fraction
    horizon: int
    K: int
    rows: list  # (player, state, goal, u, v, gap)
    max_gap: float
    verdict: str  # "pass" | "fail" | "uncertified"
    provenance: dict = field(default_factory=dict)
    bound_digits: int | None = None
    policy: MarkovMultipolicy | None = None
    gap_history: list = field(default_factory=list)
    note: str = GUARANTEE_NOTE

    @property
    def delta(self) -> Fraction:
        return Fraction(1, self.K)

    @property
    def threshold(self) -> Fraction:
        return 3 * self.epsilon / 5

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def header(self) -> list[tuple[str, str]]:
        prov = ";".join(f"{k}={v}" for k, v in self.provenance.items())
        return [
            ("epsilon", format_rational(self.epsilon)),
            ("beta", format_rational(self.beta)),
            ("horizon", str(self.horizon)),
            ("K", str(self.K)),
            ("delta", format_rational(self.delta)),
            ("threshold", format_rational(self.threshold)),
            ("max_gap", repr(self.max_gap)),
            ("verdict", self.verdict),
            ("provenance", prov),
            ("enumeration_bound_digits", str(self.bound_digits)),
            ("gap_history", " ".join(repr(g) for g in self.gap_history)),
            ("note", self.note),
        ]


def _require_beta(model: GameModel, beta=None) -> Fraction:
    beta = compute_beta(model) if beta is None else as_rational(beta)
    if beta <= 0:
        raise AssumptionError("Assumption B fails, certification impossible")
    return beta


def _gap_rows(plan: SweepPlan, arrays: ArrayPolicy, T: int):
    rows = []
    max_gap = 0.0
    for k in range(plan.model.num_players):
        u = sweep_policy(plan, arrays, k, T)[0]
        v, _ = sweep_best_response(plan, arrays, k, T, want_argmax=False)
        v = v[0]
        for si, s in enumerate(plan.states[0]):
            for gi, g in enumerate(plan.goals[0]):
                gap = abs(float(v[si, gi]) - float(u[si, gi]))
                rows.append((k, s, g, float(u[si, gi]), float(v[si, gi]), gap))
                max_gap = max(max_gap, gap)
    return rows, max_gap


def _max_gap(plan: SweepPlan, arrays: ArrayPolicy, T: int) -> float:
    best = 0.0
    for k in range(plan.model.num_players):
        u = sweep_policy(plan, arrays, k, T)[0]
        v, _ = sweep_best_response(plan, arrays, k, T, want_argmax=False)
        if u.size:
            best = max(best, float(np.abs(v[0] - u).max()))
    return best


def certify(
    model: GameModel,
    policy: MarkovMultipolicy,
    epsilon,
    *,
    params: SolverParams | None = None,
    plan: SweepPlan | None = None,
    provenance: dict | None = None,
) -> Certificate:
    """Check the 3*eps/5 gap for every player on the stage-0 lattice cells of ``policy``."""
    eps = _eps(epsilon)
    beta = _require_beta(model, params.beta if params else None)
    params = params or grid_params(eps, model, beta=beta)
    T = params.horizon
    if policy.horizon < T:
        raise ValueError(f"policy horizon {policy.horizon} is shorter than the certification horizon {T}")
    plan = plan or SweepPlan(model, policy.lattice, T)
    rows, max_gap = _gap_rows(plan, policy.to_arrays(plan), T)
    verdict = "pass" if max_gap < 3 * eps / 5 else "fail"
    return Certificate(
        epsilon=eps,
        beta=beta,
        horizon=T,
        K=params.K,
        rows=rows,
        max_gap=max_gap,
        verdict=verdict,
        provenance=dict(provenance or {}),
        bound_digits=enumeration_bound(eps, model, params)[1],
        policy=policy,
    )


def _setup(model, epsilon, initial_goals):
    eps = _eps(epsilon)
    beta = _require_beta(model)
    params = grid_params(eps, model, beta=beta)
    goals = initial_goals if initial_goals is not None else model.initial_goals
    if not goals:
        raise ValueError("no initial goals given and none stored in the model")
    lattice = build_goal_lattice(model, goals, params.horizon)
    return eps, params, lattice, SweepPlan(model, lattice, params.horizon)


# --------------------------------------------------------------------------- #
# best-response dynamics


def solve_best_response_dynamics(
    model: GameModel,
    epsilon,
    max_rounds: int = 50,
    seed: int | None = None,
    initial_goals=None,
) -> Certificate:
    """Alternate greedy best responses from the uniform multipolicy until one certifies.

    Within a round players update in index order, each against the latest
    policies of the others.  Returns the first passing certificate, otherwise
    the smallest-gap candidate marked "uncertified".  No convergence is claimed.
    """
    eps, params, lattice, plan = _setup(model, epsilon, initial_goals)
    T = params.horizon
    policy = MarkovMultipolicy.uniform(model, lattice, T)
    history = []
    best = None
    for rnd in range(max_rounds + 1):
        if rnd > 0:
            for k in range(model.num_players):
                table = evaluate_best_response(model, policy, lattice, k, T, plan=plan, beta=params.beta)
                policy = greedy_policy(policy, model, k, table)
        prov = {"strategy": "brd", "round": rnd, "seed": seed}
        cert = certify(model, policy, eps, params=params, plan=plan, provenance=prov)
        history.append(cert.max_gap)
        if best is None or cert.max_gap < best.max_gap:
            best = cert
        if cert.passed:
            cert.gap_history = history
            return cert
    best.verdict = "uncertified"
    best.gap_history = history
    return best


# --------------------------------------------------------------------------- #
# grid enumeration


def composition_count(K: int, parts: int) -> int:
    return math.comb(K + parts - 1, parts - 1)


def unrank_composition(rank: int, K: int, parts: int) -> tuple:
    """The ``rank``-th composition of K into ``parts`` nonnegative parts.

    Order: first part descending, then recursively on the rest, so rank 0 is
    (K, 0, ..., 0).
    """
    if not 0 <= rank < composition_count(K, parts):
        raise IndexError(rank)
    out = []
    remaining = K
    for p in range(parts, 1, -1):
        if p == 2:
            x0 = remaining - rank
            out.append(x0)
            remaining -= x0
            rank = 0
            continue
        # compositions whose first part lies in remaining, ..., remaining-t+1 number comb(t+p-2, p-1)
        lo, hi = 1, remaining + 1
        while lo < hi:
            mid = (lo + hi) // 2
            if math.comb(mid + p - 2, p - 1) > rank:
                hi = mid
            else:
                lo = mid + 1
        t = lo
        rank -= math.comb(t - 1 + p - 2, p - 1)
        x0 = remaining - (t - 1)
        out.append(x0)
        remaining -= x0
    out.append(remaining)
    return tuple(out)


def _random_composition(rng: np.random.Generator, K: int, parts: int) -> tuple:
    if parts == 1:
        return (K,)
    bars = np.sort(rng.choice(K + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate(([-1], bars, [K + parts - 1]))
    return tuple(int(x) for x in np.diff(edges) - 1)


class GridCandidates:
    """Indexable family of grid-valued multipolicies over one sweep plan.

    A candidate fixes, for every cell (stage < T, state, goal, player), a
    composition of K into that player's action count.  ``order="lex"`` is a
    mixed-radix count over cells with the last cell varying fastest;
    ``order="random"`` draws every cell independently from a generator seeded
    by ``(seed, index)``.
    """

    def __init__(self, plan: SweepPlan, K: int, order: str = "lex", seed: int | None = None):
        if order not in ("lex", "random"):
            raise ValueError(f"unknown order {order!r}")
        if order == "random" and seed is None:
            raise ValueError("random order needs a seed")
        self.plan = plan
        self.K = K
        self.order = order
        self.seed = seed
        self.cells = []  # (n, state index, player, goal index, parts)
        for n in range(plan.horizon):
            for si, block in enumerate(plan.blocks[n]):
                for gi in range(len(plan.goals[n])):
                    for k, acts in enumerate(block.actions):
                        self.cells.append((n, si, k, gi, len(acts)))
        self.radices = [composition_count(K, c[4]) for c in self.cells]
        self.total = math.prod(self.radices)

    def compositions(self, index: int) -> list:
        if self.order == "random":
            rng = np.random.default_rng([self.seed, index])
            return [_random_composition(rng, self.K, c[4]) for c in self.cells]
        if index >= self.total:
            raise IndexError(index)
        digits = []
        for radix in reversed(self.radices):
            index, d = divmod(index, radix)
            digits.append(d)
        digits.reverse()
        return [unrank_composition(d, self.K, c[4]) for d, c in zip(digits, self.cells)]

    def arrays(self, index: int) -> ArrayPolicy:
        plan = self.plan
        weights = {}
        for n in range(plan.horizon):
            for si, block in enumerate(plan.blocks[n]):
                G = len(plan.goals[n])
                weights[(n, si)] = [np.zeros((G, len(a))) for a in block.actions]
        for (n, si, k, gi, _), comp in zip(self.cells, self.compositions(index)):
            weights[(n, si)][k][gi] = np.asarray(comp, dtype=float) / self.K
        return ArrayPolicy(plan.horizon, weights)

    def policy(self, index: int) -> MarkovMultipolicy:
        plan = self.plan
        comps = self.compositions(index)
        per_cell = {}
        for (n, si, k, gi, _), comp in zip(self.cells, comps):
            per_cell.setdefault((n, si, gi), {})[k] = comp
        pol = MarkovMultipolicy(plan.horizon, plan.lattice)
        for (n, si, gi), by_player in per_cell.items():
            block = plan.blocks[n][si]
            pol.rules[(n, block.state, plan.goals[n][gi])] = tuple(
                MixedAction(acts, tuple(Fraction(x, self.K) for x in by_player[k]))
                for k, acts in enumerate(block.actions)
            )
        return pol


_WORKER = {}


def _worker_init(candidates: GridCandidates):
    _WORKER["c"] = candidates


def _score(index: int) -> tuple[int, float]:
    c = _WORKER["c"]
    return index, _max_gap(c.plan, c.arrays(index), c.plan.horizon)


def solve_grid(
    model: GameModel,
    epsilon,
    budget: int,
    order: str = "lex",
    seed: int | None = None,
    jobs: int = 1,
    initial_goals=None,
) -> Certificate:
    """Certify grid-valued candidates in order until one passes or the budget runs out.

    Candidates are scored in batches; within a batch the lowest passing
    index wins, so the result does not depend on ``jobs``.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    eps, params, lattice, plan = _setup(model, epsilon, initial_goals)
    candidates = GridCandidates(plan, params.K, order, seed)
    limit = budget if order == "random" else min(budget, candidates.total)
    threshold = float(3 * eps / 5)
    best_index, best_gap = None, math.inf
    passing = None
    examined = 0

    def consider(results):
        nonlocal best_index, best_gap, passing
        for index, gap in sorted(results):
            if gap < best_gap:
                best_index, best_gap = index, gap
            if gap < threshold and passing is None:
                passing = index

    if jobs > 1:
        batch = 8 * jobs
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(candidates,)) as pool:
            while examined < limit and passing is None:
                idx = range(examined, min(limit, examined + batch))
                consider(pool.map(_score, idx))
                examined = idx.stop
    else:
        _worker_init(candidates)
        while examined < limit and passing is None:
            consider([_score(examined)])
            examined += 1

    chosen = passing if passing is not None else best_index
    prov = {"strategy": "grid", "order": order, "seed": seed, "candidate": chosen,
            "iterations": (passing + 1) if passing is not None else examined}
    cert = certify(model, candidates.policy(chosen), eps, params=params, plan=plan, provenance=prov)
    if passing is None:
        cert.verdict = "uncertified"
    return cert


def certificate_soundness_gap(model: GameModel, cert: Certificate, extra: int = 20) -> float:
    """Largest (v - u) over certified cells when both are recomputed at horizon T + extra."""
    T = cert.horizon + extra
    goals = cert.policy.lattice.goals(0)
    lattice = build_goal_lattice(model, goals, T)
    pol = cert.policy
    wide = MarkovMultipolicy(pol.horizon, lattice.restrict(T), pol.rules)
    plan = SweepPlan(model, wide.lattice, T)
    arrays = wide.to_arrays(plan)
    worst = -math.inf
    for k in range(model.num_players):
        u = sweep_policy(plan, arrays, k, T)[0]
        v, _ = sweep_best_response(plan, arrays, k, T, want_argmax=False)
        worst = max(worst, float((v[0] - u).max()))
    return worst


__all__ = [
    "AssumptionError",
    "Certificate",
    "GridCandidates",
    "SolverParams",
    "certificate_soundness_gap",
    "certify",
    "composition_count",
    "enumeration_bound",
    "grid_params",
    "grid_round",
    "horizon_for",
    "solve_best_response_dynamics",
    "solve_grid",
    "truncation_bound",
    "unrank_composition",
]
