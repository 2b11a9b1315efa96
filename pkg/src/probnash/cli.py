"""Command-line entry point.

Exit codes: 0 success or passing certificate, 1 domain failure, 2 unreadable
input, 3 search budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from fractions import Fraction
from pathlib import Path

from . import formats
from .evaluation import (
    SweepPlan,
    enumerate_oracle,
    evaluate_best_response,
    evaluate_policy,
    simulate,
    OracleBudgetExceeded,
)
from .model import (
    LatticeError,
    as_rational,
    check_divergence,
    compute_beta,
    format_rational,
    stage_beta,
    validate_model,
)
from .solver import (
    AssumptionError,
    certify,
    grid_params,
    horizon_for,
    solve_best_response_dynamics,
    solve_grid,
)

EXIT_OK, EXIT_DOMAIN, EXIT_PARSE, EXIT_BUDGET = 0, 1, 2, 3
TABLE_EPSILONS = tuple(Fraction(i, 10) for i in range(1, 11))


class DomainError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise formats.ParseError(f"{path}: {exc.strerror}") from None


def _load_model(path: str):
    try:
        return formats.game_from_json(_read(path))
    except formats.ParseError as exc:
        raise formats.ParseError(f"{path}: {exc}") from None


def _load_valid_model(path: str):
    model = _load_model(path)
    report = validate_model(model)
    if not report.ok:
        f = report.errors()[0]
        raise DomainError(f"invalid model: {f.location}: {f.message}")
    return model


def _emit(text: str, args, csv_text: bool = True):
    if csv_text and getattr(args, "format", "csv") == "report":
        text = formats.csv_report(text)
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_goals(values, model):
    if values:
        goals = []
        for v in values:
            try:
                goals.append(tuple(as_rational(x) for x in v.split(",")))
            except (ValueError, ZeroDivisionError):
                raise formats.ParseError(f"--goals: cannot read {v!r}") from None
        return goals
    if model.initial_goals:
        return list(model.initial_goals)
    raise DomainError("no initial goals: pass --goals or store initial_goals in the game file")


def _epsilon(value: str) -> Fraction:
    try:
        eps = as_rational(value)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if eps <= 0:
        raise argparse.ArgumentTypeError("epsilon must be positive")
    return eps


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


# --------------------------------------------------------------------------- #
# commands


def cmd_validate(args) -> int:
    model = _load_model(args.model)
    report = validate_model(model)
    lines = [f"{f.severity}: {f.location}: {f.message}" for f in report.findings]
    if report.ok:
        lines.append(f"β = {format_rational(report.beta)}")
        probe = args.probe if args.probe is not None else model.prefix_length + 1
        verdict, partial = check_divergence(model, probe)
        lines.append("stage betas: " + " ".join(format_rational(stage_beta(model, n)) for n in range(probe)))
        lines.append(f"divergence: {verdict} (partial sum over {probe} stages = {format_rational(partial)})")
        lines.append("ok")
    else:
        lines.append(f"{len(report.errors())} error(s)")
    _emit("\n".join(lines) + "\n", args, csv_text=False)
    return EXIT_OK if report.ok else EXIT_DOMAIN


def cmd_table1(args) -> int:
    if args.beta is not None:
        beta = as_rational(args.beta)
    elif args.model:
        beta = compute_beta(_load_valid_model(args.model))
    else:
        raise DomainError("table1 needs --beta or --model")
    if beta <= 0:
        raise AssumptionError("Assumption B fails, certification impossible")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "T"])
    for eps in TABLE_EPSILONS:
        w.writerow([f"{float(eps):.1f}", horizon_for(eps, beta)])
    _emit(buf.getvalue(), args)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_valid_model(args.model)
    policy = formats.policy_from_json(_read(args.policy), model, args.horizon)
    problem = policy.first_problem(model)
    if problem:
        raise DomainError(f"policy does not match model: {problem}")
    m = args.horizon if args.horizon is not None else policy.horizon
    lattice = policy.lattice.restrict(m) if policy.lattice.horizon > m else policy.lattice
    plan = SweepPlan(model, lattice, m)
    beta = compute_beta(model)
    players = range(model.num_players) if args.player is None else [args.player]
    header = ["stage", "state", *(f"goal_{k + 1}" for k in range(model.num_players)), "player", "u", "v", "bound"]
    if args.episodes:
        header += ["mc", "mc_stderr"]
    if args.oracle_horizon is not None:
        header += ["oracle_lower", "oracle_upper"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k in players:
        u = evaluate_policy(model, policy, lattice, k, m, plan=plan, beta=beta)
        v = evaluate_best_response(model, policy, lattice, k, m, plan=plan, beta=beta)
        bound = "" if u.bound is None else repr(u.bound)
        for n in range(m + 1):
            for si, s in enumerate(u.states[n]):
                for gi, g in enumerate(u.goals[n]):
                    row = [n, formats.label_text(s), *map(format_rational, g), k,
                           repr(float(u.values[n][si, gi])), repr(float(v.values[n][si, gi])), bound]
                    if args.episodes:
                        if n == 0:
                            row += list(map(repr, simulate(model, policy, s, g, k, args.episodes,
                                                           args.max_steps, args.seed, args.jobs)))
                        else:
                            row += ["", ""]
                    if args.oracle_horizon is not None:
                        if n == 0:
                            lo, hi = enumerate_oracle(model, policy, s, g, k, args.oracle_horizon)
                            row += [repr(float(lo)), repr(float(hi))]
                        else:
                            row += ["", ""]
                    w.writerow(row)
    _emit(buf.getvalue(), args)
    return EXIT_OK


def _write_certificate(cert, model, args):
    _emit(formats.certificate_csv(cert, model.num_players), args)
    target = args.policy_out or (f"{args.out}.policy.json" if args.out else None)
    if target and cert.policy is not None:
        Path(target).write_text(formats.policy_to_json(cert.policy, model))


def cmd_solve(args) -> int:
    model = _load_valid_model(args.model)
    goals = _parse_goals(args.goals, model)
    if compute_beta(model) <= 0:
        raise AssumptionError("Assumption B fails, certification impossible")
    order = "random" if args.strategy == "random" else args.order
    if order == "random" and args.seed is None:
        raise DomainError("random candidate order requires --seed")
    if args.strategy == "brd":
        rounds = args.budget if args.budget is not None else 50
        cert = solve_best_response_dynamics(model, args.epsilon, rounds, args.seed, goals)
    else:
        budget = args.budget if args.budget is not None else 100_000
        cert = solve_grid(model, args.epsilon, budget, order, args.seed, args.jobs, goals)
    _write_certificate(cert, model, args)
    if cert.passed:
        return EXIT_OK
    print(f"budget exhausted: best max_gap {cert.max_gap!r} >= {format_rational(cert.threshold)}", file=sys.stderr)
    return EXIT_BUDGET


def cmd_certify(args) -> int:
    model = _load_valid_model(args.model)
    if compute_beta(model) <= 0:
        raise AssumptionError("Assumption B fails, certification impossible")
    params = grid_params(args.epsilon, model)
    policy = formats.policy_from_json(_read(args.policy), model, params.horizon)
    problem = policy.first_problem(model)
    if problem:
        raise DomainError(f"policy does not match model: {problem}")
    cert = certify(model, policy, args.epsilon, params=params, provenance={"source": Path(args.policy).name})
    args.policy_out = None
    _write_certificate(cert, model, args)
    return EXIT_OK if cert.passed else EXIT_DOMAIN


def cmd_scenario(args) -> int:
    from . import scenarios

    if args.name == "insurance":
        model, _ = scenarios.build_insurance_model()
    else:
        model = scenarios.build_energy_model(scenarios.demo_energy_params(), initial_goals=[(1, 1, 1)])
    _emit(formats.game_to_json(model), args, csv_text=False)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probnash", description="Approximate Nash equilibria for first-passage probability games.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="game file (JSON)")
        sp.add_argument("--out", help="write output here instead of stdout")
        sp.add_argument("--format", choices=("csv", "report"), default="csv")
        sp.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")

    sp = sub.add_parser("validate", help="check a game file and report beta")
    common(sp)
    sp.add_argument("--probe", type=_positive_int, help="stages summed for the divergence check")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("evaluate", help="policy and best-response values of a policy file")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--horizon", "-m", type=int, help="recursion depth (default: policy horizon)")
    sp.add_argument("--player", type=int, help="0-based player (default: all)")
    sp.add_argument("--episodes", type=int, default=0, help="Monte Carlo episodes per stage-0 cell")
    sp.add_argument("--max-steps", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--oracle-horizon", type=int, help="add exact enumeration bounds to this depth")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("solve", help="search for a certified epsilon-equilibrium")
    common(sp)
    sp.add_argument("--epsilon", type=_epsilon, required=True)
    sp.add_argument("--strategy", choices=("grid", "brd", "random"), default="brd")
    sp.add_argument("--order", choices=("lex", "random"), default="lex", help="grid candidate order")
    sp.add_argument("--budget", type=_positive_int, help="candidates (grid) or rounds (brd)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--goals", action="append", help="initial goal vector, e.g. 2,3 (repeatable)")
    sp.add_argument("--policy-out", help="where to write the certified policy")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("certify", help="check the gap certificate of a policy file")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--epsilon", type=_epsilon, required=True)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("table1", help="certification horizon for eps = 0.1 .. 1.0")
    common(sp, model=False)
    sp.add_argument("--model")
    sp.add_argument("--beta")
    sp.set_defaults(func=cmd_table1)

    sp = sub.add_parser("scenario", help="write a built-in game file")
    common(sp, model=False)
    sp.add_argument("name", choices=("insurance", "energy"))
    sp.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except formats.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AssumptionError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DOMAIN
    except (DomainError, LatticeError, OracleBudgetExceeded, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, LatticeError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
