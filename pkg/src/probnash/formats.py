"""JSON game and policy files, CSV exports.

Rationals are written as ``"num/den"`` strings (or bare integers); JSON floats
are rejected on input so that files round-trip exactly.  State and action
labels may be integers, strings or (nested) lists, which load as tuples.
"""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from typing import Iterable

from .bellman import MixedAction
from .evaluation import MarkovMultipolicy, ValueTable
from .model import GameModel, as_rational, build_goal_lattice, format_rational, make_stage

GAME_FORMAT = "probnash-game/1"
POLICY_FORMAT = "probnash-policy/1"


class ParseError(ValueError):
    """Malformed input file; the message carries the location."""


# --------------------------------------------------------------------------- #
# scalars


def _label_in(x, where):
    if isinstance(x, bool) or isinstance(x, float) or x is None or isinstance(x, dict):
        raise ParseError(f"{where}: labels must be integers, strings or lists, got {x!r}")
    if isinstance(x, list):
        return tuple(_label_in(y, where) for y in x)
    return x


def _label_out(x):
    if isinstance(x, tuple):
        return [_label_out(y) for y in x]
    return x


def _rational_in(x, where) -> Fraction:
    if isinstance(x, bool) or isinstance(x, float):
        raise ParseError(f"{where}: write rationals as integers or \"num/den\" strings, got {x!r}")
    if not isinstance(x, (int, str)):
        raise ParseError(f"{where}: expected a rational, got {x!r}")
    try:
        return as_rational(x)
    except ZeroDivisionError:
        raise ParseError(f"{where}: zero denominator in {x!r}") from None
    except ValueError:
        raise ParseError(f"{where}: cannot read {x!r} as a rational") from None


def _rational_out(x: Fraction):
    return format_rational(Fraction(x))


def _get(obj, key, where, kind=None):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    if key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise ParseError(f"{where}: field {key!r} has the wrong type")
    return val


def _loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def goal_in(raw, where="goal") -> tuple:
    if not isinstance(raw, list):
        raise ParseError(f"{where}: a goal is a list of rationals")
    return tuple(_rational_in(x, where) for x in raw)


# --------------------------------------------------------------------------- #
# game files


def _stage_in(raw, index, where):
    states = [_label_in(s, where) for s in _get(raw, "states", where, list)]
    actions = {}
    for c, entry in enumerate(_get(raw, "actions", where, list)):
        loc = f"{where}, actions[{c}]"
        s = _label_in(_get(entry, "state", loc), loc)
        players = _get(entry, "players", loc, list)
        actions[s] = tuple(tuple(_label_in(a, loc) for a in _as_list(p, loc)) for p in players)
    rewards, kernel = {}, {}
    for c, entry in enumerate(_get(raw, "transitions", where, list)):
        loc = f"{where}, transitions[{c}]"
        s = _label_in(_get(entry, "state", loc), loc)
        a = tuple(_label_in(x, loc) for x in _get(entry, "action", loc, list))
        if (s, a) in kernel:
            raise ParseError(f"{loc}: duplicate row for state {s!r}, action {a!r}")
        rewards[(s, a)] = tuple(_rational_in(r, loc) for r in _get(entry, "rewards", loc, list))
        row = []
        for pair in _get(entry, "next", loc, list):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ParseError(f"{loc}: each next entry is [state, probability]")
            row.append((_label_in(pair[0], loc), _rational_in(pair[1], loc)))
        kernel[(s, a)] = tuple(row)
    return make_stage(index, states, actions, rewards, kernel)


def _as_list(x, where):
    if not isinstance(x, list):
        raise ParseError(f"{where}: expected a list")
    return x


def game_from_json(text: str) -> GameModel:
    raw = _loads(text)
    where = "game"
    fmt = _get(raw, "format", where)
    if fmt != GAME_FORMAT:
        raise ParseError(f"{where}: unknown format {fmt!r}")
    num_players = _get(raw, "num_players", where, int)
    target = frozenset(_label_in(s, where) for s in _get(raw, "target_set", where, list))
    stages = _get(raw, "stages", where, list)
    prefix_length = _get(raw, "prefix_length", where, int)
    if prefix_length != len(stages):
        raise ParseError(f"{where}: prefix_length {prefix_length} but {len(stages)} stage blocks")
    prefix = tuple(_stage_in(st, n, f"stage {n}") for n, st in enumerate(stages))
    tail = _stage_in(_get(raw, "tail", where), len(prefix), "tail")
    goals = tuple(goal_in(g, "initial_goals") for g in raw.get("initial_goals", []))
    return GameModel(num_players, target, prefix, tail, goals)


def _stage_out(st) -> dict:
    transitions = []
    for (s, a), row in st.kernel.items():
        transitions.append({
            "state": _label_out(s),
            "action": [_label_out(x) for x in a],
            "rewards": [_rational_out(r) for r in st.rewards[(s, a)]],
            "next": [[_label_out(j), _rational_out(p)] for j, p in row],
        })
    return {
        "states": [_label_out(s) for s in st.states],
        "actions": [
            {"state": _label_out(s), "players": [[_label_out(a) for a in acts] for acts in lists]}
            for s, lists in st.actions.items()
        ],
        "transitions": transitions,
    }


def game_to_json(model: GameModel) -> str:
    doc = {
        "format": GAME_FORMAT,
        "num_players": model.num_players,
        "target_set": sorted((_label_out(s) for s in model.target), key=json.dumps),
        "prefix_length": model.prefix_length,
        "initial_goals": [[_rational_out(x) for x in g] for g in model.initial_goals],
        "stages": [_stage_out(st) for st in model.prefix],
        "tail": _stage_out(model.tail),
    }
    return json.dumps(doc, indent=1) + "\n"


# --------------------------------------------------------------------------- #
# policy files


def policy_to_json(policy: MarkovMultipolicy, model: GameModel) -> str:
    cells = []
    for n, s, g in policy.cells(model):
        prof = policy.rules[(n, s, g)]
        cells.append({
            "stage": n,
            "state": _label_out(s),
            "goal": [_rational_out(x) for x in g],
            "players": [
                [[_label_out(a), _rational_out(w)] for a, w in zip(m.actions, m.weights)] for m in prof
            ],
        })
    doc = {
        "format": POLICY_FORMAT,
        "horizon": policy.horizon,
        "initial_goals": [[_rational_out(x) for x in g] for g in policy.lattice.goals(0)],
        "cells": cells,
    }
    return json.dumps(doc, indent=1) + "\n"


def policy_from_json(text: str, model: GameModel, lattice_horizon: int | None = None) -> MarkovMultipolicy:
    """Load a policy; its lattice is rebuilt from the stored initial goals."""
    raw = _loads(text)
    where = "policy"
    fmt = _get(raw, "format", where)
    if fmt != POLICY_FORMAT:
        raise ParseError(f"{where}: unknown format {fmt!r}")
    horizon = _get(raw, "horizon", where, int)
    if horizon < 0:
        raise ParseError(f"{where}: negative horizon")
    goals = [goal_in(g, "initial_goals") for g in _get(raw, "initial_goals", where, list)]
    lattice = build_goal_lattice(model, goals, max(horizon, lattice_horizon or 0))
    pol = MarkovMultipolicy(horizon, lattice)
    for c, cell in enumerate(_get(raw, "cells", where, list)):
        loc = f"cells[{c}]"
        n = _get(cell, "stage", loc, int)
        s = _label_in(_get(cell, "state", loc), loc)
        g = goal_in(_get(cell, "goal", loc, list), loc)
        prof = []
        for k, entries in enumerate(_get(cell, "players", loc, list)):
            acts, ws = [], []
            for pair in _as_list(entries, loc):
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ParseError(f"{loc}: each weight is [action, probability]")
                acts.append(_label_in(pair[0], loc))
                ws.append(_rational_in(pair[1], loc))
            try:
                prof.append(MixedAction(tuple(acts), tuple(ws)))
            except ValueError as exc:
                raise ParseError(f"{loc}, player {k}: {exc}") from None
        pol.rules[(n, s, g)] = tuple(prof)
    return pol


# --------------------------------------------------------------------------- #
# CSV


def label_text(x) -> str:
    return json.dumps(_label_out(x), separators=(",", ":")) if isinstance(x, tuple) else str(x)


def value_table_csv(tables: Iterable[ValueTable], num_players: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "state", *(f"goal_{k + 1}" for k in range(num_players)), "player", "value", "bound"])
    for t in tables:
        bound = "" if t.bound is None else repr(t.bound)
        for n, s, g, v in t.rows():
            w.writerow([n, label_text(s), *map(_rational_out, g), t.player, repr(v), bound])
    return buf.getvalue()


def certificate_csv(cert, num_players: int) -> str:
    buf = io.StringIO()
    for key, value in cert.header():
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["player", "state", *(f"goal_{k + 1}" for k in range(num_players)), "u", "v", "gap"])
    for k, s, g, u, v, gap in cert.rows:
        w.writerow([k, label_text(s), *map(_rational_out, g), repr(u), repr(v), repr(gap)])
    return buf.getvalue()


def csv_report(text: str) -> str:
    """Human-readable rendering of one of the CSV exports: comment lines, then aligned columns."""
    lines = text.splitlines()
    meta = [ln[2:] for ln in lines if ln.startswith("# ")]
    rows = list(csv.reader(ln for ln in lines if not ln.startswith("#")))
    out = list(meta)
    if rows:
        widths = [max(len(r[i]) if i < len(r) else 0 for r in rows) for i in range(len(rows[0]))]
        if meta:
            out.append("")
        for r in rows:
            out.append("  ".join(c.rjust(wd) for c, wd in zip(r, widths)).rstrip())
    return "\n".join(out) + "\n"
