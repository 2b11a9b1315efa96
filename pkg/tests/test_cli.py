import json
from fractions import Fraction as F

import pytest

from probnash import formats
from probnash.cli import main
from probnash.evaluation import MarkovMultipolicy
from probnash.model import GameModel, build_goal_lattice, make_stage
from probnash.scenarios import build_insurance_model


@pytest.fixture
def insurance_file(tmp_path):
    path = tmp_path / "insurance.json"
    assert main(["scenario", "insurance", "--out", str(path)]) == 0
    return path


def write_model(tmp_path, model, name="m.json"):
    path = tmp_path / name
    path.write_text(formats.game_to_json(model))
    return path


def toy_model(stay=F(1, 2)):
    lists = (("x", "y"), ("x", "y"))
    rewards = {(0, (a, b)): (1, 1) for a in "xy" for b in "xy"}
    kernel = {(0, (a, b)): [(0, stay), ("d", 1 - stay)] for a in "xy" for b in "xy"}
    stage = make_stage(0, [0, "d"], {0: lists}, rewards, kernel)
    return GameModel(2, frozenset(["d"]), (), stage, ((F(2), F(1)),))


def test_validate_insurance(insurance_file, capsys):
    assert main(["validate", "--model", str(insurance_file)]) == 0
    assert "β = 2/5" in capsys.readouterr().out


def test_validate_corrupt_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "probnash-game/1", "num_players": 2,')
    assert main(["validate", "--model", str(path)]) == 2
    assert "line 1 column" in capsys.readouterr().err


def test_validate_non_stochastic(tmp_path, insurance_file, capsys):
    doc = json.loads(insurance_file.read_text())
    doc["tail"]["transitions"][0]["next"][0][1] = "1/2"
    path = tmp_path / "ns.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", "--model", str(path)]) == 1
    assert "not stochastic" in capsys.readouterr().out


def test_missing_file_is_parse_failure(tmp_path):
    assert main(["validate", "--model", str(tmp_path / "nope.json")]) == 2


def test_period_length_command(capsys):
    assert main(["table1", "--beta", "2/5"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "epsilon,T"
    assert [r.split(",")[1] for r in rows[1:]] == ["10", "9", "8", "7", "7", "6", "6", "6", "6", "5"]
    assert main(["table1", "--beta", "1"]) == 0
    assert all(r.endswith(",1") for r in capsys.readouterr().out.strip().splitlines()[1:])


def test_period_length_command_from_model(insurance_file, capsys):
    assert main(["table1", "--model", str(insurance_file), "--format", "report"]) == 0
    assert "epsilon" in capsys.readouterr().out


def test_solve_toy_passes(tmp_path):
    path = write_model(tmp_path, toy_model())
    out = tmp_path / "cert.csv"
    assert main(["solve", "--model", str(path), "--epsilon", "0.5", "--strategy", "grid", "--out", str(out)]) == 0
    text = out.read_text()
    assert "# verdict: pass" in text and "# max_gap: 0.0" in text
    assert (tmp_path / "cert.csv.policy.json").exists()


def test_solve_insurance_brd_and_certify(tmp_path, insurance_file):
    out = tmp_path / "cert.csv"
    pol = tmp_path / "pol.json"
    args = ["solve", "--model", str(insurance_file), "--epsilon", "0.5", "--strategy", "brd", "--seed", "1"]
    assert main(args + ["--out", str(out), "--policy-out", str(pol)]) == 0
    assert "# verdict: pass" in out.read_text()
    again = tmp_path / "again.csv"
    assert main(args + ["--out", str(again), "--policy-out", str(tmp_path / "p2.json")]) == 0
    assert again.read_bytes() == out.read_bytes()
    assert main(["certify", "--model", str(insurance_file), "--policy", str(pol), "--epsilon", "0.5",
                 "--out", str(tmp_path / "c2.csv")]) == 0


def test_solve_budget_exhausted(insurance_file, capsys):
    code = main(["solve", "--model", str(insurance_file), "--epsilon", "0.5", "--strategy", "grid", "--budget", "1"])
    assert code == 3
    captured = capsys.readouterr()
    assert "budget exhausted" in captured.err
    assert "# verdict: uncertified" in captured.out


def test_random_strategy_requires_seed(insurance_file):
    assert main(["solve", "--model", str(insurance_file), "--epsilon", "0.5", "--strategy", "random"]) == 1


def test_zero_beta_solve(tmp_path, capsys):
    path = write_model(tmp_path, toy_model(stay=F(1)))
    assert main(["solve", "--model", str(path), "--epsilon", "0.5"]) == 1
    assert "Assumption B fails, certification impossible" in capsys.readouterr().err


def _pure_policy_file(tmp_path, goal, horizon=10):
    model, _ = build_insurance_model()
    lattice = build_goal_lattice(model, [goal], horizon)
    pol = MarkovMultipolicy.stationary_pure(model, lattice, horizon, {1: ("a11", "b11")})
    path = tmp_path / "pure.json"
    path.write_text(formats.policy_to_json(pol, model))
    return path


def test_evaluate_geometric(tmp_path, insurance_file, capsys):
    pol = _pure_policy_file(tmp_path, (2, 1))
    code = main(["evaluate", "--model", str(insurance_file), "--policy", str(pol), "--player", "0",
                 "--oracle-horizon", "6", "--episodes", "2000", "--seed", "3"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines[0].split(",")
    row = dict(zip(header, lines[1].split(",")))
    assert row["stage"] == "0" and row["goal_1"] == "2"
    assert abs(float(row["u"]) - 0.55) <= 0.0152
    assert float(row["oracle_lower"]) <= float(row["u"]) <= float(row["oracle_upper"])
    for line in lines[1:]:
        r = dict(zip(header, line.split(",")))
        if r["goal_1"] == "0":
            assert float(r["u"]) == 1.0 and float(r["v"]) == 1.0


def test_evaluate_mismatched_policy(tmp_path, insurance_file, capsys):
    pol = _pure_policy_file(tmp_path, (2, 1), 3)
    doc = json.loads(pol.read_text())
    doc["cells"] = doc["cells"][1:]
    pol.write_text(json.dumps(doc))
    assert main(["evaluate", "--model", str(insurance_file), "--policy", str(pol)]) == 1
    assert "missing rule at stage 0" in capsys.readouterr().err


def test_scenario_energy_validates(tmp_path):
    path = tmp_path / "energy.json"
    assert main(["scenario", "energy", "--out", str(path)]) == 0
    assert main(["validate", "--model", str(path)]) == 0
