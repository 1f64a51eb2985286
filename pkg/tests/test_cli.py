import csv
import json

import pytest

from hardplan import cli, hardmdp as hm


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_usage_errors(capsys):
    assert cli.main([]) == 2
    assert cli.main(["check", "nothing"]) == 2
    assert cli.main(["check", "realizability", "--p", "9"]) == 2
    assert cli.main(["run", "tensorplan", "--episodes", "0", "--out", "-"]) == 2
    assert cli.main(["run", "tensorplan", "--seed", "-1"]) == 2


def test_check_realizability_passes(capsys):
    assert cli.main(["check", "realizability", "--p", "2", "--K", "2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["config"]["p"] == 2


def test_check_failure_exit_code(capsys, monkeypatch):
    monkeypatch.setattr(cli, "check_lemmas", lambda cfg: (False, {"passed": False}))
    assert cli.main(["check", "lemmas"]) == 1


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"p": 3, "K": 2, "secret_index": 1}))
    out = tmp_path / "d.csv"
    assert cli.main(["dump", "hardmdp", "--config", str(cfg), "--p", "2", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == hm.count_states(2, 2) + 1
    assert rows[-1]["id"] == "BOTTOM"
    assert list(rows[0]) == cli.DUMP_COLUMNS
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert cli.main(["dump", "hardmdp", "--config", str(bad)]) == 2


def test_dump_quotient_rows(tmp_path):
    out = tmp_path / "q.csv"
    assert cli.main(["dump", "hardmdp", "--p", "3", "--K", "2", "--quotient", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == len(hm.HardStructure(hm.HardMdpParams(hm.base_dim(3), 6, 3, 2), True).states()) + 1
    for r in rows[:-1]:
        if r["reach"] == "reach":
            assert float(r["v_star"]) == pytest.approx(float(r["phi_v_theta"]), abs=1e-9)


def test_run_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["run", "tensorplan", "--episodes", "3", "--seed", "7"]
    assert cli.main(args + ["--out", str(a), "--json-out", str(tmp_path / "a.json")]) == 0
    assert cli.main(args + ["--out", str(b), "--json-out", str(tmp_path / "b.json")]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.timing.json").exists()
    rows = read_csv(a)
    assert list(rows[0]) == cli.RUN_COLUMNS and len(rows) == 3


def test_run_to_stdout(capsys):
    assert cli.main(["run", "game", "--p", "8", "--episodes", "5", "--out", "-"]) == 0
    out = capsys.readouterr()
    assert out.out.splitlines()[0] == "seed,trial,payoff,f_empty"
    assert json.loads(out.err)["trials"] == 5


def test_workers_env(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.workers() == 3
    monkeypatch.setenv(cli.WORKERS_ENV, "x")
    with pytest.raises(cli.UsageError):
        cli.workers()


def test_float_format():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.fmt(True) == "1"
