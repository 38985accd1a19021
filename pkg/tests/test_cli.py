import json
import subprocess
import sys

import pytest

from elope.cli import main
from elope.sim import bundled_datasets


def _jsonl(tmp_path, records, name="log.jsonl"):
    p = tmp_path / name
    p.write_text("".join(json.dumps(r) + "\n" for r in records))
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_estimate_extremes(tmp_path, capsys):
    path = _jsonl(tmp_path, [{"w_min": 0, "w_max": 2}, {"w": 0, "r": 0}, {"w": 0, "r": 0}, {"w": 2, "r": 1}])
    code, out, _ = run(capsys, "estimate", "-i", path, "--json")
    assert code == 0
    res = json.loads(out)
    assert res["el"]["value"] == pytest.approx(1.0)
    assert res["ips"] == pytest.approx(2 / 3)
    assert res["snips"] == 1.0
    code, table, _ = run(capsys, "estimate", "-i", path)
    assert "1.000000" in table and "0.666667" in table


def test_estimate_constant_rewards(tmp_path, capsys):
    path = _jsonl(tmp_path, [{"w": 1, "r": 0.5}] * 4)
    code, out, _ = run(capsys, "estimate", "-i", path, "--json")
    res = json.loads(out)
    for key in ("ips", "snips", "clipped_dr", "emp", "cr"):
        assert res[key] == pytest.approx(0.5)
    assert res["el"]["value"] == pytest.approx(0.5)


def test_ci_all_ones(tmp_path, capsys):
    path = _jsonl(tmp_path, [{"w": 1, "r": 1}] * 10)
    code, out, _ = run(capsys, "ci", "-i", path, "--wmax", "2", "--json")
    assert code == 0
    res = json.loads(out)
    el = res["intervals"]["EL"]
    assert el["lo"] == pytest.approx(0.8252466719, abs=1e-9)
    assert el["hi"] == 1.0
    assert set(res["intervals"]) == {"EL", "Binomial", "Gaussian", "CR"}


def test_ci_table_matches_json(tmp_path, capsys):
    path = _jsonl(tmp_path, [{"w": 0.5, "r": 0.2}, {"w": 1.5, "r": 0.9}, {"w": 1.0, "r": 0.4}])
    _, table, _ = run(capsys, "ci", "-i", path, "--wmax", "3")
    _, js, _ = run(capsys, "ci", "-i", path, "--wmax", "3", "--json")
    lo = json.loads(js)["intervals"]["EL"]["lo"]
    assert f"{lo:.6f}" in table


def test_exit_codes(tmp_path, capsys):
    path = _jsonl(tmp_path, [{"w": 1, "r": 0.5}, {"w": 2, "r": 0.5}])
    assert run(capsys, "estimate", "-i", path, "--wmax", "1.5")[0] == 2
    assert run(capsys, "estimate", "-i", str(tmp_path / "missing.jsonl"))[0] == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    code, _, err = run(capsys, "estimate", "-i", str(bad))
    assert code == 1 and "line 1" in err
    with pytest.raises(SystemExit) as exc:
        main(["simulate-mse", "--reps", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["ci", "-i", path, "--alpha", "1.5"])


def test_simulate_mse_determinism_across_jobs(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate-mse", "--ns", "10,30", "--reps", "300", "--seed", "4", "-o", str(a)]) == 0
    assert main(["simulate-mse", "--ns", "10,30", "--reps", "300", "--seed", "4", "--jobs", "3", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "n,estimator,mse,stderr"


def test_simulate_coverage_stdout(capsys):
    code, out, _ = run(capsys, "simulate-coverage", "--ns", "10", "--reps", "20", "--alpha", "0.9")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("n,method,coverage")
    assert len(lines) == 4


def test_transform_records(tmp_path, capsys):
    out = tmp_path / "log.jsonl"
    iris = str(bundled_datasets()["iris"])
    assert main(["transform", "-i", iris, "--epsilon", "0.25", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert json.loads(lines[0]) == {"w_min": 0.0, "w_max": 12.0}
    rec = json.loads(lines[1])
    assert set(rec) == {"x", "a", "p", "pi", "r"}
    # the transformed log feeds straight back into the estimators
    code, res, _ = run(capsys, "estimate", "-i", str(out), "--json")
    assert code == 0 and 0 <= json.loads(res)["el"]["value"] <= 1


def test_learn_outputs(tmp_path, capsys):
    iris = str(bundled_datasets()["iris"])
    code, out, _ = run(capsys, "learn", "-i", iris, "--method", "lb", "-o", str(tmp_path / "lb"), "--json")
    assert code == 0
    res = json.loads(out)
    assert set(res) == {"logger", "lb"}
    trace = (tmp_path / "lb" / "trace.csv").read_text().splitlines()
    assert trace[0] == "iter,lb,el_estimate,ips" and len(trace) == 5
    pol = json.loads((tmp_path / "lb" / "policy.json").read_text())
    assert pol["dims"] == 5 and pol["actions"] == 3


def test_learn_zero_rate_returns_logger(tmp_path, capsys):
    iris = str(bundled_datasets()["iris"])
    code, out, _ = run(capsys, "learn", "-i", iris, "--method", "ips", "--lr", "0", "--outer-iters", "1", "-o", str(tmp_path), "--json")
    res = json.loads(out)
    assert res["logger"] == res["ips"]


def test_module_entry_point(tmp_path):
    path = _jsonl(tmp_path, [{"w": 1, "r": 0.25}] * 3)
    proc = subprocess.run([sys.executable, "-m", "elope", "estimate", "-i", path, "--json"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ips"] == pytest.approx(0.25)


def test_ci_nested_in_alpha(tmp_path, capsys):
    path = _jsonl(tmp_path, [{"w": 0.5, "r": 0.2}, {"w": 1.5, "r": 0.9}, {"w": 1.0, "r": 0.4}, {"w": 3, "r": 0}])
    wide = json.loads(run(capsys, "ci", "-i", path, "--wmax", "4", "--json")[1])["intervals"]["EL"]
    narrow = json.loads(run(capsys, "ci", "-i", path, "--wmax", "4", "--alpha", "0.5", "--json")[1])["intervals"]["EL"]
    assert wide["lo"] <= narrow["lo"] <= narrow["hi"] <= wide["hi"]


def test_learn_unreadable_input(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_bytes(b"\xff\xfe\x00garbage")
    assert run(capsys, "learn", "-i", str(bad), "-o", str(tmp_path / "out"))[0] == 1
    assert run(capsys, "learn", "-i", str(tmp_path / "nope.csv"), "-o", str(tmp_path / "out"))[0] == 1


def test_simulation_same_seed_twice(capsys):
    first = run(capsys, "simulate-mse", "--ns", "10", "--reps", "50", "--seed", "9")[1]
    second = run(capsys, "simulate-mse", "--ns", "10", "--reps", "50", "--seed", "9")[1]
    assert first == second
