import json
import subprocess
import sys

import pytest

from urscheck.cli import main
from urscheck.cnf import read_dimacs, satisfies
from urscheck.counting import model_count


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def small_dataset(tmp_path, capsys):
    d = tmp_path / "r10c30"
    code, _, _ = run(capsys, "generate", "--vars", 10, "--clauses", 30, "--count", 4,
                     "--satisfiable", "--seed", 7, "--out", d)
    assert code == 0
    return d


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, out, _ = run(capsys, "generate", "--vars", 30, "--clauses", 90, "--width", 3,
                           "--count", 5, "--satisfiable", "--seed", 7, "--out", d)
        assert code == 0 and "wrote 5 formulae" in out
    files = sorted(p.name for p in a.glob("*.cnf"))
    assert files == [f"r30c90_{i}.cnf" for i in range(5)]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert model_count(read_dimacs(a / name)) > 0
    assert json.loads((a / "manifest.json").read_text())["config"]["seed"] == 7


def test_generate_planted(tmp_path, capsys):
    d = tmp_path / "p"
    code, _, _ = run(capsys, "generate", "--vars", 20, "--clauses", 100, "--count", 3,
                     "--planted", 5, "--seed", 1, "--out", d)
    assert code == 0
    man = json.loads((d / "manifest.json").read_text())
    planted = [[c == "1" for c in s] for s in man["config"]["planted"]]
    assert len(planted) == 5
    for p in d.glob("*.cnf"):
        assert all(satisfies(read_dimacs(p), m) for m in planted)


def test_generate_width_error(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--vars", 30, "--clauses", 90, "--width", 31, "--out", tmp_path / "x")
    assert code == 1 and "clause width" in err


def test_count_unconstrained_and_unsat(tmp_path, capsys):
    free = tmp_path / "free.cnf"
    free.write_text("p cnf 3 0\n")
    code, out, _ = run(capsys, "count", free)
    doc = json.loads(out)
    assert code == 0
    assert doc["total"] == "8" and doc["counts"] == ["1", "3", "3", "1"]
    assert doc["marginals"]["true_counts"] == ["4", "4", "4"]
    unsat = tmp_path / "unsat.cnf"
    unsat.write_text("p cnf 1 2\n1 0\n-1 0\n")
    code, out, _ = run(capsys, "count", unsat, "--no-marginals")
    assert json.loads(out)["total"] == "0" and "marginals" not in json.loads(out)


def test_count_matches_oracle_corpus(small_dataset, capsys):
    from oracles import brute_force

    for p in sorted(small_dataset.glob("*.cnf")):
        f = read_dimacs(p)
        _, out, _ = run(capsys, "count", p)
        assert int(json.loads(out)["total"]) == len(brute_force(f.num_vars, f.clauses)[0])


def test_count_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.cnf"
    bad.write_text("p cnf 2 1\n3 0\n")
    code, _, err = run(capsys, "count", bad)
    assert code == 1 and "literal 3 out of range" in err and "line 2" in err


def test_sample_command(small_dataset, capsys):
    p = small_dataset / "r10c30_0.cnf"
    code, out, _ = run(capsys, "sample", p, "-n", 25, "--seed", 3)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 25
    f = read_dimacs(p)
    for line in lines:
        lits = [int(t) for t in line.split()[:-1]]
        assert satisfies(f, [l > 0 for l in lits])
    _, again, _ = run(capsys, "sample", p, "-n", 25, "--seed", 3)
    assert again == out
    _, bits, _ = run(capsys, "sample", p, "-n", 3, "--output-format", "bitstring")
    assert all(len(b) == 10 for b in bits.split())


def test_test_uniform_exit_zero(small_dataset, tmp_path, capsys):
    res = tmp_path / "res"
    code, out, _ = run(capsys, "test", "--builtin", "uniform", "--dataset", small_dataset,
                       "--results", res, "--jobs", 1, "--seed", 11)
    assert code == 0, out
    assert "dataset: r10c30" in out and "**" in out
    assert (res / "report.json").exists() and (res / "table.txt").read_text() == out


def test_test_duplicator_exit_two(small_dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "test", "--builtin", "duplicator", "--dataset", small_dataset,
                       "--results", tmp_path / "res", "--tests", "birthday,vf", "--early-stop")
    assert code == 2
    doc = json.loads((tmp_path / "res" / "campaigns" / "duplicator-9__r10c30.summary.json").read_text())
    assert [c["verdict"] for c in doc] == ["Rejected", "NotRun"]


def test_test_stub_fixed_model_exit_two(small_dataset, tmp_path, capsys, stub_cmd):
    res = tmp_path / "res"
    code, _, _ = run(capsys, "test", "--cmd", stub_cmd("--mode fixed"), "--format", "literals",
                     "--dataset", small_dataset, "--results", res, "--tests", "vf,gof", "--name", "stub")
    assert code == 2
    code, out, _ = run(capsys, "report", res, "--json")
    verdicts = {c["test_id"]: c["verdict"] for c in json.loads(out)}
    assert verdicts == {"vf": "Rejected", "gof": "Rejected"}


def test_test_indeterminate_exit_three(small_dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "test", "--dataset", small_dataset, "--results", tmp_path / "r",
                       "--tests", "sfpc", "--budget", "1e-9")
    assert code == 3 and "n/a" in out


@pytest.mark.parametrize("argv", [
    ["test", "--dataset", "nowhere"],
    ["test", "--builtin", "uniform", "--cmd", "x {cnf} {n}", "--dataset", "."],
    ["test", "--dataset", ".", "--tests", "vf,bogus"],
    ["test", "--dataset", ".", "--sample-size", "vf=abc"],
    ["test", "--dataset", ".", "--alpha", "2"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_one(argv, capsys, small_dataset, monkeypatch):
    monkeypatch.chdir(small_dataset)
    with pytest.raises(SystemExit) as ei:
        sys.exit(main(argv))
    assert ei.value.code == 1


def test_report_idempotent_and_recomputed(small_dataset, tmp_path, capsys):
    res = tmp_path / "res"
    run(capsys, "test", "--dataset", small_dataset, "--results", res, "--tests", "monobit,vf")
    run(capsys, "test", "--builtin", "skew", "--dataset", small_dataset, "--results", res, "--tests", "monobit,vf")
    _, first, _ = run(capsys, "report", res)
    _, second, _ = run(capsys, "report", res)
    assert first == second
    assert "uniform" in first and "skew-0.5" in first
    # the HMP shown equals the HMP of the stored unit p-values
    from urscheck.stats import hmp_combine

    _, js, _ = run(capsys, "report", res, "--json")
    for c in json.loads(js):
        units = sorted((res / "units" / c["sampler_id"] / "r10c30" / c["test_id"]).glob("*.json"))
        ps = [json.loads(u.read_text())["p_value"] for u in units]
        assert c["hmp"] == pytest.approx(hmp_combine([p for p in ps if p is not None]), rel=1e-15)


def test_report_env_default_and_missing(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("URSCHECK_RESULTS", str(tmp_path / "empty"))
    code, _, err = run(capsys, "report")
    assert code == 1 and "no campaigns" in err


def test_module_entry_point(tmp_path):
    f = tmp_path / "f.cnf"
    f.write_text("p cnf 2 1\n1 2 0\n")
    out = subprocess.run([sys.executable, "-m", "urscheck", "count", str(f), "--no-marginals"],
                         capture_output=True, text=True, check=True).stdout
    assert json.loads(out)["counts"] == ["0", "2", "1"]
