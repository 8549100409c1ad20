import json

import numpy as np
import pytest

from permasoup import io as pio
from permasoup.cli import EXIT_CAPACITY, EXIT_FAIL, EXIT_INPUT, EXIT_PASS, main
from permasoup.kernel import Kernel


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "chain2.json").write_text(json.dumps({"states": ["1", "2"],
                                                      "jump_rates": [[0, 1], [2, 0]]}))
    (tmp_path / "sym.json").write_text(json.dumps({"states": ["1", "2"],
                                                   "jump_rates": [[0, 1], [1, 0]]}))
    return tmp_path


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if out.out.strip() else None), out.err


def test_potentials_writes_u1(workdir, capsys):
    code, rep, _ = run(["chain", "potentials", "--chain", workdir / "chain2.json",
                        "--out", workdir / "u1.csv", "--kernel-out", workdir / "u1.json"], capsys)
    assert code == EXIT_PASS
    rows = (workdir / "u1.csv").read_text().splitlines()
    assert rows == ["u1,1,2", "1,0.75,0.25", "2,0.5,0.5"]
    k = pio.load_kernel(workdir / "u1.json")
    assert np.allclose(k.entries, [[0.75, 0.25], [0.5, 0.5]])


def test_moments_permanent(workdir, capsys):
    pio.write_text(workdir / "u1.json", pio.json_text(pio.kernel_to_dict(
        Kernel.from_matrix([[0.75, 0.25], [0.5, 0.5]]))))
    code, rep, _ = run(["moments", "permanent", "--kernel", workdir / "u1.json",
                        "--points", "1,2", "--beta", "1"], capsys)
    assert code == EXIT_PASS
    assert rep["results"]["value"] == pytest.approx(0.5)
    assert rep["results"]["enumeration_count"] == 2
    assert set(rep["results"]) >= {"query", "value", "method", "enumeration_count"}


def test_moment_query_file(workdir, capsys):
    q = {"kernel": {"labels": ["a", "b"], "beta": 1.0, "entries": [[0.75, 0.25], [0.5, 0.5]]},
         "points": ["a", "b"], "beta": 1.0}
    (workdir / "q.json").write_text(json.dumps(q))
    code, rep, _ = run(["moments", "partition", "--query", workdir / "q.json"], capsys)
    assert code == EXIT_PASS and rep["results"]["value"] == pytest.approx(0.5)


def test_exit_codes(workdir, capsys):
    k = workdir / "k.json"
    k.write_text(json.dumps({"entries": [[1.0]]}))
    assert run(["moments", "permanent", "--kernel", k, "--points", ",".join(["1"] * 11)],
               capsys)[0] == EXIT_CAPACITY
    code, _, err = run(["moments", "permanent", "--kernel", workdir / "missing.json",
                        "--points", "1"], capsys)
    assert code == EXIT_INPUT and "missing.json" in err
    bad = workdir / "bad.json"
    bad.write_text(json.dumps({"labels": ["1"]}))
    code, _, err = run(["validate", "--kernel", bad], capsys)
    assert code == EXIT_INPUT and "entries" in err
    assert run(["soup", "sample", "--chain", workdir / "chain2.json"], capsys)[0] == EXIT_INPUT
    bad_k = workdir / "badk.json"
    bad_k.write_text(json.dumps({"entries": [[1, 2], [2, 1]]}))
    assert run(["validate", "--kernel", bad_k], capsys)[0] == EXIT_FAIL
    assert run(["nonsense"], capsys)[0] == EXIT_INPUT


def test_soup_verify_and_reproducibility(workdir, capsys):
    args = ["soup", "verify", "--chain", workdir / "chain2.json", "--beta", "1", "--n", "100000",
            "--seed", "7", "--order", "2"]
    code, rep, _ = run(args + ["--out-dir", workdir / "a"], capsys)
    assert code == EXIT_PASS and rep["passed"]
    assert all("se" in c for c in rep["checks"])
    run(args + ["--out-dir", workdir / "b", "--threads", "4"], capsys)
    a = (workdir / "a" / "report.json").read_bytes()
    b = (workdir / "b" / "report.json").read_bytes()
    assert a == b


def test_soup_sample_byte_identical(workdir, capsys):
    base = ["soup", "sample", "--chain", workdir / "chain2.json", "--n", "5000", "--seed", "3"]
    run(base + ["--out", workdir / "f1.csv"], capsys)
    run(base + ["--out", workdir / "f2.csv", "--threads", "3"], capsys)
    assert (workdir / "f1.csv").read_bytes() == (workdir / "f2.csv").read_bytes()
    assert (workdir / "f1.csv").read_text().splitlines()[0] == "1,2"


def test_chain_commands(workdir, capsys):
    code, rep, _ = run(["chain", "simulate", "--chain", workdir / "chain2.json", "--paths",
                        "20000", "--seed", "1", "--out", workdir / "lt.csv"], capsys)
    assert code == EXIT_PASS
    assert len((workdir / "lt.csv").read_text().splitlines()) == 20001
    code, rep, _ = run(["chain", "verify-6.3", "--chain", workdir / "sym.json", "--root", "2",
                        "--paths", "50000", "--seed", "2"], capsys)
    assert code == EXIT_PASS and len(rep["checks"]) == 4
    code, alias, _ = run(["chain", "verify-identity", "--chain", workdir / "sym.json", "--root",
                          "2", "--paths", "50000", "--seed", "2"], capsys)
    assert code == EXIT_PASS and alias["checks"] == rep["checks"]


def test_entropy_commands(workdir, capsys):
    k = workdir / "k.json"
    k.write_text(json.dumps({"labels": ["1", "2"], "entries": [[0.75, 0.25], [0.5, 0.5]]}))
    code, rep, _ = run(["entropy", "profile", "--kernel", k, "--metric", "d", "--grid",
                        "0.01:1:log", "--out", workdir / "profile.csv"], capsys)
    assert code == EXIT_PASS
    lines = (workdir / "profile.csv").read_text().splitlines()
    assert lines[0] == "delta,J,J_over_delta,sup_center" and len(lines) == 17
    code, rep, _ = run(["entropy", "integral", "--kernel", k, "--a", "1.0"], capsys)
    assert rep["results"]["sup_center"] in ("1", "2")
    code, rep, _ = run(["entropy", "local", "--kernel", k, "--t0", "1", "--delta", "0.5"], capsys)
    assert rep["results"]["members"] == ["1"]
    pio.write_table(workdir / "t.csv", ["a", "b", "c"],
                    np.abs(np.subtract.outer([0, 0.5, 1], [0, 0.5, 1])), "abs")
    code, rep, _ = run(["entropy", "integral", "--table", workdir / "t.csv", "--a", "1"], capsys)
    assert rep["results"]["J"] == pytest.approx(0.8424542478116291)


def test_metric_and_validate(workdir, capsys):
    k = workdir / "k.json"
    k.write_text(json.dumps({"labels": ["1", "2"], "entries": [[0.75, 0.25], [0.5, 0.5]]}))
    code, rep, _ = run(["metric", "--kernel", k, "--kind", "dbar", "--relations",
                        "--out", workdir / "m.csv"], capsys)
    assert code == EXIT_PASS
    assert pio.read_table(workdir / "m.csv").values[0, 1] == pytest.approx(0.7368128791)
    code, rep, _ = run(["validate", "--kernel", k], capsys)
    assert code == EXIT_PASS
    assert rep["results"]["sufficient_admissibility"]["verdict"] == "passes sufficient test"


def test_verify_commands(workdir, capsys):
    code, rep, _ = run(["verify", "psi2", "--seed", "1", "--n", "1000000"], capsys)
    assert code == EXIT_PASS
    code, rep, _ = run(["verify", "modulus", "--kernel", "brownian", "--grid", "32", "--seeds",
                        "20", "--seed", "4", "--out-dir", workdir / "mod"], capsys)
    assert code == EXIT_PASS
    assert (workdir / "mod" / "modulus_ratios.csv").exists()
    g = workdir / "g.json"
    g.write_text(json.dumps({"entries": [[1.0, 0.5], [0.5, 1.0]]}))
    assert run(["verify", "gaussian", "--kernel", g, "--n", "100000", "--seed", "2"],
               capsys)[0] == EXIT_PASS
    assert run(["verify", "psi2", "--kernel", g, "--n", "100000", "--seed", "2"],
               capsys)[0] == EXIT_PASS


def test_timing_is_opt_in(workdir, capsys):
    k = workdir / "k.json"
    k.write_text(json.dumps({"entries": [[1.0]]}))
    _, rep, _ = run(["validate", "--kernel", k], capsys)
    assert "wall_clock_seconds" not in rep
    _, rep, _ = run(["validate", "--kernel", k, "--timing"], capsys)
    assert rep["wall_clock_seconds"] >= 0
