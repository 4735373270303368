import json
import subprocess
import sys

import numpy as np
import pytest

from kernelpf import AnalyticKernel, DenseKernel, RankOneRemarkKernel
from kernelpf import cli, sim
from kernelpf.errors import InvalidAtomError, SchemaError
from kernelpf.io import canonical, canonical_json, check_schema, dumps, parse_kernel_spec, write_atomic

from oracles import ex_pi, ex_R

ANALYTIC = {"variant": "analytic", "a": 2, "b": 2, "c": 0.2, "grid": {"T": 20, "n": 400}}
DENSE = {"variant": "dense", "M": [[0.5, 0.5], [0.25, 0.75]], "g": [0.2, 0.4], "gamma": [0.5, 0.5]}
BAD_ATOM = {"variant": "dense", "M": [[0.5, 0.5], [0.25, 0.75]], "g": [0.2, 0.9], "gamma": [0.5, 0.5]}
DENSITY = {
    "variant": "density",
    "grid": {"T": 10, "n": 80},
    "density": "2*exp(-(y - x))",
    "support": "upper",
    "g": "0.2*exp(-2*x)",
    "gamma": {"density": "0*y", "atoms": [1.0]},
    "point_masses": [0.0],
}


# ---------------------------------------------------------------------------
# specifications


def test_parse_analytic():
    K = parse_kernel_spec(ANALYTIC)
    assert isinstance(K, AnalyticKernel)
    assert (K.a, K.b, K.c) == (2.0, 2.0, 0.2)


def test_parse_dense_derives_m():
    K = parse_kernel_spec(json.dumps(DENSE))
    assert isinstance(K, DenseKernel)
    np.testing.assert_allclose(K.m, np.array(DENSE["M"]) - np.outer(DENSE["g"], DENSE["gamma"]))


def test_invalid_atom():
    with pytest.raises(InvalidAtomError):
        parse_kernel_spec(BAD_ATOM)


def test_density_spec():
    K = parse_kernel_spec(DENSITY)
    assert K.space.n_atoms == 1


@pytest.mark.parametrize(
    "doc, pointer",
    [
        ({"variant": "dense", "M": [[1.0]], "g": ["x"], "gamma": [1.0]}, "/g/0"),
        ({"variant": "analytic", "a": 2, "b": -3, "c": 0.2}, "/b"),
        ({"variant": "analytic", "a": 2, "b": 2, "c": 0.2, "grid": {"T": 20, "n": 1}}, "/grid/n"),
        ({"variant": "sparse"}, "/variant"),
        ({"M": [[1.0]]}, "/"),
    ],
)
def test_schema_pointer(doc, pointer):
    with pytest.raises(SchemaError) as info:
        check_schema(doc)
    assert info.value.pointer == pointer


def test_unknown_expression_symbol():
    doc = json.loads(json.dumps(DENSITY))
    doc["g"] = "z * x"
    with pytest.raises(SchemaError) as info:
        parse_kernel_spec(doc)
    assert info.value.pointer == "/g"


def test_malformed_json():
    with pytest.raises(SchemaError):
        parse_kernel_spec("{not json")


@pytest.mark.parametrize("doc", [ANALYTIC, DENSE, DENSITY, RankOneRemarkKernel.two_state(3.0, 2.0).to_spec()])
def test_round_trip(doc):
    K = parse_kernel_spec(doc)
    assert canonical_json(K.to_spec()) == canonical_json(doc)
    assert canonical(canonical(doc)) == canonical(doc)


def test_atomic_write_keeps_old_file(tmp_path):
    path = tmp_path / "r.json"
    path.write_text("old")

    class Boom:
        def __str__(self):
            raise RuntimeError

    with pytest.raises(TypeError):
        write_atomic(path, Boom())
    assert path.read_text() == "old"
    assert list(tmp_path.iterdir()) == [path]


def test_dumps_nonfinite():
    assert json.loads(dumps({"x": np.inf, "y": np.array([1.0, np.nan])})) == {"x": None, "y": [1.0, None]}


# ---------------------------------------------------------------------------
# command line


@pytest.fixture
def specs(tmp_path):
    out = {}
    for name, doc in (("analytic", ANALYTIC), ("dense", DENSE), ("bad", BAD_ATOM),
                      ("critical", ANALYTIC | {"c": 1 / 3})):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(doc))
        out[name] = str(p)
    return out


def run_cli(argv, capsys):
    code = cli.run(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_classify_critical(specs, capsys):
    code, out, _ = run_cli(["classify", "--input", specs["critical"]], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["report"]["recurrence"] == "RPositiveRecurrent"
    assert rep["report"]["R"] == pytest.approx(1.0, abs=1e-9)
    assert rep["config"]["N"] == 200 and rep["config"]["n_max"] == 500


def test_limit_matches_reference(specs, tmp_path, capsys):
    out = tmp_path / "lim.json"
    code, _, _ = run_cli(["limit", "--input", specs["analytic"], "--x", "0", "--set", "0:1",
                          "--nmax", "300", "--output", str(out)], capsys)
    assert code == 0
    rep = json.loads(out.read_text())["report"]
    R = ex_R(2, 2, 0.2)
    assert rep["predicted_limit"] == pytest.approx(0.2 * ex_pi(2.0, R, 1.0), abs=1e-3)
    trace = (tmp_path / "lim.trace.csv").read_text().splitlines()
    assert trace[0] == "n,value" and len(trace) == 302


def test_invariants_writes_csv(specs, tmp_path, capsys):
    out = tmp_path / "inv.json"
    assert run_cli(["invariants", "--input", specs["dense"], "--output", str(out)], capsys)[0] == 0
    assert (tmp_path / "inv.csv").exists()


def test_decompose(specs, capsys):
    code, out, _ = run_cli(["decompose", "--input", specs["dense"], "--s", "0.9", "--x", "0", "--set", "1"], capsys)
    assert code == 0
    assert json.loads(out)["report"]["residual"] <= 1e-10


def test_oracle(specs, capsys):
    code, out, _ = run_cli(["oracle", "--input", specs["dense"]], capsys)
    rep = json.loads(out)["report"]
    assert code == 0
    assert rep["R_times_rho"] == pytest.approx(1.0, abs=1e-8)
    assert rep["max_relative_error"] <= 1e-6


def test_oracle_rejects_continuous(specs, capsys):
    code, _, err = run_cli(["oracle", "--input", specs["analytic"]], capsys)
    assert code == 2
    assert json.loads(err)["error"] == "UnsupportedVariantError"


@pytest.mark.parametrize(
    "argv, error",
    [
        (["classify", "--input", "BAD"], "InvalidAtomError"),
        (["classify", "--input", "/nonexistent.json"], "PreconditionError"),
        (["classify"], "PreconditionError"),
        (["classify", "--input", "DENSE", "--N", "0"], "PreconditionError"),
        (["limit", "--input", "DENSE", "--set", "0"], "PreconditionError"),
        (["simulate", "--preset", "pure-atom", "--replicates", "10"], "PreconditionError"),
        (["simulate", "--preset", "pure-atom", "--params", "{bad"], "SchemaError"),
    ],
)
def test_precondition_errors(argv, error, specs, tmp_path, capsys):
    argv = [specs["bad"] if a == "BAD" else specs["dense"] if a == "DENSE" else a for a in argv]
    out = tmp_path / "never.json"
    code, stdout, err = run_cli(argv + ["--output", str(out)], capsys)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["error"] == error
    assert not out.exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_numerical_error_exit_three(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(sim, "POPULATION_CAP", 2000)
    out = tmp_path / "sim.json"
    code, _, err = run_cli(["simulate", "--preset", "analytic-example", "--params", '{"a": 8, "c": 8}',
                            "--replicates", "100", "--N", "12", "--output", str(out)], capsys)
    assert code == 3
    assert json.loads(err)["error"] == "UnreliableEstimateError"
    assert list(tmp_path.iterdir()) == []


def test_simulate_byte_identical(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        code, _, _ = run_cli(["simulate", "--preset", "pure-atom", "--replicates", "1000", "--seed", "7",
                              "--output", str(p)], capsys)
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_simulate_records(tmp_path, capsys):
    rec = tmp_path / "rec.jsonl"
    code, out, _ = run_cli(["simulate", "--preset", "split-chain", "--replicates", "200", "--records", str(rec)],
                           capsys)
    assert code == 0
    assert len(rec.read_text().splitlines()) == 200


@pytest.mark.parametrize("command", ["classify", "invariants", "oracle"])
def test_reports_reproducible(command, specs, tmp_path, capsys):
    runs = [tmp_path / "one", tmp_path / "two"]
    for d in runs:
        run_cli([command, "--input", specs["dense"], "--output", str(d / "report.json")], capsys)
    for f in runs[0].iterdir():
        assert f.read_bytes() == (runs[1] / f.name).read_bytes()


def test_entry_point(specs):
    proc = subprocess.run([sys.executable, "-m", "kernelpf.cli", "classify", "--input", specs["bad"]],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"] == "InvalidAtomError"
