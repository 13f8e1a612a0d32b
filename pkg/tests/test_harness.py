import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from rbsde_lab.drivers import comparison_margin
from rbsde_lab.errors import ConfigError
from rbsde_lab.harness import generators as gen
from rbsde_lab.harness.cli import EXIT_CONFIG, EXIT_OK, EXIT_PRECONDITION, main
from rbsde_lab.harness.config import load_config, parse_config
from rbsde_lab.harness.io import report_bytes
from rbsde_lab.harness.suites import SUITES, characterization_suite, run_suites
from rbsde_lab.lattice import build_default_lattice

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.yaml"))


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def _solve_doc(**over):
    doc = {"version": 1, "task": "solve", "model": {"T": 1.0, "N": 4, "marks": [{"u": 0.5, "lambda": 0.3}]},
           "driver": "zero", "terminal": {"kind": "constant", "value": 2.5}}
    doc.update(over)
    return doc


def test_solve_zero_driver_constant_terminal_csv(tmp_path):
    out = tmp_path / "out"
    code = main(["solve", "--config", _write(tmp_path, _solve_doc()), "--out", str(out)])
    assert code == EXIT_OK
    with (out / "solution.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == sum(3 ** i for i in range(5))
    assert {float(r["Y"]) for r in rows} == {2.5}
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["task"] == "solve"
    assert (out / "plot.tsv").read_text().startswith("t\t")


@pytest.mark.parametrize("path", CONFIGS, ids=[p.stem for p in CONFIGS])
def test_shipped_configs_run(path, tmp_path):
    extra = ["--instances", "2"] if path.stem == "verify" else []
    assert main([path.stem, "--config", str(path), "--out", str(tmp_path / "o")] + extra) == EXIT_OK
    doc = json.loads((tmp_path / "o" / "report.json").read_text())
    assert doc["passed"] is True


@pytest.mark.parametrize("doc", [
    _solve_doc(version=2),
    _solve_doc(bogus=1),
    _solve_doc(driver="nonsense"),
    _solve_doc(model={"T": 1.0, "N": 0}),
    _solve_doc(terminal={"kind": "random"}),
    _solve_doc(terminal={"kind": "unknown"}),
    {"version": 1, "task": "verify"},
])
def test_config_errors_exit_2(doc, tmp_path):
    task = doc.get("task", "solve")
    assert main([task, "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file_exit_2(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG


def test_precondition_exit_3(tmp_path):
    doc = _solve_doc(model={"T": 1.0, "N": 2}, driver="linear:-3,0")
    assert main(["solve", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_PRECONDITION


def test_parse_config_validation():
    with pytest.raises(ConfigError):
        parse_config([1, 2])
    with pytest.raises(ConfigError):
        parse_config({"version": 1, "task": "fly", "model": {}})
    with pytest.raises(ConfigError):
        parse_config({"version": 1, "task": "verify", "seed": 1, "suites": ["nope"]})
    cfg = parse_config({"version": 1, "task": "verify", "seed": 3, "suites": ["eps"], "refine": "8,16"})
    assert cfg.suites == ("eps",) and cfg.refine == (8, 16)


def test_shipped_configs_parse():
    for p in CONFIGS:
        cfg = load_config(p)
        assert cfg.task == p.stem


def test_report_bytes_canonical():
    a = report_bytes({"b": np.float64(1.5), "a": [np.int64(2), float("nan")], "c": np.bool_(True)})
    b = report_bytes({"c": True, "a": [2, float("nan")], "b": 1.5})
    assert a == b
    doc = json.loads(a)
    assert list(doc) == ["a", "b", "c"] and doc["a"][1] == "nan"
    assert a.endswith(b"\n")


def test_rng_streams_are_independent_and_reproducible():
    a = gen.rng_for(1, 2, 3).normal(size=4)
    assert np.array_equal(a, gen.rng_for(1, 2, 3).normal(size=4))
    assert not np.array_equal(a, gen.rng_for(1, 2, 4).normal(size=4))


def test_generated_drivers_are_admissible():
    for k in range(20):
        rng = gen.rng_for(5, 0, k)
        m = build_default_lattice(1.0, 4, gen.random_marks(rng, 1))
        d, _ = gen.random_monotone_driver(rng, m)
        assert d.lipschitz * m.dt < 1
        assert comparison_margin(m, d) > gen.MIN_MARGIN


def test_suite_report_is_deterministic_and_timeless():
    r1 = characterization_suite(11, 4)
    r2 = characterization_suite(11, 4)
    assert r1.passed
    assert r1.to_dict() == r2.to_dict()
    assert "wall_time" not in json.dumps(r1.to_dict())


def test_every_suite_runs_small():
    for rep in run_suites(3, list(SUITES), instances=1):
        assert rep.passed, rep.suite


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, _solve_doc())
    r = subprocess.run([sys.executable, "-m", "rbsde_lab", "solve", "--config", cfg, "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "PASS" in r.stdout
