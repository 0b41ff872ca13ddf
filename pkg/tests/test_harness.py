import json
import math

import pytest
from click.testing import CliRunner

from follmer_epi.errors import ConfigInvalid
from follmer_epi.harness import config as C
from follmer_epi.harness.cli import main

SMALL = """\
schema_version = 1
name = "small-quartic"
description = "small pair for harness tests"
lambdas = [0.25, 0.5]

[grid]
nodes = 30
epsilon = 1e-3

[simulation]
paths = 1000
seed = 11

[measure_x]
family = "quartic"
a = 1.0
b = 1.0

[measure_y]
family = "gaussian"
covariance = [[0.5]]
"""


def _invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _numbers(obj, prefix=""):
    """Flatten every numeric leaf of a JSON document into ``{path: value}``."""
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_numbers(v, f"{prefix}.{k}"))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(_numbers(v, f"{prefix}[{i}]"))
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        out[prefix] = float(obj)
    return out


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_bundled_library_loads():
    names = C.bundled_names()
    assert len(names) >= 8
    for name in names:
        scn = C.load(name)
        assert scn.name == name
        assert scn.n_paths >= 100


def test_list_command():
    res = _invoke("list")
    assert res.exit_code == 0
    assert "gaussian-pair" in res.output and "quartic-vs-gaussian" in res.output


@pytest.mark.parametrize("edit,key", [
    (lambda s: s.replace('[measure_x]\nfamily = "quartic"\na = 1.0\nb = 1.0\n', ""), "measure_x"),
    (lambda s: s.replace("epsilon = 1e-3", "epsilon = 0.5"), "grid.epsilon"),
    (lambda s: s.replace("paths = 1000", "paths = 10"), "simulation.paths"),
    (lambda s: s.replace('family = "gaussian"', 'family = "cauchy"'), "measure_y.family"),
    (lambda s: s.replace("covariance = [[0.5]]", "covariance = [[-0.5]]"), "measure_y"),
    (lambda s: s + '\n[checks]\nrequested = ["no-such-check"]\n', "checks.requested.0"),
    (lambda s: s.replace("lambdas = [0.25, 0.5]", "lambdas = [0.25, 1.5]"), "lambdas.1"),
])
def test_invalid_config_names_the_key(tmp_path, edit, key):
    path = tmp_path / "bad.toml"
    path.write_text(edit(SMALL))
    with pytest.raises(ConfigInvalid) as info:
        C.load(path)
    assert key in str(info.value)
    res = _invoke("run", path, "--out", tmp_path / "o")
    assert res.exit_code == 2
    assert key in res.output


def test_unknown_scenario_is_a_config_error(tmp_path):
    assert _invoke("run", "no-such-scenario", "--out", tmp_path).exit_code == 2


def test_run_then_report_is_byte_identical(small, tmp_path):
    out = tmp_path / "o"
    res = _invoke("run", small, "--out", out)
    assert res.exit_code == 0, res.output
    first = (out / "report.json").read_bytes()
    doc = json.loads(first)
    assert [d["lambda"] for d in doc["deficits"]] == [0.25, 0.5]
    assert doc["status"]["passed"]
    assert (out / "cache").is_dir()
    summary = (out / "summary.csv").read_text()
    assert summary.startswith("scenario,lambda,deficit,budget,route")
    assert "np." not in summary and "True" not in summary
    assert (out / "curve_X.csv").read_text().startswith("t,EGamma_00,VarGamma_00,Evnorm2")
    res = _invoke("report", small, "--out", out)
    assert res.exit_code == 0, res.output
    assert (out / "report.json").read_bytes() == first


def test_two_fresh_runs_are_byte_identical(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _invoke("run", small, "--out", a, "--no-cache").exit_code == 0
    assert _invoke("run", small, "--out", b, "--no-cache").exit_code == 0
    for name in ("report.json", "summary.csv", "checks.json", "deficit.dat", "curve_X.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_thread_count_agreement(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _invoke("run", small, "--out", a, "--threads", 1, "--no-cache").exit_code == 0
    assert _invoke("run", small, "--out", b, "--threads", 8, "--no-cache").exit_code == 0
    na = _numbers(json.loads((a / "report.json").read_text()))
    nb = _numbers(json.loads((b / "report.json").read_text()))
    assert na.keys() == nb.keys()
    for k in na:
        assert math.isclose(na[k], nb[k], rel_tol=1e-12, abs_tol=1e-12), k


def test_report_without_cache_is_a_module_error(small, tmp_path):
    res = _invoke("report", small, "--out", tmp_path / "empty")
    assert res.exit_code == 3
    assert "cache" in res.output.lower()


def test_seed_override_changes_ensembles(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _invoke("run", small, "--out", a, "--no-cache")
    _invoke("run", small, "--out", b, "--no-cache", "--seed", 12)
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    assert rb["config"]["simulation"]["seed"] == 12
    assert ra["entropies"] != rb["entropies"]


def test_entropy_curve_and_checks_commands(small, tmp_path):
    out = tmp_path / "o"
    res = _invoke("entropy", small, "--out", out)
    assert res.exit_code == 0, res.output
    doc = json.loads((out / "entropy_X.json").read_text())
    routes = doc["entropies"]
    assert {"direct", "drift-energy", "gamma-identity"} <= set(routes)
    res = _invoke("curve", small, "--out", out)
    assert res.exit_code == 0 and (out / "curve_Y.dat").is_file()
    res = _invoke("checks", small, "--out", out)
    assert res.exit_code == 0, res.output
    assert "gamma-psd" in res.output


def test_gaussian_pair_reports_closed_form_deficit(tmp_path):
    out = tmp_path / "o"
    res = _invoke("run", "gaussian-pair", "--out", out, "--paths", 2000)
    assert res.exit_code == 0, res.output
    doc = json.loads((out / "report.json").read_text())
    half = [d for d in doc["deficits"] if d["lambda"] == 0.5][0]
    assert half["deficit"] == pytest.approx(0.11157177565710485, abs=1e-10)
    assert half["route"] == "closed-form"
