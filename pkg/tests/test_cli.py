import json
import math
import subprocess
import sys

import numpy as np
import pytest

from vphomeo.cli import main
from vphomeo.homeo1d import StaircaseParams, make_staircase
from vphomeo.kernel import SampledMap


def run(tmp_path, command, spec, *extra, name="out"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(spec))
    out = tmp_path / name
    code = main([command, "--spec", str(path), "--out", str(out), *extra])
    summary = json.loads((out / "summary.json").read_text()) if (out / "summary.json").exists() \
        else None
    return code, out, summary


def test_staircase_single_cell(tmp_path):
    code, out, summary = run(tmp_path, "staircase", {"n": 1, "ramp": "linear"})
    assert code == 0 and summary["passed"]


def test_staircase_poly_ramp_samples(tmp_path):
    code, out, _ = run(tmp_path, "staircase", {"n": 3, "a_n": 1 / 9, "ramp": "poly"})
    assert code == 0
    sm = SampledMap.from_csv(out / "staircase_n3.csv")
    x = sm.points[:, 0]
    left = x <= 1 / 9
    assert np.allclose(sm.values[left, 0], 54 * x[left] ** 2 * (1 - 6 * x[left]), atol=1e-14)
    ref = make_staircase(StaircaseParams(3, 1 / 9, "poly"))
    assert np.allclose(sm.jacobians[:, 0, 0], ref.deriv(x))


def test_staircase_sweep_table(tmp_path):
    code, out, summary = run(tmp_path, "staircase", {"ns": [4, 16, 64], "p": 0.5})
    rows = (out / "table.csv").read_text().splitlines()
    assert code == 0 and len(rows) == 4
    assert rows[0].startswith("index,sup_dist,sup_bound")
    assert len(summary["checks"]) == 6


def test_approx1d_identity_one(tmp_path):
    code, _, summary = run(tmp_path, "approx1d", {"f": "x", "F": "1"})
    assert code == 0 and summary["result"]["n"] == 0


def test_approx1d_rejects_identity_two(tmp_path):
    code, _, summary = run(tmp_path, "approx1d", {"f": "x", "F": "2", "expect": "infeasible"})
    assert code == 0
    assert summary["rejection"]["witness"] is not None
    code, _, summary = run(tmp_path, "approx1d", {"f": "x", "F": "2"}, name="b")
    assert code == 1 and summary["failures"] == ["rejected_as_expected"]


def test_approx1d_square_pair(tmp_path):
    code, out, summary = run(tmp_path, "approx1d",
                             {"f": "x**2", "F": "x", "eps": 0.05, "sup_eps": 0.02}, "--emit",
                             "json")
    assert code == 0
    hist = json.loads((out / "history.json").read_text())
    assert hist[-1]["lp_err"] <= 0.05


@pytest.mark.parametrize("profile", [{"kind": "zero", "m": 1},
                                     {"kind": "constant", "thetas": [0.7, -0.2]},
                                     {"kind": "random"}])
def test_twist_profiles(tmp_path, profile):
    code, out, summary = run(tmp_path, "twist", {"d": 4, "profile": profile, "n_points": 300})
    assert code == 0, summary["failures"]
    sm = SampledMap.from_csv(out / "samples.csv")
    assert sm.points.shape == (300, 4) and sm.jacobians.shape == (300, 4, 4)


def test_localize_identity_and_quarter_turn(tmp_path):
    code, _, summary = run(tmp_path, "localize", {"H": [[1, 0], [0, 1]]}, name="i")
    assert code == 0 and summary["fit"]["C1"] == 0.0
    spec = {"theta": math.pi / 2, "center": [0.5, 0.5], "r": 0.25, "s": 0.125,
            "fit": {"configs": [[0.25, 0.5], [0.125, 0.5]]}}
    code, out, summary = run(tmp_path, "localize", spec, name="q")
    assert code == 0
    names = {c["name"] for c in summary["checks"]}
    assert {"identity_outside", "rotation_inside", "det_annulus"} <= names
    assert summary["fit"]["slope_r"] == pytest.approx(4.0, rel=1e-6)


def test_theoremb_identity_field(tmp_path):
    spec = {"field": {"kind": "closed-form", "matrix": [[1, 0], [0, 1]]}, "levels": [1, 2],
            "resolution": 64, "census": 100}
    code, out, _ = run(tmp_path, "theoremb", spec)
    assert code == 0
    lines = (out / "levels.csv").read_text().splitlines()
    assert lines[0] == "level,sup_dist,lp_err,det_max_dev,n_balls,runtime_ms"
    assert lines[1].startswith("1,0,0,0,0,")


def test_theoremb_table_field(tmp_path):
    spec = {"field": {"kind": "table", "splits": [2, 1], "angles": [0.5, -0.5]},
            "levels": [1], "resolution": 64, "census": 200}
    code, out, summary = run(tmp_path, "theoremb", spec)
    assert code == 0, summary["failures"]
    assert (out / "checks.csv").read_text().splitlines()[0].startswith("level,l1_err,lp_power")


def test_unknown_spec_key_rejected(tmp_path, capsys):
    code, out, summary = run(tmp_path, "twist", {"d": 2, "colour": "red"})
    assert code == 2 and summary is None
    assert "colour" in capsys.readouterr().err


def test_unknown_tolerance_rejected(tmp_path):
    code, _, _ = run(tmp_path, "twist", {"tolerances": {"speed": 1}})
    assert code == 2


def test_tolerance_override_changes_verdict(tmp_path):
    code, _, summary = run(tmp_path, "twist", {"d": 2, "tolerances": {"det": 0.0, "norm": 0.0,
                                                                      "roundtrip": 0.0}})
    assert code == 1 and summary["failures"]


def test_verify_empty_suite(tmp_path):
    code, out, summary = run(tmp_path, "verify", {"criteria": []})
    assert code == 0 and summary["checks"] == []
    assert json.loads((out / "acceptance.json").read_text())["criteria"] == []


def test_verify_unknown_criterion(tmp_path):
    code, _, _ = run(tmp_path, "verify", {"criteria": [42]})
    assert code == 2


def _strip_runtime(text):
    rows = [r.split(",") for r in text.splitlines()]
    k = rows[0].index("runtime_ms")
    return [r[:k] + r[k + 1:] for r in rows]


@pytest.mark.parametrize("command,spec", [
    ("staircase", {"ns": [3, 9], "ramp": "poly"}),
    ("twist", {"d": 3, "n_points": 200}),
    ("localize", {"theta": 1.0, "fit": {"configs": [[0.25, 0.5]]}}),
    ("verify", {"criteria": [8, 9]}),
    ("theoremb", {"levels": [1], "resolution": 64, "census": 200}),
])
def test_seed_repeatability_byte_identical(tmp_path, command, spec):
    _, a, _ = run(tmp_path, command, spec, "--seed", "12345", name="a")
    _, b, _ = run(tmp_path, command, spec, "--seed", "12345", name="b")
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        if name == "timings.json":
            continue
        ta, tb = (a / name).read_text(), (b / name).read_text()
        if name == "levels.csv":
            assert _strip_runtime(ta) == _strip_runtime(tb)
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_module_entry_point(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"n": 2}))
    proc = subprocess.run([sys.executable, "-m", "vphomeo", "staircase", "--spec", str(spec),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "staircase: ok" in proc.stdout
