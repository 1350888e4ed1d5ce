import csv
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from magnify.cli import run
from magnify.report import emit_csv, load_schema

from conftest import MAPS


@pytest.fixture(scope="module")
def schema():
    return load_schema()


def run_report(tmp_path, *argv):
    out = tmp_path / "r.json"
    code = run([*argv, "--out", str(out), "--normalize"])
    text = out.read_text() if out.exists() else None
    return code, text


def test_certify_csq_quadratic(tmp_path, schema):
    code, text = run_report(
        tmp_path, "certify", "--map", str(MAPS / "csq.poly"), "--point", "0,0", "--mode", "quadratic", "--seed", "42"
    )
    assert code == 0
    rep = json.loads(text)
    jsonschema.validate(rep, schema)
    cert = rep["results"]["certificate"]
    assert cert["regularity"]["margin"] == pytest.approx(1.0, abs=1e-6)
    assert cert["regularity"]["c_hat"] == pytest.approx(1.0, abs=1e-6)
    assert cert["antipodal_note"]
    assert "timings" not in rep


def test_certify_diag_refused(tmp_path, schema):
    code, text = run_report(tmp_path, "certify", "--map", str(MAPS / "diag.poly"), "--point", "0,0", "--mode", "quadratic")
    assert code == 1
    rep = json.loads(text)
    jsonschema.validate(rep, schema)
    cert = rep["results"]["certificate"]
    assert cert["status"] == "refused" and cert["failed_stage"] == "regularity_margin"
    w = np.array(cert["regularity"]["witness"])
    assert min(np.linalg.norm(w - e) for e in (np.eye(2)[0], np.eye(2)[1], -np.eye(2)[0], -np.eye(2)[1])) <= 1e-3


def test_invert_csq(tmp_path, schema):
    code, text = run_report(tmp_path, "invert", "--map", str(MAPS / "csq.poly"), "--point", "0,0", "--target", "0,4")
    assert code == 0
    rep = json.loads(text)
    jsonschema.validate(rep, schema)
    pre = np.array(rep["results"]["solution"]["preimages"])
    assert np.allclose(np.abs(pre), 1.4142136, atol=1e-7)
    assert np.allclose(pre[0], -pre[1])


def test_invert_regular_and_first_order(tmp_path, schema):
    code, text = run_report(tmp_path, "invert", "--map", str(MAPS / "quad1d.poly"), "--point", "0", "--target", "0.21")
    assert code == 0
    rep = json.loads(text)
    assert rep["results"]["mode"] == "regular"
    assert rep["results"]["solution"]["preimages"][0][0] == pytest.approx(0.178233, abs=1e-6)
    code, text = run_report(tmp_path, "certify", "--map", str(MAPS / "quad1d.poly"), "--point", "0")
    assert code == 0
    jsonschema.validate(json.loads(text), schema)


def test_invert_diverging_target_exits_one(tmp_path):
    code, _ = run_report(tmp_path, "invert", "--map", str(MAPS / "quad1d.poly"), "--point", "0", "--target", "10")
    assert code == 1


def test_sweep_and_falsify(tmp_path, schema):
    code, text = run_report(tmp_path, "sweep", "--map", str(MAPS / "quad1d.poly"), "--point", "0")
    assert code == 0
    rep = json.loads(text)
    jsonschema.validate(rep, schema)
    assert rep["results"]["sweep"]["largest_passing"] == pytest.approx(0.25, abs=0.02)
    code, text = run_report(tmp_path, "falsify", "--map", str(MAPS / "csq.poly"), "--point", "0,0")
    assert code == 1
    jsonschema.validate(json.loads(text), schema)
    code, _ = run_report(tmp_path, "falsify", "--map", str(MAPS / "quad1d.poly"), "--point", "0", "--radius", "0.25")
    assert code == 0


def test_expand_and_remainder_csv(tmp_path, schema):
    out_csv = tmp_path / "rem.csv"
    code, text = run_report(
        tmp_path,
        "expand", "--map", str(MAPS / "csq.poly"), "--point", "0,0", "--order", "1",
        "--csv", str(out_csv), "--series", "remainder",
    )
    assert code == 0
    jsonschema.validate(json.loads(text), schema)
    rows = list(csv.reader(out_csv.open()))
    assert rows[0] == ["scale", "value"]
    scales = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(scales) > 0)
    assert np.polyfit(np.log(scales), np.log(values), 1)[0] == pytest.approx(2.0, abs=0.1)
    # 17 significant digits
    assert all(len(r[0].replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 17 for r in rows[1:])


def test_sweep_csv_always_true_rows_pass(tmp_path):
    report = {
        "results": {
            "sweep": {
                "largest_passing": 0.4,
                "transcript": [{"scale": s, "passed": True, "value": None, "error": None} for s in (0.4, 0.1, 0.2, 0.3)],
            }
        }
    }
    text = emit_csv(report, "sweep")
    lines = text.strip().splitlines()
    assert lines[0] == "scale,value,passed"
    assert all(line.split(",")[2] == "1" for line in lines[1:])
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.1, 0.2, 0.3, 0.4]


@pytest.mark.parametrize(
    "argv",
    [
        ["certify", "--map", str(MAPS / "csq.poly"), "--series", ""],
        ["certify", "--map", str(MAPS / "csq.poly"), "--csv", "x.csv"],
        ["certify", "--map", str(MAPS / "csq.poly"), "--series", "bogus"],
        ["certify", "--map", "does/not/exist.poly"],
        ["certify", "--map", str(MAPS / "csq.poly"), "--point", "0,0,0"],
        ["frobnicate"],
        ["invert", "--map", str(MAPS / "csq.poly")],
        ["falsify", "--map", str(MAPS / "csq.poly"), "--samples", "10"],
        ["certify", "--map", str(MAPS / "csq.poly"), "--point", "a,b"],
    ],
)
def test_usage_errors_exit_two(argv, tmp_path):
    assert run(argv) == 2


def test_bad_map_file_exits_two(tmp_path):
    bad = tmp_path / "bad.poly"
    bad.write_text("dim 2\nf1 = x3\nf2 = x1\n")
    assert run(["expand", "--map", str(bad)]) == 2


def test_config_file_overrides_flags(tmp_path, caplog):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"map": str(MAPS / "quad1d.poly"), "point": [0.0], "target": [0.21], "tol": 1e-13}))
    out = tmp_path / "r.json"
    with caplog.at_level("WARNING"):
        code = run(["invert", "--config", str(cfg), "--target", "0.5", "--out", str(out), "--normalize"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["config"]["target"] == [0.21]
    assert rep["config"]["tol"] == 1e-13
    assert any("overrides" in r.message for r in caplog.records)


def test_config_unknown_key_exits_two(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"map": str(MAPS / "csq.poly"), "frobnicate": 1}))
    assert run(["certify", "--config", str(cfg)]) == 2


def test_reports_are_byte_identical(tmp_path):
    argv = ["certify", "--map", str(MAPS / "csq.poly"), "--point", "0,0", "--mode", "quadratic"]
    _, a = run_report(tmp_path, *argv)
    _, b = run_report(tmp_path, *argv)
    assert a == b


def test_timings_present_without_normalize(tmp_path):
    out = tmp_path / "r.json"
    run(["expand", "--map", str(MAPS / "csq.poly"), "--out", str(out)])
    assert "total_s" in json.loads(out.read_text())["timings"]


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "magnify.cli", "expand", "--map", str(MAPS / "quad1d.poly"), "--normalize"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["tool"] == "magnify"
