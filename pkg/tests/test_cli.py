import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from dnolab import __version__
from dnolab.cli import (
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_OK,
    SYMBOL_COLUMNS,
    ConfigError,
    fit_exponent,
    fmt_float,
    main,
    parse_config,
    resolve_jobs,
)
from dnolab.oracle import OdeProblem, ode_dno

FLAT = "[domain]\nname = halfspace-flat\n"
SMALL_GRID = "[grid]\nmagnitudes = 4, 8, 16\n"


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_body(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def csv_meta(text):
    return dict(ln[2:].split("=", 1) for ln in text.splitlines() if ln.startswith("# ") and "=" in ln)


# ------------------------------------------------------------ configuration

@pytest.mark.parametrize("text,needle", [
    ("[domain]\nname = torus\n", "line 2"),
    ("[grid]\nq = 3\n", "[grid] q (line 2)"),
    ("[grid]\nq = 0\n", "[grid] q"),
    ("[grid]\nmagnitudes = 8, 4\n", "magnitudes"),
    ("[grid]\nmagnitudes = -1, 4\n", "magnitudes"),
    ("[output]\nformat = xml\n", "[output] format (line 2)"),
    ("[domain]\n\nbogus = 1\n", "[domain] bogus (line 3)"),
    ("[extras]\n", "[extras] (line 1)"),
    ("[domain]\nname = polynomial\nn = 2\n", "terms"),
    ("[domain]\nname = polynomial\nterms = 1:0,0,1\n", "[domain] terms (line 3)"),
    ("[grid]\nrays = 1, 0\n", "rays"),
    ("[tolerances]\nkohn_ratio = lots\n", "[tolerances] kohn_ratio (line 2)"),
])
def test_config_errors_name_the_location(tmp_path, capsys, text, needle):
    code, out, err = run(capsys, "chart", "--config", write(tmp_path, text))
    assert code == EXIT_CONFIG
    assert needle in err
    assert out == ""


def test_missing_config_file(capsys, tmp_path):
    code, _, err = run(capsys, "chart", "--config", str(tmp_path / "absent.ini"))
    assert code == EXIT_CONFIG and "cannot read" in err


def test_polynomial_config_parses():
    cfg = parse_config("[domain]\nname = polynomial\nn = 2\nterms = 1:0,0,1,0; 1:2,0,0,0\n[grid]\nq = 1\n")
    assert cfg.terms == [(1.0, (0, 0, 1, 0)), (1.0, (2, 0, 0, 0))]
    assert cfg.rays == [(0.0, 0.0, -1.0), (0.25, 0.0, -1.0)]


def test_config_hash_tracks_source():
    assert parse_config("").config_hash != parse_config(FLAT).config_hash
    assert parse_config(FLAT).config_hash == parse_config(FLAT).config_hash


def test_jobs_precedence(monkeypatch):
    cfg = parse_config("[output]\njobs = 3\n")
    monkeypatch.setenv("DNOLAB_JOBS", "5")
    assert resolve_jobs(2, cfg) == 2
    assert resolve_jobs(None, cfg) == 3
    assert resolve_jobs(None, parse_config("")) == 5
    monkeypatch.delenv("DNOLAB_JOBS")
    assert resolve_jobs(None, parse_config("")) == 1
    monkeypatch.setenv("DNOLAB_JOBS", "many")
    with pytest.raises(ConfigError):
        resolve_jobs(None, parse_config(""))


def test_bad_env_jobs_is_a_config_error(capsys, monkeypatch):
    monkeypatch.setenv("DNOLAB_JOBS", "many")
    code, _, err = run(capsys, "chart")
    assert code == EXIT_CONFIG and "DNOLAB_JOBS" in err


# ------------------------------------------------------------ formatting

def test_float_format():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert fmt_float(-0.0) == "0"
    assert fmt_float(2.0) == "2"
    assert float(fmt_float(math.pi)) == math.pi


# ------------------------------------------------------------ symbol

def test_flat_symbol_table_has_zero_order_zero(tmp_path, capsys):
    code, out, _ = run(capsys, "symbol", "--config", write(tmp_path, FLAT), "--format", "csv")
    assert code == EXIT_OK
    rows = csv_body(out)
    assert len(rows) == 2 * 4
    assert all(float(r["zero_order_re"]) == 0 and float(r["zero_order_im"]) == 0 for r in rows)


def test_ball_symbol_breakdown_identity(capsys):
    code, out, _ = run(capsys, "symbol", "--format", "csv")
    rows = csv_body(out)
    assert list(rows[0]) == list(SYMBOL_COLUMNS)
    for r in rows:
        assert float(r["breakdown_defect"]) <= 1e-12
        parts = sum(float(r[f"{k}_term_re"]) for k in ("s", "a", "tau", "xx"))
        assert parts == pytest.approx(float(r["zero_order_re"]), abs=1e-12)
    pure = [r for r in rows if r["ray"] == "0"]
    assert all(float(r["zero_order_re"]) == pytest.approx(-1, abs=1e-9) for r in pure)


def test_json_mirrors_csv(tmp_path, capsys):
    cfg = write(tmp_path, FLAT + "[grid]\nphi_prime = 0, 0.5\n")
    _, as_csv, _ = run(capsys, "symbol", "--config", cfg, "--format", "csv")
    _, as_json, _ = run(capsys, "symbol", "--config", cfg, "--format", "json")
    doc = json.loads(as_json)
    assert doc["columns"] == list(SYMBOL_COLUMNS)
    rows = csv_body(as_csv)
    assert len(rows) == len(doc["rows"]) == 16
    for a, b in zip(rows, doc["rows"]):
        assert list(b) == list(SYMBOL_COLUMNS)
        assert float(a["principal"]) == b["principal"]
    shifted = [r for r in doc["rows"] if r["phi_prime"] == 0.5 and r["ray"] == 0]
    assert all(r["phi_shift_re"] == pytest.approx(-0.5, abs=1e-14) for r in shifted)


def test_reports_carry_meta(tmp_path, capsys):
    cfg = write(tmp_path, FLAT)
    _, out, _ = run(capsys, "chart", "--config", cfg, "--format", "csv")
    meta = csv_meta(out)
    assert meta["version"] == __version__
    assert meta["box_convention"] == "2box"
    assert meta["config_hash"] == parse_config(FLAT).config_hash
    assert meta["domain"] == "halfspace-flat"
    _, out, _ = run(capsys, "chart", "--config", cfg, "--format", "json")
    assert json.loads(out)["meta"]["box_convention"] == "2box"


def test_reruns_are_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, "[grid]\nphi_prime = 0, -1.3\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "symbol", "--config", cfg, "--format", "csv", "--out", str(a))[0] == EXIT_OK
    assert run(capsys, "symbol", "--config", cfg, "--format", "csv", "--out", str(b))[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert b"\r\n" not in a.read_bytes()
    assert capsys.readouterr().out == ""


def test_chart_dump_on_ball(capsys):
    code, out, _ = run(capsys, "chart", "--format", "csv")
    rows = {(r["quantity"], r["index"]): r for r in csv_body(out)}
    assert float(rows[("levi_norm", "1")]["re"]) == pytest.approx(1.0)
    assert float(rows[("d", "2")]["re"]) == pytest.approx(-3 / math.sqrt(2), abs=1e-9)
    assert float(rows[("transverse_inner", "")]["re"]) == pytest.approx(-1 / math.sqrt(2), abs=1e-8)


# ------------------------------------------------------------ verify

def test_verify_lambda0(capsys):
    code, out, _ = run(capsys, "verify", "lambda0")
    doc = json.loads(out)
    assert code == EXIT_OK
    coefficient_checks = [r for r in doc["rows"] if "runtime" not in r["check"]]
    assert len(coefficient_checks) == 10
    assert all(r["status"] == "pass" for r in doc["rows"])
    names = " ".join(r["check"] for r in coefficient_checks)
    for coef in ("s0", "a0", "tau", "xx"):
        assert f"coefficient {coef}" in names
    assert all(r["tag"] for r in doc["rows"])


def test_verify_forms_counts(capsys):
    code, out, _ = run(capsys, "verify", "forms", "--format", "csv")
    assert code == EXIT_OK
    rows = csv_body(out)
    assert any("n=5 q=3 (60 cases)" in r["check"] for r in rows)


def test_verify_ode_on_flat(tmp_path, capsys):
    code, out, _ = run(capsys, "verify", "ode", "--config", write(tmp_path, FLAT))
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["meta"]["passed"] == doc["meta"]["total"]


def test_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "everything"])
    assert exc.value.code == EXIT_CONFIG


def test_failing_suite_exits_one(capsys):
    # the strip criterion does not hold with the listed xx weight (see the notes in the README)
    code, out, _ = run(capsys, "verify", "strip")
    assert code == EXIT_FAIL
    assert any(r["status"] == "fail" for r in json.loads(out)["rows"])


# ------------------------------------------------------------ sweep

def test_flat_sweep_reports_na(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "--config", write(tmp_path, FLAT + SMALL_GRID), "--format", "json")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert all(f["exponent"] == "n/a" for f in doc["fits"])
    assert max(r["error"] for r in doc["rows"]) < 1e-12


def test_ball_sweep_exponent_and_parallel_determinism(tmp_path, capsys):
    cfg = write(tmp_path, "[grid]\nrays = 0, 0, -1\nmagnitudes = 8, 16, 32, 64\n")
    code1, serial, _ = run(capsys, "sweep", "--config", cfg, "--format", "csv", "--jobs", "1")
    code2, parallel, _ = run(capsys, "sweep", "--config", cfg, "--format", "csv", "--jobs", "2")
    assert code1 == code2 == EXIT_OK
    assert serial == parallel
    fit = [ln for ln in serial.splitlines() if ln.startswith("# fit")][0]
    exponent = float(fit.split("exponent=")[1].split()[0])
    assert exponent >= 0.7


def test_sweep_needs_three_magnitudes(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "--config", write(tmp_path, "[grid]\nmagnitudes = 4, 8\n"))
    assert code == EXIT_CONFIG and "magnitudes" in err


def test_fit_exponent_on_constant_s0_model():
    s0 = 0.8
    mags = [8.0, 16.0, 32.0, 64.0]
    errs = [abs(ode_dno(OdeProblem(np.array([-m]), m * m, s0=s0)) - (m + s0 / math.sqrt(2))) for m in mags]
    assert fit_exponent(mags, errs) == pytest.approx(1.0, abs=0.2)
    assert fit_exponent(mags, [1e-16] * 4) is None


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dnolab.cli", "chart", "--config", write(tmp_path, FLAT),
                           "--format", "csv"], capture_output=True, text=True, check=False)
    assert proc.returncode == EXIT_OK
    assert "levi_norm" in proc.stdout
