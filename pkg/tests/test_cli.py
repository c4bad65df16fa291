import configparser
import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rhb import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return code, err


def read_table(path):
    lines = path.read_text().splitlines()
    header = [ln[2:] if ln.startswith("# ") else "" for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return header, list(csv.DictReader(body))


def report_sections(path):
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str
    p.read_string("\n".join(ln for ln in path.read_text().splitlines() if not ln.startswith("#")))
    return p


LINEAR = """[system]
name = linear

[method]
mode = RHB
order = 2
omega = 1.3
"""


# --- exit codes -------------------------------------------------------------------


def test_solve_success(tmp_path, capsys):
    code, _ = run(["solve", "--config", CONFIGS / "duffing_solve.ini", "--out", tmp_path], capsys)
    assert code == 0
    rep = report_sections(tmp_path / "report.txt")
    assert rep["result"]["converged"] == "true"
    assert float(rep["result"]["residual"]) <= 1e-12
    assert rep["result"]["classification"] == "physical"
    _, rows = read_table(tmp_path / "coefficients.csv")
    assert [r["label"] for r in rows] == ["x", "v"]


def test_nonconvergence_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR.replace("linear", "duffing").replace("1.3", "1.5")
                + "\n[newton]\nmax_iter = 3\n")
    code, _ = run(["solve", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2
    assert report_sections(tmp_path / "report.txt")["result"]["converged"] == "false"


def test_missing_config_file(tmp_path, capsys):
    code, err = run(["solve", "--config", tmp_path / "nope.ini", "--out", tmp_path], capsys)
    assert code == 1 and "config error" in err


def test_argparse_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve"])
    assert exc.value.code == 2


# --- configuration errors --------------------------------------------------------------


@pytest.mark.parametrize("text,line,fragment", [
    (LINEAR + "\n[bogus]\nx = 1\n", 9, "section [bogus]"),
    (LINEAR + "speed = 3\n", 8, "unknown key 'speed'"),
    (LINEAR.replace("order = 2", "order = two"), 6, "order"),
    (LINEAR.replace("name = linear", "name = duffin"), 2, "unknown system 'duffin'"),
    (LINEAR.replace("mode = RHB", "mode = FFT"), 5, "unknown mode"),
    ("[system]\nname = linear\n", 0, "[method]"),
    ("[system\nname = x\n", 1, ""),
])
def test_config_errors_are_line_anchored(tmp_path, capsys, text, line, fragment):
    cfg = write(tmp_path, text)
    code, err = run(["solve", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert f"{cfg}:{line}:" in err
    assert fragment in err


def test_bad_threads_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.ENV_THREADS, "many")
    code, err = run(["aliasing", "--config", CONFIGS / "aliasing.ini", "--out", tmp_path], capsys)
    assert code == 1 and cli.ENV_THREADS in err


# --- provenance header ------------------------------------------------------------------


def test_header_embeds_resolved_config(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR)
    code, _ = run(["solve", "--config", cfg, "--out", tmp_path / "a"], capsys)
    assert code == 0
    header, _ = read_table(tmp_path / "a" / "coefficients.csv")
    assert header[0].startswith("rhb ") and header[0].endswith(" solve")
    resolved = "\n".join(header[1:])
    parsed = configparser.ConfigParser(interpolation=None)
    parsed.optionxform = str
    parsed.read_string(resolved)
    # defaults are spelled out
    assert parsed["newton"]["tol"] == "1e-12" and parsed["initial"]["kind"] == "zeros"
    # feeding the header back reproduces the run byte for byte
    again = write(tmp_path, resolved, "again.ini")
    assert run(["solve", "--config", again, "--out", tmp_path / "b"], capsys)[0] == 0
    assert (tmp_path / "a" / "coefficients.csv").read_bytes() == (tmp_path / "b" / "coefficients.csv").read_bytes()


def test_outputs_use_lf(tmp_path, capsys):
    run(["aliasing", "--config", CONFIGS / "aliasing.ini", "--out", tmp_path], capsys)
    assert b"\r" not in (tmp_path / "aliasing.csv").read_bytes()


# --- diagnostics -------------------------------------------------------------------------


def test_aliasing_diagnostics_distinguish_methods(tmp_path, capsys):
    out = {}
    for mode in ("RHB", "HDHB"):
        text = (CONFIGS / "duffing_solve.ini").read_text().replace("mode = RHB", f"mode = {mode}")
        cfg = write(tmp_path, text, f"{mode}.ini")
        assert run(["solve", "--config", cfg, "--out", tmp_path / mode], capsys)[0] == 0
        out[mode] = report_sections(tmp_path / mode / "report.txt")["aliasing"]
    assert float(out["RHB"]["alias_norm_inf"]) < 1e-12
    assert float(out["RHB"]["time_frequency_gap"]) < 1e-12
    assert out["RHB"]["nodes"] == "13" and out["HDHB"]["nodes"] == "7"
    assert float(out["HDHB"]["alias_norm_inf"]) >= 1.0
    assert float(out["HDHB"]["time_frequency_gap"]) > 1e-3


def test_frequency_formulation_report(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR + "formulation = frequency\n")
    assert run(["solve", "--config", cfg, "--out", tmp_path], capsys)[0] == 0
    assert report_sections(tmp_path / "report.txt")["aliasing"]["nodes"].startswith("none")


def test_aliasing_table():
    assert all(norm == 0.0 and nnz == 0 for _, norm, nnz, _ in cli.aliasing_table(4, 1))
    rows = {M: (norm, nnz, match) for M, norm, nnz, match in cli.aliasing_table(4, 3)}
    assert min(rows) == 9 and max(rows) == 4 * 4 + 3
    for M, (norm, nnz, match) in rows.items():
        assert match
        if M > 4 * 4:
            assert norm < 1e-12 and nnz == 0
    assert rows[9][0] >= 1.0 and rows[9][1] > 0


def test_aliasing_command(tmp_path, capsys):
    assert run(["aliasing", "--config", CONFIGS / "aliasing.ini", "--out", tmp_path], capsys)[0] == 0
    _, rows = read_table(tmp_path / "aliasing.csv")
    assert [int(r["M"]) for r in rows] == list(range(7, 16))
    assert all(r["match"] == "true" for r in rows)


def test_identity_command(tmp_path, capsys):
    cfg = write(tmp_path, "[identity]\nN = 3\nphi = 3\ncases = 20\nseed = 4\n")
    assert run(["identity-check", "--config", cfg, "--out", tmp_path], capsys)[0] == 0
    _, rows = read_table(tmp_path / "identity.csv")
    assert len(rows) == 20
    assert max(float(r["gap"]) / float(r["scale"]) for r in rows) < 1e-12


# --- montecarlo ------------------------------------------------------------------------------


def test_linear_montecarlo_single_cluster(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR + "\n[montecarlo]\ntrials = 100\nbounds = -5, 5\n")
    assert run(["montecarlo", "--config", cfg, "--out", tmp_path], capsys)[0] == 0
    header, rows = read_table(tmp_path / "clusters.csv")
    assert "clusters = 1" in header and "converged = 100" in header
    assert len(rows) == 1 and rows[0]["hit_count"] == "100" and rows[0]["classification"] == "physical"


def test_seed_flag_overrides_config(tmp_path, capsys):
    cfg = write(tmp_path, "[identity]\nN = 2\nphi = 3\ncases = 3\nseed = 4\n")
    run(["identity-check", "--config", cfg, "--out", tmp_path / "a", "--seed", "9"], capsys)
    cfg9 = write(tmp_path, "[identity]\nN = 2\nphi = 3\ncases = 3\nseed = 9\n", "nine.ini")
    run(["identity-check", "--config", cfg9, "--out", tmp_path / "b"], capsys)
    a = (tmp_path / "a" / "identity.csv").read_text()
    b = (tmp_path / "b" / "identity.csv").read_text()
    assert "seed = 9" in a
    assert a == b


def test_thread_precedence(monkeypatch):
    monkeypatch.delenv(cli.ENV_THREADS, raising=False)
    assert cli.thread_count(None) == 1
    monkeypatch.setenv(cli.ENV_THREADS, "3")
    assert cli.thread_count(None) == 3
    assert cli.thread_count(2) == 2
    assert cli.thread_count(0) == 1


# --- propagate -----------------------------------------------------------------------------


def test_propagate_state(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR + "\n[initial]\nkind = state\nstate = 1, 0\n\n[propagate]\nperiods = 2\n"
                "samples = 11\n")
    assert run(["propagate", "--config", cfg, "--out", tmp_path], capsys)[0] == 0
    header, rows = read_table(tmp_path / "trajectory.csv")
    assert len(rows) == 11 and list(rows[0]) == ["t", "x", "v"]
    assert float(rows[-1]["t"]) == pytest.approx(2 * 2 * np.pi / 1.3)
    assert any(h.startswith("[propagate]") for h in header)


def test_propagate_state_length_checked(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR + "\n[initial]\nkind = state\nstate = 1, 0, 3\n")
    code, err = run(["propagate", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 1 and f"{cfg}:11:" in err


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "rhb.cli", "aliasing", "--config", str(CONFIGS / "aliasing.ini"),
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "aliasing.csv").exists()
