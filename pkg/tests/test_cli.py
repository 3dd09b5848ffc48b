"""Command-line interface: flags, config files, exit codes, determinism."""

import math
import shutil
import subprocess

import numpy as np
import pytest

from fermigas.cli import _parse_function, main
from fermigas.errors import NumericalError, ValidationError


def run(argv, tmp_path, name="out.csv"):
    """Invoke main with --out and return (exit code, text or None)."""
    path = tmp_path / name
    code = main(list(argv) + ["--out", str(path)])
    text = path.read_text() if path.exists() else None
    return code, text


def data_rows(text):
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    return lines[0].split(","), [l.split(",") for l in lines[1:]]


# ---------------------------------------------------------------------------
# exit codes


def test_no_subcommand_exits_one():
    assert main([]) == 1


def test_unknown_subcommand_exits_one(capsys):
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


def test_missing_required_flag_exits_one(capsys):
    assert main(["weyl", "--potential", "x1^2"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_missing_seed_is_a_usage_error(capsys):
    code = main(["sample", "--potential", "x1^2", "--mu", "1", "--hbar", "0.05"])
    assert code == 1
    assert "--seed" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for name in ("weyl", "kernel", "converge-bulk", "sample", "agmon"):
        assert name in out


def test_validation_error_exits_one(capsys):
    # x0 outside the droplet is rejected by the experiment driver
    code = main(["converge-bulk", "--potential", "x1^2", "--mu", "1",
                 "--x0", "5", "--hbar", "0.02"])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_numerical_error_exits_two(monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise NumericalError("did not converge")

    monkeypatch.setattr("fermigas.cli.weyl_check", boom)
    code = main(["weyl", "--potential", "x1^2", "--mu", "1", "--hbar", "0.05"])
    assert code == 2
    assert "did not converge" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# subcommand output


def test_weyl_reports_half(tmp_path):
    code, text = run(["weyl", "--potential", "x1^2", "--mu", "1",
                      "--hbar", "0.05,0.02"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    k = cols.index("hbar_count")
    for row in rows:
        assert float(row[k]) == pytest.approx(0.5, abs=1e-12)


def test_kernel_bulk_diagonal_is_one(tmp_path):
    code, text = run(["kernel", "--kind", "bulk", "--n", "1",
                      "--window", "-2:2:0.5"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    for x, y, value in rows:
        if x == y:
            assert float(value) == 1.0


def test_kernel_sine_matches_closed_form(tmp_path):
    code, text = run(["kernel", "--kind", "sine", "--window", "0:1:0.25"],
                     tmp_path)
    assert code == 0
    _, rows = data_rows(text)
    for x, y, value in rows:
        d = float(x) - float(y)
        want = 1.0 if d == 0.0 else math.sin(math.pi * d) / (math.pi * d)
        assert float(value) == pytest.approx(want, abs=1e-12)


def test_kernel_airy_needs_one_dimension(capsys):
    assert main(["kernel", "--kind", "airy", "--n", "2",
                 "--window", "0:1:0.5"]) == 1
    capsys.readouterr()


def test_kernel_bad_window_grammar(capsys):
    assert main(["kernel", "--kind", "bulk", "--window", "nonsense"]) == 1
    capsys.readouterr()


def test_kernel_projector_needs_potential(capsys):
    assert main(["kernel", "--kind", "projector", "--mu", "1",
                 "--window", "0:1:0.5"]) == 1
    capsys.readouterr()


def test_kernel_projector_tabulates_physical_kernel(tmp_path):
    code, text = run(["kernel", "--kind", "projector", "--potential", "x1^2",
                      "--mu", "1", "--hbar", "0.05",
                      "--window", "-0.5:0.5:0.25"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    assert cols == ["x1", "y1", "value"]
    diag = {r[0]: float(r[2]) for r in rows if r[0] == r[1]}
    # density is positive and roughly flat deep inside the droplet
    assert all(v > 0.0 for v in diag.values())


def test_sample_is_byte_deterministic(tmp_path):
    argv = ["sample", "--potential", "x1^2", "--mu", "1", "--hbar", "0.05",
            "--trials", "3", "--seed", "7"]
    code1, t1 = run(argv, tmp_path, "a.csv")
    code2, t2 = run(argv, tmp_path, "b.csv")
    assert code1 == code2 == 0
    assert t1 == t2
    cols, rows = data_rows(t1)
    # ten particles at this energy, three trials
    assert len(rows) == 30
    assert "# seed=7" in t1


def test_sample_seed_changes_points(tmp_path):
    base = ["sample", "--potential", "x1^2", "--mu", "1", "--hbar", "0.05",
            "--trials", "1"]
    _, t1 = run(base + ["--seed", "7"], tmp_path, "a.csv")
    _, t2 = run(base + ["--seed", "8"], tmp_path, "b.csv")
    assert t1 != t2


def test_variance_routes_agree(tmp_path):
    code, text = run(["variance", "--n", "1", "--mu", "10",
                      "--function", "gaussian:width=1"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    row = dict(zip(cols, (float(v) for v in rows[0])))
    assert row["rel_gap"] <= 1e-4
    assert row["exact"] == pytest.approx(row["asymptotic"], rel=0.05)


def test_seminorm_duality_within_one_percent(tmp_path):
    code, text = run(["seminorm", "--n", "1", "--function", "gaussian:width=1"],
                     tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    ratio = float(rows[0][cols.index("duality_ratio")])
    assert ratio == pytest.approx(1.0, abs=0.01)


def test_clt_runs_and_reports_moments(tmp_path):
    code, text = run(["clt", "--potential", "x1^2", "--mu", "1",
                      "--hbar", "0.05", "--function", "gaussian:width=0.2",
                      "--trials", "200", "--seed", "2718"], tmp_path)
    assert code == 0
    assert "# seed=2718" in text
    cols, rows = data_rows(text)
    assert float(rows[0][cols.index("ks_pvalue")]) > 0.0


def test_lln_distance_decreases(tmp_path):
    code, text = run(["lln", "--potential", "x1^2", "--mu", "1",
                      "--hbar", "0.05,0.02", "--trials", "50",
                      "--seed", "11"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    means = [float(r[cols.index("mean_w1")]) for r in rows]
    assert means[1] < means[0]


def test_lln_threads_do_not_change_bytes(tmp_path):
    base = ["lln", "--potential", "x1^2", "--mu", "1", "--hbar", "0.05",
            "--trials", "30", "--seed", "11"]
    _, t1 = run(base + ["--threads", "1"], tmp_path, "a.csv")
    _, t2 = run(base + ["--threads", "3"], tmp_path, "b.csv")
    assert t1 == t2


def test_agmon_norms_stay_under_bound(tmp_path):
    code, text = run(["agmon", "--potential", "x1^2", "--mu", "1",
                      "--hbar", "0.05", "--delta", "0.2"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    bound = float(rows[0][cols.index("bound")])
    assert bound == pytest.approx(11.0)
    for r in rows:
        assert float(r[cols.index("weighted_norm")]) <= bound


def test_negative_coordinates_parse(tmp_path):
    code, text = run(["converge-bulk", "--potential", "x1^2", "--mu", "1",
                      "--x0", "-0.3", "--hbar", "0.02"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    assert float(rows[0][cols.index("sup_error")]) < 0.1


# ---------------------------------------------------------------------------
# config files


def test_config_supplies_required_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# harmonic counting\npotential=x1^2\nmu=1\nhbar=0.05,0.02\n")
    code, text = run(["weyl", "--config", str(cfg)], tmp_path)
    assert code == 0
    _, rows = data_rows(text)
    assert len(rows) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("potential=x1^2\nmu=1\nhbar=0.05,0.02\n")
    code, text = run(["weyl", "--config", str(cfg), "--hbar", "0.1"], tmp_path)
    assert code == 0
    cols, rows = data_rows(text)
    assert len(rows) == 1
    assert float(rows[0][cols.index("hbar")]) == 0.1


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("potential=x1^2\nbogus_key=3\n")
    code = main(["weyl", "--config", str(cfg), "--mu", "1", "--hbar", "0.1"])
    assert code == 1
    assert "bogus_key" in capsys.readouterr().err


def test_missing_config_file_rejected(capsys):
    code = main(["weyl", "--config", "/nonexistent.cfg", "--mu", "1",
                 "--hbar", "0.1", "--potential", "x1^2"])
    assert code == 1
    capsys.readouterr()


def test_malformed_config_line_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("potential x1^2\n")
    code = main(["weyl", "--config", str(cfg), "--mu", "1", "--hbar", "0.1"])
    assert code == 1
    capsys.readouterr()


# ---------------------------------------------------------------------------
# test-function grammar


def test_parse_function_kinds():
    g = _parse_function("gaussian:center=0.5,width=0.3", 1)
    assert g(0.5) == 1.0
    ind = _parse_function("indicator:radius=1,smoothing=0.5", 1)
    assert ind(0.0) == 1.0
    c = _parse_function("custom:expr=exp(-x1^2),radius=5", 1)
    assert c(1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)
    g2 = _parse_function("gaussian:center=0:1,width=0.3", 2)
    assert g2(np.array([0.0, 1.0])) == 1.0


def test_parse_function_rejects_garbage():
    with pytest.raises(ValidationError):
        _parse_function("polygon:radius=1", 1)
    with pytest.raises(ValidationError):
        _parse_function("gaussian:wdith=1", 1)
    with pytest.raises(ValidationError):
        _parse_function("custom:radius=5", 1)
    with pytest.raises(ValidationError):
        _parse_function("gaussian:center=0:0,width=1", 1)


# ---------------------------------------------------------------------------
# installed entry point


@pytest.mark.skipif(shutil.which("fermigas") is None,
                    reason="console script not installed")
def test_console_script_roundtrip(tmp_path):
    out = tmp_path / "w.csv"
    proc = subprocess.run(
        ["fermigas", "weyl", "--potential", "x1^2", "--mu", "1",
         "--hbar", "0.05", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "# experiment=weyl_check" in out.read_text()
