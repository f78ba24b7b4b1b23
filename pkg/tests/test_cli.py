import json

import pytest

from spodcontrol.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main, parse_config_file
from spodcontrol.experiments import ExperimentSpec, RunOutcome, any_failed, run_tolerance_study
from spodcontrol.matio import read_csv, read_matrix

SMALL = ["--example", "1", "--scale", "0.0025", "--n-iter", "3", "--n-samples", "32"]


def test_config_errors(tmp_path, capsys):
    assert main(["--example", "7", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--scale", "0.001", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--method", "pod,newton", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--modes", "a,b", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["--config", str(bad)]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nexample = 2\nn-iter = 5  # inline\n\ndump_snapshots = yes\n")
    assert parse_config_file(cfg) == {"example": "2", "n_iter": "5", "dump_snapshots": "yes"}


def test_mode_sweep_outputs_and_flags_override_config(tmp_path):
    out = tmp_path / "sweep"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"example = 3\nmethod = fom,pod,spod\nmodes = 2,1\nout = {out}\ndump_snapshots = true\n")
    code = main(["--config", str(cfg)] + SMALL)
    assert code == EXIT_OK
    rows = read_csv(out / "mode_sweep.csv")
    assert [(r["method"], r["modes"]) for r in rows] == [("fom", "8"), ("pod", "1"), ("pod", "2"),
                                                           ("spod", "1"), ("spod", "2")]
    assert all(r["status"] == "ok" for r in rows)
    meta = json.loads((out / "mode_sweep_metadata.json").read_text())
    assert meta["example"] == 1 and meta["m"] == 8  # flag beat the config file
    u = read_matrix(out / "control_pod_p2.bin")
    assert u.shape == (40, meta["n"])
    assert read_matrix(out / "state_spod_p1.bin").shape == (8, meta["n"])
    conv = read_csv(out / "convergence_fom_full.csv")
    assert float(conv[0]["rel_grad"]) == 1.0


def test_sweep_csv_is_reproducible(tmp_path):
    def run(d):
        assert main(SMALL + ["--method", "pod,spod", "--modes", "1,2", "--out", str(d)]) == EXIT_OK
        rows = read_csv(d / "mode_sweep.csv")
        for r in rows:
            r.pop("wall_s")
        return rows, (d / "convergence_spod_p2.csv").read_text().splitlines()

    a, ca = run(tmp_path / "a")
    b, cb = run(tmp_path / "b")
    assert a == b
    strip = [lambda lines: [",".join(l.split(",")[:8] + l.split(",")[9:]) for l in lines]][0]
    assert strip(ca) == strip(cb)


def test_tolerance_study(tmp_path):
    code = main(SMALL + ["--method", "pod,spod", "--eps", "1e3,0.1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "tolerance_study.csv")
    assert [(r["method"], float(r["eps"])) for r in rows] == [("pod", 0.1), ("pod", 1000.0),
                                                               ("spod", 0.1), ("spod", 1000.0)]
    clamped = [r for r in rows if float(r["eps"]) == 1000.0]
    assert all(float(r["avg_modes"]) == 1.0 for r in clamped)


def test_failed_runs_become_rows(tmp_path, monkeypatch):
    import spodcontrol.experiments as ex

    def boom(*args, **kwargs):
        raise FloatingPointError("surrogate blew up")

    monkeypatch.setattr(ex, "optimize", boom)
    code = main(SMALL + ["--method", "pod", "--modes", "1,2", "--out", str(tmp_path)])
    assert code == EXIT_PARTIAL
    rows = read_csv(tmp_path / "mode_sweep.csv")
    assert len(rows) == 2 and all(r["status"].startswith("failed") for r in rows)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(example=0)
    with pytest.raises(ValueError):
        ExperimentSpec(modes=(0,))
    with pytest.raises(ValueError):
        run_tolerance_study(ExperimentSpec(scale=0.0025))
    assert any_failed([RunOutcome("pod", 1, status="failed: x")])
