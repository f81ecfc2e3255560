"""
Tests for the satsolar command line: every subcommand on a small synthetic
scene, and the exit codes (0 ok, 1 usage/config, 2 stage failure).

Run with: pytest tests/test_cli.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json

import numpy as np
import pytest

import db
from modules.raster_io import load_height, read_json, save_instances
from modules.rasters import GridMeta, InstanceMap
from satsolar import main
from utils.constants import EXIT_OK, EXIT_STAGE_FAILURE, EXIT_USAGE


@pytest.fixture(autouse=True)
def temp_registry(tmp_path, monkeypatch):
    monkeypatch.setenv("SATSOLAR_DB_PATH", str(tmp_path / "runs.db"))
    monkeypatch.delenv("SATSOLAR_WORKERS", raising=False)


@pytest.fixture
def scene(tmp_path):
    prefix = tmp_path / "scene"
    code = main(["synth", "--example", "--size", "32", "--resolution", "1.0", "--out-prefix", str(prefix)])
    assert code == EXIT_OK
    return str(prefix)


# ===================================================================
# TEST 1: Single-step subcommands
# ===================================================================

def test_synth_writes_truth(scene, capsys):
    for suffix in ("scene.json", "dsm.asc", "dtm.asc", "heightmap.asc", "rgb.png", "buildings.asc",
                   "segments.asc", "segments.json"):
        assert os.path.exists(f"{scene}.{suffix}"), suffix
    print("✅ test_synth_writes_truth")


def test_synth_offnadir_and_noise(tmp_path):
    prefix = str(tmp_path / "s")
    code = main(["synth", "--random", "7", "--size", "32", "--resolution", "1.0", "--noise", "0.2",
                 "--view-elevation", "60", "--view-azimuth", "90", "--out-prefix", prefix])
    assert code == EXIT_OK
    assert os.path.exists(f"{prefix}.noisy.dsm.asc")
    assert os.path.exists(f"{prefix}.offnadir.heightmap.asc")
    print("✅ test_synth_offnadir_and_noise")


def test_segment_flux_panels_chain(scene, tmp_path):
    out = str(tmp_path / "step")
    assert main(["segment", "--dsm", f"{scene}.dsm.asc", "--buildings", f"{scene}.buildings.asc",
                 "--backend", "dinic", "--workers", "1", "--out-prefix", out]) == EXIT_OK
    assert main(["flux", "--dsm", f"{scene}.dsm.asc", "--lat", "30", "--samples-per-day", "4",
                 "--out-prefix", out]) == EXIT_OK
    assert main(["panels", "--segments", f"{out}.segments.asc", "--stats", f"{out}.segments.json",
                 "--flux", f"{out}.flux.asc", "--rgb", f"{scene}.rgb.png", "--buildings", f"{scene}.buildings.asc",
                 "--out-prefix", out]) == EXIT_OK
    for suffix in ("segments.csv", "flux.png", "placements.json", "overlay.png", "buildings.csv"):
        assert os.path.exists(f"{out}.{suffix}"), suffix
    assert len(read_json(f"{out}.placements.json")) > 0
    print("✅ test_segment_flux_panels_chain")


def test_panel_flags_set_the_panel(scene, tmp_path):
    out = str(tmp_path / "step")
    assert main(["segment", "--dsm", f"{scene}.dsm.asc", "--buildings", f"{scene}.buildings.asc",
                 "--workers", "1", "--out-prefix", out]) == EXIT_OK
    assert main(["flux", "--dsm", f"{scene}.dsm.asc", "--lat", "30", "--samples-per-day", "4",
                 "--out-prefix", out]) == EXIT_OK
    inputs = ["panels", "--segments", f"{out}.segments.asc", "--stats", f"{out}.segments.json",
              "--flux", f"{out}.flux.asc"]
    assert main(inputs + ["--out-prefix", out]) == EXIT_OK
    standard = read_json(f"{out}.placements.json")

    large = str(tmp_path / "large")
    assert main(inputs + ["--panel-length", "2.0", "--panel-width", "1.2", "--rated-power", "450",
                          "--efficiency", "0.18", "--performance-ratio", "0.8", "--out-prefix", large]) == EXIT_OK
    placements = read_json(f"{large}.placements.json")
    assert 0 < len(placements) <= len(standard)
    for p in placements:
        expected = p["mean_flux"] * 2.0 * 1.2 * 0.18 * 0.8
        assert abs(p["annual_energy_kwh"] - expected) <= 1e-9 * max(1.0, expected)
    print("✅ test_panel_flags_set_the_panel")


def test_bad_panel_flags_exit_with_usage_code(tmp_path, capsys):
    inputs = ["panels", "--segments", "s.asc", "--stats", "s.json", "--flux", "f.asc", "--out-prefix", str(tmp_path / "p")]
    assert main(inputs + ["--panel-width", "0", "--cap-kw", "-5"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "config error: panel width_m must be > 0, got 0.0" in err
    assert "config error: --cap-kw must be > 0, got -5.0" in err
    print("✅ test_bad_panel_flags_exit_with_usage_code")


def test_reproject_writes_three_rasters(scene, tmp_path):
    out = str(tmp_path / "r")
    code = main(["reproject", "--elevation", "60", "--azimuth", "90", "--direction", "to-offnadir",
                 "--heights", f"{scene}.heightmap.asc", "--input", f"{scene}.rgb.png", "--out-prefix", out])
    assert code == EXIT_OK
    for suffix in ("out.png", "occlusion.asc", "provenance.asc"):
        assert os.path.exists(f"{out}.{suffix}"), suffix
    print("✅ test_reproject_writes_three_rasters")


def test_compose_dsm_and_hillshade(scene, tmp_path):
    dsm = str(tmp_path / "dsm.asc")
    assert main(["compose-dsm", "--heightmap", f"{scene}.heightmap.asc", "--terrain", f"{scene}.dtm.asc",
                 "--out", dsm]) == EXIT_OK
    assert np.array_equal(load_height(dsm).values, load_height(f"{scene}.dsm.asc").values)
    assert main(["hillshade", "--dsm", dsm, "--out", str(tmp_path / "shade.png")]) == EXIT_OK
    print("✅ test_compose_dsm_and_hillshade")


def test_mask_and_evaluate(scene, tmp_path, capsys):
    mask = str(tmp_path / "coverage.asc")
    assert main(["mask", "coverage", "--buildings", f"{scene}.buildings.asc",
                 "--segments", f"{scene}.segments.asc", "--out", mask]) == EXIT_OK
    report = str(tmp_path / "report.json")
    assert main(["evaluate", "--pred-prefix", scene, "--label-prefix", scene, "--masks", mask,
                 "--out", report]) == EXIT_OK
    data = read_json(report)
    assert data["building_mae_m"] == 0.0 and data["segment_iou_fraction"] == 1.0
    assert "MAPE not computed" in capsys.readouterr().out
    print("✅ test_mask_and_evaluate")


# ===================================================================
# TEST 2: Exit codes
# ===================================================================

def test_bad_config_exits_with_usage_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"inputs": {}, "view": {"elevation": 0}, "latitude": 0, "output_dir": "o"}))
    assert main(["validate", "--config", str(path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "config error: view.elevation must be in (0, 90], got 0.0" in err
    assert "config error: inputs.rgb is required" in err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    print("✅ test_bad_config_exits_with_usage_code")


def test_unknown_subcommand_exits_with_usage_code():
    with pytest.raises(SystemExit) as exit_info:
        main(["bogus"])
    assert exit_info.value.code == EXIT_USAGE
    print("✅ test_unknown_subcommand_exits_with_usage_code")


def test_stage_failure_exit_code(scene, tmp_path):
    wrong = tmp_path / "wrong.asc"
    save_instances(wrong, InstanceMap(GridMeta(0.0, 4.0, 4, 4, 1.0), np.zeros((4, 4), dtype=np.int64)))
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "inputs": {"rgb": f"{scene}.rgb.png", "buildings": str(wrong), "heightmap": f"{scene}.heightmap.asc"},
        "latitude": 30,
        "output_dir": str(tmp_path / "out"),
    }))
    assert main(["run", "--config", str(config)]) == EXIT_STAGE_FAILURE
    assert main(["hillshade", "--dsm", str(tmp_path / "nope.asc"), "--out", str(tmp_path / "x.png")]) == EXIT_STAGE_FAILURE
    print("✅ test_stage_failure_exit_code")


def test_history_lists_runs(scene, tmp_path, capsys):
    assert main(["history"]) == EXIT_OK
    assert "No runs recorded" in capsys.readouterr().out
    print("✅ test_history_lists_runs")


def test_history_prints_registry_totals(capsys):
    db.init_db()
    db.save_run(run_id="RUN_A", config_path=None, output_dir="out", status="succeeded", wall_time_s=2.0)
    db.save_run(run_id="RUN_B", config_path=None, output_dir="out", status="succeeded", wall_time_s=3.0)
    db.save_run(run_id="RUN_C", config_path=None, output_dir="out", status="failed")
    assert main(["history"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "RUN_A" in out and "RUN_C" in out
    assert "3 runs recorded (failed 1, succeeded 2)" in out
    assert "Mean wall time of successful runs: 2.50 s" in out
    print("✅ test_history_prints_registry_totals")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
