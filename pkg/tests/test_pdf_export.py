"""
Tests for the PDF run report.

Run with: pytest tests/test_pdf_export.py
"""

import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pytest
from PIL import Image

from modules.pdf_export import _metric_rows, generate_run_pdf
from modules.pipeline import RunManifest


def finished_manifest(**overrides) -> RunManifest:
    fields = dict(
        run_id="RUN_20260101_ABCDEF",
        config={},
        config_path=None,
        output_dir="/tmp/out",
        versions={"numpy": "1.26.4"},
        timings={"load": 0.12, "segment": 3.4},
        warnings=["building 3 has no roof segments"],
        summary={"building_count": 3, "segment_count": 7, "panel_count": 40,
                 "total_energy_kwh": 12000.0, "total_energy_5kw_kwh": 9000.0, "occluded_fraction": 0.02},
        status="succeeded",
        wall_time_s=4.2,
    )
    fields.update(overrides)
    return RunManifest(**fields)


# ===================================================================
# TEST 1: Report contents
# ===================================================================

def test_pdf_is_generated(tmp_path):
    shade = tmp_path / "shade.png"
    Image.new("L", (32, 32), 180).save(shade)
    manifest = finished_manifest(metrics={"building_mae_m": 0.05, "segment_iou_fraction": 0.9})
    data = generate_run_pdf(manifest, str(shade)).getvalue()
    assert data.startswith(b"%PDF"), "output must be a PDF document"
    assert len(data) > 1000
    print("✅ test_pdf_is_generated")


def test_pdf_without_metrics_or_image():
    data = generate_run_pdf(finished_manifest(warnings=[]), "/nonexistent/shade.png").getvalue()
    assert data.startswith(b"%PDF")
    print("✅ test_pdf_without_metrics_or_image")


def test_metric_rows_show_missing_values():
    rows = _metric_rows({"building_mae_m": 0.25})
    assert rows[0] == ["Metric", "Value"]
    assert len(rows) == 8
    assert rows[3][1] == "N/A", "pitch error was not computed"
    print("✅ test_metric_rows_show_missing_values")


# ===================================================================
# RUN ALL TESTS
# ===================================================================

if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
