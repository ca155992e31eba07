"""Figure rendering from the summary CSV (secondary component)."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "plots"))
import render  # noqa: E402

from aomdp_lab.harness import plan_from_json, run_plan  # noqa: E402

PLAN = {"scenario": {"n_users": 2, "horizon": 6, "seed": 5},
        "agents": ["active", "never", "zero"], "reps": 3, "parallelism": 1}


@pytest.fixture(scope="module")
def summary_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    plan = plan_from_json(json.dumps({**PLAN, "output_dir": str(out)}))
    assert run_plan(plan) == 0
    return out / "summary.csv"


def test_band_edges_match_summary_columns(summary_csv):
    rows = render.read_summary(str(summary_csv))
    assert rows
    for row in rows:
        lo, hi = render.band_edges(row)
        assert lo == pytest.approx(row["ci_lo"], abs=1e-9)
        assert hi == pytest.approx(row["ci_hi"], abs=1e-9)


def test_series_are_sorted_and_complete(summary_csv):
    rows = render.read_summary(str(summary_csv))
    series = render.series_for(rows, "adjusted_reward")
    assert set(series) == {"active", "never", "zero"}
    ts, means, lo, hi = series["active"]
    assert ts == sorted(ts) and len(ts) == 6
    assert all(l <= m <= h for l, m, h in zip(lo, means, hi))


def test_zero_policy_series_is_identically_zero(summary_csv):
    rows = render.read_summary(str(summary_csv))
    series = render.series_for(rows, "adjusted_reward")
    _, means, lo, hi = series["zero"]
    assert all(v == 0.0 for v in means + lo + hi)


def test_render_writes_svg_with_bands(summary_csv, tmp_path):
    out = tmp_path / "fig.svg"
    rows = render.read_summary(str(summary_csv))
    render.render(rows, "adjusted_reward", str(out))
    text = out.read_text()
    assert text.lstrip().startswith("<?xml")
    assert "<svg" in text


def test_cli_end_to_end(summary_csv, tmp_path):
    out = tmp_path / "fig.svg"
    script = Path(__file__).resolve().parents[1] / "plots" / "render.py"
    proc = subprocess.run([sys.executable, str(script), "--summary", str(summary_csv),
                           "--metric", "measure_rate", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    proc = subprocess.run([sys.executable, str(script), "--summary", str(summary_csv),
                           "--metric", "bogus", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "bogus" in proc.stderr


def test_missing_summary_is_a_clean_error(tmp_path):
    assert render.main(["--summary", str(tmp_path / "nope.csv"),
                        "--out", str(tmp_path / "x.svg")]) == 1
