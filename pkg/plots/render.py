#!/usr/bin/env python3
"""Render learning-curve figures from an experiment summary CSV.

Consumes the harness summary schema (agent, t, metric, mean, sd, n_reps,
ci_lo, ci_hi) and writes one figure per metric: per-agent mean curves with
95% normal-approximation confidence bands. The zero policy is drawn as the
flat reference line at zero.

Usage:
    python plots/render.py --summary summary.csv --metric adjusted_reward --out fig.svg
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from typing import Dict, List, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_LABELS = {
    "adjusted_reward": "cumulative reward minus zero policy",
    "measure_rate": "measurement rate",
    "theta_mse": "reward-coefficient posterior MSE",
}

AGENT_COLORS = {
    "active": "tab:blue",
    "always": "tab:orange",
    "never": "tab:green",
    "zero": "tab:gray",
    "vanilla_rlsvi": "tab:purple",
}


def read_summary(path: str) -> List[dict]:
    """Load summary rows with numeric fields parsed."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            rows.append({
                "agent": raw["agent"],
                "t": int(raw["t"]),
                "metric": raw["metric"],
                "mean": float(raw["mean"]),
                "sd": float(raw["sd"]),
                "n_reps": int(raw["n_reps"]),
                "ci_lo": float(raw["ci_lo"]),
                "ci_hi": float(raw["ci_hi"]),
            })
    if not rows:
        raise ValueError(f"no rows in {path}")
    return rows


def band_edges(row: dict) -> Tuple[float, float]:
    """Recompute the 95% band edges from mean, sd and rep count."""
    half = 1.96 * row["sd"] / math.sqrt(row["n_reps"])
    return row["mean"] - half, row["mean"] + half


def series_for(rows: List[dict], metric: str) -> Dict[str, Tuple[list, list, list, list]]:
    """Per-agent (t, mean, lo, hi) series for one metric, sorted by t."""
    agents = sorted({r["agent"] for r in rows})
    out = {}
    for agent in agents:
        sel = sorted((r for r in rows if r["agent"] == agent and r["metric"] == metric),
                     key=lambda r: r["t"])
        if not sel:
            continue
        ts = [r["t"] for r in sel]
        means = [r["mean"] for r in sel]
        edges = [band_edges(r) for r in sel]
        out[agent] = (ts, means, [e[0] for e in edges], [e[1] for e in edges])
    if not out:
        raise ValueError(f"metric {metric!r} not present in the summary")
    return out


def render(rows: List[dict], metric: str, out_path: str) -> None:
    series = series_for(rows, metric)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for agent, (ts, means, lo, hi) in series.items():
        color = AGENT_COLORS.get(agent)
        if agent == "zero" and metric == "adjusted_reward":
            # the reference policy is identically zero after adjustment
            ax.axhline(0.0, color=color or "gray", linestyle="--", linewidth=1.0,
                       label="zero")
            continue
        line, = ax.plot(ts, means, label=agent, color=color)
        ax.fill_between(ts, lo, hi, alpha=0.2, color=line.get_color(),
                        linewidth=0, label=f"_{agent}_band")
    ax.set_xlabel("period")
    ax.set_ylabel(METRIC_LABELS.get(metric, metric))
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--summary", required=True, help="summary CSV path")
    parser.add_argument("--metric", default="adjusted_reward",
                        help="metric column to plot")
    parser.add_argument("--out", required=True, help="output figure path (SVG)")
    args = parser.parse_args(argv)
    try:
        rows = read_summary(args.summary)
        render(rows, args.metric, args.out)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
