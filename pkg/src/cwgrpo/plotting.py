"""Static figures (SVG) with a CSV twin holding exactly the plotted points."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trainer import CURVE_POINTS, read_metrics  # noqa: E402

KINDS = ("entropy", "reward", "cov_cumulative")

_METRIC = {"entropy": ("entropy_mc", "policy entropy (nats)"),
           "reward": ("mean_reward", "mean reward")}


def _figure(width=6.0, height=None):
    height = height or width * 0.62
    plt.rcParams["svg.hashsalt"] = "cwgrpo"
    fig, ax = plt.subplots(figsize=(width, height))
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.5)
    return fig, ax


def _save(fig, svg_path: Path) -> None:
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def run_label(log_path, taken=()) -> str:
    """Run directory name, falling back to the file stem when it collides."""
    path = Path(log_path)
    label = path.parent.name or path.stem
    return label if label not in taken else f"{label}-{len(taken)}"


def plot_curve(series: dict, out_dir, name: str, xlabel: str, ylabel: str,
               x_col="x", y_col="y", diagonal=False) -> tuple[Path, Path]:
    """Draw ``{label: [(x, y), ...]}`` as lines; write ``name.svg`` and ``name.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = _figure()
    for label, points in series.items():
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, label=label, linewidth=1.4, gid=f"series-{label}")
    if diagonal:
        ax.plot([0, 1], [0, 1], color="0.6", linestyle=":", linewidth=1.0, label="_uniform")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(frameon=False)
    svg, csv_path = out / f"{name}.svg", out / f"{name}.csv"
    _save(fig, svg)
    _write_csv(csv_path, ["run", x_col, y_col],
               [(label, float(x), float(y)) for label, pts in series.items() for x, y in pts])
    return svg, csv_path


def metric_series(log_paths, kind: str) -> dict:
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    series: dict = {}
    for path in log_paths:
        records = read_metrics(path)
        label = run_label(path, series)
        if kind == "cov_cumulative":
            curve = records[-1]["cov_curve"]
            series[label] = list(zip(CURVE_POINTS.tolist(), curve))
        else:
            key = _METRIC[kind][0]
            series[label] = [(rec["step"], rec[key]) for rec in records]
    return series


def cmd_plot(log_paths, kind: str, out_dir) -> tuple[Path, Path]:
    series = metric_series(log_paths, kind)
    if kind == "cov_cumulative":
        return plot_curve(series, out_dir, "cov_cumulative", "fraction of tokens (by |c|)",
                          "share of total |c|", "token_fraction", "cov_mass_fraction",
                          diagonal=True)
    _, ylabel = _METRIC[kind]
    return plot_curve(series, out_dir, kind, "training step", ylabel, "step", _METRIC[kind][0])
