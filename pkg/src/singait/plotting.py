"""SVG figures from the training, trajectory and replay CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CSV_MAGIC = "# singait-csv-v1"
EMA_ALPHA = 0.05
MARK_INTERVAL_S = 1.8

REQUIRED = {
    "learning_curves": ["steps", "mean_imit_nominal", "mean_perf", "mean_ep_len"],
    "foot_heights": ["episode", "t", "h_ref_l", "h_ref_r", "foot_l", "foot_r"],
    "pelvis_track": ["episode", "t", "x_p"],
}


class SchemaError(ValueError):
    pass


def write_csv(path, kind: str, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"{CSV_MAGIC} {kind}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{x:.10g}" if isinstance(x, float) else x for x in r])


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns of a versioned CSV as float arrays (non-numeric cells -> nan)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None
    rows = [r for r in reader if r]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    cols = {}
    for j, name in enumerate(header):
        vals = []
        for r in rows:
            try:
                vals.append(float(r[j]))
            except (ValueError, IndexError):
                vals.append(np.nan)
        cols[name] = np.array(vals)
    return cols


def check_schema(cols, kind, path):
    missing = [c for c in REQUIRED[kind] if c not in cols]
    if missing:
        raise SchemaError(f"{path}: column(s) {', '.join(missing)} required for {kind} plot")


def ema(x, alpha=EMA_ALPHA):
    out = np.empty_like(x)
    acc = np.nan
    for i, v in enumerate(x):
        if np.isnan(v):
            out[i] = acc
            continue
        acc = v if np.isnan(acc) else (1 - alpha) * acc + alpha * v
        out[i] = acc
    return out


def plot_learning_curves(paths, out_file):
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    panels = [
        ("mean_imit_nominal", "nominal imitation reward"),
        ("mean_perf", "performance reward"),
        ("mean_ep_len", "survival steps per episode"),
    ]
    for path in paths:
        cols = read_csv(path)
        check_schema(cols, "learning_curves", path)
        label = Path(path).parent.name or Path(path).stem
        for ax, (key, title) in zip(axes, panels):
            line = ax.plot(cols["steps"], cols[key], alpha=0.25, lw=1)[0]
            ax.plot(cols["steps"], ema(cols[key]), color=line.get_color(), lw=1.8, label=label)
            ax.set_title(title)
            ax.set_xlabel("environment steps")
    axes[2].axhline(300, color="grey", ls=":", lw=1)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_file)
    plt.close(fig)


def plot_foot_heights(paths, out_file, episode=0):
    fig, axes = plt.subplots(len(paths), 1, figsize=(9, 3 * len(paths)), squeeze=False)
    for ax, path in zip(axes[:, 0], paths):
        cols = read_csv(path)
        check_schema(cols, "foot_heights", path)
        sel = cols["episode"] == episode
        t = cols["t"][sel]
        ax.plot(t, cols["h_ref_l"][sel], "C0--", lw=1, label="reference left")
        ax.plot(t, cols["h_ref_r"][sel], "C1--", lw=1, label="reference right")
        ax.plot(t, cols["foot_l"][sel], "C0", lw=1.4, label="left foot")
        ax.plot(t, cols["foot_r"][sel], "C1", lw=1.4, label="right foot")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("height [m]")
        ax.set_title(Path(path).parent.name or Path(path).stem)
        ax.legend(fontsize=7, ncol=4)
    fig.tight_layout()
    fig.savefig(out_file)
    plt.close(fig)


def plot_pelvis_track(paths, out_file, episode=0):
    fig, ax = plt.subplots(figsize=(7, 4))
    for path in paths:
        cols = read_csv(path)
        check_schema(cols, "pelvis_track", path)
        sel = cols["episode"] == episode
        t, x = cols["t"][sel], cols["x_p"][sel]
        y = cols["y_p"][sel] if "y_p" in cols else np.zeros_like(x)
        line = ax.plot(x, y, lw=1.2, label=Path(path).parent.name or Path(path).stem)[0]
        marks = np.isclose(np.mod(t + 1e-9, MARK_INTERVAL_S), 0.0, atol=1e-6)
        ax.plot(x[marks], y[marks], "o", color=line.get_color(), ms=4)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"pelvis position (marks every {MARK_INTERVAL_S} s)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_file)
    plt.close(fig)


PLOTTERS = {
    "learning_curves": plot_learning_curves,
    "foot_heights": plot_foot_heights,
    "pelvis_track": plot_pelvis_track,
}


def make_plot(kind, paths, out_file):
    if kind not in PLOTTERS:
        raise SchemaError(f"unknown plot kind {kind!r}")
    # validate every input before any file is written
    for p in paths:
        check_schema(read_csv(p), kind, p)
    PLOTTERS[kind](paths, out_file)
    return out_file
