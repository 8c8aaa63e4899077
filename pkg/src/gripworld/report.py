"""Turn sweep summary rows into plot data, figures, and a text table.

One sweep varies one cell axis at a time around a baseline, so each
report axis selects the rows that sit at the baseline on every other
axis and traces each policy's metrics along it.  Error bars for the
proportion metrics come from the closed-form standard error of a
Bernoulli sample, which needs only the cell mean and count.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import AXES, CellParams

REPORT_METRICS = ("PU", "SR", "SRwD", "mean_terminal_est_error")
PROPORTION_METRICS = ("PU", "SR", "SRwD")

CURVE_COLUMNS = ("axis", "x", "policy", "metric", "mean", "stderr")


def proportion_stderr(p: float, n: int) -> float:
    """Standard error of a proportion from n binary episodes (ddof 1)."""
    if n < 2:
        return 0.0
    return math.sqrt(max(p * (1.0 - p), 0.0) / (n - 1))


def axis_rows(rows: list[dict], axis: str, baseline: CellParams) -> list[dict]:
    """Rows that vary only along the given axis."""
    others = [a for a in AXES if a != axis]
    return [r for r in rows
            if all(r[a] == getattr(baseline, a) for a in others)]


def curve_table(rows: list[dict], axis: str,
                baseline: CellParams) -> list[dict]:
    """Flat (policy, metric, x) curve points for one axis."""
    selected = axis_rows(rows, axis, baseline)
    policies = sorted({r["policy"] for r in selected})
    table: list[dict] = []
    for policy in policies:
        mine = sorted((r for r in selected if r["policy"] == policy),
                      key=lambda r: r[axis])
        for metric in REPORT_METRICS:
            for r in mine:
                if metric in PROPORTION_METRICS:
                    err = proportion_stderr(r[metric], r["N"])
                else:
                    err = 0.0
                table.append({"axis": axis, "x": r[axis], "policy": policy,
                              "metric": metric, "mean": r[metric],
                              "stderr": err})
    return table


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_curve_csv(path: str | Path, table: list[dict]) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CURVE_COLUMNS)
        for r in table:
            w.writerow([_fmt_cell(r[c]) for c in CURVE_COLUMNS])


def plot_axis(table: list[dict], axis: str, path: str | Path) -> None:
    """One figure per axis: a 2x2 grid of metric panels."""
    policies = sorted({r["policy"] for r in table})
    fig, axes = plt.subplots(2, 2, figsize=(9.0, 7.0))
    for ax, metric in zip(axes.flat, REPORT_METRICS):
        for policy in policies:
            pts = [r for r in table
                   if r["policy"] == policy and r["metric"] == metric]
            xs = [r["x"] for r in pts]
            ys = [r["mean"] for r in pts]
            es = [r["stderr"] for r in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3,
                        label=policy)
        ax.set_title(metric)
        ax.set_xlabel(axis)
        ax.grid(True, alpha=0.3)
        if metric in PROPORTION_METRICS:
            ax.set_ylim(-0.05, 1.05)
    axes.flat[0].legend(loc="best", fontsize=8)
    fig.suptitle(f"sweep over {axis}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_summary_text(rows: list[dict]) -> str:
    """Fixed-width table of the summary rows."""
    from .harness import SUMMARY_COLUMNS

    def fmt(v) -> str:
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    widths = {c: max(len(c), 9) for c in SUMMARY_COLUMNS}
    if rows:
        widths["policy"] = max(len("policy"),
                               *(len(str(r["policy"])) for r in rows))
    lines = ["  ".join(c.rjust(widths[c]) for c in SUMMARY_COLUMNS)]
    for r in rows:
        lines.append("  ".join(fmt(r[c]).rjust(widths[c])
                               for c in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"


def emit_report(rows: list[dict], out_dir: str | Path,
                baseline: CellParams = CellParams()) -> list[Path]:
    """Write per-axis curve CSVs and figures, plus a text summary.

    An axis produces files only when the rows actually vary along it.
    Returns every path written, summary last.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for axis in AXES:
        table = curve_table(rows, axis, baseline)
        if len({r["x"] for r in table}) < 2:
            continue
        csv_path = out / f"report_{axis}.csv"
        write_curve_csv(csv_path, table)
        written.append(csv_path)
        fig_path = out / f"fig_{axis}.png"
        plot_axis(table, axis, fig_path)
        written.append(fig_path)
    summary = out / "summary.txt"
    summary.write_text(render_summary_text(rows))
    written.append(summary)
    return written
