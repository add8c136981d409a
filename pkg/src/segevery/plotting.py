"""Figures for bench reports, rendered headless to PNG files."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchReport  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}

_PE_COLOR = "#4c72b0"
_MD_COLOR = "#dd8452"
_AR_COLOR = "#55a868"


def _save(fig, path: os.PathLike | str) -> None:
    # Dropping the Software tag keeps the PNG bytes independent of the matplotlib version.
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_compare(report: BenchReport, path: os.PathLike | str) -> None:
    """Stacked stage times per configuration, with AR on a second axis."""
    rows = report.rows
    labels = [r["label"] for r in rows]
    pe = [r["prompt_encoding_ms"] for r in rows]
    md = [r["mask_decoding_ms"] for r in rows]
    ar = [100 * r["ar"]["all"] for r in rows]
    xs = range(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(xs, pe, color=_PE_COLOR, label="prompt encoding")
        bars = ax.bar(xs, md, bottom=pe, color=_MD_COLOR, label="mask decoding + filtering")
        # Object-aware bars are tiny next to dense grids; print every total.
        ax.bar_label(bars, labels=[f"{a + b:.1f} ms" for a, b in zip(pe, md)], padding=2, fontsize=8)
        ax.margins(y=0.12)
        ax.set_xticks(list(xs), labels, rotation=15, ha="right")
        ax.set_ylabel(f"time per image (ms, {report.mode})")
        ax2 = ax.twinx()
        ax2.plot(list(xs), ar, "o-", color=_AR_COLOR, label=f"AR@{report.ar_k}")
        ax2.set_ylim(0, 105)
        ax2.set_ylabel(f"mask AR@{report.ar_k} (%)")
        ax2.grid(False)
        handles = ax.get_legend_handles_labels()
        handles2 = ax2.get_legend_handles_labels()
        ax.legend(handles[0] + handles2[0], handles[1] + handles2[1], loc="lower center",
                  bbox_to_anchor=(0.5, 1.0), ncol=3)
        fig.tight_layout()
        _save(fig, path)


def plot_ablation(report: BenchReport, path: os.PathLike | str) -> None:
    """AR against the prompt cap, one line per size bucket."""
    caps = [r["setting"] for r in report.rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for bucket, style in (("all", "o-"), ("small", "s--"), ("medium", "^--"), ("large", "v--")):
            ax.plot(caps, [100 * r["ar"][bucket] for r in report.rows], style, label=bucket)
        ax.set_xlabel("maximum number of prompts")
        ax.set_ylabel(f"mask AR@{report.ar_k} (%)")
        ax.set_ylim(0, 105)
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)
