"""Matplotlib figures summarizing a metric report.

Rendered on the eval report path next to the JSON/CSV outputs: one figure for
per-sample perplexity and one for the Dist-n diversity profile. The Agg
backend is forced so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluator import MetricReport  # noqa: E402

_DIST_COLORS = {"dist1": "#4c72b0", "dist2": "#dd8452", "dist3": "#55a868"}


def render_report_figures(report: MetricReport, out_stem) -> list[Path]:
    """Write report figures as PNG files named ``<out_stem>_*.png``."""
    stem = Path(out_stem)
    written: list[Path] = []

    indices = [entry["index"] for entry in report.per_sample]
    flagged = [entry["index"] for entry in report.per_sample if entry["degenerate"]]

    if report.aggregate.get("ppl") is not None:
        ppls = [entry["ppl"] for entry in report.per_sample]
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        ax.bar(indices, ppls, color="#4c72b0", width=0.8)
        ax.axhline(report.aggregate["ppl"], color="#c44e52", linestyle="--",
                   linewidth=1.2, label=f"mean = {report.aggregate['ppl']:.3f}")
        for i in flagged:
            ax.bar([i], [ppls[indices.index(i)]], color="#c44e52", width=0.8)
        ax.set_xlabel("sample")
        ax.set_ylabel("perplexity")
        ax.set_title("Reference-LM perplexity per sample")
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        path = stem.parent / f"{stem.name}_perplexity.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    if report.aggregate.get("dist1") is not None:
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        width = 0.27
        for slot, key in enumerate(("dist1", "dist2", "dist3")):
            values = [entry[key] for entry in report.per_sample]
            offsets = [i + (slot - 1) * width for i in indices]
            ax.bar(offsets, values, width=width, color=_DIST_COLORS[key],
                   label=f"{key} (mean {report.aggregate[key]:.3f})")
        ax.set_xlabel("sample")
        ax.set_ylabel("distinct n-gram fraction")
        ax.set_ylim(0.0, 1.05)
        ax.set_title("Dist-n diversity per sample")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        path = stem.parent / f"{stem.name}_diversity.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written
