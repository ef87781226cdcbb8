"""Delimited report output and the figures rendered alongside it.

Every table this package emits is TSV with a header row; float cells use
``repr`` so values parse back exactly.  When a report goes to a file, a
matplotlib figure of the same content is rendered next to it.
"""

from __future__ import annotations

import math
from pathlib import Path

__all__ = [
    "format_cell",
    "write_tsv",
    "render_loss_curve",
    "render_eval_chart",
    "render_ablation_chart",
]


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_tsv(path, header, rows) -> None:
    lines = ["\t".join(str(h) for h in header)]
    lines += ["\t".join(format_cell(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def tsv_text(header, rows) -> str:
    lines = ["\t".join(str(h) for h in header)]
    lines += ["\t".join(format_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def figure_path(report_path) -> Path:
    return Path(report_path).with_suffix(".png")


def render_loss_curve(epoch_records, path) -> Path:
    """Epoch-mean loss on a log axis, with the learning-rate schedule overlaid."""
    plt = _pyplot()
    epochs = [r.epoch for r in epoch_records]
    losses = [r.mean_loss for r in epoch_records]
    lrs = [r.lr for r in epoch_records]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, losses, marker="o", color="tab:blue", label="mean L1 loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean L1 loss")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.step(epochs, lrs, where="post", color="tab:orange", alpha=0.6, label="lr")
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    ax.set_title("training loss")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def render_eval_chart(names, model_psnr, bicubic_psnr, factor, path) -> Path:
    """Per-image PSNR bars: reconstruction vs the bicubic baseline.

    Infinite values (identical planes) are clipped to the finite maximum
    plus 6 dB for display; the TSV keeps the honest sentinel."""
    plt = _pyplot()

    def clipped(values):
        finite = [v for v in values if math.isfinite(v)]
        cap = (max(finite) if finite else 60.0) + 6.0
        return [v if math.isfinite(v) else cap for v in values]

    model_psnr = clipped(list(model_psnr))
    bicubic_psnr = clipped(list(bicubic_psnr))
    idx = range(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(names) + 2), 3.5))
    ax.bar([i - width / 2 for i in idx], model_psnr, width, label="model", color="tab:blue")
    ax.bar([i + width / 2 for i in idx], bicubic_psnr, width, label="bicubic", color="tab:gray")
    ax.set_xticks(list(idx))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"x{factor} reconstruction vs bicubic")
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def render_ablation_chart(case_medians, path) -> Path:
    """Median validation PSNR per ablation case."""
    plt = _pyplot()
    cases = sorted(case_medians)
    values = [case_medians[c] for c in cases]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([str(c) for c in cases], values, color="tab:blue")
    ax.set_xlabel("case")
    ax.set_ylabel("median PSNR (dB)")
    ax.set_title("ablation: median validation PSNR by case")
    lo = min(values)
    hi = max(values)
    pad = max(0.2, 0.1 * (hi - lo))
    ax.set_ylim(lo - pad, hi + pad)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out
