"""Matplotlib renderings written next to the delimited outputs.

Everything goes through the Agg backend and a fixed Software tag so the
same inputs produce byte-identical PNG files run over run.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt
import numpy as np

from .container import atomic_write_bytes

_SAVEFIG_KW = {"dpi": 100, "metadata": {"Software": "ctregion"}}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", **_SAVEFIG_KW)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def fig_selected_slices(ct, masks, selection, path) -> None:
    """2x3 montage of the per-region selected slices with mask overlay."""
    from .regions import region_name

    fig, axes = plt.subplots(2, 3, figsize=(9.6, 6.4))
    for ax, (rid, idx) in zip(axes.flat, selection):
        image = ct.data[idx].astype(np.float64)
        lo, hi = image.min(), image.max()
        if hi > lo:
            image = (image - lo) / (hi - lo)
        ax.imshow(image, cmap="gray", interpolation="nearest")
        mask = masks.regions[rid].data[idx]
        overlay = np.ma.masked_where(mask == 0, mask)
        ax.imshow(overlay, cmap="autumn", alpha=0.4, interpolation="nearest", vmin=0, vmax=1)
        ax.set_title(f"{region_name(rid)} (slice {idx})", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)


def fig_token_budget(bundle, path) -> None:
    """Prompt composition against the sequence budget."""
    from .prompting import MAX_SEQUENCE_TOKENS

    visual = sum(s.payload.count("<img:") for s in bundle.segments if s.kind == "vision_tokens")
    seg = sum(1 for s in bundle.segments if s.kind == "seg_token")
    text = sum(len(s.payload.split()) for s in bundle.segments if s.kind == "text")

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    labels = ["visual", "segmentation", "text", "total"]
    values = [visual, seg, text, visual + seg + text]
    bars = ax.bar(labels, values, color=["#4477aa", "#ee6677", "#228833", "#bbbbbb"])
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v, str(v), ha="center", va="bottom", fontsize=9)
    ax.axhline(MAX_SEQUENCE_TOKENS, color="black", linestyle="--", linewidth=1)
    ax.text(0.02, MAX_SEQUENCE_TOKENS, f" budget {MAX_SEQUENCE_TOKENS}", va="bottom", fontsize=8)
    ax.set_ylabel("tokens")
    ax.set_title(f"prompt tokens, region {bundle.region_id}")
    fig.tight_layout()
    _save(fig, path)


def fig_metrics(rows, summary, path) -> None:
    """Per-pair metric scores with corpus means."""
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    if rows:
        x = [r.index for r in rows]
        series = [
            ("bleu4", [r.bleu4 for r in rows], summary.bleu4, "#4477aa"),
            ("rouge_l", [r.rouge_l for r in rows], summary.rouge_l, "#ee6677"),
            ("meteor", [r.meteor for r in rows], summary.meteor, "#228833"),
        ]
        for name, ys, mean, color in series:
            ax.plot(x, ys, marker="o", markersize=3, linewidth=0.8, color=color,
                    label=f"{name} (mean {mean:.3f})")
            ax.axhline(mean, color=color, linestyle=":", linewidth=0.8)
        ax.legend(fontsize=8)
        ax.set_xlabel("pair")
    else:
        ax.text(0.5, 0.5, "no pairs", ha="center", va="center")
    ax.set_ylim(-0.02, 1.02)
    ax.set_ylabel("score")
    ax.set_title(f"report overlap metrics (n={summary.count})")
    fig.tight_layout()
    _save(fig, path)
