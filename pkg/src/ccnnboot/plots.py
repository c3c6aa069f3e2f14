"""Figure rendering for the report path.

Renders the same quantities the CSV artifacts carry: per-sample bootstrap
probability histograms with the true-class interval marked, and training
traces.  Files are written next to the delimited output; nothing here is
interactive.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_histograms(cube, table, labels, out_dir, sample_indices=None, bins=30):
    """One PNG per test sample: per-class histograms of replicate probabilities.

    The true class is drawn emphasized with its percentile interval as
    vertical lines.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if sample_indices is None:
        sample_indices = range(cube.num_samples)
    paths = []
    for i in sample_indices:
        fig, ax = plt.subplots(figsize=(6, 4))
        true = int(labels[i])
        for k in range(cube.num_classes):
            is_true = k == true
            ax.hist(
                cube.probs[:, i, k],
                bins=bins,
                range=(0.0, 1.0),
                alpha=0.85 if is_true else 0.35,
                label=f"class {k}" + (" (true)" if is_true else ""),
                color="C3" if is_true else None,
            )
        ax.axvline(table.lower[i, true], color="k", linestyle="--", linewidth=1)
        ax.axvline(table.upper[i, true], color="k", linestyle="--", linewidth=1)
        ax.set_xlabel("predicted probability")
        ax.set_ylabel("bootstrap count")
        ax.set_title(
            f"sample {i}: true class {true}, "
            f"{table.level:.0%} interval "
            f"[{table.lower[i, true]:.3f}, {table.upper[i, true]:.3f}]"
        )
        if cube.num_classes <= 10:
            ax.legend(fontsize=7)
        path = out / f"hist_sample{i:04d}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths


def render_trace(objective_trace, nuclear_norm_trace, path):
    """Objective and nuclear norm per epoch, as one two-axis figure."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = range(len(objective_trace))
    ax.plot(epochs, objective_trace, color="C0", label="objective")
    ax.set_xlabel("epoch")
    ax.set_ylabel("objective", color="C0")
    ax2 = ax.twinx()
    ax2.plot(epochs, nuclear_norm_trace, color="C1", label="nuclear norm")
    ax2.set_ylabel("nuclear norm", color="C1")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_interval_widths(table, path):
    """Distribution of interval widths pooled over samples and classes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(table.widths().ravel(), bins=40, color="C0")
    ax.set_xlabel("interval width")
    ax.set_ylabel("count")
    ax.set_title(f"{table.level:.0%} interval widths")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
