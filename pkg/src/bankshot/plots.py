"""Figure rendering for run reports and sweeps. All output goes to files
(SVG via the Agg backend), no display stack required."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curves(curves: dict[str, list[float]], path) -> None:
    """Per-step training losses; ``curves`` maps term name -> values."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    steps = range(len(next(iter(curves.values()), [])))
    for name, values in curves.items():
        if values:
            ax.plot(list(steps), values, label=name, linewidth=1.5)
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_mode_bars(acc: dict[str, float], ci: dict[str, float], path) -> None:
    """Mean accuracy per inference mode with 95% CI error bars."""
    modes = list(acc)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(modes, [acc[m] for m in modes],
           yerr=[ci.get(m, 0.0) for m in modes], capsize=5, alpha=0.85)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3, axis="y")
    for label in ax.get_xticklabels():
        label.set_rotation(15)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_sweep_lines(x_label: str, xs: list, series: dict[str, list[float]], path) -> None:
    """Accuracy versus a swept config value, one line per inference mode."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    numeric = all(isinstance(x, (int, float)) for x in xs)
    positions = xs if numeric else range(len(xs))
    for name, ys in series.items():
        ax.plot(positions, ys, marker="o", label=name, linewidth=1.5)
    if not numeric:
        ax.set_xticks(list(positions))
        ax.set_xticklabels([str(x) for x in xs], rotation=15)
    ax.set_xlabel(x_label)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
