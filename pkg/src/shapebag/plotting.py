"""Report figures rendered headless with the Agg backend."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .util import atomic_write_bytes  # noqa: E402

SYSTEM_STYLE = {"fused": ("k", "-", "o"), "texture": ("tab:blue", "--", "s"), "shape": ("tab:red", ":", "^")}


def _save(fig, path) -> None:
    # No software/date metadata so equal inputs give byte-identical files.
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_rank_curves(rates: dict, path) -> None:
    """Rank-N rate against view offset, one panel per N, one line per system.

    ``rates[system][offset]`` is a dict N -> rate; offsets keep their
    insertion order on the x axis.
    """
    systems = [s for s in ("fused", "texture", "shape") if s in rates] + sorted(
        s for s in rates if s not in SYSTEM_STYLE
    )
    offsets = list(next(iter(rates.values())))
    Ns = sorted({n for s in rates.values() for by_n in s.values() for n in by_n})
    fig, axes = plt.subplots(1, len(Ns), figsize=(3.2 * len(Ns), 3.0), squeeze=False)
    xs = range(len(offsets))
    for ax, n in zip(axes[0], Ns):
        for s in systems:
            color, ls, marker = SYSTEM_STYLE.get(s, (None, "-", "x"))
            ax.plot(xs, [rates[s][o][n] for o in offsets], color=color, ls=ls, marker=marker, label=s)
        ax.set_xticks(list(xs), offsets)
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"rank-{n}")
        ax.set_xlabel("view offset")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("recognition rate")
    axes[0][-1].legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_fusion_objective(grid, values, W: float, objective: str, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(grid, values, "k.-")
    ax.axvline(W, color="tab:green", ls="--", label=f"W = {W:g}")
    ax.set_xlabel("W (0 texture only, 1 shape only)")
    ax.set_ylabel(objective)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
