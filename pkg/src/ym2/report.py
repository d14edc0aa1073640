"""Figure rendering for experiment result records.

One PNG per experiment, written next to the delimited output: z-score bars
for the comparison checks plus the experiment's natural sweep panel
(deformation curve, convergence log-log fits, remainder decay) when the
records carry one.
"""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_figures"]


def _z_panel(ax, records):
    names, zs, colors = [], [], []
    for r in records:
        if r.get("z") is None:
            continue
        names.append(r["check"] if len(r["check"]) < 40 else r["check"][:37] + "...")
        z = min(r["z"], 12.0) if math.isfinite(r["z"]) else 12.0
        zs.append(z)
        colors.append("#2a7e43" if r["pass"] else "#b03434")
    if not names:
        ax.axis("off")
        return
    ypos = np.arange(len(names))
    ax.barh(ypos, zs, color=colors, height=0.6)
    ax.axvline(3.0, color="k", lw=1, ls="--", label="3 sigma")
    ax.set_yticks(ypos)
    ax.set_yticklabels(names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("z-score (capped at 12)")
    ax.legend(loc="lower right", fontsize=7)


def _sweep_panel(ax, records):
    sweeps = [r for r in records if "sweep_x" in r.get("params", {})]
    if not sweeps:
        ax.axis("off")
        return
    for r in sweeps:
        xs = r["params"]["sweep_x"]
        ys = r["params"]["sweep_y"]
        if min(ys) > 0 and min(xs) > 0:
            ax.loglog(xs, ys, "o-", label=r["check"])
        else:
            ax.plot(xs, ys, "o-", label=r["check"])
    ax.set_xlabel("sweep parameter")
    ax.set_ylabel("value")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)


def render_figures(experiment: str, records: list[dict], outdir: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(10, 0.6 + 0.35 * max(len(records), 6)))
    fig.suptitle(experiment)
    _z_panel(axes[0], records)
    _sweep_panel(axes[1], records)
    fig.tight_layout()
    path = os.path.join(outdir, f"{experiment}.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
