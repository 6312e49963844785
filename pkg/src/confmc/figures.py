"""Render sweep results as satisfaction-probability figures.

One PNG per environment class: initial speed on the x axis, probability on
the y axis, one line per speed limit (fixed-matrix sweeps) or per
precision/recall operating point. Written next to the CSV so a sweep leaves
a self-contained report.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_sweep_figures(rows, out_prefix) -> list[Path]:
    """Plot successful rows grouped by env; returns the written paths."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    by_env: dict[str, list] = {}
    for row in rows:
        if row.error or row.probability is None:
            continue
        by_env.setdefault(row.env, []).append(row)

    written = []
    for env_name, group in by_env.items():
        series: dict[str, list[tuple[int, float]]] = {}
        for row in group:
            if row.p is not None:
                key = f"p={row.p:g}, r={row.r:g}"
            else:
                key = f"v_max={row.v_max}"
            series.setdefault(key, []).append((row.v0, row.probability))

        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for key, points in series.items():
            points.sort()
            ax.plot([x for x, _ in points], [y for _, y in points], marker="o",
                    markersize=3, label=key)
        ax.set_xlabel("initial speed")
        ax.set_ylabel("satisfaction probability")
        ax.set_title(f"true class: {env_name}")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7, ncol=2)
        path = out_prefix.parent / f"{out_prefix.name}_{env_name}.png"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
