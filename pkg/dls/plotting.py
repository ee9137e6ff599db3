"""Overhead SVG plot of the object trajectory relative to each palm."""
import logging
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .contact_sim import PalmSide, SimState  # noqa: E402
from .planner import Plan, Target  # noqa: E402

logger = logging.getLogger("dls")

PLAN_COLORS = {"baseline": "tab:red", "ours": "tab:blue"}

plt.rcParams["svg.hashsalt"] = "dls"


def _xy_mm(states: Sequence[SimState], side: PalmSide):
    poses = [s.pose_in(side) for s in states]
    return [1e3 * p.x for p in poses], [1e3 * p.y for p in poses]


def write_trajectory_svg(
    path: Union[str, Path],
    plans: Sequence[Plan],
    targets: Sequence[Target],
    palm_radius: float,
    title: str = "",
) -> None:
    """
    Draw every plan's predicted object positions in both palm frames.

    Baseline is red, ours blue, other labels gray. Waypoints are hollow green
    circles and the final goal a green star. Output is byte-stable for equal inputs.
    """
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    for ax, side in zip(axes, (PalmSide.LEFT, PalmSide.RIGHT)):
        ax.add_patch(plt.Circle((0.0, 0.0), 1e3 * palm_radius, fill=False, color="0.7", lw=1.0, ls="--"))
        for p in plans:
            xs, ys = _xy_mm(p.predicted_states, side)
            ax.plot(xs, ys, color=PLAN_COLORS.get(p.label, "0.4"), lw=1.4, marker=".", ms=3, label=p.label)
            ax.plot(xs[:1], ys[:1], "ko", ms=4)

        goals = [t[0] if side is PalmSide.LEFT else t[1] for t in targets]
        if len(goals) > 1:
            ax.plot([1e3 * g.x for g in goals[:-1]], [1e3 * g.y for g in goals[:-1]], "o", mfc="none",
                    mec="tab:green", ms=7, label="waypoint")
        if goals:
            ax.plot(1e3 * goals[-1].x, 1e3 * goals[-1].y, "*", color="tab:green", ms=14, label="goal")

        ax.set_title(f"object relative to {side.value} palm")
        ax.set_xlabel("x (mm)")
        ax.set_ylabel("y (mm)")
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(True, lw=0.3)
        ax.legend(loc="best", fontsize=8)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug(f"Wrote trajectory plot {path}")
