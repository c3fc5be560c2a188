"""Figures for parses, viewpoints, matches and experiment reports.

Everything renders with the Agg backend to a file. SVG output is made
byte-stable across runs by fixing the hash salt and dropping the date.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .index import LocalMapDescriptor, match_words  # noqa: E402
from .maps import OccupancyGrid, PointsetMap, transform_points  # noqa: E402
from .parsing import ParseResult  # noqa: E402
from .planning import Viewpoint, box_corners  # noqa: E402

STRATEGY_COLORS = {
    "s1": "tab:blue",
    "s2": "tab:orange",
    "s3": "tab:green",
    "s4": "tab:purple",
    "s5": "tab:red",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "lmd", "svg.fonttype": "none"}):
        metadata = {"Date": None} if path.suffix == ".svg" else None
        fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return path


def plot_parse(
    map: PointsetMap,
    parse: ParseResult,
    path: str | Path,
    viewpoints: dict[str, Viewpoint] | None = None,
    grid: OccupancyGrid | None = None,
) -> Path:
    """Points in gray, walls in red, viewpoints as markers, S5 box outlined."""
    fig, ax = plt.subplots(figsize=(6, 6))
    pts = map.points
    ax.scatter(pts[:, 0], pts[:, 1], s=2, c="0.55", linewidths=0)
    for w in parse.walls:
        ax.plot([w.start[0], w.end[0]], [w.start[1], w.end[1]], color="red", lw=1.5)
    for name, vp in sorted((viewpoints or {}).items()):
        color = STRATEGY_COLORS.get(name, "black")
        ax.plot(*vp.position, marker="o", color=color, ms=7, ls="none", label=name.upper())
        if vp.box is not None and grid is not None:
            c = box_corners(vp, grid)
            c = np.vstack([c, c[:1]])
            ax.plot(c[:, 0], c[:, 1], color="red", lw=1, ls="--")
    if viewpoints:
        ax.legend(loc="upper right", fontsize=8)
    ax.set_aspect("equal")
    ax.set_title(f"{map.id}  score {parse.score:.3f}  {len(parse.rooms)} rooms")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    return _save(fig, path)


def _placed(m: PointsetMap, pts: np.ndarray) -> np.ndarray:
    return pts if m.anchor is None else transform_points(m.anchor, pts)


def render_matches(
    query_map: PointsetMap,
    db_map: PointsetMap,
    q: LocalMapDescriptor,
    d: LocalMapDescriptor,
    correspondences,
    path: str | Path,
) -> Path:
    """Both maps placed by their anchors: query points purple, database
    points green, matched keypoints joined by red lines."""
    fig, ax = plt.subplots(figsize=(6, 6))
    qp = _placed(query_map, query_map.points)
    dp = _placed(db_map, db_map.points)
    ax.scatter(dp[:, 0], dp[:, 1], s=2, c="green", linewidths=0)
    ax.scatter(qp[:, 0], qp[:, 1], s=2, c="purple", linewidths=0)
    pairs = list(correspondences)
    if pairs:
        qi = np.array([i for i, _ in pairs])
        dj = np.array([j for _, j in pairs])
        a = _placed(query_map, q.keypoints[qi])
        b = _placed(db_map, d.keypoints[dj])
        for (x0, y0), (x1, y1) in zip(a, b):
            ax.plot([x0, x1], [y0, y1], color="red", lw=0.6)
    ax.set_aspect("equal")
    ax.set_title(f"{query_map.id} vs {db_map.id}: {len(pairs)} matches")
    return _save(fig, path)


def plot_matches(
    query_map: PointsetMap,
    db_map: PointsetMap,
    q: LocalMapDescriptor,
    d: LocalMapDescriptor,
    path: str | Path,
    D_xy: float | None = 3.0,
    mode: str = "lmd",
) -> Path:
    """:func:`render_matches` with correspondences from :func:`match_words`."""
    return render_matches(query_map, db_map, q, d, match_words(q, d, D_xy, mode), path)


def plot_error_histogram(report, path: str | Path, strategies=None) -> Path:
    """Viewpoint disagreement between relevant map pairs, one bar set per strategy."""
    names = [s for s in (strategies or sorted(report.viewpoint_errors)) if s in report.viewpoint_errors]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 1.0 / max(len(names), 1)
    for k, s in enumerate(names):
        h = report.histogram(s)
        edges = np.asarray(h["edges"])
        counts = np.asarray(h["counts"], dtype=float)
        total = counts.sum()
        frac = counts / total if total else counts
        ax.bar(edges[:-1] + k * width, frac, width=width, align="edge",
               color=STRATEGY_COLORS.get(s, "gray"), label=s.upper())
    ax.axvline(5.0, color="black", lw=0.8, ls=":")
    ax.set_xlabel("viewpoint error [m]")
    ax.set_ylabel("fraction of pairs")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_anr(report, path: str | Path) -> Path:
    """Average normalized rank per strategy, lower is better."""
    anr = report.anr
    names = list(report.strategies)
    fig, ax = plt.subplots(figsize=(6, 4))
    values = [100.0 * anr[s] for s in names]
    ax.bar(range(len(names)), values, color=[STRATEGY_COLORS.get(s, "gray") for s in names])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels([s.upper() for s in names])
    ax.set_ylabel("ANR [%]")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.1f}", ha="center", va="bottom", fontsize=8)
    return _save(fig, path)
