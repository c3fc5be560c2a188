"""Unique-viewpoint planning strategies S1 to S5.

All distances are taken between cell centers. Argmin/argmax ties go to the
lowest ``(row, col)``, which is what ``np.argmin`` over a row-major
``np.nonzero`` listing gives for free. S1, S2 and S4 compare exact integer
keys so that ties are real ties.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import NoFreeSpace, NoStructure, NoWalls
from .maps import CellSets, OccupancyGrid, derive_cell_sets, rotation
from .parsing import ParseResult, fold_angle

LONGEST_WALLS = 10
S5_PEAK_FRACTION = (9, 10)


class Strategy(str, enum.Enum):
    S1 = "s1"
    S2 = "s2"
    S3 = "s3"
    S4 = "s4"
    S5 = "s5"

    @classmethod
    def parse(cls, name: str) -> Strategy:
        return cls(name.lower())


@dataclass(frozen=True)
class Viewpoint:
    position: tuple[float, float]
    orientation: float
    strategy: str
    cell: tuple[int, int] | None = None
    box: tuple[float, float, float, float] | None = None  # S5, rotated frame

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "x": self.position[0],
            "y": self.position[1],
            "theta": self.orientation,
        }


def _require(cells: CellSets, structure: bool = True):
    if structure and not cells.structure.any():
        raise NoStructure("no structure cells")
    if not cells.unoccupied.any():
        raise NoFreeSpace("no unoccupied cells")


def _at_cell(grid, r, c, theta, strategy) -> Viewpoint:
    x, y = grid.center(r, c)
    return Viewpoint((float(x), float(y)), fold_angle(theta), strategy, (int(r), int(c)))


def _nearest_to_centroid(cells: CellSets, grid: OccupancyGrid, theta: float, name: str) -> Viewpoint:
    _require(cells)
    sr, sc = np.nonzero(cells.structure)
    n, Sr, Sc = sr.size, int(sr.sum()), int(sc.sum())
    ur, uc = np.nonzero(cells.unoccupied)
    # |v - cog|^2 scaled by n^2 stays integral
    key = (n * ur - Sr) ** 2 + (n * uc - Sc) ** 2
    i = int(np.argmin(key))
    return _at_cell(grid, ur[i], uc[i], theta, name)


def plan_s1(cells: CellSets, grid: OccupancyGrid, theta: float = 0.0) -> Viewpoint:
    """Unoccupied cell nearest the centroid of the structure cells."""
    return _nearest_to_centroid(cells, grid, theta, Strategy.S1.value)


def plan_s2(cells: CellSets, grid: OccupancyGrid, theta: float = 0.0) -> Viewpoint:
    """Unoccupied cell minimizing the distance to its farthest structure cell."""
    _require(cells)
    sr, sc = np.nonzero(cells.structure)
    # the farthest cell of any row is that row's leftmost or rightmost one
    rows = np.unique(sr)
    first = np.searchsorted(sr, rows, side="left")
    last = np.searchsorted(sr, rows, side="right") - 1
    er = np.concatenate([rows, rows])
    ec = np.concatenate([sc[first], sc[last]])
    ur, uc = np.nonzero(cells.unoccupied)
    best_key, best = None, None
    for lo in range(0, ur.size, 4096):
        r, c = ur[lo:lo + 4096, None], uc[lo:lo + 4096, None]
        far = ((r - er[None, :]) ** 2 + (c - ec[None, :]) ** 2).max(axis=1)
        i = int(np.argmin(far))
        if best_key is None or far[i] < best_key:
            best_key, best = int(far[i]), lo + i
    return _at_cell(grid, ur[best], uc[best], theta, Strategy.S2.value)


def plan_s3(cells: CellSets, grid: OccupancyGrid, theta: float = 0.0) -> Viewpoint:
    """Unoccupied cell maximizing the distance to its nearest structure cell."""
    _require(cells)
    d2 = np.rint(distance_transform_edt(~cells.structure) ** 2).astype(np.int64)
    ur, uc = np.nonzero(cells.unoccupied)
    i = int(np.argmax(d2[ur, uc]))
    return _at_cell(grid, ur[i], uc[i], theta, Strategy.S3.value)


def longest_walls(walls, count: int = LONGEST_WALLS):
    """The ``count`` longest distinct walls, longest first (stable on ties).

    Rooms that share a side produce the same segment twice; it is kept once.
    """
    seen, distinct = set(), []
    for w in walls:
        key = tuple(sorted([tuple(np.round(w.start, 9)), tuple(np.round(w.end, 9))]))
        if key not in seen:
            seen.add(key)
            distinct.append(w)
    return sorted(distinct, key=lambda w: -w.length)[:count]


def plan_s4(cells: CellSets, grid: OccupancyGrid, walls, theta: float = 0.0) -> Viewpoint:
    """S1 with structure rebuilt from the ten longest walls only."""
    walls = list(walls)
    if not walls:
        raise NoWalls("S4 needs at least one wall")
    dominant = derive_cell_sets(grid, longest_walls(walls))
    return _nearest_to_centroid(dominant, grid, theta, Strategy.S4.value)


def _peak_run(hist: np.ndarray) -> tuple[int, int]:
    peak = int(np.argmax(hist))
    num, den = S5_PEAK_FRACTION
    ok = den * hist >= num * hist[peak]
    lo = hi = peak
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < hist.size - 1 and ok[hi + 1]:
        hi += 1
    return lo, hi


def plan_s5(cells: CellSets, grid: OccupancyGrid, theta: float = 0.0) -> Viewpoint:
    """Center of the dominant unoccupied region.

    Unoccupied cells are binned into columns and rows of the θ-rotated frame
    (anchored at the grid origin). Around each histogram peak the contiguous
    run of bins holding at least 90% of the peak count spans the box.
    """
    _require(cells, structure=False)
    theta = fold_angle(theta)
    res = grid.resolution
    ur, uc = np.nonzero(cells.unoccupied)
    rel = grid.center(ur, uc) - grid.origin
    q = rel @ rotation(theta)
    bins = np.floor(q / res + 1e-9).astype(np.int64)
    base = bins.min(axis=0)
    fx = np.bincount(bins[:, 0] - base[0])
    fy = np.bincount(bins[:, 1] - base[1])
    x0, x1 = _peak_run(fx)
    y0, y1 = _peak_run(fy)
    box = (
        (x0 + base[0]) * res, (y0 + base[1]) * res,
        (x1 + 1 + base[0]) * res, (y1 + 1 + base[1]) * res,
    )
    mid = np.array([(box[0] + box[2]) / 2, (box[1] + box[3]) / 2])
    pos = rotation(theta) @ mid + grid.origin
    return Viewpoint(
        (float(pos[0]), float(pos[1])), fold_angle(theta), Strategy.S5.value,
        box=tuple(float(v) for v in box),
    )


def plan(strategy, grid: OccupancyGrid, parse: ParseResult, cells: CellSets | None = None) -> Viewpoint:
    """Run one strategy on a rasterized, parsed map."""
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    if cells is None:
        cells = derive_cell_sets(grid, parse.walls)
    theta = parse.theta
    if strategy is Strategy.S1:
        return plan_s1(cells, grid, theta)
    if strategy is Strategy.S2:
        return plan_s2(cells, grid, theta)
    if strategy is Strategy.S3:
        return plan_s3(cells, grid, theta)
    if strategy is Strategy.S4:
        return plan_s4(cells, grid, parse.walls, theta)
    return plan_s5(cells, grid, theta)


def box_corners(vp: Viewpoint, grid: OccupancyGrid) -> np.ndarray:
    """Map-frame corners of an S5 box, for drawing."""
    x0, y0, x1, y1 = vp.box
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    return corners @ rotation(vp.orientation).T + grid.origin


def viewpoint_distance(a: Viewpoint, b: Viewpoint) -> float:
    return math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
