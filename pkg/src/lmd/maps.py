"""Pointset maps, occupancy grids and log ingestion.

Local maps are built from pose-tagged scans; no registration happens here, the
poses in the log are taken as given.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyLog, FormatError

MAP_MAGIC = "# lmd-map v1"
LOG_MAGIC = "# lmd-log v1"

DEFAULT_WINDOW_M = 5.0
DEFAULT_STRIDE_M = 1.0
DEFAULT_RESOLUTION = 0.1


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float]:
    """Pose composition ``a ⊕ b`` for (x, y, heading) triples."""
    c, s = math.cos(a[2]), math.sin(a[2])
    return (a[0] + c * b[0] - s * b[1], a[1] + s * b[0] + c * b[1], a[2] + b[2])


def inverse(a: Sequence[float]) -> tuple[float, float, float]:
    c, s = math.cos(a[2]), math.sin(a[2])
    return (-c * a[0] - s * a[1], s * a[0] - c * a[1], -a[2])


def transform_points(pose: Sequence[float], points: np.ndarray) -> np.ndarray:
    """Map points expressed in ``pose``'s frame into the parent frame."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points @ rotation(pose[2]).T + np.array(pose[:2], dtype=float)


@dataclass(frozen=True, eq=False)
class ScanLogEntry:
    """One scan: sensor pose, sensor-frame points and cumulative path length."""

    pose: tuple[float, float, float]
    points: np.ndarray
    odom_distance: float

    def __post_init__(self):
        object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True, eq=False)
class PointsetMap:
    """A 2D point cloud in the local frame of its first pose.

    ``poses`` holds the sensor poses (map frame) the points were observed
    from, and ``point_scan`` the index of the pose each point came from
    (``-1`` when unknown). ``anchor`` is the map frame expressed in the log
    frame; it is ground truth only and never used by retrieval.
    """

    id: str
    points: np.ndarray
    path_position: float = 0.0
    source: str = ""
    poses: np.ndarray | None = None
    point_scan: np.ndarray | None = None
    anchor: tuple[float, float, float] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"map {self.id!r} has non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.poses is not None:
            object.__setattr__(self, "poses", np.asarray(self.poses, dtype=float).reshape(-1, 3))
        if self.point_scan is not None:
            scan = np.asarray(self.point_scan, dtype=np.int64).reshape(-1)
            if scan.shape[0] != pts.shape[0]:
                raise ValueError("point_scan must have one entry per point")
            object.__setattr__(self, "point_scan", scan)
        if self.anchor is not None:
            object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))

    def __len__(self) -> int:
        return self.points.shape[0]

    def world_points(self) -> np.ndarray:
        if self.anchor is None:
            return self.points.copy()
        return transform_points(self.anchor, self.points)

    def transformed(self, pose: Sequence[float], new_id: str | None = None) -> PointsetMap:
        """Apply the rigid motion ``pose`` to points and sensor poses.

        The anchor is updated so that ``world_points`` is unchanged.
        """
        pts = transform_points(pose, self.points)
        poses = None
        if self.poses is not None:
            poses = np.array([compose(pose, p) for p in self.poses]).reshape(-1, 3)
        anchor = None
        if self.anchor is not None:
            anchor = compose(self.anchor, inverse(pose))
        return replace(self, id=new_id or self.id, points=pts, poses=poses, anchor=anchor)


class CellLabel(enum.IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Dense grid; ``cells[row, col]`` covers ``origin + (col, row) * resolution``.

    ``carved`` is False when no sensor poses were available, in which case no
    cell is labelled free.
    """

    resolution: float
    origin: np.ndarray
    cells: np.ndarray
    carved: bool = True

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(2))
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.cells == CellLabel.OCCUPIED

    @property
    def free(self) -> np.ndarray:
        return self.cells == CellLabel.FREE

    @property
    def unknown(self) -> np.ndarray:
        return self.cells == CellLabel.UNKNOWN

    def center(self, row, col) -> np.ndarray:
        """Map-frame center of cell(s) ``(row, col)``."""
        row = np.asarray(row, dtype=float)
        col = np.asarray(col, dtype=float)
        return np.stack(
            [self.origin[0] + (col + 0.5) * self.resolution,
             self.origin[1] + (row + 0.5) * self.resolution],
            axis=-1,
        )

    def cell_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = (np.asarray(points, dtype=float).reshape(-1, 2) - self.origin) / self.resolution
        u = np.floor(u).astype(np.int64)
        return u[:, 1], u[:, 0]

    def translated(self, offset: Sequence[float]) -> OccupancyGrid:
        return replace(self, origin=self.origin + np.asarray(offset, dtype=float))


@dataclass(frozen=True, eq=False)
class CellSets:
    """Boolean masks over a grid: wall, structure and unoccupied cells."""

    wall: np.ndarray
    structure: np.ndarray
    unoccupied: np.ndarray

    @staticmethod
    def indices(mask: np.ndarray) -> set[tuple[int, int]]:
        return {(int(r), int(c)) for r, c in zip(*np.nonzero(mask))}


# -- windowing ----------------------------------------------------------------


def window_log(
    log: Sequence[ScanLogEntry],
    window_m: float = DEFAULT_WINDOW_M,
    stride_m: float = DEFAULT_STRIDE_M,
    source: str = "",
) -> list[PointsetMap]:
    """Cut a scan log into overlapping local maps.

    A map starts every ``stride_m`` of travel and holds the scans whose
    odometry falls in ``[start, start + window_m]``. A log shorter than one
    window yields a single map with everything in it.
    """
    if not log:
        raise EmptyLog("cannot window an empty log")
    if window_m <= 0 or stride_m <= 0:
        raise ValueError("window_m and stride_m must be positive")
    odom = np.array([e.odom_distance for e in log], dtype=float)
    if np.any(np.diff(odom) < 0):
        raise ValueError("odom_distance must be non-decreasing")
    d0, span = odom[0], odom[-1] - odom[0]
    tol = 1e-9
    if span < window_m - tol:
        starts = [d0]
    else:
        count = int(math.floor((span - window_m) / stride_m + tol)) + 1
        starts = [d0 + k * stride_m for k in range(count)]

    maps = []
    for k, start in enumerate(starts):
        lo = int(np.searchsorted(odom, start - tol, side="left"))
        hi = int(np.searchsorted(odom, start + window_m + tol, side="right"))
        if span < window_m - tol:
            lo, hi = 0, len(log)
        members = list(log[lo:hi])
        anchor = members[0].pose if members else log[max(lo - 1, 0)].pose
        to_map = inverse(anchor)
        poses, chunks, owners = [], [], []
        for i, entry in enumerate(members):
            local = compose(to_map, entry.pose)
            poses.append(local)
            chunks.append(transform_points(local, entry.points))
            owners.append(np.full(entry.points.shape[0], i, dtype=np.int64))
        points = np.concatenate(chunks) if chunks else np.empty((0, 2))
        owner = np.concatenate(owners) if owners else np.empty(0, dtype=np.int64)
        name = f"{source}-{k:04d}" if source else f"map-{k:04d}"
        maps.append(
            PointsetMap(
                id=name,
                points=points,
                path_position=float(start),
                source=source,
                poses=np.array(poses, dtype=float).reshape(-1, 3),
                point_scan=owner,
                anchor=anchor,
            )
        )
    return maps


# -- rasterization ------------------------------------------------------------


def _traverse(grid_origin, res, shape, starts, ends, chunk=2048):
    """Cells crossed by each segment start->end, minus each segment's end cell.

    Exact grid traversal: every gridline crossing is a breakpoint and the
    midpoint of each piece names the cell it lies in.
    """
    rows_out, cols_out = [], []
    for lo in range(0, starts.shape[0], chunk):
        a = (starts[lo:lo + chunk] - grid_origin) / res
        b = (ends[lo:lo + chunk] - grid_origin) / res
        d = b - a
        ts = [np.zeros((a.shape[0], 1)), np.ones((a.shape[0], 1))]
        for axis in (0, 1):
            fa, fb = np.floor(a[:, axis]), np.floor(b[:, axis])
            n = np.abs(fb - fa).astype(np.int64)
            m = int(n.max()) if n.size else 0
            if m == 0:
                continue
            k = np.arange(m)[None, :]
            step = np.sign(d[:, axis])[:, None]
            lines = np.where(step > 0, fa[:, None] + 1 + k, fa[:, None] - k)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (lines - a[:, axis][:, None]) / d[:, axis][:, None]
            t[k >= n[:, None]] = np.nan
            ts.append(t)
        t = np.sort(np.concatenate(ts, axis=1), axis=1)
        t0, t1 = t[:, :-1], t[:, 1:]
        ok = np.isfinite(t0) & np.isfinite(t1) & (t1 > t0)
        tm = np.where(ok, 0.5 * (t0 + t1), 0.0)
        px = np.floor(a[:, 0, None] + tm * d[:, 0, None]).astype(np.int64)
        py = np.floor(a[:, 1, None] + tm * d[:, 1, None]).astype(np.int64)
        ex = np.floor(b[:, 0]).astype(np.int64)[:, None]
        ey = np.floor(b[:, 1]).astype(np.int64)[:, None]
        ok &= ~((px == ex) & (py == ey))
        ok &= (px >= 0) & (py >= 0) & (px < shape[1]) & (py < shape[0])
        rows_out.append(py[ok])
        cols_out.append(px[ok])
    if not rows_out:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(rows_out), np.concatenate(cols_out)


def rasterize(
    map: PointsetMap,
    viewpoints: np.ndarray | None = None,
    resolution: float = DEFAULT_RESOLUTION,
) -> OccupancyGrid:
    """Occupancy grid of ``map``; free space is carved by ray tracing.

    ``viewpoints`` defaults to the map's own sensor poses, in which case each
    point is traced from the pose that observed it. Otherwise (or when a
    point's source is unknown) the nearest viewpoint is used. With no
    viewpoints at all the result has ``carved=False`` and no free cells.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    use_own = viewpoints is None
    vps = map.poses if use_own else viewpoints
    vps = np.empty((0, 2)) if vps is None else np.asarray(vps, dtype=float)
    vps = vps.reshape(len(vps), -1)[:, :2] if vps.size else np.empty((0, 2))
    pts = map.points

    extent = np.concatenate([pts, vps]) if len(vps) else pts
    if extent.shape[0] == 0:
        return OccupancyGrid(resolution, np.zeros(2), np.zeros((1, 1), dtype=np.int8), carved=False)
    lo = np.floor(extent.min(axis=0) / resolution) * resolution - resolution
    hi = np.floor(extent.max(axis=0) / resolution) * resolution + 2 * resolution
    ncols, nrows = np.rint((hi - lo) / resolution).astype(int)
    cells = np.full((nrows, ncols), CellLabel.UNKNOWN, dtype=np.int8)
    grid = OccupancyGrid(resolution, lo, cells)

    if len(vps) == 0:
        if pts.shape[0]:
            warnings.warn(f"map {map.id!r}: no viewpoints, free space not carved", stacklevel=2)
    elif pts.shape[0]:
        owner = None
        if use_own and map.point_scan is not None:
            owner = map.point_scan.copy()
        if owner is None:
            owner = np.full(pts.shape[0], -1, dtype=np.int64)
        unknown = owner < 0
        if np.any(unknown):
            d2 = ((pts[unknown, None, :] - vps[None, :, :]) ** 2).sum(axis=2)
            owner[unknown] = np.argmin(d2, axis=1)
        rr, cc = _traverse(lo, resolution, cells.shape, vps[owner], pts)
        cells[rr, cc] = CellLabel.FREE

    if pts.shape[0]:
        r, c = grid.cell_of(pts)
        cells[r, c] = CellLabel.OCCUPIED
    return OccupancyGrid(resolution, lo, cells, carved=len(vps) > 0)


def _segment_distance(px, py, a, b):
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    L2 = float(d @ d)
    if L2 == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def wall_mask(grid: OccupancyGrid, walls: Iterable) -> np.ndarray:
    """Cells whose center lies within half a resolution of any wall."""
    mask = np.zeros(grid.shape, dtype=bool)
    res = grid.resolution
    tol = 0.5 * res + 1e-9
    nrows, ncols = grid.shape
    for w in walls:
        a, b = np.asarray(w.start, dtype=float), np.asarray(w.end, dtype=float)
        lo = (np.minimum(a, b) - grid.origin) / res - 1
        hi = (np.maximum(a, b) - grid.origin) / res + 1
        c0, r0 = max(int(math.floor(lo[0])), 0), max(int(math.floor(lo[1])), 0)
        c1, r1 = min(int(math.ceil(hi[0])), ncols), min(int(math.ceil(hi[1])), nrows)
        if c0 >= c1 or r0 >= r1:
            continue
        rows, cols = np.mgrid[r0:r1, c0:c1]
        centers = grid.center(rows, cols)
        dist = _segment_distance(centers[..., 0], centers[..., 1], a, b)
        mask[r0:r1, c0:c1] |= dist <= tol
    return mask


def derive_cell_sets(grid: OccupancyGrid, walls: Iterable) -> CellSets:
    """Wall cells from the parsed walls; structure = occupied ∩ wall and
    unoccupied = free minus structure."""
    wall = wall_mask(grid, walls)
    structure = grid.occupied & wall
    unoccupied = grid.free & ~structure
    return CellSets(wall=wall, structure=structure, unoccupied=unoccupied)


# -- file formats ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_map(map: PointsetMap, path: str | Path) -> None:
    """Write ``map`` in the ``lmd-map v1`` text format.

    Optional ``# key ...`` lines carry source, anchor and sensor poses; a
    ``# scan`` line assigns the points that follow to that sensor pose.
    """
    lines = [f"{MAP_MAGIC} id={map.id} path_pos={_fmt(map.path_position)}"]
    if map.source:
        lines.append(f"# source {map.source}")
    if map.anchor is not None:
        lines.append("# anchor " + " ".join(_fmt(v) for v in map.anchor))
    pts = map.points
    if map.poses is not None and map.point_scan is not None and len(map.poses):
        loose = np.nonzero(map.point_scan < 0)[0]
        lines.extend(f"{_fmt(x)} {_fmt(y)}" for x, y in pts[loose])
        for i, pose in enumerate(map.poses):
            lines.append("# scan " + " ".join(_fmt(v) for v in pose))
            lines.extend(f"{_fmt(x)} {_fmt(y)}" for x, y in pts[map.point_scan == i])
    else:
        if map.poses is not None:
            lines.extend("# viewpoint " + " ".join(_fmt(v) for v in pose) for pose in map.poses)
        lines.extend(f"{_fmt(x)} {_fmt(y)}" for x, y in pts)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_map(path: str | Path) -> PointsetMap:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(MAP_MAGIC):
        raise FormatError(f"{path}: missing '{MAP_MAGIC}' header")
    meta = dict(tok.split("=", 1) for tok in text[0][len(MAP_MAGIC):].split() if "=" in tok)
    source, anchor = "", None
    poses, points, owner = [], [], []
    current = -1
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if not parts:
                continue
            key, vals = parts[0], parts[1:]
            if key == "source":
                source = " ".join(vals)
            elif key == "anchor":
                anchor = tuple(float(v) for v in vals[:3])
            elif key == "scan":
                poses.append([float(v) for v in vals[:3]])
                current = len(poses) - 1
            elif key == "viewpoint":
                poses.append([float(v) for v in vals[:3]])
            continue
        try:
            x, y = (float(v) for v in line.split()[:2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: expected 'x y'") from exc
        points.append((x, y))
        owner.append(current)
    owner_arr = np.array(owner, dtype=np.int64)
    return PointsetMap(
        id=meta.get("id", Path(path).stem),
        points=np.array(points, dtype=float).reshape(-1, 2),
        path_position=float(meta.get("path_pos", 0.0)),
        source=source,
        poses=np.array(poses, dtype=float).reshape(-1, 3) if poses else None,
        point_scan=owner_arr if poses else None,
        anchor=anchor,
    )


def is_map_file(path: Path) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.readline().startswith(MAP_MAGIC)
    except (OSError, UnicodeDecodeError):
        return False


def read_map_dir(directory: str | Path) -> list[PointsetMap]:
    files = sorted(p for p in Path(directory).iterdir() if p.is_file() and is_map_file(p))
    return [read_map(p) for p in files]


def write_log(log: Sequence[ScanLogEntry], path: str | Path) -> None:
    """Neutral log format: ``scan x y heading odom px py px py ...`` per line."""
    lines = [LOG_MAGIC]
    for e in log:
        vals = [*e.pose, e.odom_distance, *e.points.reshape(-1)]
        lines.append("scan " + " ".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_log(path: str | Path) -> list[ScanLogEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] != "scan" or len(parts) < 5 or (len(parts) - 5) % 2:
            raise FormatError(f"{path}:{lineno}: malformed scan line")
        vals = [float(v) for v in parts[1:]]
        entries.append(ScanLogEntry(tuple(vals[:3]), np.array(vals[4:]).reshape(-1, 2), vals[3]))
    return entries


def read_carmen(
    path: str | Path,
    fov: float = math.pi,
    max_range: float | None = None,
    include_odom: bool = False,
) -> list[ScanLogEntry]:
    """Import a carmen 2D log.

    ``FLASER n r_1..r_n x y theta odom_x odom_y odom_theta ...`` lines become
    scans taken at the corrected laser pose, beams spread evenly over ``fov``.
    ``ODOM x y theta ...`` lines become point-less entries only when
    ``include_odom`` is set. Everything else is skipped.
    """
    entries: list[ScanLogEntry] = []
    last = None
    travelled = 0.0

    def push(pose, pts):
        nonlocal last, travelled
        if last is not None:
            travelled += math.hypot(pose[0] - last[0], pose[1] - last[1])
        last = pose
        entries.append(ScanLogEntry(pose, pts, travelled))

    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "FLASER":
                    n = int(parts[1])
                    ranges = np.array(parts[2:2 + n], dtype=float)
                    x, y, th = (float(v) for v in parts[2 + n:5 + n])
                    if ranges.shape[0] != n:
                        continue
                    angles = -fov / 2 + np.arange(n) * (fov / max(n - 1, 1))
                    keep = np.isfinite(ranges) & (ranges > 0)
                    if max_range is not None:
                        keep &= ranges < max_range
                    r, a = ranges[keep], angles[keep]
                    push((x, y, th), np.stack([r * np.cos(a), r * np.sin(a)], axis=1))
                elif tag == "ODOM" and include_odom:
                    x, y, th = (float(v) for v in parts[1:4])
                    push((x, y, th), np.empty((0, 2)))
            except (ValueError, IndexError):
                continue
    return entries


def write_pgm(grid: OccupancyGrid, path: str | Path) -> Path:
    """Binary PGM (0 occupied, 127 unknown, 255 free), north up.

    Resolution and origin go to a sidecar ``<path>.txt``. Returns the sidecar
    path.
    """
    path = Path(path)
    lut = np.array([127, 255, 0], dtype=np.uint8)
    img = lut[grid.cells][::-1]
    h, w = img.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())
    side = path.with_name(path.name + ".txt")
    side.write_text(
        f"resolution {_fmt(grid.resolution)}\n"
        f"origin {_fmt(grid.origin[0])} {_fmt(grid.origin[1])}\n",
        encoding="utf-8",
    )
    return side


def read_pgm(path: str | Path) -> OccupancyGrid:
    path = Path(path)
    data = path.read_bytes()
    header = data.split(b"\n", 3)
    if header[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in header[1].split())
    img = np.frombuffer(header[3], dtype=np.uint8, count=w * h).reshape(h, w)[::-1]
    cells = np.full(img.shape, CellLabel.UNKNOWN, dtype=np.int8)
    cells[img == 0] = CellLabel.OCCUPIED
    cells[img == 255] = CellLabel.FREE
    meta = {}
    for line in path.with_name(path.name + ".txt").read_text(encoding="utf-8").splitlines():
        key, *vals = line.split()
        meta[key] = [float(v) for v in vals]
    return OccupancyGrid(meta["resolution"][0], np.array(meta["origin"]), cells)
