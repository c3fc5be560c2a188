"""Synthetic Manhattan floor plans and loop trajectories with simulated scans.

Stands in for the logged indoor datasets: a rectangular loop corridor with
rooms opening onto it, driven around more than once so that later windows
revisit earlier places.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .maps import PointsetMap, ScanLogEntry, window_log

SCAN_STEP_M = 0.5
BEAMS = 180
MAX_RANGE_M = 10.0
RANGE_NOISE_M = 0.01
DOOR_M = 1.0


@dataclass(frozen=True, eq=False)
class SynthWorld:
    """``maps`` carry clutter and dropout; ``clean_maps`` are the same windows
    without them (same ids and frames) and define ground-truth overlap."""

    name: str
    walls: np.ndarray  # (S, 4) world-frame segments x0 y0 x1 y1
    maps: list[PointsetMap]
    clean_maps: list[PointsetMap]
    loop_length: float
    path_length: float

    @property
    def poses(self) -> dict[str, tuple[float, float, float]]:
        return {m.id: m.anchor for m in self.maps}


def _wall_with_doors(p, q, doors):
    """Axis-aligned wall p->q with door intervals (along-wall offsets) removed."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    L = float(np.hypot(*(q - p)))
    u = (q - p) / L
    cuts, cursor = [], 0.0
    for a, b in sorted(doors):
        if a > cursor:
            cuts.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < L:
        cuts.append((cursor, L))
    return [(*(p + a * u), *(p + b * u)) for a, b in cuts if b - a > 1e-6]


def _floor_plan(rng: np.random.Generator, rooms: int):
    Lx = rng.uniform(11.0, 16.0)
    Ly = rng.uniform(6.0, 9.0)
    w = rng.uniform(0.9, 1.2)
    segs = []
    # corridor sides, counter-clockwise: (start, end, outward normal)
    sides = [
        ((-w, -w), (Lx + w, -w), (0.0, -1.0)),
        ((Lx + w, -w), (Lx + w, Ly + w), (1.0, 0.0)),
        ((Lx + w, Ly + w), (-w, Ly + w), (0.0, 1.0)),
        ((-w, Ly + w), (-w, -w), (-1.0, 0.0)),
    ]
    per_side = np.bincount(rng.integers(4, size=rooms), minlength=4)
    for (p, q, n), count in zip(sides, per_side):
        p, q, n = np.array(p), np.array(q), np.array(n)
        L = float(np.hypot(*(q - p)))
        u = (q - p) / L
        doors, cursor = [], rng.uniform(0.3, 1.5)
        for _ in range(count):
            width = rng.uniform(2.5, 4.5)
            depth = rng.uniform(2.5, 4.0)
            if cursor + width > L - 0.3:
                break
            a = p + cursor * u
            b = p + (cursor + width) * u
            segs += [(*a, *(a + depth * n)), (*(a + depth * n), *(b + depth * n)), (*(b + depth * n), *b)]
            door = cursor + rng.uniform(0.3, width - DOOR_M - 0.3)
            doors.append((door, door + DOOR_M))
            cursor += width + rng.uniform(0.0, 2.0)
        segs += _wall_with_doors(p, q, doors)

    # inner block, split once, with a door from the corridor into each part
    x_split = rng.uniform(0.35, 0.65) * (Lx - 2 * w) + w
    inner = [((w, w), (Lx - w, w)), ((Lx - w, w), (Lx - w, Ly - w)),
             ((Lx - w, Ly - w), (w, Ly - w)), ((w, Ly - w), (w, w))]
    span_left = x_split - w
    span_right = Lx - w - x_split
    bottom_doors = [(rng.uniform(0.3, span_left - DOOR_M - 0.3),)]
    top_off = rng.uniform(0.3, span_right - DOOR_M - 0.3)
    for k, (p, q) in enumerate(inner):
        doors = []
        if k == 0:
            d = bottom_doors[0][0]
            doors = [(d, d + DOOR_M)]
        elif k == 2:
            doors = [(top_off, top_off + DOOR_M)]
        segs += _wall_with_doors(p, q, doors)
    segs.append((x_split, w, x_split, Ly - w))
    centerline = np.array([(0.0, 0.0), (Lx, 0.0), (Lx, Ly), (0.0, Ly)])
    return np.array(segs, dtype=float), centerline


def _loop_point(centerline: np.ndarray, s: float):
    """Position and unit tangent at arc length ``s`` along the closed polyline."""
    pts = np.vstack([centerline, centerline[:1]])
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    s = s % lengths.sum()
    i = int(np.searchsorted(np.cumsum(lengths), s, side="right"))
    i = min(i, len(lengths) - 1)
    off = s - (np.cumsum(lengths)[i] - lengths[i])
    t = seg[i] / lengths[i]
    return pts[i] + off * t, t


def ray_cast(segments: np.ndarray, origin, angles: np.ndarray, max_range: float = MAX_RANGE_M) -> np.ndarray:
    """Range to the first wall along each beam; ``inf`` where nothing is hit."""
    o = np.asarray(origin, dtype=float)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    a = segments[:, :2]
    e = segments[:, 2:] - a
    ao = a - o
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]) / denom
        u = (ao[None, :, 0] * d[:, None, 1] - ao[None, :, 1] * d[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0) & (u <= 1) & (t <= max_range)
    t = np.where(ok, t, np.inf)
    return t.min(axis=1)


def _simulate(rng, segments, centerline, path_length, clutter, drop):
    loop = float(np.hypot(*np.diff(np.vstack([centerline, centerline[:1]]), axis=0).T).sum())
    s0 = rng.uniform(0.0, loop)
    lap_offsets = rng.uniform(-0.3, 0.3, size=int(math.ceil(path_length / loop)) + 1)
    beams = np.arange(BEAMS) * (2 * math.pi / BEAMS)
    clean_log, log = [], []
    n_scans = int(math.floor(path_length / SCAN_STEP_M + 1e-9)) + 1
    for j in range(n_scans):
        s = j * SCAN_STEP_M
        pos, tan = _loop_point(centerline, s0 + s)
        normal = np.array([-tan[1], tan[0]])
        lap = int((s0 + s) // loop - s0 // loop)
        lateral = lap_offsets[lap] + 0.1 * math.sin(2 * math.pi * (s0 + s) / 3.7)
        xy = pos + lateral * normal
        heading = math.atan2(tan[1], tan[0]) + rng.normal(0.0, math.radians(2.0))
        ranges = ray_cast(segments, xy, heading + beams)
        hit = np.isfinite(ranges)
        ranges = np.where(hit, ranges + rng.normal(0.0, RANGE_NOISE_M, size=ranges.shape), 0.0)
        pts = np.stack([ranges * np.cos(beams), ranges * np.sin(beams)], axis=1)
        clean_log.append(ScanLogEntry((*xy, heading), pts[hit], s))

        noisy = ranges.copy()
        # clutter occludes short runs of beams at a common range
        n_clutter = int(round(clutter * hit.sum()))
        done = 0
        while done < n_clutter:
            width = int(rng.integers(3, 9))
            start = int(rng.integers(BEAMS))
            idx = (start + np.arange(width)) % BEAMS
            idx = idx[hit[idx]][: n_clutter - done]
            if idx.size == 0:
                continue
            noisy[idx] = rng.uniform(0.4, 0.9) * noisy[idx].min()
            done += idx.size
        keep = hit & (rng.random(BEAMS) >= drop)
        npts = np.stack([noisy * np.cos(beams), noisy * np.sin(beams)], axis=1)
        log.append(ScanLogEntry((*xy, heading), npts[keep], s))
    return clean_log, log, loop


def synth_world(
    seed: int,
    rooms: int = 6,
    clutter: float = 0.0,
    drop: float = 0.0,
    revisit_m: float | None = 20.0,
    path_length: float | None = None,
    name: str | None = None,
    window_m: float = 5.0,
    stride_m: float = 1.0,
) -> SynthWorld:
    """Simulate one floor plan and window the drive into local maps.

    The drive covers one full loop plus ``revisit_m`` metres unless
    ``path_length`` is given. Identical arguments give identical output.
    """
    if rooms < 1:
        raise ValueError("rooms must be >= 1")
    if not (0 <= clutter < 1 and 0 <= drop < 1):
        raise ValueError("clutter and drop must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    segments, centerline = _floor_plan(rng, rooms)
    loop = float(2 * (centerline[1, 0] + centerline[2, 1]))
    if path_length is None:
        path_length = loop + (revisit_m or 0.0)
    name = name or f"synth{seed}"
    clean_log, log, loop = _simulate(rng, segments, centerline, path_length, clutter, drop)
    return SynthWorld(
        name=name,
        walls=segments,
        maps=window_log(log, window_m, stride_m, source=name),
        clean_maps=window_log(clean_log, window_m, stride_m, source=name),
        loop_length=loop,
        path_length=path_length,
    )


@dataclass(frozen=True, eq=False)
class TwoRoomTruth:
    theta: float
    box: tuple[float, float, float, float]  # rotated frame x0 y0 x1 y1
    axis: int  # 0: dividing wall at x = split, 1: at y = split
    split: float


def two_room_map(seed: int, spacing: float = 0.05, door: bool = True) -> tuple[PointsetMap, TwoRoomTruth]:
    """Noise-free points along the walls of a rectangle divided into two rooms.

    The layout is drawn in a frame rotated by a random θ and then rotated and
    translated into the map frame. Each room's center is recorded as a scan
    pose so the map can be rasterized.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x2200]))
    W, H = rng.uniform(4.0, 8.0), rng.uniform(3.0, 6.0)
    theta = float(rng.uniform(0.0, math.pi / 2))
    axis = int(rng.integers(2))
    split = float(rng.uniform(0.3, 0.7) * (W if axis == 0 else H))
    segs = [(0, 0, W, 0), (W, 0, W, H), (W, H, 0, H), (0, H, 0, 0)]
    length = H if axis == 0 else W
    doors = []
    if door:
        d = rng.uniform(0.3, length - DOOR_M - 0.3)
        doors = [(d, d + DOOR_M)]
    if axis == 0:
        segs += _wall_with_doors((split, 0.0), (split, H), doors)
    else:
        segs += _wall_with_doors((0.0, split), (W, split), doors)
    pts = []
    for x0, y0, x1, y1 in segs:
        L = math.hypot(x1 - x0, y1 - y0)
        t = np.linspace(0.0, 1.0, max(int(round(L / spacing)), 1) + 1)
        pts.append(np.stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)], axis=1))
    local = np.unique(np.round(np.vstack(pts), 12), axis=0)
    if axis == 0:
        centers = np.array([[split / 2, H / 2], [(split + W) / 2, H / 2]])
    else:
        centers = np.array([[W / 2, split / 2], [W / 2, (split + H) / 2]])
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    shift = rng.uniform(-5.0, 5.0, size=2)
    points = local @ R.T + shift
    poses = np.column_stack([centers @ R.T + shift, np.full(2, theta)])
    m = PointsetMap(f"tworoom-{seed:04d}", points, poses=poses, source="tworoom")
    return m, TwoRoomTruth(theta, (0.0, 0.0, W, H), axis, split)
