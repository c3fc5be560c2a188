"""Manhattan-world scene parsing by stochastic hypothesize-and-verify.

A parse starts from one room spanning the θ-aligned bounding box of the map,
splits rooms N times along the best of H candidate lines, then turns every
room into four walls. The policy explaining the largest share of points over
K random trials wins.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateMap
from .maps import PointsetMap, rotation

DEFAULT_K = 100
DEFAULT_N = 16
DEFAULT_H = 20
DEFAULT_EPSILON = 0.1
NEIGHBOR_RADIUS = 0.5
MAX_RESAMPLE = 10
_ORIENTATION_SAMPLE = 1500
HALF_PI = 0.5 * math.pi


class Rule(enum.Enum):
    INIT_WORLD = "R1"  # O -> M(theta)*
    WORLD_TO_ROOMS = "R2"  # M(theta) -> R*
    SPLIT_VERTICAL = "R3"  # R -> R R, cut at x = x_m
    SPLIT_HORIZONTAL = "R4"  # R -> R R, cut at y = y_m
    ROOM_TO_WALLS = "R5"  # R -> W W W W


@dataclass(frozen=True)
class Grammar:
    nonterminals: tuple[str, ...] = ("ManhattanWorld", "Room")
    terminals: tuple[str, ...] = ("Wall",)
    rules: tuple[Rule, ...] = tuple(Rule)
    start: str = "O"


GRAMMAR = Grammar()


@dataclass(frozen=True)
class Room:
    """Axis-aligned rectangle in the θ-rotated frame."""

    x_s: float
    y_s: float
    x_e: float
    y_e: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.x_s < self.x_e and self.y_s < self.y_e):
            raise ValueError(f"empty room {self}")

    @property
    def area(self) -> float:
        return (self.x_e - self.x_s) * (self.y_e - self.y_s)

    def split(self, rule: Rule, at: float) -> tuple[Room, Room]:
        if rule is Rule.SPLIT_VERTICAL:
            return (Room(self.x_s, self.y_s, at, self.y_e, self.theta),
                    Room(at, self.y_s, self.x_e, self.y_e, self.theta))
        if rule is Rule.SPLIT_HORIZONTAL:
            return (Room(self.x_s, self.y_s, self.x_e, at, self.theta),
                    Room(self.x_s, at, self.x_e, self.y_e, self.theta))
        raise ValueError(f"{rule} does not split rooms")

    def wall_corners(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        """Rule R5: bottom, right, top and left sides, rotated-frame endpoints."""
        a, b, c, d = self.x_s, self.y_s, self.x_e, self.y_e
        return [((a, b), (c, b)), ((c, b), (c, d)), ((c, d), (a, d)), ((a, d), (a, b))]


@dataclass(frozen=True)
class WallSegment:
    start: tuple[float, float]
    end: tuple[float, float]
    parent_room: int = -1

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class RuleApplication:
    rule: Rule
    room: int | None = None
    position: float | None = None


@dataclass(frozen=True)
class ParsePolicy:
    rules: tuple[RuleApplication, ...]

    @property
    def N(self) -> int:
        """Number of split rules in the sequence."""
        return sum(r.rule in (Rule.SPLIT_VERTICAL, Rule.SPLIT_HORIZONTAL) for r in self.rules)


@dataclass(frozen=True, eq=False)
class ParseResult:
    theta: float
    rooms: tuple[Room, ...]
    walls: tuple[WallSegment, ...]
    score: float
    explained: frozenset[int]
    policy: ParsePolicy | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "score": self.score,
            "rooms": [[r.x_s, r.y_s, r.x_e, r.y_e] for r in self.rooms],
            "walls": [
                {"start": list(w.start), "end": list(w.end), "room": w.parent_room}
                for w in self.walls
            ],
        }


def fold_angle(theta: float) -> float:
    """Fold an angle into [0, π/2)."""
    t = math.fmod(theta, HALF_PI)
    if t < 0:
        t += HALF_PI
    if t >= HALF_PI:
        t = 0.0
    return t


def dominant_orientation(map: PointsetMap, radius: float = NEIGHBOR_RADIUS) -> float:
    """Dominant Manhattan direction in [0, π/2).

    Directions of all point pairs closer than ``radius`` are folded modulo 90°
    and voted into 1° bins centred on whole degrees. The winning bin is
    refined by the circular mean (period 90°) of the directions inside it.
    """
    pts = map.points
    if pts.shape[0] < 2:
        raise DegenerateMap("need at least two points")
    if pts.shape[0] > _ORIENTATION_SAMPLE:
        pts = pts[np.linspace(0, pts.shape[0] - 1, _ORIENTATION_SAMPLE).astype(np.int64)]
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if pairs.shape[0] == 0:
        raise DegenerateMap("no neighbouring points within the orientation radius")
    d = pts[pairs[:, 1]] - pts[pairs[:, 0]]
    ang = np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 90.0
    bins = np.rint(ang).astype(np.int64) % 90
    hist = np.bincount(bins, minlength=90)
    peak = int(np.argmax(hist))
    inside = bins == peak
    quad = np.radians(ang[inside]) * 4.0
    mean = math.atan2(np.sin(quad).sum(), np.cos(quad).sum()) / 4.0
    return fold_angle(mean)


def score_wall(wall: WallSegment, map: PointsetMap, epsilon: float = DEFAULT_EPSILON):
    """Points within ``epsilon`` of the wall's line and of its extent.

    Returns ``(count, explained_indices)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a = np.asarray(wall.start, dtype=float)
    b = np.asarray(wall.end, dtype=float)
    d = b - a
    L = float(np.hypot(*d))
    rel = map.points - a
    if L == 0.0:
        hit = np.hypot(rel[:, 0], rel[:, 1]) <= epsilon
    else:
        u = d / L
        along = rel @ u
        perp = np.abs(rel[:, 0] * u[1] - rel[:, 1] * u[0])
        hit = (perp <= epsilon) & (along >= -epsilon) & (along <= L + epsilon)
    idx = np.nonzero(hit)[0]
    return int(idx.size), frozenset(int(i) for i in idx)


def _explained_by_rooms(q, rooms, epsilon):
    b = np.array([[r.x_s, r.y_s, r.x_e, r.y_e] for r in rooms])[:, :, None]
    x, y = q[None, :, 0], q[None, :, 1]
    in_x = (x >= b[:, 0] - epsilon) & (x <= b[:, 2] + epsilon)
    in_y = (y >= b[:, 1] - epsilon) & (y <= b[:, 3] + epsilon)
    on_h = (np.abs(y - b[:, 1]) <= epsilon) | (np.abs(y - b[:, 3]) <= epsilon)
    on_v = (np.abs(x - b[:, 0]) <= epsilon) | (np.abs(x - b[:, 2]) <= epsilon)
    return ((in_x & on_h) | (in_y & on_v)).any(axis=0)


def _presort(q):
    """Per axis: coordinates sorted along it, the other coordinate alongside
    and the sort order."""
    out = []
    for axis in (0, 1):
        order = np.argsort(q[:, axis], kind="stable")
        out.append((q[order, axis], q[order, 1 - axis], order))
    return out


def _best_split(rng, sorted_q, room, axis, H, epsilon, proposal, hit=None):
    """Best of H cut positions for ``room`` along ``axis``, or None.

    ``axis`` 0 cuts with a vertical line x = c (rule R3), 1 with y = c (R4).
    A candidate scores the points within ``epsilon`` of the new wall that no
    earlier wall explains (all of them when ``hit`` is None).
    """
    margin = 2.0 * epsilon
    if axis == 0:
        lo, hi, olo, ohi = room.x_s + margin, room.x_e - margin, room.y_s, room.y_e
    else:
        lo, hi, olo, ohi = room.y_s + margin, room.y_e - margin, room.x_s, room.x_e
    if hi <= lo:
        return None
    vals, other, order = sorted_q[axis]
    inside = (other >= olo - epsilon) & (other <= ohi + epsilon)
    if hit is not None:
        fresh = inside & ~hit[order]
        if fresh.any():
            inside = fresh
    near = vals[inside]
    cand = None
    if proposal == "data":
        a, b = near.searchsorted(lo, side="right"), near.searchsorted(hi, side="left")
        if b > a:
            cand = near[a + rng.integers(b - a, size=H)]
    if cand is None:
        cand = rng.uniform(lo, hi, size=H)
    hits = near.searchsorted(cand + epsilon, side="right") - near.searchsorted(cand - epsilon, side="left")
    return float(cand[int(np.argmax(hits))])


def _near_line(q, axis, at, lo, hi, epsilon):
    """Points within ``epsilon`` of the segment {axis = at, other in [lo, hi]}."""
    other = q[:, 1 - axis]
    return (np.abs(q[:, axis] - at) <= epsilon) & (other >= lo - epsilon) & (other <= hi + epsilon)


def _root_room(q, theta, epsilon) -> Room:
    lo, hi = q.min(axis=0), q.max(axis=0)
    # a flat point set still needs a proper rectangle
    hi = np.where(hi - lo < 1e-9, lo + epsilon, hi)
    return Room(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]), theta)


def _to_map_frame(theta, rooms):
    R = rotation(theta)
    walls = []
    for i, room in enumerate(rooms):
        for s, e in room.wall_corners():
            ms, me = R @ np.array(s), R @ np.array(e)
            walls.append(WallSegment((float(ms[0]), float(ms[1])), (float(me[0]), float(me[1])), i))
    return tuple(walls)


def _grow(q, root, N, H, rng, epsilon, proposal, sorted_q=None):
    sorted_q = sorted_q if sorted_q is not None else _presort(q)
    rooms = [root]
    rules = [RuleApplication(Rule.INIT_WORLD, position=root.theta), RuleApplication(Rule.WORLD_TO_ROOMS, room=0)]
    # every room side lies on the root outline or on an earlier cut, so the
    # explained set is the root's plus one strip per cut
    hit = _explained_by_rooms(q, [root], epsilon)
    # room holding each point; split rooms are drawn in proportion to
    # 1 + their unexplained points so cuts go where walls are missing
    owner = np.zeros(q.shape[0], dtype=np.int64)
    for _ in range(N):
        cdf = np.cumsum(1.0 + np.bincount(owner[~hit], minlength=len(rooms)))
        for _attempt in range(MAX_RESAMPLE):
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(rooms) - 1)
            axis = int(rng.integers(2))
            at = _best_split(rng, sorted_q, rooms[i], axis, H, epsilon, proposal, hit)
            if at is None:
                continue
            room = rooms[i]
            lo, hi = (room.y_s, room.y_e) if axis == 0 else (room.x_s, room.x_e)
            hit |= _near_line(q, axis, at, lo, hi, epsilon)
            rule = Rule.SPLIT_VERTICAL if axis == 0 else Rule.SPLIT_HORIZONTAL
            rooms[i], new = room.split(rule, at)
            owner[(owner == i) & (q[:, axis] > at)] = len(rooms)
            rooms.append(new)
            rules.append(RuleApplication(rule, room=i, position=at))
            break
    rules.extend(RuleApplication(Rule.ROOM_TO_WALLS, room=i) for i in range(len(rooms)))
    return ParsePolicy(tuple(rules)), rooms, hit


def _result(theta, policy, rooms, hit) -> ParseResult:
    return ParseResult(
        theta=theta,
        rooms=tuple(rooms),
        walls=_to_map_frame(theta, rooms),
        score=int(hit.sum()) / hit.shape[0],
        explained=frozenset(np.nonzero(hit)[0].tolist()),
        policy=policy,
    )


def _prepare(map, theta, N, H, epsilon):
    if N < 0 or H < 1:
        raise ValueError("N must be >= 0 and H >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if map.points.shape[0] == 0:
        raise DegenerateMap("empty map")
    q = map.points @ rotation(theta)  # rows are R(-theta) p
    return q, _root_room(q, theta, epsilon)


def hypothesize_policy(
    map: PointsetMap,
    theta: float,
    N: int = DEFAULT_N,
    H: int = DEFAULT_H,
    rng: np.random.Generator | int | None = None,
    epsilon: float = DEFAULT_EPSILON,
    proposal: str = "data",
) -> tuple[ParsePolicy, ParseResult]:
    """One random policy: N best-of-H splits, then every room to four walls.

    Each split draws a room with probability proportional to one plus the
    points inside it that no wall explains yet, and a direction uniformly.
    Of H candidate lines the one explaining most new points wins. With
    ``proposal="data"`` candidates pass through unexplained points inside
    the room, otherwise they are uniform over the room interior (2·epsilon
    away from its sides).
    Rooms too small to split are resampled up to ten times before the step
    is skipped.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    q, root = _prepare(map, theta, N, H, epsilon)
    policy, rooms, hit = _grow(q, root, N, H, rng, epsilon, proposal)
    return policy, _result(theta, policy, rooms, hit)


def policy_seeds(seed, K: int) -> list[np.random.SeedSequence]:
    """Per-hypothesis seeds; hypothesis i's seed does not depend on K."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,)) for i in range(K)]


def parse_map(
    map: PointsetMap,
    K: int = DEFAULT_K,
    N: int = DEFAULT_N,
    H: int = DEFAULT_H,
    epsilon: float = DEFAULT_EPSILON,
    seed=0,
    theta: float | None = None,
    proposal: str = "data",
) -> ParseResult:
    """Best of K random policies; ties keep the lowest hypothesis index."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if theta is None:
        theta = dominant_orientation(map)
    q, root = _prepare(map, theta, N, H, epsilon)
    sorted_q = _presort(q)
    best, best_count = None, -1
    for child in policy_seeds(seed, K):
        policy, rooms, hit = _grow(q, root, N, H, np.random.default_rng(child), epsilon, proposal, sorted_q)
        count = int(hit.sum())
        if count > best_count:
            best, best_count = (policy, rooms, hit), count
    return _result(theta, *best)
