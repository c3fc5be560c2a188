"""Local map descriptors and the inverted file used to retrieve them."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicateMap, EmptyIndex, FormatError, TruthNotRanked
from .maps import PointsetMap, rotation
from .planning import Viewpoint
from .polestar import DEFAULT_MIN_SPACING, DEFAULT_RADII, appearance_codes, ring_counts, sample_keypoints

POSE_STEP = 0.1
DEFAULT_DXY = 3.0
INDEX_MAGIC = b"LMDX1"
BOW = "bow"
LMD = "lmd"
_POSTING = np.dtype([("doc", "<u4"), ("wx", "<i4"), ("wy", "<i4")])


@dataclass(frozen=True)
class PoseWord:
    wx: int
    wy: int

    def center(self, step: float = POSE_STEP) -> tuple[float, float]:
        return ((self.wx + 0.5) * step, (self.wy + 0.5) * step)


@dataclass(frozen=True)
class VisualWord:
    wx: int
    wy: int
    wa: int


@dataclass(frozen=True)
class FeatureConfig:
    radii: tuple[float, ...] = DEFAULT_RADII
    min_spacing: float = DEFAULT_MIN_SPACING
    step: float = POSE_STEP

    @property
    def D(self) -> int:
        return len(self.radii)

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "min_spacing": self.min_spacing, "step": self.step}


@dataclass(frozen=True, eq=False)
class LocalMapDescriptor:
    """Visual words ``(wx, wy, wa)`` as an ``(n, 3)`` integer array.

    ``keypoints`` keeps the map-frame location of each word, for drawing
    correspondences. In BoW mode every pose word is ``(0, 0)``.
    """

    map_id: str
    viewpoint: Viewpoint | None
    words: np.ndarray
    keypoints: np.ndarray
    strategy: str = BOW

    def __post_init__(self):
        object.__setattr__(self, "words", np.asarray(self.words, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "keypoints", np.asarray(self.keypoints, dtype=float).reshape(-1, 2))

    def __len__(self) -> int:
        return self.words.shape[0]

    @property
    def is_bow(self) -> bool:
        return self.strategy == BOW

    def visual_words(self) -> list[VisualWord]:
        return [VisualWord(int(x), int(y), int(a)) for x, y, a in self.words]


def quantize_poses(points: np.ndarray, viewpoint: Viewpoint, step: float = POSE_STEP) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    rel = (points - np.asarray(viewpoint.position)) @ rotation(viewpoint.orientation)
    # the nudge keeps exact multiples of the step (0.3 / 0.1) in their own cell
    return np.floor(rel / step + 1e-9).astype(np.int64)


def quantize_pose(point, viewpoint: Viewpoint, step: float = POSE_STEP) -> PoseWord:
    """Pose word of ``point`` in the viewpoint's frame (x along the view)."""
    wx, wy = quantize_poses(point, viewpoint, step)[0]
    return PoseWord(int(wx), int(wy))


def assemble(
    map_id: str,
    keypoints: np.ndarray,
    codes: np.ndarray,
    viewpoint: Viewpoint | None,
    step: float = POSE_STEP,
    strategy: str | None = None,
) -> LocalMapDescriptor:
    """Combine per-keypoint appearance codes with pose words.

    Keypoints whose code is negative (no neighbours in range) are dropped.
    ``viewpoint=None`` gives a BoW descriptor.
    """
    keep = np.asarray(codes) >= 0
    kps = np.asarray(keypoints, dtype=float).reshape(-1, 2)[keep]
    wa = np.asarray(codes, dtype=np.int64)[keep]
    if viewpoint is None:
        pose = np.zeros((kps.shape[0], 2), dtype=np.int64)
        strategy = BOW
    else:
        pose = quantize_poses(kps, viewpoint, step)
        strategy = strategy or viewpoint.strategy
    words = np.column_stack([pose, wa]) if kps.shape[0] else np.empty((0, 3), dtype=np.int64)
    return LocalMapDescriptor(map_id, viewpoint, words, kps, strategy)


def describe(
    map: PointsetMap,
    viewpoint: Viewpoint | None,
    config: FeatureConfig = FeatureConfig(),
) -> LocalMapDescriptor:
    """One visual word per keypoint that has neighbours within the rings."""
    kps = sample_keypoints(map, config.min_spacing)
    codes = appearance_codes(ring_counts(map.points, kps, config.radii))
    return assemble(map.id, kps, codes, viewpoint, config.step)


def rotate_pose_words(words: np.ndarray, k: int) -> np.ndarray:
    """Rotate pose-word cells by ``k`` quarter turns about the origin.

    Cell ``[wx, wx+1) x [wy, wy+1)`` maps exactly onto another cell.
    """
    wx, wy = words[:, 0], words[:, 1]
    k %= 4
    if k == 0:
        return np.column_stack([wx, wy])
    if k == 1:
        return np.column_stack([-wy - 1, wx])
    if k == 2:
        return np.column_stack([-wx - 1, -wy - 1])
    return np.column_stack([wy, -wx - 1])


def pose_limit(D_xy: float | None, step: float) -> int | None:
    """Largest admissible word difference, or None for no pose filter."""
    if D_xy is None or math.isinf(D_xy):
        return None
    return int(math.floor(D_xy / step + 1e-9))


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    ranking: tuple[tuple[str, int], ...]

    def rank_of(self, map_id: str) -> int:
        for i, (mid, _) in enumerate(self.ranking):
            if mid == map_id:
                return i + 1
        raise TruthNotRanked(f"{map_id!r} not in ranking for {self.query_id!r}")

    def to_dict(self) -> dict:
        return {"query": self.query_id, "ranking": [{"map": m, "score": s} for m, s in self.ranking]}


def anr_rank(result: RetrievalResult, truth_id: str, db_size: int) -> float:
    """Normalized rank: 1-based rank of ``truth_id`` divided by ``db_size``."""
    return result.rank_of(truth_id) / db_size


@dataclass
class InvertedIndex:
    """Appearance word -> postings ``(map_id, wx, wy)``.

    Single writer; once built, queries only read. In LMD mode a posting
    matches a query word when both pose offsets are within ``D_xy`` metres;
    with ``four_fold`` the query is also tried under three quarter turns and
    each map keeps its best count.
    """

    D_xy: float | None = DEFAULT_DXY
    mode: str = LMD
    step: float = POSE_STEP
    D: int = 10
    four_fold: bool = True
    meta: dict = field(default_factory=dict)
    _postings: dict = field(default_factory=dict, repr=False)
    _ids: list = field(default_factory=list, repr=False)
    _known: set = field(default_factory=set, repr=False)
    _frozen: dict | None = field(default=None, repr=False)

    @property
    def doc_count(self) -> int:
        return len(self._ids)

    @property
    def map_ids(self) -> list[str]:
        return sorted(self._ids)

    def insert(self, d: LocalMapDescriptor) -> InvertedIndex:
        if d.map_id in self._known:
            raise DuplicateMap(f"map {d.map_id!r} already indexed")
        self._known.add(d.map_id)
        self._ids.append(d.map_id)
        for wx, wy, wa in d.words.tolist():
            self._postings.setdefault(wa, []).append((d.map_id, wx, wy))
        self._frozen = None
        return self

    def postings(self, wa: int) -> list[tuple[str, int, int]]:
        return sorted(self._postings.get(wa, []))

    def posting_count(self) -> int:
        return sum(len(v) for v in self._postings.values())

    def histogram(self, map_id: str) -> np.ndarray:
        """Frequency of each of the 2^D appearance words in one map."""
        h = np.zeros(1 << self.D, dtype=np.int64)
        for wa, plist in self._postings.items():
            h[wa] += sum(1 for m, _, _ in plist if m == map_id)
        return h

    def _freeze(self) -> dict:
        if self._frozen is None:
            ids = self.map_ids
            doc = {m: i for i, m in enumerate(ids)}
            frozen = {}
            for wa, plist in self._postings.items():
                arr = np.array([(doc[m], x, y) for m, x, y in sorted(plist)], dtype=np.int64)
                frozen[wa] = arr.reshape(-1, 3)
            keys = sorted(frozen)
            flat = np.concatenate([frozen[k] for k in keys]) if keys else np.zeros((0, 3), np.int64)
            codes = np.repeat(np.array(keys, dtype=np.int64), [len(frozen[k]) for k in keys])
            self._frozen = {"ids": ids, "postings": frozen, "flat": flat, "codes": codes}
        return self._frozen

    def scores(self, q: LocalMapDescriptor, mode: str | None = None, candidates=None) -> dict[str, int]:
        """Matched-word count for every indexed map, or only for ``candidates``."""
        mode = mode or self.mode
        frozen = self._freeze()
        ids, flat, codes = frozen["ids"], frozen["flat"], frozen["codes"]
        n_docs = len(ids)
        limit = None if mode == BOW else pose_limit(self.D_xy, self.step)
        rotations = (0, 1, 2, 3) if (mode == LMD and self.four_fold and limit is not None) else (0,)
        words = q.words
        # every (query word, posting) pair sharing an appearance word
        lo = np.searchsorted(codes, words[:, 2], side="left")
        hi = np.searchsorted(codes, words[:, 2], side="right")
        counts = hi - lo
        qi = np.repeat(np.arange(words.shape[0]), counts)
        offsets = np.arange(qi.size) - np.repeat(np.cumsum(counts) - counts, counts)
        pj = lo[qi] + offsets
        docs = flat[pj, 0]
        keep_ids = ids
        if candidates is not None:
            wanted = set(candidates)
            mask = np.array([m in wanted for m in ids], dtype=bool)
            sel = mask[docs]
            qi, pj, docs = qi[sel], pj[sel], docs[sel]
            keep_ids = [m for m in ids if m in wanted]
        px, py = flat[pj, 1], flat[pj, 2]
        key = qi * n_docs + docs
        best = np.zeros(n_docs, dtype=np.int64)
        for k in rotations:
            hit = np.zeros(words.shape[0] * n_docs, dtype=bool)
            if limit is None:
                hit[key] = True
            else:
                pose = rotate_pose_words(words, k)
                ok = np.abs(pose[qi, 0] - px) <= limit
                ok &= np.abs(pose[qi, 1] - py) <= limit
                hit[key[ok]] = True
            # a query word counts at most once per map
            np.maximum(best, hit.reshape(words.shape[0], n_docs).sum(axis=0), out=best)
        if candidates is None:
            return dict(zip(ids, best.tolist()))
        keep = set(keep_ids)
        return {m: int(best[i]) for i, m in enumerate(ids) if m in keep}

    def query(
        self,
        q: LocalMapDescriptor,
        top_k: int | None = None,
        mode: str | None = None,
        candidates=None,
    ) -> RetrievalResult:
        """Rank indexed maps by matched-word count, ties by map id.

        ``candidates`` restricts the ranking to a subset of the index, which
        ranks exactly as an index holding only that subset would.
        """
        if self.doc_count == 0:
            raise EmptyIndex("query on an empty index")
        scores = self.scores(q, mode, candidates)
        ranking = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        if top_k is not None:
            ranking = ranking[:top_k]
        return RetrievalResult(q.map_id, tuple(ranking))

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """``LMDX1``, u32 header length, JSON header, then per appearance word
        (ascending) u32 code, u32 count and ``count`` (u32 doc, i32 wx, i32 wy)
        records, all little-endian."""
        frozen = self._freeze()
        header = {
            "D": self.D,
            "q": self.step,
            "D_xy": None if self.D_xy is None or math.isinf(self.D_xy) else self.D_xy,
            "mode": self.mode,
            "doc_count": self.doc_count,
            "four_fold": self.four_fold,
            "maps": frozen["ids"],
            "meta": self.meta,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [INDEX_MAGIC, struct.pack("<I", len(blob)), blob]
        for wa in sorted(frozen["postings"]):
            arr = frozen["postings"][wa]
            rec = np.zeros(arr.shape[0], dtype=_POSTING)
            rec["doc"], rec["wx"], rec["wy"] = arr[:, 0], arr[:, 1], arr[:, 2]
            parts.append(struct.pack("<II", wa, arr.shape[0]))
            parts.append(rec.tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> InvertedIndex:
        data = Path(path).read_bytes()
        if not data.startswith(INDEX_MAGIC):
            raise FormatError(f"{path}: not an LMDX1 index")
        pos = len(INDEX_MAGIC)
        (hlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        idx = cls(
            D_xy=math.inf if header["D_xy"] is None else header["D_xy"],
            mode=header["mode"],
            step=header["q"],
            D=header["D"],
            four_fold=header.get("four_fold", True),
            meta=header.get("meta", {}),
        )
        ids = header["maps"]
        idx._ids = list(ids)
        idx._known = set(ids)
        while pos < len(data):
            wa, count = struct.unpack_from("<II", data, pos)
            pos += 8
            rec = np.frombuffer(data, dtype=_POSTING, count=count, offset=pos)
            pos += count * _POSTING.itemsize
            idx._postings[wa] = [(ids[d], int(x), int(y)) for d, x, y in rec.tolist()]
        if len(ids) != header["doc_count"]:
            raise FormatError(f"{path}: doc_count does not match map list")
        return idx


def index_insert(idx: InvertedIndex, d: LocalMapDescriptor) -> InvertedIndex:
    return idx.insert(d)


def query(idx: InvertedIndex, q: LocalMapDescriptor, top_k: int | None = None, **kw) -> RetrievalResult:
    return idx.query(q, top_k, **kw)


def match_words(
    q: LocalMapDescriptor,
    d: LocalMapDescriptor,
    D_xy: float | None = DEFAULT_DXY,
    mode: str = LMD,
    step: float = POSE_STEP,
    four_fold: bool = True,
) -> list[tuple[int, int]]:
    """Word correspondences ``(query_word, db_word)`` for drawing.

    Uses the rotation with the most matches; each query word is paired with
    its closest compatible database word in pose-word space.
    """
    limit = None if mode == BOW else pose_limit(D_xy, step)
    rotations = (0, 1, 2, 3) if (mode == LMD and four_fold and limit is not None) else (0,)
    best: list[tuple[int, int]] = []
    for k in rotations:
        qp = rotate_pose_words(q.words, k)
        pairs = []
        for i in range(q.words.shape[0]):
            same = np.nonzero(d.words[:, 2] == q.words[i, 2])[0]
            if same.size == 0:
                continue
            dx = np.abs(d.words[same, 0] - qp[i, 0])
            dy = np.abs(d.words[same, 1] - qp[i, 1])
            if limit is not None:
                ok = (dx <= limit) & (dy <= limit)
                same, dx, dy = same[ok], dx[ok], dy[ok]
                if same.size == 0:
                    continue
            pairs.append((i, int(same[int(np.argmin(np.maximum(dx, dy)))])))
        if len(pairs) > len(best):
            best = pairs
    return best
