"""Retrieval experiments: relevant pairs, distractor databases and ANR."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientDistractors
from .index import BOW, LMD, DEFAULT_DXY, InvertedIndex, anr_rank
from .maps import PointsetMap, transform_points
from .pipeline import ALL_STRATEGIES, MapAnalysis, PipelineConfig, analyze
from .synth import SynthWorld, synth_world

log = logging.getLogger(__name__)

R_OVERLAP = 0.75
R_OVERLAP_DISSIMILAR = 0.50
OVERLAP_RADIUS = 0.1
MIN_SEPARATION_M = 10.0
DISTRACTOR_MAX_OVERLAP = 0.1
HIST_BIN_M = 1.0
HIST_MAX_M = 20.0
ORACLE = "oracle"
RANDOM = "random"


@dataclass(frozen=True)
class RelevantPair:
    query_id: str
    truth_id: str
    overlap: float
    path_separation: float


def _directed_overlap(a: np.ndarray, b, radius: float) -> float:
    """``b`` may be a point array or a prebuilt tree."""
    tree = b if isinstance(b, cKDTree) else cKDTree(b) if len(b) else None
    if a.shape[0] == 0 or tree is None or tree.n == 0:
        return 0.0
    # the bound is exclusive; nudge it so points at exactly ``radius`` count
    d, _ = tree.query(a, k=1, distance_upper_bound=np.nextafter(radius, np.inf))
    return float(np.count_nonzero(d <= radius)) / a.shape[0]


def overlap(a: PointsetMap, b: PointsetMap, radius: float = OVERLAP_RADIUS, symmetric: bool = False) -> float:
    """Share of ``a``'s points with a point of ``b`` within ``radius``.

    Both maps are placed by their anchors (ground truth). ``symmetric`` takes
    the smaller of the two directions.
    """
    pa, pb = a.world_points(), b.world_points()
    forward = _directed_overlap(pa, pb, radius)
    if not symmetric:
        return forward
    return min(forward, _directed_overlap(pb, pa, radius))


class _OverlapTable:
    """Symmetric overlaps between maps that share a source, computed lazily."""

    def __init__(self, maps: Sequence[PointsetMap], radius: float):
        self.maps = {m.id: m for m in maps}
        self.radius = radius
        self._pts = {m.id: m.world_points() for m in maps}
        self._box = {
            k: (p.min(axis=0) - radius, p.max(axis=0) + radius) if len(p) else None
            for k, p in self._pts.items()
        }
        self._cache: dict[tuple[str, str], float] = {}
        self._trees: dict[str, cKDTree] = {}

    def _tree(self, i: str) -> cKDTree:
        if i not in self._trees:
            self._trees[i] = cKDTree(self._pts[i])
        return self._trees[i]

    def __call__(self, i: str, j: str) -> float:
        key = (i, j) if i < j else (j, i)
        if key in self._cache:
            return self._cache[key]
        a, b = self.maps[i], self.maps[j]
        value = 0.0
        ba, bb = self._box[i], self._box[j]
        if a.source == b.source and ba is not None and bb is not None:
            if np.all(ba[0] <= bb[1]) and np.all(bb[0] <= ba[1]):
                pa, pb = self._pts[i], self._pts[j]
                value = min(
                    _directed_overlap(pa, self._tree(j), self.radius),
                    _directed_overlap(pb, self._tree(i), self.radius),
                )
        self._cache[key] = value
        return value


def find_relevant_pairs(
    maps: Sequence[PointsetMap],
    R_overlap: float = R_OVERLAP,
    min_separation: float = MIN_SEPARATION_M,
    radius: float = OVERLAP_RADIUS,
) -> list[RelevantPair]:
    """All ordered pairs from one source with symmetric overlap at least
    ``R_overlap`` and path positions at least ``min_separation`` apart."""
    table = _OverlapTable(maps, radius)
    pairs = []
    for a in maps:
        for b in maps:
            if a.id == b.id or a.source != b.source:
                continue
            sep = abs(a.path_position - b.path_position)
            if sep < min_separation:
                continue
            ov = table(a.id, b.id)
            if ov >= R_overlap:
                pairs.append(RelevantPair(a.id, b.id, ov, sep))
    return pairs


@dataclass(eq=False)
class Benchmark:
    """Maps to index, the relevant pairs among them and an overlap lookup."""

    name: str
    maps: list[PointsetMap]
    pairs: list[RelevantPair]
    worlds: list[SynthWorld] = field(default_factory=list)
    overlap: _OverlapTable | None = None


def build_benchmark(
    seed: int,
    rooms: int = 6,
    clutter: float = 0.2,
    drop: float = 0.2,
    db_size: int = 100,
    R_overlap: float = R_OVERLAP,
    min_separation: float = MIN_SEPARATION_M,
    revisit_m: float = 20.0,
    slack: int = 5,
) -> Benchmark:
    """One looped world plus distractor-only worlds, added until every query
    has at least ``db_size - 1 + slack`` unrelated maps to draw from.

    Relevance is judged on the clutter-free windows so that transient clutter
    does not decide ground truth.
    """
    main = synth_world(seed, rooms, clutter, drop, revisit_m=revisit_m, name=f"synth{seed}")
    pairs = find_relevant_pairs(main.clean_maps, R_overlap, min_separation)
    table = _OverlapTable(main.clean_maps, OVERLAP_RADIUS)
    queries = sorted({p.query_id for p in pairs})
    ids = [m.id for m in main.clean_maps]
    # maps of the looped world usable as distractors for the worst-off query
    own = min(
        (sum(1 for j in ids if j != q and table(q, j) < DISTRACTOR_MAX_OVERLAP) - 1 for q in queries),
        default=0,
    )
    worlds = [main]
    k = 0
    while own + sum(len(w.maps) for w in worlds[1:]) < db_size - 1 + slack:
        k += 1
        worlds.append(
            synth_world(seed * 1000 + k, rooms, clutter, drop, revisit_m=0.0, name=f"synth{seed}d{k}")
        )
    clean = [m for w in worlds for m in w.clean_maps]
    maps = [m for w in worlds for m in w.maps]
    return Benchmark(f"synth{seed}", maps, pairs, worlds, _OverlapTable(clean, OVERLAP_RADIUS))


@dataclass
class ExperimentReport:
    strategies: list[str]
    db_size: int
    pairs: list[RelevantPair]
    ranks: dict[str, list[float]]
    viewpoint_errors: dict[str, list[float]]
    dataset: list[str]
    config: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    @property
    def anr(self) -> dict[str, float]:
        return {s: float(np.mean(r)) if r else math.nan for s, r in self.ranks.items()}

    def anr_by_dataset(self) -> dict[tuple[str, str], tuple[float, int]]:
        out = {}
        for s, ranks in self.ranks.items():
            by: dict[str, list[float]] = {}
            for name, r in zip(self.dataset, ranks):
                by.setdefault(name, []).append(r)
            for name in sorted(by):
                out[(s, name)] = (float(np.mean(by[name])), len(by[name]))
            out[(s, "avg")] = (float(np.mean(ranks)) if ranks else math.nan, len(ranks))
        return out

    def histogram(self, strategy: str) -> dict:
        edges = np.arange(0.0, HIST_MAX_M + HIST_BIN_M, HIST_BIN_M)
        errs = np.asarray(self.viewpoint_errors.get(strategy, []), dtype=float)
        counts, _ = np.histogram(np.minimum(errs, HIST_MAX_M - 1e-9), bins=edges)
        return {"edges": edges.tolist(), "counts": counts.tolist()}

    def within(self, strategy: str, metres: float) -> float:
        errs = np.asarray(self.viewpoint_errors.get(strategy, []), dtype=float)
        return float(np.mean(errs <= metres)) if errs.size else math.nan

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "config": self.config,
            "db_size": self.db_size,
            "strategies": self.strategies,
            "anr": self.anr,
            "tasks": [
                {"query": p.query_id, "truth": p.truth_id, "overlap": p.overlap,
                 "path_separation": p.path_separation, "dataset": name}
                for p, name in zip(self.pairs, self.dataset)
            ],
            "normalized_ranks": self.ranks,
            "viewpoint_errors": self.viewpoint_errors,
            "viewpoint_error_histogram": {s: self.histogram(s) for s in self.viewpoint_errors},
            "viewpoint_within_5m": {s: self.within(s, 5.0) for s in self.viewpoint_errors},
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return d

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "dataset", "anr_percent", "queries"])
        for (s, name), (value, n) in self.anr_by_dataset().items():
            w.writerow([s, name, f"{100.0 * value:.2f}", n])
        return buf.getvalue()


def analyze_all(maps: Iterable[PointsetMap], config: PipelineConfig, strategies) -> dict[str, MapAnalysis]:
    return {m.id: analyze(m, config, strategies) for m in maps}


def _world_position(m: PointsetMap, xy) -> np.ndarray:
    if m.anchor is None:
        return np.asarray(xy, dtype=float)
    return transform_points(m.anchor, np.asarray(xy, dtype=float))[0]


def run_experiment(
    maps: Sequence[PointsetMap],
    pairs: Sequence[RelevantPair],
    strategies: Sequence[str] = ALL_STRATEGIES,
    distractors: int = 99,
    seed: int = 0,
    config: PipelineConfig = PipelineConfig(),
    D_xy: float = DEFAULT_DXY,
    overlap_fn=None,
    distractor_max_overlap: float = DISTRACTOR_MAX_OVERLAP,
    distractor_only: Iterable[str] = (),
    analyses: dict[str, MapAnalysis] | None = None,
    dataset: str | Sequence[str] = "synth",
) -> ExperimentReport:
    """Query each pair's map against its truth plus ``distractors`` random
    unrelated maps, once per strategy.

    Distractors are drawn without replacement from maps that are neither the
    query nor the truth and overlap the query by less than
    ``distractor_max_overlap``. Maps listed in ``distractor_only`` never act
    as queries. ``oracle`` and ``random`` are accepted as reference
    retrievers.
    """
    if not pairs:
        raise ValueError("run_experiment needs at least one relevant pair")
    t0 = time.perf_counter()
    by_id = {m.id: m for m in maps}
    excluded = set(distractor_only)
    pairs = [p for p in pairs if p.query_id not in excluded]
    real = [s for s in strategies if s not in (ORACLE, RANDOM)]
    if overlap_fn is None:
        overlap_fn = _OverlapTable(list(maps), OVERLAP_RADIUS)

    ids = [m.id for m in maps]
    tasks = []
    for t, pair in enumerate(pairs):
        pool = [
            j for j in ids
            if j not in (pair.query_id, pair.truth_id) and overlap_fn(pair.query_id, j) < distractor_max_overlap
        ]
        if len(pool) < distractors:
            raise InsufficientDistractors(
                f"{pair.query_id}: {len(pool)} unrelated maps, {distractors} needed"
            )
        rng = np.random.default_rng([int(seed), t])
        chosen = rng.choice(len(pool), size=distractors, replace=False)
        tasks.append(([pool[i] for i in sorted(chosen.tolist())] + [pair.truth_id], rng))

    # only maps that take part in some task are analyzed and indexed
    needed = {p.query_id for p in pairs} | {j for db, _ in tasks for j in db}
    analyses = dict(analyses or {})
    for m in maps:
        if m.id in needed and m.id not in analyses:
            analyses[m.id] = analyze(m, config, real)
    t1 = time.perf_counter()
    indexes = {}
    for s in real:
        idx = InvertedIndex(D_xy=D_xy, mode=BOW if s == BOW else LMD, step=config.features.step)
        for m in maps:
            if m.id in needed:
                idx.insert(analyses[m.id].descriptor(s))
        indexes[s] = idx

    names = [dataset] * len(pairs) if isinstance(dataset, str) else list(dataset)
    ranks = {s: [] for s in strategies}
    errors = {s: [] for s in real if s != BOW}
    for pair, (db, rng) in zip(pairs, tasks):
        n = len(db)
        for s in strategies:
            if s == ORACLE:
                ranks[s].append(1.0 / n)
                continue
            if s == RANDOM:
                order = rng.permutation(db).tolist()
                ranks[s].append((order.index(pair.truth_id) + 1) / n)
                continue
            q = analyses[pair.query_id].descriptor(s)
            result = indexes[s].query(q, candidates=db)
            ranks[s].append(anr_rank(result, pair.truth_id, n))
        for s in errors:
            qa, ta = analyses[pair.query_id], analyses[pair.truth_id]
            pq = _world_position(by_id[pair.query_id], qa.viewpoints[s].position)
            pt = _world_position(by_id[pair.truth_id], ta.viewpoints[s].position)
            errors[s].append(float(np.hypot(*(pq - pt))))
    t2 = time.perf_counter()
    return ExperimentReport(
        strategies=list(strategies),
        db_size=distractors + 1,
        pairs=list(pairs),
        ranks=ranks,
        viewpoint_errors=errors,
        dataset=names,
        config={**config.to_dict(), "D_xy": D_xy, "distractors": distractors, "seed": seed},
        runtime={"analysis_s": t1 - t0, "retrieval_s": t2 - t1, "maps": len(needed)},
    )


def merge_reports(reports: Sequence[ExperimentReport]) -> ExperimentReport:
    first = reports[0]
    merged = ExperimentReport(
        strategies=first.strategies,
        db_size=first.db_size,
        pairs=[p for r in reports for p in r.pairs],
        ranks={s: [v for r in reports for v in r.ranks[s]] for s in first.ranks},
        viewpoint_errors={s: [v for r in reports for v in r.viewpoint_errors[s]] for s in first.viewpoint_errors},
        dataset=[d for r in reports for d in r.dataset],
        config={**first.config, "seeds": [r.config.get("seed") for r in reports]},
        runtime={k: sum(r.runtime.get(k, 0) for r in reports) for k in first.runtime},
    )
    merged.config.pop("seed", None)
    return merged


def sample_pairs(pairs: Sequence[RelevantPair], max_tasks: int | None, seed: int) -> list[RelevantPair]:
    """Seeded subset of at most ``max_tasks`` pairs, in their original order."""
    if max_tasks is None or len(pairs) <= max_tasks:
        return list(pairs)
    rng = np.random.default_rng([int(seed), 0x7A5C])
    keep = np.sort(rng.choice(len(pairs), size=max_tasks, replace=False))
    return [pairs[i] for i in keep]


def run_benchmark(
    seeds: Sequence[int],
    strategies: Sequence[str] = ALL_STRATEGIES,
    db_size: int = 100,
    rooms: int = 6,
    clutter: float = 0.2,
    drop: float = 0.2,
    R_overlap: float = R_OVERLAP,
    config: PipelineConfig = PipelineConfig(),
    D_xy: float = DEFAULT_DXY,
    max_tasks: int | None = None,
) -> ExperimentReport:
    """Synthetic benchmark over several seeds, merged into one report.

    ``max_tasks`` caps the relevant pairs queried per world with a seeded
    sample; neighbouring windows make most pairs near-duplicates anyway.
    """
    reports = []
    for seed in seeds:
        bench = build_benchmark(seed, rooms, clutter, drop, db_size, R_overlap)
        log.info("%s: %d maps, %d relevant pairs", bench.name, len(bench.maps), len(bench.pairs))
        if not bench.pairs:
            continue
        cfg = PipelineConfig(**{**config.__dict__, "seed": seed})
        pairs = sample_pairs(bench.pairs, max_tasks, seed)
        reports.append(
            run_experiment(
                bench.maps, pairs, strategies, db_size - 1, seed, cfg, D_xy,
                overlap_fn=bench.overlap, dataset=bench.name,
            )
        )
    if not reports:
        raise ValueError("no relevant pairs in any benchmark world")
    report = merge_reports(reports) if len(reports) > 1 else reports[0]
    report.config.update({"rooms": rooms, "clutter": clutter, "drop": drop, "R_overlap": R_overlap,
                          "max_tasks": max_tasks})
    return report
