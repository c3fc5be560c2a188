"""Map -> grid -> parse -> viewpoints -> descriptors, computed once per map."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import LMDError
from .index import BOW, FeatureConfig, LocalMapDescriptor, assemble
from .maps import DEFAULT_RESOLUTION, CellSets, OccupancyGrid, PointsetMap, derive_cell_sets, rasterize
from .parsing import DEFAULT_EPSILON, DEFAULT_H, DEFAULT_K, DEFAULT_N, ParseResult, parse_map
from .planning import Strategy, Viewpoint, plan
from .polestar import appearance_codes, ring_counts, sample_keypoints

log = logging.getLogger(__name__)

ALL_STRATEGIES = (BOW, "s1", "s2", "s3", "s4", "s5")


@dataclass(frozen=True)
class PipelineConfig:
    resolution: float = DEFAULT_RESOLUTION
    K: int = DEFAULT_K
    N: int = DEFAULT_N
    H: int = DEFAULT_H
    epsilon: float = DEFAULT_EPSILON
    proposal: str = "data"
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "K": self.K,
            "N": self.N,
            "H": self.H,
            "epsilon": self.epsilon,
            "proposal": self.proposal,
            "seed": self.seed,
            "features": self.features.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        feats = d.pop("features", {})
        feats = FeatureConfig(
            radii=tuple(feats.get("radii", FeatureConfig().radii)),
            min_spacing=feats.get("min_spacing", FeatureConfig().min_spacing),
            step=feats.get("step", FeatureConfig().step),
        )
        return cls(features=feats, **d)


def map_seed(seed: int, map_id: str) -> np.random.SeedSequence:
    """Parse seed for one map; stable across runs and platforms."""
    return np.random.SeedSequence([int(seed), zlib.crc32(map_id.encode("utf-8"))])


@dataclass(eq=False)
class MapAnalysis:
    map: PointsetMap
    grid: OccupancyGrid
    parse: ParseResult
    cells: CellSets
    keypoints: np.ndarray
    codes: np.ndarray
    viewpoints: dict[str, Viewpoint]
    failures: dict[str, str]
    step: float

    def descriptor(self, strategy: str) -> LocalMapDescriptor:
        if strategy == BOW:
            return assemble(self.map.id, self.keypoints, self.codes, None, self.step)
        return assemble(self.map.id, self.keypoints, self.codes, self.viewpoints[strategy], self.step, strategy)


def fallback_viewpoint(grid: OccupancyGrid, parse: ParseResult, strategy: str) -> Viewpoint:
    """Used when a strategy finds no structure or free space: the map origin."""
    return Viewpoint((0.0, 0.0), parse.theta, strategy)


def analyze(map: PointsetMap, config: PipelineConfig = PipelineConfig(), strategies=ALL_STRATEGIES) -> MapAnalysis:
    grid = rasterize(map, resolution=config.resolution)
    parse = parse_map(
        map, K=config.K, N=config.N, H=config.H, epsilon=config.epsilon,
        seed=map_seed(config.seed, map.id), proposal=config.proposal,
    )
    cells = derive_cell_sets(grid, parse.walls)
    viewpoints, failures = {}, {}
    for s in strategies:
        if s == BOW:
            continue
        name = Strategy.parse(s).value
        try:
            viewpoints[name] = plan(name, grid, parse, cells)
        except LMDError as exc:
            log.warning("map %s: %s failed (%s), using map origin", map.id, name, exc)
            failures[name] = type(exc).__name__
            viewpoints[name] = fallback_viewpoint(grid, parse, name)
    feats = config.features
    kps = sample_keypoints(map, feats.min_spacing)
    codes = appearance_codes(ring_counts(map.points, kps, feats.radii))
    return MapAnalysis(map, grid, parse, cells, kps, codes, viewpoints, failures, feats.step)
