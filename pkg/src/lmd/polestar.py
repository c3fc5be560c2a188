"""Polestar ring descriptors and their binary appearance codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDescriptor
from .maps import PointsetMap

DEFAULT_RINGS = 10
DEFAULT_RADII = tuple(0.5 * (i + 1) for i in range(DEFAULT_RINGS))
DEFAULT_MIN_SPACING = 0.3


@dataclass(frozen=True, eq=False)
class PolestarDescriptor:
    keypoint: np.ndarray
    counts: np.ndarray

    @property
    def D(self) -> int:
        return int(self.counts.shape[0])


def _check_radii(radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if radii.size == 0 or radii[0] <= 0 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and strictly increasing")
    return radii


def sample_keypoints(map: PointsetMap, min_spacing: float = DEFAULT_MIN_SPACING) -> np.ndarray:
    """Greedy spacing suppression over the map points in input order.

    A point is kept unless an already kept point lies strictly closer than
    ``min_spacing``.
    """
    if min_spacing < 0:
        raise ValueError("min_spacing must be non-negative")
    pts = map.points
    if min_spacing == 0 or pts.shape[0] == 0:
        return pts.copy()
    cell = min_spacing
    buckets: dict[tuple[int, int], list[int]] = {}
    keys = np.floor(pts / cell).astype(np.int64)
    kept: list[int] = []
    lim = min_spacing * min_spacing
    for i in range(pts.shape[0]):
        kx, ky = int(keys[i, 0]), int(keys[i, 1])
        x, y = pts[i]
        clash = False
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in buckets.get((kx + dx, ky + dy), ()):
                    ex, ey = pts[j, 0] - x, pts[j, 1] - y
                    if ex * ex + ey * ey < lim:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if not clash:
            kept.append(i)
            buckets.setdefault((kx, ky), []).append(i)
    return pts[kept]


def ring_counts(points: np.ndarray, keypoints: np.ndarray, radii=DEFAULT_RADII) -> np.ndarray:
    """Per-keypoint annulus counts, shape ``(len(keypoints), D)``.

    Ring ``i`` holds points with ``radii[i-1] < distance <= radii[i]``; ring 0
    starts just above zero, so the keypoint itself never counts.
    """
    radii = _check_radii(radii)
    keypoints = np.asarray(keypoints, dtype=float).reshape(-1, 2)
    out = np.zeros((keypoints.shape[0], radii.size), dtype=np.int64)
    if keypoints.shape[0] == 0 or points.shape[0] == 0:
        return out
    edges = np.concatenate([[0.0], radii])
    for lo in range(0, keypoints.shape[0], 256):
        k = keypoints[lo:lo + 256]
        dist = np.sqrt(((points[None, :, :] - k[:, None, :]) ** 2).sum(axis=2))
        ring = np.searchsorted(edges, dist, side="left") - 1
        valid = (dist > 0) & (ring >= 0) & (ring < radii.size)
        rows = np.broadcast_to(np.arange(k.shape[0])[:, None], ring.shape)
        np.add.at(out[lo:lo + 256], (rows[valid], ring[valid]), 1)
    return out


def polestar(map: PointsetMap, keypoint, radii=DEFAULT_RADII) -> PolestarDescriptor:
    kp = np.asarray(keypoint, dtype=float).reshape(2)
    counts = ring_counts(map.points, kp[None, :], radii)[0]
    return PolestarDescriptor(keypoint=kp, counts=counts)


def appearance_codes(counts: np.ndarray) -> np.ndarray:
    """Vectorized appearance quantizer; rows with no points map to -1."""
    counts = np.asarray(counts)
    if counts.ndim == 1:
        counts = counts[None, :]
    total = counts.sum(axis=1, keepdims=True)
    # v_i > mean(v) with v = counts / total, evaluated without rounding
    bits = counts.shape[1] * counts > total
    weights = 1 << np.arange(counts.shape[1], dtype=np.int64)
    codes = (bits * weights).sum(axis=1)
    codes[total[:, 0] <= 0] = -1
    return codes


def quantize_appearance(desc: PolestarDescriptor) -> int:
    """L1-normalize, set bit i where the ring exceeds the mean, pack LSB-first."""
    code = int(appearance_codes(desc.counts)[0])
    if code < 0:
        raise EmptyDescriptor("no points within the outer radius")
    return code


def descriptor_rows(map: PointsetMap, keypoints: np.ndarray, radii=DEFAULT_RADII):
    """Rows for the debug CSV dump: ``(map_id, kx, ky, c0..cD-1, code)``."""
    counts = ring_counts(map.points, keypoints, radii)
    codes = appearance_codes(counts)
    for kp, c, code in zip(np.asarray(keypoints).reshape(-1, 2), counts, codes):
        yield (map.id, float(kp[0]), float(kp[1]), *(int(v) for v in c), int(code))
