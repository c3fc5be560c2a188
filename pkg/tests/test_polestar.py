import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lmd.errors import EmptyDescriptor
from lmd.maps import PointsetMap, rotation
from lmd.polestar import (
    DEFAULT_RADII,
    PolestarDescriptor,
    appearance_codes,
    descriptor_rows,
    polestar,
    quantize_appearance,
    ring_counts,
    sample_keypoints,
)


def desc(counts):
    return PolestarDescriptor(np.zeros(2), np.asarray(counts))


def test_default_rings():
    assert len(DEFAULT_RADII) == 10
    assert DEFAULT_RADII[0] == 0.5 and DEFAULT_RADII[-1] == 5.0


def test_two_close_points_give_one_keypoint():
    m = PointsetMap("a", [[0.0, 0.0], [0.05, 0.0]])
    assert len(sample_keypoints(m, 0.2)) == 1


def test_zero_spacing_keeps_everything():
    pts = np.random.default_rng(0).uniform(0, 5, (30, 2))
    assert np.array_equal(sample_keypoints(PointsetMap("a", pts), 0.0), pts)


def test_empty_map_no_keypoints():
    assert sample_keypoints(PointsetMap("e", np.empty((0, 2))), 0.3).shape == (0, 2)


def test_keypoint_spacing_audit():
    pts = np.random.default_rng(1).uniform(0, 5, (100, 2))
    kps = sample_keypoints(PointsetMap("a", pts), 0.5)
    d = np.hypot(*(kps[:, None, :] - kps[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 0.5
    # greedy in input order: every dropped point is near an earlier kept one
    kept = {tuple(k) for k in kps}
    for i, p in enumerate(pts):
        if tuple(p) in kept:
            continue
        earlier = [k for k in kps if np.hypot(*(k - p)) < 0.5]
        assert earlier
    assert tuple(kps[0]) == tuple(pts[0])


def test_single_annulus_membership():
    m = PointsetMap("a", [[0.15, 0.0]])
    radii = [0.1 * (i + 1) for i in range(10)]
    d = polestar(m, (0.0, 0.0), radii)
    assert d.counts.tolist() == [0, 1, 0, 0, 0, 0, 0, 0, 0, 0]
    assert d.D == 10


def test_keypoint_itself_excluded_and_boundaries_half_open():
    m = PointsetMap("a", [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [5.0, 0.0], [5.01, 0.0]])
    d = polestar(m, (0.0, 0.0))
    # 0.5 belongs to ring 0, 1.0 to ring 1, 5.0 to ring 9, beyond 5 nowhere
    assert d.counts.tolist() == [1, 1, 0, 0, 0, 0, 0, 0, 0, 1]


def test_counts_match_brute_force():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-4, 4, (50, 2))
    m = PointsetMap("a", pts)
    for k in pts[:10]:
        assert polestar(m, k).counts.tolist() == oracles.ring_counts(pts, k, DEFAULT_RADII)


@given(seed=st.integers(0, 10_000), angle=st.floats(0, 2 * math.pi))
@settings(max_examples=50, deadline=None)
def test_rotation_invariance(seed, angle):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-4, 4, (60, 2))
    k = pts[0]
    rotated = (pts - k) @ rotation(angle).T + k
    a = polestar(PointsetMap("a", pts), k).counts
    b = polestar(PointsetMap("b", rotated), k).counts
    # a point sitting within rounding distance of a ring boundary may flip
    d = np.hypot(*(pts - k).T)
    edges = np.asarray(DEFAULT_RADII)
    if np.min(np.abs(d[:, None] - edges[None, :])) > 1e-9:
        assert np.array_equal(a, b)
        assert quantize_appearance(desc(a)) == quantize_appearance(desc(b))


@given(seed=st.integers(0, 10_000), dx=st.floats(-50, 50), dy=st.floats(-50, 50))
@settings(max_examples=50, deadline=None)
def test_translation_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform(-4, 4, (60, 2)), 3)
    shift = np.round([dx, dy], 3)
    a = ring_counts(pts, pts[:5])
    b = ring_counts(pts + shift, pts[:5] + shift)
    d = np.hypot(*(pts[None, :, :] - pts[:5, None, :]).transpose(2, 0, 1))
    if np.min(np.abs(d[..., None] - np.asarray(DEFAULT_RADII))) > 1e-6:
        assert np.array_equal(a, b)


def test_uniform_counts_code_zero():
    assert quantize_appearance(desc([1] * 10)) == 0


def test_single_peak_codes():
    assert quantize_appearance(desc([2] + [0] * 9)) == 1
    assert quantize_appearance(desc([0] * 9 + [3])) == 512


def test_all_zero_counts_raise():
    with pytest.raises(EmptyDescriptor):
        quantize_appearance(desc([0] * 10))
    assert appearance_codes(np.zeros((2, 10), int)).tolist() == [-1, -1]


@given(st.lists(st.integers(0, 500), min_size=10, max_size=10), st.integers(1, 50))
@settings(max_examples=200, deadline=None)
def test_codes_match_exact_oracle_and_scale_invariance(counts, scale):
    code = int(appearance_codes(np.array(counts))[0])
    assert code == oracles.appearance_code(counts)
    if sum(counts):
        assert 0 <= code <= 1023
        assert int(appearance_codes(np.array(counts) * scale)[0]) == code


def test_descriptor_rows():
    m = PointsetMap("m", [[0.0, 0.0], [0.3, 0.0], [4.0, 0.0]])
    rows = list(descriptor_rows(m, m.points[:2]))
    assert rows[0][0] == "m" and len(rows[0]) == 14
    assert rows[0][3:13] == (1, 0, 0, 0, 0, 0, 0, 1, 0, 0)
    assert rows[0][13] == oracles.appearance_code(list(rows[0][3:13]))
