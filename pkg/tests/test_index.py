import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cases import descriptor, random_database
from lmd.errors import DuplicateMap, EmptyIndex, FormatError, TruthNotRanked
from lmd.index import (
    BOW,
    LMD,
    FeatureConfig,
    InvertedIndex,
    PoseWord,
    RetrievalResult,
    anr_rank,
    assemble,
    describe,
    index_insert,
    match_words,
    pose_limit,
    query,
    quantize_pose,
    rotate_pose_words,
)
from lmd.maps import PointsetMap, rotation
from lmd.planning import Viewpoint
from lmd.polestar import sample_keypoints
from lmd.synth import synth_world


def vp(x=0.0, y=0.0, theta=0.0):
    return Viewpoint((x, y), theta, "s1")


def build(db, D_xy=3.0, mode=LMD, four_fold=True):
    idx = InvertedIndex(D_xy=D_xy, mode=mode, four_fold=four_fold)
    for map_id, words in db.items():
        idx.insert(descriptor(map_id, words))
    return idx


def as_lists(db):
    return {k: [tuple(int(v) for v in w) for w in ws] for k, ws in db.items()}


# -- pose words ----------------------------------------------------------------

def test_viewpoint_maps_to_origin_word():
    assert quantize_pose((3.2, -1.7), vp(3.2, -1.7, 0.7)) == PoseWord(0, 0)


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.2])
def test_one_metre_ahead_is_ten_steps(theta):
    p = (2.0 + math.cos(theta), -1.0 + math.sin(theta))
    assert quantize_pose(p, vp(2.0, -1.0, theta)) == PoseWord(10, 0)


def test_exact_multiples_stay_in_their_cell():
    assert quantize_pose((0.3, 0.7), vp()) == PoseWord(3, 7)


def test_dequantization_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        v = vp(*rng.uniform(-20, 20, 2), rng.uniform(0, math.pi / 2))
        p = rng.uniform(-30, 30, 2)
        w = quantize_pose(p, v)
        rel = rotation(-v.orientation) @ (p - np.asarray(v.position))
        assert np.all(np.abs(rel - np.asarray(w.center())) < 0.1)
        assert np.all(np.abs(rel - np.array([w.wx, w.wy]) * 0.1 - 0.05) <= 0.05 + 1e-9)


def test_quarter_turn_maps_cells_onto_cells():
    rng = np.random.default_rng(1)
    words = rng.integers(-50, 50, (200, 3))
    for k in range(4):
        got = rotate_pose_words(words, k)
        want = [oracles.rotate_cell(int(x), int(y), k) for x, y, _ in words]
        assert got.tolist() == [list(w) for w in want]
    assert np.array_equal(rotate_pose_words(rotate_pose_words(words, 1), 3), words[:, :2])


def test_pose_limit_uses_exact_decimal():
    assert pose_limit(3.0, 0.1) == 30
    assert pose_limit(0.3, 0.1) == 3
    assert pose_limit(math.inf, 0.1) is None


# -- descriptors ---------------------------------------------------------------

def test_single_keypoint_single_word():
    m = PointsetMap("one", [[0.0, 0.0], [0.1, 0.0]])
    d = describe(m, vp(), FeatureConfig(min_spacing=0.2))
    assert len(d) == 1


def test_bow_descriptor_zeroes_pose_words():
    m = synth_world(2).maps[0]
    a = describe(m, vp(1.0, 2.0, 0.4))
    b = describe(m, None)
    assert b.is_bow and not b.words[:, :2].any()
    assert sorted(a.words[:, 2].tolist()) == sorted(b.words[:, 2].tolist())


def test_descriptor_is_composition_of_quantizers():
    m = synth_world(5).maps[1]
    v = vp(1.3, -0.4, 0.25)
    d = describe(m, v)
    want = []
    for k in sample_keypoints(m, FeatureConfig().min_spacing):
        code = oracles.appearance_code(oracles.ring_counts(m.points, k, FeatureConfig().radii))
        if code < 0:
            continue
        dx, dy = k[0] - 1.3, k[1] + 0.4
        x = math.cos(0.25) * dx + math.sin(0.25) * dy
        y = -math.sin(0.25) * dx + math.cos(0.25) * dy
        want.append((math.floor(x / 0.1 + 1e-9), math.floor(y / 0.1 + 1e-9), code))
    assert [tuple(w) for w in d.words.tolist()] == want


def test_empty_codes_are_dropped():
    d = assemble("x", np.zeros((3, 2)), np.array([5, -1, 7]), vp())
    assert d.words[:, 2].tolist() == [5, 7]
    assert d.keypoints.shape == (2, 2)


# -- index ---------------------------------------------------------------------

@pytest.mark.parametrize("mode", [BOW, LMD])
def test_matches_linear_scan(mode):
    rng = np.random.default_rng(2)
    db = random_database(rng, n_maps=50)
    idx = build(db)
    lists = as_lists(db)
    for qid in list(db)[:5] + ["fresh"]:
        q = db[qid] if qid in db else random_database(rng, 1, prefix="q")["q000"]
        got = idx.query(descriptor("q", q), mode=mode).ranking
        want = oracles.linear_scan([tuple(map(int, w)) for w in q], lists, 3.0, 0.1, mode)
        assert list(got) == want


def test_linear_scan_without_rotations():
    rng = np.random.default_rng(3)
    db = random_database(rng, n_maps=30)
    idx = build(db, D_xy=1.5, four_fold=False)
    q = db["m007"]
    want = oracles.linear_scan([tuple(map(int, w)) for w in q], as_lists(db), 1.5, 0.1, LMD, four_fold=False)
    assert list(idx.query(descriptor("q", q)).ranking) == want


def test_infinite_threshold_equals_bow():
    rng = np.random.default_rng(4)
    db = random_database(rng, n_maps=40)
    lmd, bow = build(db, D_xy=math.inf), build(db, mode=BOW)
    for qid in list(db)[:5]:
        q = descriptor("q", db[qid])
        assert lmd.query(q).ranking == bow.query(q).ranking


@pytest.mark.parametrize("seed", range(3))
def test_bow_scores_dominate(seed):
    rng = np.random.default_rng(10 + seed)
    db = random_database(rng, n_maps=40)
    idx = build(db, D_xy=1.0)
    q = descriptor("q", db["m003"])
    lmd, bow = idx.scores(q), idx.scores(q, mode=BOW)
    assert all(bow[m] >= s for m, s in lmd.items())


def test_threshold_monotonicity():
    rng = np.random.default_rng(5)
    db = random_database(rng, n_maps=40)
    q = descriptor("q", db["m010"])
    prev = None
    for D_xy in (0.0, 0.1, 0.5, 1.0, 2.0, 3.0, 6.0, 12.0, math.inf):
        s = build(db, D_xy=D_xy).scores(q)
        if prev is not None:
            assert all(s[m] >= prev[m] for m in s)
        prev = s


def test_self_query_ranks_first():
    rng = np.random.default_rng(6)
    db = random_database(rng, n_maps=30, vocab=1024)
    idx = build(db)
    for qid in ("m000", "m015", "m029"):
        r = idx.query(descriptor(qid, db[qid]))
        assert r.rank_of(qid) == 1
        assert r.ranking[0][1] == len(db[qid])


def test_ranking_order_and_top_k():
    rng = np.random.default_rng(7)
    idx = build(random_database(rng, n_maps=30, vocab=16))
    r = query(idx, descriptor("q", random_database(rng, 1, vocab=16)["m000"]), top_k=10)
    assert len(r.ranking) == 10
    keys = [(-s, m) for m, s in r.ranking]
    assert keys == sorted(keys)


def test_candidates_rank_like_a_sub_index():
    rng = np.random.default_rng(8)
    db = random_database(rng, n_maps=40)
    subset = sorted(rng.choice(list(db), 12, replace=False).tolist())
    q = descriptor("q", db[subset[0]])
    got = build(db).query(q, candidates=subset).ranking
    want = build({k: db[k] for k in subset}).query(q).ranking
    assert got == want


def test_rigid_motion_copy_ranks_first():
    world = synth_world(4, clutter=0.0, drop=0.0)
    m = world.maps[3]
    v = vp(*m.points.mean(axis=0), 0.2)
    q = describe(m, v)
    idx = InvertedIndex()
    for k, turn in enumerate((0.0, math.pi / 2, math.pi, 3 * math.pi / 2)):
        pose = (12.5 * k - 3.0, -7.25 * k, turn)
        moved = m.transformed(pose)
        R = rotation(turn)
        pos = R @ np.asarray(v.position) + pose[:2]
        copy = describe(moved, vp(*pos, (v.orientation + turn) % (math.pi / 2)))
        copy = type(copy)(f"copy{k}", copy.viewpoint, copy.words, copy.keypoints, copy.strategy)
        idx.insert(copy)
    # distractors share no appearance words with the query
    used = set(q.words[:, 2].tolist())
    rng = np.random.default_rng(9)
    free = np.array(sorted(set(range(1024)) - used))
    for i in range(50):
        n = 80
        words = np.column_stack([rng.integers(-50, 50, (n, 2)), rng.choice(free, n)])
        idx.insert(descriptor(f"d{i:02d}", words))
    for k in range(4):
        sub = [f"copy{k}"] + [f"d{i:02d}" for i in range(50)]
        r = idx.query(q, candidates=sub)
        assert r.rank_of(f"copy{k}") == 1
        assert r.ranking[0][1] >= 0.9 * len(q)


def test_posting_conservation():
    rng = np.random.default_rng(11)
    db = random_database(rng, n_maps=100)
    idx = build(db)
    assert idx.posting_count() == sum(len(w) for w in db.values())
    recount = {}
    for words in db.values():
        for wa in words[:, 2].tolist():
            recount[wa] = recount.get(wa, 0) + 1
    assert {wa: len(idx.postings(wa)) for wa in recount} == recount
    some = next(iter(recount))
    assert idx.postings(some) == sorted(idx.postings(some))
    h = idx.histogram("m000")
    assert h.sum() == len(db["m000"])


def test_empty_descriptor_insert():
    idx = build(random_database(np.random.default_rng(12), n_maps=5))
    before = idx.posting_count()
    index_insert(idx, descriptor("blank", np.empty((0, 3))))
    assert idx.doc_count == 6 and idx.posting_count() == before
    r = idx.query(descriptor("blank", np.empty((0, 3))))
    assert all(s == 0 for _, s in r.ranking)
    # ties at zero fall back to map-id order
    assert [m for m, _ in r.ranking] == sorted(idx.map_ids)


def test_errors():
    idx = InvertedIndex()
    with pytest.raises(EmptyIndex):
        idx.query(descriptor("q", [[0, 0, 1]]))
    idx.insert(descriptor("a", [[0, 0, 1]]))
    with pytest.raises(DuplicateMap):
        idx.insert(descriptor("a", [[0, 0, 2]]))
    with pytest.raises(TruthNotRanked):
        idx.query(descriptor("q", [[0, 0, 1]])).rank_of("zzz")


def test_anr_rank():
    r = RetrievalResult("q", tuple((f"m{i:03d}", 100 - i) for i in range(100)))
    assert anr_rank(r, "m000", 100) == 0.01
    assert anr_rank(r, "m099", 100) == 1.0
    with pytest.raises(TruthNotRanked):
        anr_rank(r, "nope", 100)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    db = random_database(rng, n_maps=60)
    for mode, D_xy in ((LMD, 2.5), (BOW, 3.0), (LMD, math.inf)):
        idx = build(db, D_xy=D_xy, mode=mode)
        idx.meta = {"strategy": "s4"}
        path = tmp_path / f"{mode}.lmdx"
        idx.save(path)
        back = InvertedIndex.load(path)
        assert back.meta == idx.meta and back.mode == mode and back.doc_count == 60
        for qid in list(db)[:10]:
            q = descriptor("q", db[qid])
            assert back.query(q).ranking == idx.query(q).ranking
        again = tmp_path / "again.lmdx"
        back.save(again)
        assert again.read_bytes() == path.read_bytes()


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.lmdx"
    p.write_bytes(b"hello")
    with pytest.raises(FormatError):
        InvertedIndex.load(p)


def test_match_words_counts_agree_with_scores():
    rng = np.random.default_rng(14)
    db = random_database(rng, n_maps=10)
    idx = build(db)
    q = descriptor("q", db["m004"])
    for mid in db:
        pairs = match_words(q, descriptor(mid, db[mid]))
        assert len(pairs) == idx.scores(q)[mid]
        assert all(q.words[i, 2] == db[mid][j, 2] for i, j in pairs)


@given(seed=st.integers(0, 2**31 - 1), D_xy=st.sampled_from([0.0, 0.2, 0.3, 1.0, 3.0]))
@settings(max_examples=25, deadline=None)
def test_oracle_equivalence_property(seed, D_xy):
    rng = np.random.default_rng(seed)
    db = random_database(rng, n_maps=15, words=(5, 25), vocab=16, spread=20)
    idx = build(db, D_xy=D_xy)
    q = random_database(rng, 1, words=(5, 25), vocab=16, spread=20)["m000"]
    want = oracles.linear_scan([tuple(map(int, w)) for w in q], as_lists(db), D_xy, 0.1, LMD)
    assert list(idx.query(descriptor("q", q)).ranking) == want
