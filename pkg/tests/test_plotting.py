import re

import numpy as np
import pytest

from lmd.evaluation import ExperimentReport, RelevantPair
from lmd.index import BOW, LMD, describe, match_words
from lmd.parsing import parse_map
from lmd.planning import Viewpoint
from lmd.plotting import plot_anr, plot_error_histogram, plot_matches, plot_parse, render_matches
from lmd.synth import synth_world

RED = re.compile(r"stroke:\s*#ff0000")


def red_strokes(path):
    return len(RED.findall(path.read_text()))


@pytest.fixture(scope="module")
def maps():
    a = synth_world(8, clutter=0.1, drop=0.1)
    b = synth_world(9, clutter=0.1, drop=0.1)
    return a.maps[4], b.maps[20]


def centred(m):
    return Viewpoint(tuple(m.points.mean(axis=0)), 0.0, "s1")


def test_parse_figure_is_byte_stable(tmp_path, maps):
    m = maps[0]
    parse = parse_map(m, K=10, seed=0)
    a = plot_parse(m, parse, tmp_path / "a.svg", {"s1": centred(m)})
    b = plot_parse(m, parse, tmp_path / "b.svg", {"s1": centred(m)})
    assert a.read_bytes() == b.read_bytes()
    assert red_strokes(a) >= len(parse.walls)


def test_zero_matches_draw_no_red_lines(tmp_path, maps):
    m = maps[0]
    d = describe(m, centred(m))
    out = render_matches(m, m, d, d, [], tmp_path / "none.svg")
    assert red_strokes(out) == 0


def test_self_match_lines_have_zero_length(tmp_path, maps):
    m = maps[0]
    d = describe(m, centred(m))
    pairs = match_words(d, d)
    assert len(pairs) == len(d)
    assert all(np.array_equal(d.keypoints[i], d.keypoints[j]) for i, j in pairs)
    out = render_matches(m, m, d, d, pairs, tmp_path / "self.svg")
    assert red_strokes(out) == len(pairs)


def test_irrelevant_pair_fewer_lines_under_pose_filter(tmp_path, maps):
    a, b = maps
    qa, db = describe(a, centred(a)), describe(b, centred(b))
    lmd = plot_matches(a, b, qa, db, tmp_path / "lmd.svg", D_xy=1.0, mode=LMD)
    bow = plot_matches(a, b, qa, db, tmp_path / "bow.svg", mode=BOW)
    n_lmd, n_bow = len(match_words(qa, db, 1.0, LMD)), len(match_words(qa, db, mode=BOW))
    assert n_lmd < n_bow
    assert red_strokes(lmd) == n_lmd and red_strokes(bow) == n_bow


def test_report_figures(tmp_path):
    report = ExperimentReport(
        strategies=["bow", "s1"], db_size=10, pairs=[RelevantPair("a", "b", 1.0, 10.0)] * 3,
        ranks={"bow": [0.1, 0.5, 0.3], "s1": [0.1, 0.2, 0.3]},
        viewpoint_errors={"s1": [0.5, 3.0, 25.0]}, dataset=["x"] * 3,
    )
    for f, name in ((plot_anr, "anr.svg"), (plot_error_histogram, "hist.svg")):
        p1, p2 = f(report, tmp_path / "1" / name), f(report, tmp_path / "2" / name)
        assert p1.read_bytes() == p2.read_bytes()
        assert b"<svg" in p1.read_bytes()
