import json

import pytest

from cases import run_cli_suite
from lmd.cli import main
from lmd.index import InvertedIndex
from lmd.maps import read_map_dir, read_pgm


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    work = tmp_path_factory.mktemp("cli")
    return work, run_cli_suite(work)


def test_every_command_succeeds(suite):
    _, results = suite
    assert {name: code for name, (code, _) in results.items()} == {name: 0 for name in results}


def test_synth_and_window_write_maps(suite):
    work, results = suite
    info = json.loads(results["synth"][1])
    assert info["maps"] == len(read_map_dir(work / "maps"))
    win = json.loads(results["window"][1])
    assert win["scans"] == 30
    # 14.5 m of driving in 5 m windows every metre
    assert win["maps"] == len(read_map_dir(work / "windows")) == 10


def test_parse_and_plan_json(suite):
    work, _ = suite
    parse = json.loads((work / "parse.json").read_text())
    assert 0.0 <= parse["score"] <= 1.0 and parse["walls"]
    plans = json.loads((work / "plan.json").read_text())
    assert [p["strategy"] for p in plans] == ["s1", "s2", "s3", "s4", "s5"]
    assert all({"strategy", "x", "y", "theta"} <= set(p) for p in plans)


def test_index_round_trip(suite):
    work, results = suite
    built = json.loads(results["index_build"][1])
    idx = InvertedIndex.load(work / "s4.lmdx")
    assert idx.doc_count == built["maps"] and idx.meta["strategy"] == "s4"
    q = json.loads((work / "query.json").read_text())
    assert q["query"] == "synth5-0010" and len(q["ranking"]) == 5
    assert q["ranking"][0]["map"] == "synth5-0010"
    bow = json.loads(results["index_query_bow"][1])
    assert bow["mode"] == "bow"


def test_raster_and_describe(suite):
    work, _ = suite
    grid = read_pgm(work / "grid.pgm")
    assert grid.occupied.any() and grid.free.any()
    header = (work / "desc.csv").read_text().splitlines()[0]
    assert header == "map_id,kx,ky," + ",".join(f"c{i}" for i in range(10)) + ",code"


def test_eval_outputs(suite):
    work, results = suite
    report = json.loads((work / "report.json").read_text())
    assert report["strategies"] == ["bow", "s1", "s5"] and report["db_size"] == 5
    assert (work / "anr.csv").read_text().startswith("strategy,dataset,anr_percent,queries")
    assert results["eval"][1] == (work / "anr.csv").read_text()
    assert (work / "figs" / "anr.svg").exists() and (work / "figs" / "viewpoint_errors.svg").exists()


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["parse", str(tmp_path / "missing.map")]) == 1
    assert "lmd: error:" in capsys.readouterr().err
    (tmp_path / "junk.lmdx").write_bytes(b"nope")
    (tmp_path / "m.map").write_text("not a map\n")
    assert main(["index", "query", str(tmp_path / "junk.lmdx"), str(tmp_path / "m.map")]) == 1
    assert main(["eval", "--world", "radish"]) == 1
    with pytest.raises(SystemExit):
        main(["eval", "--strategies", "s9"])
