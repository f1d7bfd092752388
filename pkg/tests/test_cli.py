import csv
import io
import json
from pathlib import Path

import pytest

from fusemap.arch import toy_arch
from fusemap.cli import main
from fusemap.workload import make_chain

DOCS = Path(__file__).resolve().parent.parent / "docs" / "examples"


@pytest.fixture
def files(tmp_path):
    w = tmp_path / "w.json"
    w.write_text(json.dumps(make_chain(2, 4, [(4, 4)]).to_dict()))
    a = tmp_path / "a.json"
    a.write_text(json.dumps(toy_arch(64).to_dict()))
    return tmp_path, _flags(w, a)


def _flags(w, a, loops="1", threads=("--threads", "1")):
    return ["--workload", str(w), "--arch", str(a), "--max-loops", loops, *threads]


def test_toy_table_report(tmp_path):
    out = tmp_path / "r.json"
    assert main(["map", "--workload", str(DOCS / "toy_table.json"), "--objective", "latency",
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["best"]["value"] == 12 and rep["best"]["labels"] == ["A2", "B2"]


def test_report_contents_and_determinism(files):
    tmp, flags = files
    for name in ("r1.json", "r2.json"):
        assert main(["map", *flags, "--out", str(tmp / name)]) == 0
    r1 = (tmp / "r1.json").read_bytes()
    assert r1 == (tmp / "r2.json").read_bytes()
    rep = json.loads(r1)
    assert rep["version"] and rep["objective"] == "edp"
    best = rep["best"]
    assert best["edp"] == best["energy"] * best["latency"] == best["value"]
    assert best["tree"] and best["cost"]["per_level_bytes_moved"] and "GLB" in best["usage"]
    # the embedded config reproduces the run
    tmp2 = tmp / "again"
    tmp2.mkdir()
    (tmp2 / "w.json").write_text(json.dumps(rep["config"]["workload"]))
    (tmp2 / "a.json").write_text(json.dumps(rep["config"]["arch"]))
    assert main(["map", "--workload", str(tmp2 / "w.json"), "--arch", str(tmp2 / "a.json"), "--max-loops", "1",
                 "--out", str(tmp2 / "r.json")]) == 0
    assert json.loads((tmp2 / "r.json").read_text())["best"] == best


def test_single_einsum_edp(tmp_path):
    w = tmp_path / "w.json"
    w.write_text(json.dumps(make_chain(1, 2, [(2, 2)]).to_dict()))
    a = tmp_path / "a.json"
    a.write_text(json.dumps(toy_arch(64).to_dict()))
    out = tmp_path / "r.json"
    assert main(["map", "--workload", str(w), "--arch", str(a), "--out", str(out)]) == 0
    best = json.loads(out.read_text())["best"]
    assert best["edp"] == best["energy"] * best["latency"]


def test_oracle_agrees_with_map(files):
    tmp, flags = files
    assert main(["map", *flags, "--out", str(tmp / "m.json")]) == 0
    assert main(["oracle", *flags, "--out", str(tmp / "o.json")]) == 0
    m = json.loads((tmp / "m.json").read_text())["best"]
    o = json.loads((tmp / "o.json").read_text())
    assert o["best"]["value"] == m["value"] and o["mapspace_size"] > 0


def test_oracle_refuses_big_mapspace(files, capsys):
    tmp, flags = files
    assert main(["oracle", *_flags(flags[1], flags[3], loops="3")]) == 1
    assert "at most 1000000" in capsys.readouterr().err


@pytest.mark.parametrize("kind", ["random", "sa", "ga"])
def test_baseline_outputs(files, kind):
    tmp, flags = files
    rep, tr = tmp / f"{kind}.json", tmp / f"{kind}.csv"
    assert main(["baseline", kind, *flags, "--budget", "300", "--seed", "1", "--out", str(rep),
                 "--trace-csv", str(tr)]) == 0
    again = tmp / "again.json"
    main(["baseline", kind, *flags, "--budget", "300", "--seed", "1", "--out", str(again)])
    assert rep.read_bytes() == again.read_bytes()
    rows = list(csv.DictReader(io.StringIO(tr.read_text())))
    vals = [float(r["best_objective"]) for r in rows]
    assert vals == sorted(vals, reverse=True)


def test_usage_errors(files, capsys):
    tmp, flags = files
    assert main(["baseline", "random", *flags, "--budget", "0"]) == 1
    assert main(["map", "--workload", str(tmp / "missing.json"), "--arch", "x"]) == 1
    assert main(["map", "--workload", flags[1]]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["map", *flags, "--objective", "area"]) == 1


def test_schema_error_names_field(files, capsys):
    tmp, flags = files
    bad = tmp / "bad.json"
    doc = toy_arch(64).to_dict()
    del doc["levels"][1]["bandwidth_bytes_per_cycle"]
    bad.write_text(json.dumps(doc))
    assert main(["map", "--workload", flags[1], "--arch", str(bad)]) == 1
    assert "levels[1]" in capsys.readouterr().err


def test_infeasible_exit_code(files):
    tmp, flags = files
    tiny = tmp / "tiny.json"
    tiny.write_text(json.dumps(toy_arch(2).to_dict()))
    assert main(["map", "--workload", flags[1], "--arch", str(tiny), "--max-loops", "1",
                 "--require-innermost"]) == 2


def test_ablate_csv(files):
    tmp, flags = files
    out = tmp / "ab.csv"
    assert main(["ablate", *flags, "--csv", str(out), "--out", str(tmp / "ab.json")]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert all(int(r["joins_without_skip"]) > int(r["joins_with_skip"]) for r in rows[1:])
    assert json.loads((tmp / "ab.json").read_text())["identical_best_mapping"] is True


def test_scaling_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["scaling", "--einsums", "2,4", "--max-inner-copies", "0", "--csv", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert {"einsums", "step", "join_ms", "frontier_size"} <= set(rows[0])
    assert [int(r["einsums"]) for r in rows] == [2, 2, 4, 4, 4, 4]


def test_chain_helper(tmp_path):
    out = tmp_path / "c.json"
    assert main(["chain", "--einsums", "3", "--m", "4", "--pattern", "4x4,2x4", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["einsums"]) == 3
    assert main(["chain", "--einsums", "3", "--pattern", "4by4"]) == 1


def test_threads_env(files, monkeypatch):
    tmp, flags = files
    monkeypatch.setenv("FUSEMAP_THREADS", "3")
    no_threads = _flags(flags[1], flags[3], threads=())
    assert main(["map", *no_threads, "--out", str(tmp / "ra.json")]) == 0
    assert main(["map", *flags, "--out", str(tmp / "rb.json")]) == 0
    assert (tmp / "ra.json").read_bytes() == (tmp / "rb.json").read_bytes()
    assert main(["map", *no_threads, "--threads", "0"]) == 1
