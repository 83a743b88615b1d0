import json
import os
import subprocess
import sys

import pytest

from prism.cli import main
from prism.io import write_structures
from prism.synthetic import generate_synthetic


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "d.jsonl"
    write_structures(path, generate_synthetic("long-range", 12, 3))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_build_graphs_dump(tmp_path, data):
    out = tmp_path / "g.jsonl"
    assert run("build-graphs", "--input", data, "--rc", 5, "--Rc", 15, "--out", out) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 36
    assert {r["kind"] for r in recs} == {"atomistic", "cell", "multiscale"}
    assert all(set(r) == {"id", "kind", "num_nodes", "edges"} for r in recs)


def test_missing_flag_prints_synopsis(tmp_path, data, capsys):
    assert run("build-graphs", "--input", data, "--rc", 5) == 1
    assert "usage:" in capsys.readouterr().err
    assert run() == 1
    assert run("build-graphs", "--input", data, "--rc", 5, "--Rc", 4, "--out", tmp_path / "g") == 1


def test_validation_failure_exit_code(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"lattice": [[0,0,0],[0,0,0],[0,0,0]], "frac_coords": [[0,0,0]], "atomic_numbers": [1]}\n')
    assert run("build-graphs", "--input", bad, "--rc", 3, "--Rc", 9, "--out", tmp_path / "g") == 1
    assert run("evaluate", "--input", tmp_path / "missing.jsonl", "--checkpoint", "x", "--out", "y") == 1


def test_internal_error_exit_code(tmp_path, data, monkeypatch):
    import prism.cli as cli

    def boom(args):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "generate-data", boom)
    assert run("generate-data", "--kind", "mixed", "--n", 1, "--out", tmp_path / "x") == 2


def test_check_invariance_exit_code(tmp_path, data):
    out = tmp_path / "inv.csv"
    assert run("check-invariance", "--input", data, "--trials", 2, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "check,trials,max_dev,tol,pass"
    assert all(line.endswith(",1") for line in lines[1:])


def _run_pipeline(root, data):
    os.makedirs(root)
    cfg = root / "run.cfg"
    cfg.write_text(f"epochs = 2\nbatch_size = 4\ndim = 8\nedge_dim = 8\nnum_rbf = 8\n"
                   f"layers = 1\ninput = {data}\nout_dir = {root / 'run'}\n")
    ck = root / "run" / "checkpoint.json"
    steps = [
        ("generate-data", "--kind", "mixed", "--n", 4, "--seed", 9, "--out", root / "gen.jsonl"),
        ("train", "--config", cfg),
        ("build-graphs", "--input", data, "--rc", 4, "--Rc", 12, "--checkpoint", ck, "--out", root / "g.jsonl"),
        ("evaluate", "--input", data, "--checkpoint", ck, "--out", root / "pred.csv"),
        ("check-invariance", "--input", root / "gen.jsonl", "--checkpoint", ck, "--trials", 2,
         "--out", root / "inv.csv"),
        ("fusion-report", "--checkpoints", ck, ck, "--out", root / "fusion.csv"),
    ]
    for step in steps:
        assert run(*step) == 0, step
    return sorted(p for p in root.rglob("*") if p.is_file() and p.name != "run.cfg")


def test_every_subcommand_is_byte_reproducible(tmp_path, data):
    a = _run_pipeline(tmp_path / "a", data)
    b = _run_pipeline(tmp_path / "b", data)
    assert [p.relative_to(tmp_path / "a") for p in a] == [p.relative_to(tmp_path / "b") for p in b]
    assert len(a) == 7
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_module_entry_point(tmp_path):
    out = tmp_path / "x.jsonl"
    proc = subprocess.run([sys.executable, "-m", "prism", "generate-data", "--kind", "short-range",
                           "--n", "2", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0 and len(out.read_text().splitlines()) == 3
