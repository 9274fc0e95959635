import csv
import json
import subprocess
import sys

import pytest

from lightpath import graph
from lightpath.checkpoint import load_checkpoint
from lightpath.cli import main

SMALL_PRETRAIN = ["--d-model", "8", "--layers", "2", "--heads", "2", "--d-ff", "8", "--epochs", "2", "--warmup", "1", "--batch", "8"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def last_json(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture
def data_dir(tmp_path, capsys):
    d = tmp_path / "data"
    code, _, err = run(capsys, "generate", "--seed", "1", "--grid", "4x4", "--paths", "20", "--length", "6", "--repeats", "2", "--ranking-groups", "10", "--out", str(d))
    assert code == 0, err
    return d


def test_generate_outputs(data_dir):
    net = graph.RoadNetwork.load(data_dir / "network.csv")
    ds = graph.PathDataset.load(data_dir / "paths.tsv", net)
    assert len(ds) == 20 and all(len(p) == 6 for p in ds.paths)
    assert all(r.travel_time is not None and r.split in ("train", "test") for r in ds.records)
    rk = graph.PathDataset.load(data_dir / "ranking.tsv", net)
    assert all(r.rank is not None for r in rk.records)
    groups = {}
    for r in rk.records:
        groups.setdefault(r.path_id.split("_")[0], set()).add(r.split)
    assert all(len(s) == 1 for s in groups.values())


def test_generate_full_sized_dataset(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--seed", "3", "--grid", "30x30", "--paths", "5000", "--length", "100", "--repeats", "10", "--out", str(tmp_path / "big"))
    assert code == 0, err
    net = graph.RoadNetwork.load(tmp_path / "big" / "network.csv")
    ds = graph.PathDataset.load(tmp_path / "big" / "paths.tsv", net)
    assert len(ds) == 5000 and {len(p) for p in ds.paths} == {100}


def test_generate_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "generate", "--seed", "5", "--grid", "5x5", "--paths", "30", "--length", "8", "--repeats", "3", "--out", str(tmp_path / name))[0] == 0
    for f in ("network.csv", "paths.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_training_commands_reproducible(data_dir, tmp_path, capsys):
    ds = str(data_dir / "paths.tsv")
    outs = []
    for name in ("a", "b"):
        ck, log = tmp_path / f"{name}.ckpt", tmp_path / f"{name}.csv"
        assert run(capsys, "pretrain", "--seed", "2", "--dataset", ds, "--out", str(ck), "--log", str(log), *SMALL_PRETRAIN)[0] == 0
        st, slog = tmp_path / f"{name}.student", tmp_path / f"{name}.slog"
        code, _, err = run(capsys, "distill", "--seed", "2", "--teacher", str(ck), "--dataset", ds, "--out", str(st), "--log", str(slog), "--student-layers", "1", "--epochs", "2", "--warmup", "1", "--batch", "8")
        assert code == 0, err
        outs.append([p.read_bytes() for p in (ck, log, st, slog)])
    assert outs[0] == outs[1]
    meta, _ = load_checkpoint(tmp_path / "a.student")
    assert meta["kind"] == "distill" and len(meta["teacher_sha256"]) == 64


def test_embed_and_eval(data_dir, tmp_path, capsys):
    ds = str(data_dir / "paths.tsv")
    ck = tmp_path / "m.ckpt"
    assert run(capsys, "pretrain", "--seed", "2", "--dataset", ds, "--out", str(ck), *SMALL_PRETRAIN)[0] == 0
    three = tmp_path / "three.tsv"
    lines = (data_dir / "paths.tsv").read_text().splitlines()
    three.write_text("\n".join(lines[:3]) + "\n")
    emb = tmp_path / "emb.csv"
    code, _, err = run(capsys, "embed", "--checkpoint", str(ck), "--dataset", str(three), "--out", str(emb))
    assert code == 0, err
    rows = list(csv.reader(emb.open()))
    assert len(rows) == 3 and all(len(r) == 9 for r in rows)
    code, out, err = run(capsys, "eval", "--checkpoint", str(ck), "--dataset", ds, "--task", "travel_time", "--n-trees", "5")
    assert code == 0, err
    doc = json.loads(out)
    assert doc["task"] == "travel_time" and doc["metrics"]["mae"] > 0
    code, out, err = run(capsys, "eval", "--checkpoint", str(ck), "--dataset", str(data_dir / "ranking.tsv"), "--task", "ranking", "--n-trees", "5")
    assert code == 0, err
    assert json.loads(out)["metrics"]["mape"] is None


def test_config_file_and_env_seed(data_dir, tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# small run\nd_model = 8\nlayers=2\nheads=2\nd-ff=8\nepochs=1\nwarmup=0\nbatch=8\n")
    monkeypatch.setenv("LIGHTPATH_SEED", "4")
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    assert run(capsys, "pretrain", "--config", str(cfg), "--dataset", str(data_dir / "paths.tsv"), "--out", str(a))[0] == 0
    monkeypatch.delenv("LIGHTPATH_SEED")
    assert run(capsys, "pretrain", "--config", str(cfg), "--seed", "4", "--epochs", "1", "--dataset", str(data_dir / "paths.tsv"), "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    meta, _ = load_checkpoint(a)
    assert meta["encoder"]["d_model"] == 8


def test_missing_seed_is_usage_error(data_dir, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("LIGHTPATH_SEED", raising=False)
    code, _, err = run(capsys, "pretrain", "--dataset", str(data_dir / "paths.tsv"), "--out", str(tmp_path / "x"))
    assert code == 2 and last_json(err)["error"] == "usage"


@pytest.mark.parametrize(
    "argv,code,kind",
    [
        (["bogus"], 2, "usage"),
        (["profile", "--layers", "many"], 2, "usage"),
        (["embed", "--checkpoint", "/nonexistent", "--dataset", "/nonexistent", "--out", "/tmp/x"], 1, "missing_file"),
        (["generate", "--seed", "1", "--length", "1", "--out", "/tmp/lp-never"], 1, "invalid"),
        (["generate", "--seed", "1", "--grid", "ten", "--out", "/tmp/lp-never"], 2, "usage"),
    ],
)
def test_errors_are_json_lines(capsys, argv, code, kind):
    got, _, err = run(capsys, *argv)
    assert got == code
    doc = last_json(err)
    assert doc["error"] == kind and doc["message"]


def test_bad_checkpoint_and_dataset(tmp_path, capsys, data_dir):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope")
    code, _, err = run(capsys, "embed", "--checkpoint", str(bad), "--dataset", str(data_dir / "paths.tsv"), "--out", str(tmp_path / "e"))
    assert code == 1 and last_json(err)["error"] == "checkpoint"
    broken = tmp_path / "broken.tsv"
    broken.write_text("p1\tnot-a-number\n")
    code, _, err = run(capsys, "pretrain", "--seed", "1", "--dataset", str(broken), "--out", str(tmp_path / "x"))
    assert code == 1 and last_json(err)["error"] == "dataset_format"


def test_profile_table5(tmp_path, capsys):
    code, out, _ = run(capsys, "profile", "--table5")
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert len(rows) == 24
    js = tmp_path / "t.json"
    assert run(capsys, "profile", "--n", "50,100", "--gamma", "0,0.5", "--out", str(tmp_path / "t.csv"), "--json", str(js))[0] == 0
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 5
    assert len(json.loads(js.read_text())["cells"]) == 4


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "lightpath", "profile", "--n", "10", "--gamma", "0.5", "--layers", "2", "--heads", "1", "--d-model", "4", "--d-ff", "4"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.splitlines()[0] == "N,gamma,params,gflops,mem_gib"
