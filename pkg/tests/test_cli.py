import json

import numpy as np
import pytest

from geomenc.cli import main, parse_config_text
from geomenc.dataset import load_dataset
from geomenc.field import cell_centers
from geomenc.models import ExactOracle
from geomenc.nn.checkpoint import load_checkpoint, save_checkpoint
from geomenc.pgm import read_binary_grid


def run(*argv):
    return main([str(a) for a in argv])


def usage_exit(*argv):
    with pytest.raises(SystemExit) as info:
        run(*argv)
    return info.value.code


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def small_dataset(workdir):
    assert run("gen", "--count", 6, "--res", 16, "--seed", 1, "--val", 2, "--out", "d.sdfd") == 0
    return workdir / "d.sdfd"


def test_gen_deterministic(workdir):
    for name in ("a", "b"):
        assert run("gen", "--count", 8, "--res", 64, "--seed", 1, "--out", f"{name}.sdfd") == 0
    assert (workdir / "a.sdfd").read_bytes() == (workdir / "b.sdfd").read_bytes()
    cfg = parse_config_text((workdir / "a.sdfd.run.cfg").read_text())
    assert cfg["val"] == "4" and cfg["count"] == "8"


def test_gen_usage_errors(workdir, capsys):
    assert usage_exit("gen", "--count", 0, "--out", "x.sdfd") == 2
    assert "usage" in capsys.readouterr().err
    assert usage_exit("gen", "--count", 4, "--val", 4, "--out", "x.sdfd") == 2
    assert usage_exit("frobnicate") == 2


def test_gen_io_error(workdir):
    assert run("gen", "--count", 2, "--res", 16, "--out", workdir / "missing" / "x.sdfd") == 1


def test_train_history_and_defaults(small_dataset, workdir):
    assert run("train", "--dataset", small_dataset, "--stage", "processor", "--epochs", 3, "--out", "p") == 0
    rows = (workdir / "p" / "history.csv").read_text().splitlines()
    assert len(rows) == 3 + 1 and rows[0] == "epoch,train_l1,val_l1,lr"
    cfg = parse_config_text((workdir / "p" / "run.cfg").read_text())
    assert float(cfg["lr"]) == 5e-4


def test_train_replays_from_run_config(small_dataset, workdir):
    assert run("train", "--dataset", small_dataset, "--stage", "processor", "--epochs", 2, "--out", "p") == 0
    assert run("train", "--config", "p/run.cfg", "--out", "q") == 0
    for name in ("checkpoint.sdfw", "history.csv"):
        assert (workdir / "p" / name).read_bytes() == (workdir / "q" / name).read_bytes()
    assert usage_exit("gen", "--config", "p/run.cfg") == 2


def test_config_overrides(workdir):
    (workdir / "g.cfg").write_text("# dataset\ncount = 3\nres = 16   # small\nout = c.sdfd\n")
    assert run("gen", "--config", "g.cfg", "--count", 4) == 0
    assert len(load_dataset(workdir / "c.sdfd")) == 4
    (workdir / "bad.cfg").write_text("colour = red\n")
    assert usage_exit("gen", "--config", "bad.cfg", "--count", 2, "--out", "x") == 2


def test_compressor_stage(small_dataset, workdir):
    assert usage_exit("train", "--dataset", small_dataset, "--stage", "compressor", "--out", "c") == 2
    assert run("train", "--dataset", small_dataset, "--stage", "processor", "--epochs", 1, "--out", "p") == 0
    before = (workdir / "p" / "checkpoint.sdfw").read_bytes()
    assert run("train", "--dataset", small_dataset, "--stage", "compressor", "--epochs", 2,
               "--processor-ckpt", "p/checkpoint.sdfw", "--out", "c") == 0
    assert (workdir / "p" / "checkpoint.sdfw").read_bytes() == before
    bundled = load_checkpoint(workdir / "c" / "checkpoint.sdfw")
    for name, arr in load_checkpoint(workdir / "p" / "checkpoint.sdfw").items():
        assert bundled[name].tobytes() == arr.tobytes()
    assert run("eval", "--dataset", small_dataset, "--ckpt", "c/checkpoint.sdfw") == 0


def test_eval_oracle_and_schema(small_dataset, workdir, capsys):
    save_checkpoint(ExactOracle(16).state_dict(), workdir / "oracle.sdfw")
    assert run("eval", "--dataset", small_dataset, "--ckpt", "oracle.sdfw", "--json", "m.json") == 0
    report = json.loads((workdir / "m.json").read_text())
    assert report == {"model": "oracle", "l1": 0.0, "l2": 0.0, "linf": 0.0, "samples": 2}
    assert json.loads(capsys.readouterr().out) == report


def test_eval_trained_metrics_ordered(small_dataset, workdir):
    assert run("train", "--dataset", small_dataset, "--stage", "processor", "--epochs", 2, "--out", "p") == 0
    assert run("eval", "--dataset", small_dataset, "--ckpt", "p/checkpoint.sdfw", "--json", "m.json") == 0
    m = json.loads((workdir / "m.json").read_text())
    assert set(m) == {"model", "l1", "l2", "linf", "samples"}
    assert m["model"] == "processor" and m["samples"] == 2
    assert all(isinstance(m[k], float) for k in ("l1", "l2", "linf"))
    assert m["l1"] ** 2 <= m["l2"] <= m["linf"] ** 2


def test_eval_resolution_mismatch(small_dataset, workdir, capsys):
    save_checkpoint(ExactOracle(32).state_dict(), workdir / "o32.sdfw")
    assert run("eval", "--dataset", small_dataset, "--ckpt", "o32.sdfw") == 1
    err = capsys.readouterr().err
    assert "32" in err and "16" in err


def test_infer_matches_eval(workdir, capsys):
    assert run("gen", "--count", 2, "--res", 16, "--seed", 4, "--val", 1, "--out", "d.sdfd") == 0
    assert run("train", "--dataset", "d.sdfd", "--stage", "processor", "--epochs", 2, "--out", "p") == 0
    capsys.readouterr()
    assert run("eval", "--dataset", "d.sdfd", "--ckpt", "p/checkpoint.sdfw") == 0
    l1 = json.loads(capsys.readouterr().out)["l1"]
    assert run("export", "--in", "d.sdfd", "--index", 1, "--out", "img.pgm") == 0
    assert run("infer", "--image", "img.pgm", "--ckpt", "p/checkpoint.sdfw", "--out", "f.npy", "--pgm", "f.pgm") == 0
    pred = np.load(workdir / "f.npy")
    truth = load_dataset(workdir / "d.sdfd")[1].sdf
    assert np.mean(np.abs(pred.astype(np.float64) - truth)) == pytest.approx(l1, rel=1e-9)
    assert (workdir / "f.pgm").exists()


def test_infer_errors(small_dataset, workdir):
    save_checkpoint(ExactOracle(32).state_dict(), workdir / "o32.sdfw")
    assert run("export", "--in", small_dataset, "--out", "img.pgm") == 0
    assert run("infer", "--image", "img.pgm", "--ckpt", "o32.sdfw", "--out", "f.npy") == 1
    (workdir / "broken.pgm").write_bytes(b"P5\n16 16\n255\n" + b"\0" * 10)
    assert run("infer", "--image", "broken.pgm", "--ckpt", "o32.sdfw", "--out", "f.npy") == 1


def test_query_cell_centre_and_grad(workdir, capsys):
    field = np.random.default_rng(0).standard_normal((8, 8)).astype(np.float32)
    np.save(workdir / "f.npy", field)
    xy = cell_centers(8)
    (workdir / "p.csv").write_text(f"x,y\n{float(xy[2, 5, 0])!r},{float(xy[2, 5, 1])!r}\n0.5,0.5\n")
    assert run("query", "--sdf", "f.npy", "--points", "p.csv", "--grad", "--out", "o.csv") == 0
    lines = (workdir / "o.csv").read_text().splitlines()
    assert lines[0] == "x,y,value,dx,dy"
    assert float(lines[1].split(",")[2]) == float(field[2, 5])
    assert len(lines) == 3


def test_query_dataset_and_bad_csv(small_dataset, workdir, capsys):
    sdf = load_dataset(small_dataset)[3].sdf
    (workdir / "p.csv").write_text("0.03125,0.03125\n")
    assert run("query", "--sdf", small_dataset, "--index", 3, "--points", "p.csv") == 0
    assert float(capsys.readouterr().out.splitlines()[1].split(",")[2]) == float(sdf[0, 0])
    (workdir / "bad.csv").write_text("0.1,0.2\n0.3,zz\n")
    assert run("query", "--sdf", small_dataset, "--points", "bad.csv") == 1
    assert "bad.csv:2" in capsys.readouterr().err
    assert run("query", "--sdf", small_dataset, "--index", 99, "--points", "p.csv") == 1


def test_export_round_trip(small_dataset, workdir):
    assert run("export", "--in", small_dataset, "--index", 2, "--out", "g.pgm") == 0
    np.testing.assert_array_equal(read_binary_grid(workdir / "g.pgm"), load_dataset(small_dataset)[2].image)
    assert run("export", "--in", small_dataset, "--what", "sdf", "--out", "s.pgm") == 0


def test_corrupt_inputs_exit_1(small_dataset, workdir, capsys):
    data = small_dataset.read_bytes()
    (workdir / "bad.sdfd").write_bytes(b"ABCD" + data[4:])
    assert run("export", "--in", "bad.sdfd", "--out", "x.pgm") == 1
    assert "SDFD" in capsys.readouterr().err
    (workdir / "short.sdfd").write_bytes(data[:100])
    assert run("train", "--dataset", "short.sdfd", "--stage", "processor", "--out", "p") == 1
    assert run("eval", "--dataset", small_dataset, "--ckpt", "nope.sdfw") == 1
