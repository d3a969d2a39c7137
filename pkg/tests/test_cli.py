import csv
import io
import json

import numpy as np
import pytest

from docsr import cli, dataset as ds, srnet, synth
from docsr.dataset import GrayImage


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "corpus").mkdir()
    (root / "test").mkdir()
    for i in range(2):
        ds.save_image(synth.render_page(80, 90, dpi=120, seed=i), root / "corpus" / f"p{i}.pgm")
    ds.save_image(synth.render_page(48, 64, dpi=120, seed=9), root / "test" / "english_120_a.pgm")
    assert cli.main(["gen-data", str(root / "corpus"), "--out", str(root / "d.dsp"), "--count", "200",
                     "--seed", "3"]) == 0
    assert cli.main(["train", str(root / "d.dsp"), "--out", str(root / "m.dsr"), "--epochs", "2",
                     "--log", str(root / "log.jsonl"), "--activation", "prelu"]) == 0
    return root


def test_gen_data_and_train(workspace):
    assert len(ds.read_dataset(workspace / "d.dsp")) == 200
    model = srnet.load_model(workspace / "m.dsr")
    assert model.metadata["train_config"]["activation"] == "prelu"
    lines = (workspace / "log.jsonl").read_text().splitlines()
    assert "config" in json.loads(lines[0]) and len(lines) == 3


def test_super_resolve(workspace, capsysbinary):
    out = workspace / "sr.png"
    assert cli.main(["super-resolve", str(workspace / "m.dsr"), str(workspace / "test" / "english_120_a.pgm"),
                     "--out", str(out)]) == 0
    assert ds.load_image(out).shape == (48, 64)
    assert cli.main(["super-resolve", str(workspace / "m.dsr"), str(workspace / "test" / "english_120_a.pgm")]) == 0
    assert capsysbinary.readouterr().out.startswith(b"P5\n64 48\n255\n")


def test_super_resolve_small_page(workspace, tmp_path, capsys):
    ds.save_image(GrayImage(np.zeros((10, 10), np.uint8)), tmp_path / "tiny.pgm")
    code = cli.main(["super-resolve", str(workspace / "m.dsr"), str(tmp_path / "tiny.pgm"), "--out",
                     str(tmp_path / "o.pgm")])
    assert code == 2
    assert "PageTooSmall" in capsys.readouterr().err


def test_eval_csv(workspace, capsys):
    assert cli.main(["eval", str(workspace / "m.dsr"), str(workspace / "test"), "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["id", "bicubic_db", "model_db", "gain_db"]
    assert rows[1][0] == "english_120_a" and all(len(r) == 4 for r in rows)
    float(rows[1][1])


def test_eval_json_to_file(workspace):
    out = workspace / "r.json"
    assert cli.main(["eval", str(workspace / "m.dsr"), str(workspace / "test"), "--format", "json",
                     "--out", str(out)]) == 0
    assert json.loads(out.read_text())["rows"][0]["group"] == "english/120"


def test_inspect(workspace, capsys):
    assert cli.main(["inspect", str(workspace / "m.dsr")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "DSR1" and info["activation"] == "PRELU"
    assert [l["out"] for l in info["layers"]] == [64, 44, 24, 14, 1]
    assert info["parameters"] == 6081 + 146


def test_usage_errors(capsys):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["train"]) == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_error_on_bad_model(tmp_path, capsys):
    (tmp_path / "bad.dsr").write_bytes(b"nope")
    assert cli.main(["inspect", str(tmp_path / "bad.dsr")]) == 2
    assert cli.main(["inspect", str(tmp_path / "missing.dsr")]) == 2


def test_grad_check_command(capsys):
    assert cli.main(["grad-check", "--seed", "1", "--tol", "1e-4"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "net-prelu" in out and "slopes" in out


def test_grad_check_impossible_tolerance(capsys):
    assert cli.main(["grad-check", "--seed", "1", "--tol", "0"]) == 2
