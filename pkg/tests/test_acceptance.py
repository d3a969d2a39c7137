"""End-to-end acceptance checks; each test records one PASS/FAIL line.

The desk-scale run trains both activation variants on 50,000 patch pairs
from synthetic text pages and takes roughly a quarter of an hour on one core.
"""

import math
import time

import numpy as np
import pytest

from docsr import cli, dataset as ds, evaluate, nncore, srnet, synth, trainer
from docsr.dataset import GrayImage
from docsr.nncore import Activation, ConvSpec, LayerParams
from docsr.trainer import TrainConfig

from test_nncore import naive_conv

DESK_PAIRS = 50_000
DESK_EPOCHS = 20
DESK_DPI = (100, 120, 150)
TRAIN_PAGES = 5
HELD_OUT_PAGES = 3


def test_c1_gradient_check(record):
    start = time.perf_counter()
    worst = 0.0
    names = []
    for name, layers, x, target in cli.grad_check_cases(1):
        for rep in nncore.grad_check(layers, x, target, tolerance=1e-4):
            worst = max(worst, rep.max_relative_error)
            names.append(f"{name}:{rep.parameter_name}")
    elapsed = time.perf_counter() - start
    covered = {n.split(":")[0] for n in names}
    assert {"conv5x5-relu", "conv1x1-prelu", "conv3x3-none", "net-relu", "net-prelu"} <= covered
    assert any("slopes" in n for n in names)
    ok = worst <= 1e-4 and elapsed < 60
    record(1, ok, f"max relative error {worst:.2e} over {len(names)} tensors (tol 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def test_c2_oracle_equivalence(record):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    shapes = 120
    for _ in range(shapes):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, 3))
        c_in, c_out = (int(v) for v in rng.integers(1, 6, 2))
        h = k + stride * int(rng.integers(0, 5))
        w = k + stride * int(rng.integers(0, 5))
        # pad must keep the stride divisible
        if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride:
            pad = 0
        spec = ConvSpec(c_in, c_out, k, stride=stride, zero_pad=pad)
        params = LayerParams(rng.normal(size=(k, k, c_in, c_out)), rng.normal(size=c_out))
        x = rng.normal(size=(h, w, c_in))
        got = nncore.conv_forward(x, params, spec)
        want = naive_conv(x, params.weights, params.biases, stride, pad)
        worst = max(worst, float(np.abs(got - want).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60
    record(2, ok, f"{shapes} random shapes, max abs diff {worst:.2e} (tol 1e-6), {elapsed:.1f}s")
    assert ok


def test_c3_shape_chain(record):
    model = srnet.build_model(Activation.PRELU, 0)
    x = np.zeros((16, 16, 1), np.float32)
    shapes = []
    for spec, params in model.layers:
        x, _ = nncore.layer_forward(x, spec, params)
        shapes.append(x.shape)
    expected = [(12, 12, 64), (12, 12, 44), (12, 12, 24), (12, 12, 14), (10, 10, 1)]
    ok = shapes == expected
    record(3, ok, " -> ".join(str(s) for s in shapes))
    assert ok


def test_c4_psnr_units(record):
    zeros = GrayImage(np.zeros((8, 8), np.uint8))
    full = GrayImage(np.full((8, 8), 255, np.uint8))
    zero_db = evaluate.psnr(zeros, full)
    forty_db = evaluate.psnr(np.zeros((8, 8)), np.full((8, 8), 2.55))
    same = evaluate.psnr(full, full)
    ok = abs(zero_db) <= 1e-9 and abs(forty_db - 40.0) <= 1e-9 and same == math.inf
    record(4, ok, f"error 255 -> {zero_db:.12f} dB, error 2.55 -> {forty_db:.12f} dB, identity -> {same}")
    assert ok


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Render pages, sample pairs, train ReLU and PReLU, evaluate on held-out pages."""
    root = tmp_path_factory.mktemp("desk")
    pages = [synth.render_page(500, 400, dpi=DESK_DPI[i % 3], seed=i)
             for i in range(TRAIN_PAGES + HELD_OUT_PAGES)]
    train_pages = pages[:TRAIN_PAGES]
    held_out = [(f"english_{DESK_DPI[i % 3]}_{i}", pages[i])
                for i in range(TRAIN_PAGES, TRAIN_PAGES + HELD_OUT_PAGES)]
    stats = ds.compute_norm_stats(train_pages)
    pairs = ds.sample_corpus(train_pages, DESK_PAIRS, 0, stats)
    ds.write_dataset(pairs, root / "desk.dsp", stats)
    data = ds.read_dataset(root / "desk.dsp")

    runs = {}
    for act in ("relu", "prelu"):
        cfg = TrainConfig(epochs=DESK_EPOCHS, learning_rate=1e-4, batch_size=32, activation=act)
        start = time.perf_counter()
        model, log = trainer.train(None, data, cfg)
        elapsed = time.perf_counter() - start
        report = evaluate.evaluate_corpus(model, held_out)
        (root / f"{act}.json").write_bytes(evaluate.render_report(report, "json"))
        runs[act] = {"model": model, "log": log, "seconds": elapsed, "report": report}
    return {"pairs": len(data), "train_pages": train_pages, "runs": runs}


@pytest.mark.slow
def test_c5_desk_scale(desk, record):
    relu, prelu = desk["runs"]["relu"], desk["runs"]["prelu"]
    gain = relu["report"].mean_model - relu["report"].mean_bicubic
    prelu_gain = prelu["report"].mean_model - prelu["report"].mean_bicubic
    margin = prelu["report"].mean_model - relu["report"].mean_model
    slowest = max(relu["seconds"], prelu["seconds"])
    ok = (desk["pairs"] >= 50_000 and len(desk["train_pages"]) >= 5 and len(relu["report"].rows) >= 3
          and gain >= 1.0 and margin >= -0.3 and slowest <= 30 * 60)
    record(5, ok, f"{desk['pairs']} pairs / {len(desk['train_pages'])} pages, {DESK_EPOCHS} epochs; "
                  f"held-out bicubic {relu['report'].mean_bicubic:.2f} dB, ReLU {relu['report'].mean_model:.2f} dB "
                  f"(gain {gain:+.2f}, need >= +1.00), PReLU {prelu['report'].mean_model:.2f} dB "
                  f"(gain {prelu_gain:+.2f}, PReLU - ReLU {margin:+.2f}, need >= -0.30); "
                  f"slowest run {slowest / 60:.1f} min (<= 30)")
    assert ok


@pytest.mark.slow
def test_c6_training_descent(desk, record):
    details = []
    ok = True
    for act, run in desk["runs"].items():
        losses = run["log"].train_losses
        ratio = losses[-1] / losses[0]
        finite = all(math.isfinite(v) for v in losses)
        ok &= finite and ratio < 0.5
        details.append(f"{act} {losses[0]:.4f} -> {losses[-1]:.4f} ({100 * ratio:.1f}%)")
    record(6, ok, "; ".join(details) + " (need < 50%, all finite)")
    assert ok


def test_c7_overfit(record):
    page = synth.render_page(160, 160, dpi=120, seed=33)
    stats = ds.compute_norm_stats([page])
    data = ds.PatchDataset.from_pairs(ds.sample_patch_pairs(page, 32, 5, stats), stats)
    model = srnet.build_model(Activation.RELU, 0, stats)
    initial = trainer.evaluate_loss(model, data)
    model, log = trainer.train(model, data, TrainConfig(epochs=200, rng_seed=0))
    final = trainer.evaluate_loss(model, data)
    ok = final < 0.1 * initial
    record(7, ok, f"32 pairs, 200 epochs: loss {initial:.3f} -> {final:.3f} "
                  f"({100 * final / initial:.2f}% of initial, need < 10%)")
    assert ok


def test_c8_determinism(tmp_path, record):
    page = synth.render_page(200, 200, dpi=120, seed=44)
    stats = ds.compute_norm_stats([page])
    data = ds.PatchDataset.from_pairs(ds.sample_patch_pairs(page, 3000, 8, stats), stats)
    results = []
    for act in ("relu", "prelu"):
        cfg = TrainConfig(epochs=3, rng_seed=11, activation=act)
        for run in range(2):
            model, log = trainer.train(None, data, cfg)
            srnet.save_model(model, tmp_path / f"{act}{run}.dsr")
            results.append((act, log.train_losses, (tmp_path / f"{act}{run}.dsr").read_bytes()))
    ok = all(results[i][1] == results[i + 1][1] and results[i][2] == results[i + 1][2] for i in (0, 2))
    record(8, ok, "two serial runs per activation (3000 pairs, 3 epochs): identical losses and model bytes")
    assert ok


def test_c9_round_trips(tmp_path, record):
    model = srnet.build_model(Activation.PRELU, 7, ds.NormStats(0.8))
    model.metadata["note"] = "round trip"
    srnet.save_model(model, tmp_path / "a.dsr")
    srnet.save_model(srnet.load_model(tmp_path / "a.dsr"), tmp_path / "b.dsr")
    model_ok = (tmp_path / "a.dsr").read_bytes() == (tmp_path / "b.dsr").read_bytes()

    page = synth.render_page(120, 120, dpi=100, seed=5)
    stats = ds.compute_norm_stats([page])
    pairs = ds.sample_patch_pairs(page, 64, 1, stats)
    ds.write_dataset(pairs, tmp_path / "a.dsp", stats)
    ds.write_dataset(ds.read_dataset(tmp_path / "a.dsp"), tmp_path / "b.dsp")
    data_ok = (tmp_path / "a.dsp").read_bytes() == (tmp_path / "b.dsp").read_bytes()

    every = GrayImage(np.arange(256, dtype=np.uint8).reshape(16, 16))
    norm_ok = all(ds.denormalize(ds.normalize(img, s), s) == img
                  for img in (every, page) for s in (stats, ds.NormStats(0.0), ds.NormStats(0.93)))
    ok = model_ok and data_ok and norm_ok
    record(9, ok, f"model bytes {model_ok}, dataset bytes {data_ok}, normalize/denormalize identity {norm_ok}")
    assert ok


def test_c10_ocr_excluded(record):
    record(10, None, "character/word OCR accuracy is out of scope (needs an external OCR engine); not evaluated")
