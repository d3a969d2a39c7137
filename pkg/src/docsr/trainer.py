"""Mini-batch SGD-with-momentum training of the super-resolution network."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nncore
from .dataset import PatchDataset, read_dataset
from .errors import EmptyDataset, NonFiniteLoss
from .nncore import Activation
from .srnet import SrModel, build_model, save_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 32
    momentum: float = 0.9
    rng_seed: int = 0
    activation: str = "relu"
    checkpoint_every: int = 10
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.activation not in ("relu", "prelu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def activation_kind(self) -> Activation:
        return Activation.PRELU if self.activation == "prelu" else Activation.RELU


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    seconds: float
    slopes: Optional[dict] = None


@dataclass
class TrainLog:
    config: dict
    epochs: list = field(default_factory=list)

    @property
    def train_losses(self):
        return [r.train_loss for r in self.epochs]

    def header_line(self) -> str:
        return json.dumps({"config": self.config}, sort_keys=True)

    @staticmethod
    def record_line(rec: EpochRecord) -> str:
        d = {k: v for k, v in asdict(rec).items() if not (k == "slopes" and v is None)}
        return json.dumps(d, sort_keys=True)

    def to_jsonl(self) -> str:
        return "\n".join([self.header_line()] + [self.record_line(r) for r in self.epochs]) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        lines = [json.loads(line) for line in text.splitlines() if line.strip()]
        out = cls(lines[0]["config"])
        out.epochs = [EpochRecord(**d) for d in lines[1:]]
        return out


def shuffle_indices(n: int, epoch: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_step(model: SrModel, lr_batch, hr_batch, learning_rate, momentum) -> float:
    """One zero-grad / forward / backward / update cycle; returns the batch loss."""
    model.zero_grad()
    out, cache = nncore.stack_forward(model.layers, lr_batch)
    loss, grad = nncore.mse_loss(out, hr_batch)
    if not math.isfinite(loss):
        return loss
    nncore.stack_backward(model.layers, cache, grad)
    for _, params in model.layers:
        nncore.sgd_momentum_step(params, learning_rate, momentum)
    return loss


def evaluate_loss(model: SrModel, data: PatchDataset, batch_size: int = 256) -> float:
    total = 0.0
    for lr, hr in data.batches(batch_size):
        out, _ = nncore.stack_forward(model.layers, lr)
        loss, _ = nncore.mse_loss(out, hr)
        total += loss * len(lr)
    return total / len(data)


def slope_summary(model: SrModel) -> Optional[dict]:
    if model.activation != Activation.PRELU:
        return None
    slopes = np.concatenate([p.slopes for _, p in model.layers if p.slopes is not None])
    return {
        "min": float(slopes.min()),
        "mean": float(slopes.mean()),
        "max": float(slopes.max()),
        "outside_0_1": int(np.sum((slopes <= 0) | (slopes >= 1))),
    }


def split_validation(data: PatchDataset, fraction: float, seed: int):
    n_val = int(len(data) * fraction)
    if n_val == 0:
        return data, None
    perm = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,))).permutation(len(data))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def checkpoint(model: SrModel, log_: TrainLog, directory, epoch: int) -> Path:
    """Save ``model_epoch_NNNN.dsr`` and append new epoch records to ``train_log.jsonl``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"model_epoch_{epoch:04d}.dsr"
    save_model(model, path)
    log_path = directory / "train_log.jsonl"
    written = 0
    if log_path.exists():
        written = max(0, sum(1 for line in log_path.read_text().splitlines() if line.strip()) - 1)
    with open(log_path, "a") as fh:
        if not log_path.stat().st_size:
            fh.write(log_.header_line() + "\n")
        for rec in log_.epochs[written:]:
            fh.write(TrainLog.record_line(rec) + "\n")
    return path


def train(model: Optional[SrModel], data, cfg: TrainConfig, checkpoint_dir=None):
    """Train ``model`` in place on ``data`` (a PatchDataset or dataset file path).

    ``model=None`` builds a fresh He-initialized network from ``cfg``.
    Returns ``(model, TrainLog)``.
    """
    if not isinstance(data, PatchDataset):
        data = read_dataset(data)
    if len(data) == 0:
        raise EmptyDataset("training set is empty")
    if model is None:
        model = build_model(cfg.activation_kind, cfg.rng_seed, data.stats)
    model.norm_stats = data.stats
    model.metadata.update({"train_config": asdict(cfg), "train_pairs": len(data)})

    train_set, val_set = split_validation(data, cfg.validation_fraction, cfg.rng_seed)
    if len(train_set) == 0:
        raise EmptyDataset("validation split left no training pairs")
    tlog = TrainLog(asdict(cfg))
    last_good = model.copy()

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = shuffle_indices(len(train_set), epoch, cfg.rng_seed)
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss = train_step(model, train_set.lr[idx], train_set.hr[idx], cfg.learning_rate, cfg.momentum)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss in epoch {epoch + 1}", last_good=last_good)
            total += loss * len(idx)
        train_loss = total / len(train_set)
        val_loss = evaluate_loss(model, val_set) if val_set is not None else None
        rec = EpochRecord(epoch + 1, train_loss, val_loss, time.perf_counter() - start, slope_summary(model))
        tlog.epochs.append(rec)
        log.info("epoch %d train %.5f val %s (%.1fs)", rec.epoch, train_loss, val_loss, rec.seconds)
        last_good = model.copy()
        if checkpoint_dir is not None and cfg.checkpoint_every > 0:
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                checkpoint(model, tlog, checkpoint_dir, epoch + 1)
    return model, tlog
