"""Minibatch training of LWGNet (and its ablation variants) on a synthesized dataset."""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .field import read_cfld
from .forward import FPMSystem, MeasurementStack, load_manifest, manifest_samples, read_fpmd
from .geometry import SystemGeometry
from .losses import no_perceptual, total_loss
from .metrics import psnr
from .network import LWGNetConfig, LWGNetParams, forward_graph, run_network
from .optim import AdamState, PlateauScheduler, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 0.05
    lambda3: float = 1.0
    lr: float = 1e-4
    batch_size: int = 4
    epochs: int = 100
    scheduler_factor: float = 0.1
    scheduler_patience: int = 10
    seed: int = 0
    bit_depth: int = 16
    max_steps: int | None = None
    min_lr: float = 1e-7

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def lambdas(self):
        return (self.lambda1, self.lambda2, self.lambda3)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Sample:
    sid: str
    meas: MeasurementStack
    gt: np.ndarray


def load_split(manifest_path, split: str, bit_depth: int) -> list[Sample]:
    manifest, root = load_manifest(manifest_path)
    out = []
    for s in manifest_samples(manifest, split):
        key = str(bit_depth)
        if key not in s["stacks"]:
            raise TrainingError(f"sample {s['id']} has no {bit_depth}-bit stack")
        out.append(Sample(s["id"], read_fpmd(root / s["stacks"][key]), read_cfld(root / s["object"])))
    return out


def sample_loss_and_grads(params: LWGNetParams, sample: Sample, lambdas, system: FPMSystem, perceptual=no_perceptual):
    with ad.Tape() as tape:
        tensors = params.tensors()
        pred = forward_graph(sample.meas, params, tensors, system)
        loss = total_loss(pred, sample.gt, lambdas, perceptual)
    grads = ad.backward(tape, loss, list(tensors.values()))
    tape.clear()
    return float(loss.value), OrderedDict(zip(tensors.keys(), grads))


def evaluate_samples(params: LWGNetParams, samples, lambdas, system: FPMSystem):
    """Mean total loss and mean amplitude PSNR over ``samples``."""
    losses, scores = [], []
    for s in samples:
        pred = run_network(s.meas, params, system)
        with ad.no_tape():
            losses.append(float(total_loss(pred, s.gt, lambdas).value))
        scores.append(psnr(np.abs(pred), np.abs(s.gt), 1.0))
    return float(np.mean(losses)), float(np.mean(scores))


def _batch_grads(params, batch, lambdas, system, pool, perceptual):
    results = list(pool.map(lambda s: sample_loss_and_grads(params, s, lambdas, system, perceptual), batch))
    # fixed-order reduction keeps results independent of the worker count
    total = OrderedDict((k, np.zeros_like(v)) for k, v in params.arrays.items())
    losses = []
    for loss, g in results:
        losses.append(loss)
        for k in total:
            total[k] += g[k]
    n = len(batch)
    return losses, OrderedDict((k, v / n) for k, v in total.items())


def train(
    manifest_path,
    cfg: TrainConfig,
    model_cfg: LWGNetConfig,
    out_path=None,
    threads: int = 1,
    perceptual=no_perceptual,
    train_samples=None,
    val_samples=None,
    init_params: LWGNetParams | None = None,
):
    """Train and return ``(best_params, metrics_rows)``.

    Writes ``out_path`` (``.lwgw`` + sidecar) holding the best-validation
    weights and ``<out_path>.metrics.csv`` when ``out_path`` is given.
    """
    rng = np.random.default_rng(cfg.seed)
    if train_samples is None:
        train_samples = load_split(manifest_path, "train", cfg.bit_depth)
    if val_samples is None:
        val_samples = load_split(manifest_path, "val", cfg.bit_depth)
    if not train_samples:
        raise TrainingError("no training samples in the manifest")
    geometry: SystemGeometry = train_samples[0].meas.geometry
    system = FPMSystem(geometry, train_samples[0].meas.order)
    if model_cfg.variant != "post":
        model_cfg.n_leds = system.n_leds
    params = init_params.copy() if init_params is not None else LWGNetParams.init(model_cfg, rng)
    best = params.copy()
    state = AdamState()
    sched = PlateauScheduler(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience, min_lr=cfg.min_lr)
    rows = []
    best_val = float("inf")
    steps = 0
    if cfg.epochs == 0:
        log.warning("epochs=0: writing initialized weights without training")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(train_samples))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    break
                batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
                losses, grads = _batch_grads(params, batch, cfg.lambdas, system, pool, perceptual)
                if not all(np.isfinite(losses)):
                    _dump_batch(out_path, epoch, batch, losses)
                    raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {[s.sid for s in batch]}")
                new, state = adam_step(params.arrays, grads, state, sched.lr)
                params = LWGNetParams(params.cfg, OrderedDict(new))
                epoch_losses.extend(losses)
                steps += 1
            if not epoch_losses:
                break
            val_loss, val_psnr = evaluate_samples(params, val_samples, cfg.lambdas, system) if val_samples else (
                float(np.mean(epoch_losses)),
                float("nan"),
            )
            rows.append(
                {
                    "epoch": epoch,
                    "train_loss": float(np.mean(epoch_losses)),
                    "val_loss": val_loss,
                    "val_psnr": val_psnr,
                    "lr": sched.lr,
                }
            )
            if val_loss < best_val:
                best_val = val_loss
                best = params.copy()
            sched.step(val_loss)
            log.info("epoch %d step %d train %.5f val %.5f psnr %.3f lr %.2e", epoch, steps, rows[-1]["train_loss"], val_loss, val_psnr, sched.lr)
    if out_path is not None:
        best.save(out_path)
        write_metrics_csv(str(out_path) + ".metrics.csv", rows)
    return best, rows


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_psnr", "lr"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_loss"]), repr(r["val_psnr"]), repr(r["lr"])])


def _dump_batch(out_path, epoch, batch, losses) -> None:
    if out_path is None:
        return
    dump = {"epoch": epoch, "samples": [s.sid for s in batch], "losses": [repr(x) for x in losses]}
    Path(str(out_path) + ".nan_dump.json").write_text(json.dumps(dump, indent=2))


def config_snapshot(cfg: TrainConfig, model_cfg: LWGNetConfig) -> dict:
    return {"train": asdict(cfg), "model": asdict(model_cfg)}
