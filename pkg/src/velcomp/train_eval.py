"""Losses, the training loop, RMSE evaluation and velocity-distribution export."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .core_types import Dataset, EventFrame, EventWindow, PitchSpec, child_rng
from .models import ModelSpec, VelocityModel, build_model, prepare_inputs
from .models import predict_batch
from .models.rule import RuleConfig

log = logging.getLogger(__name__)

HIST_EDGES = np.arange(0.0, 12.0 + 1e-9, 0.5)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 20
    lr: float = 1e-4
    seed: int = 0
    k: int = 10
    clip_norm: float = 10.0
    max_seconds: float | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batchnorm needs two rows)")
        if self.max_epochs < 1 or self.k < 1:
            raise ValueError("max_epochs and k must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if not self.lr > 0 or not self.clip_norm > 0:
            raise ValueError("lr and clip_norm must be positive")


# ----------------------------------------------------------------------------
# losses


def _step_term(v_pred: dc.Tensor, v_true: np.ndarray, kl: dc.Tensor) -> dc.Tensor:
    # (1/N) sum_j |v~ - v|^2 averaged over the batch is twice the elementwise mean
    return dc.add(dc.scale(dc.mse(v_pred, v_true), 2.0), kl)


def loss_D(model: VelocityModel, batch, rng: np.random.Generator | None = None,
           pitch: PitchSpec | None = None) -> dc.Tensor:
    """Batch mean of (1/N) sum_j |v~_j - v_j|^2 + KL for a single-frame model.

    ``batch`` is a list of :class:`EventFrame` or an already built graph batch.
    The forward pass runs in teacher-forced ("train") mode; batchnorm mode is
    whatever the model is currently set to.
    """
    if model.spec.recurrent:
        raise TypeError(f"loss_D is for single-frame models, {model.spec.arch} is recurrent")
    g = batch if not isinstance(batch, (list, tuple)) else prepare_inputs(model, batch, pitch)
    out = model.forward(g, "train", rng)
    return _step_term(out.v[0], g.v, out.kl[0])


def loss_Dstar(model: VelocityModel, batch, rng: np.random.Generator | None = None,
               pitch: PitchSpec | None = None) -> dc.Tensor:
    """As :func:`loss_D`, additionally averaged over the k window steps."""
    if not model.spec.recurrent:
        raise TypeError(f"loss_Dstar is for recurrent models, {model.spec.arch} is not")
    steps = batch if batch and not isinstance(batch[0], EventWindow) else prepare_inputs(model, batch, pitch)
    out = model.forward(steps, "train", rng)
    total = None
    for v, kl, g in zip(out.v, out.kl, steps):
        term = _step_term(v, g.v, kl)
        total = term if total is None else dc.add(total, term)
    return dc.scale(total, 1.0 / len(steps))


def batch_loss(model: VelocityModel, inputs, rng=None) -> dc.Tensor:
    return loss_Dstar(model, inputs, rng) if model.spec.recurrent else loss_D(model, inputs, rng)


# ----------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: VelocityModel
    log: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = -1
    best_val: float = float("inf")
    seconds: float = 0.0

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, tr, va in self.log:
                w.writerow([e, repr(float(tr)), repr(float(va))])


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i:i + size] for i in range(0, n, size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        # a single leftover row cannot be batch-normalized; fold it into its neighbour
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _check_kind(spec: ModelSpec, ds: Dataset | Sequence) -> list:
    samples = list(ds.samples if isinstance(ds, Dataset) else ds)
    if isinstance(ds, Dataset):
        want = "Dstar" if spec.recurrent else "D"
        if ds.kind != want:
            raise TypeError(f"{spec.arch} trains on {want}, got a {ds.kind} dataset")
    return samples


def dataset_loss(model: VelocityModel, samples: Sequence, batch_size: int, rng_seed: tuple,
                 pitch: PitchSpec | None = None) -> float:
    """Sample-weighted mean loss over ``samples`` in eval (frozen batchnorm) mode."""
    was = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            inputs = prepare_inputs(model, chunk, pitch)
            loss = batch_loss(model, inputs, child_rng(*rng_seed, i))
            total += loss.item() * len(chunk)
            count += len(chunk)
    finally:
        model.train(was)
    return total / count


def _snapshot(model: VelocityModel) -> tuple[dict, dict]:
    return (
        {k: p.data.copy() for k, p in model.named_parameters()},
        {k: b.copy() for k, b in model.named_buffers()},
    )


def _restore(model: VelocityModel, snap) -> None:
    params, buffers = snap
    for k, p in model.named_parameters():
        p.data = params[k].copy()
    for k, b in buffers.items():
        model.set_buffer(k, b)


def train(
    spec: ModelSpec,
    train_set: Dataset | Sequence,
    val_set: Dataset | Sequence,
    cfg: TrainConfig | None = None,
    pitch: PitchSpec | None = None,
    model: VelocityModel | None = None,
    log_path=None,
) -> TrainResult:
    """Minibatch Adam with early stopping on the validation loss.

    Epochs are numbered from 0.  Training stops once ``patience`` + 1
    consecutive epochs fail to improve the best validation loss, after
    ``max_epochs`` or when ``cfg.max_seconds`` of wall time have elapsed.
    The returned model carries the best-validation parameters.
    """
    cfg = cfg or TrainConfig()
    if spec.arch == "rule_based":
        raise ValueError("rule_based has no parameters to train")
    tr = _check_kind(spec, train_set)
    va = _check_kind(spec, val_set)
    if not tr:
        raise ValueError("training split is empty")
    if not va:
        raise ValueError("validation split is empty")
    model = model or build_model(spec)
    params = model.parameters()
    names = [k for k, _ in model.named_parameters()]
    opt = dc.OptimState(lr=cfg.lr)
    result = TrainResult(model)
    best = None
    bad = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        model.train(True)
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(tr), cfg.batch_size, child_rng(cfg.seed, 1, epoch))):
            chunk = [tr[i] for i in idx]
            inputs = prepare_inputs(model, chunk, pitch)
            with dc.Tape() as tape:
                loss = batch_loss(model, inputs, child_rng(cfg.seed, 2, epoch, b))
                grads = tape.gradient(loss, params)
            grads, _ = dc.clip_grad_norm(grads, cfg.clip_norm)
            dc.adam_step(params, grads, opt, names)
            total += loss.item() * len(chunk)
            count += len(chunk)
        train_loss = total / count
        val_loss = dataset_loss(model, va, cfg.batch_size, (cfg.seed, 3, epoch), pitch)
        result.log.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_loss < result.best_val:
            result.best_val, result.best_epoch = val_loss, epoch
            best = _snapshot(model)
            bad = 0
        else:
            bad += 1
            if bad > cfg.patience:
                break
        if cfg.max_seconds is not None and time.perf_counter() - t0 > cfg.max_seconds:
            log.info("time budget reached after epoch %d", epoch)
            break
    _restore(model, best)
    model.eval()
    result.seconds = time.perf_counter() - t0
    if log_path is not None:
        result.write_log(log_path)
    return result


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    rmse: float
    rmse_std: float
    per_event: list
    per_inference: list
    n_inferences: int
    hist_edges: list
    hist_pred: list
    hist_true: list
    arch: str = ""
    event_keys: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "predicted", "true"])
            for lo, hi, p, t in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_pred, self.hist_true):
                w.writerow([lo, hi, p, t])


def per_event_rmse(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    """sqrt((1/N) sum_j |v~_j - v_j|^2) for arrays of shape (B, N, 2)."""
    return np.sqrt(np.mean(np.sum((pred - true) ** 2, axis=-1), axis=-1))


def speed_histogram(v: np.ndarray) -> np.ndarray:
    """Counts of per-player speeds in the fixed 0.5 m/s bins up to 12 m/s (top bin closed)."""
    speed = np.linalg.norm(np.asarray(v).reshape(-1, 2), axis=1)
    counts, _ = np.histogram(np.minimum(speed, HIST_EDGES[-1]), bins=HIST_EDGES)
    return counts


def predict(model: VelocityModel, samples: Sequence, rng: np.random.Generator, batch_size: int = 256,
            pitch: PitchSpec | None = None, rule_cfg: RuleConfig | None = None) -> np.ndarray:
    """Inference-mode velocities (B, 22, 2), m/s, in each target frame's orientation."""
    out = [
        predict_batch(model, samples[i:i + batch_size], rng, pitch, rule_cfg)
        for i in range(0, len(samples), batch_size)
    ]
    return np.concatenate(out, axis=0)


def evaluate_rmse(
    model: VelocityModel,
    test_set: Dataset | Sequence,
    n_inferences: int = 10,
    seed: int = 0,
    batch_size: int = 256,
    pitch: PitchSpec | None = None,
    rule_cfg: RuleConfig | None = None,
) -> EvalReport:
    """Average test RMSE over ``n_inferences`` inference runs.

    Recurrent models are scored on the final (target) step of each window.
    Deterministic models are run once; their runs are identical by
    construction.  The predicted-speed histogram uses the first run.
    """
    samples = list(test_set.samples if isinstance(test_set, Dataset) else test_set)
    if not samples:
        raise ValueError("test set is empty")
    if n_inferences < 1:
        raise ValueError("n_inferences must be at least 1")
    frames = [s.target if isinstance(s, EventWindow) else s for s in samples]
    true = np.stack([f.player_v for f in frames])
    if frames[0].normalized:
        true = true * (pitch or PitchSpec()).scale
    stochastic = model.spec.variational
    runs = []
    first_pred = None
    for r in range(n_inferences if stochastic else 1):
        pred = predict(model, samples, child_rng(seed, 4, r), batch_size, pitch, rule_cfg)
        if first_pred is None:
            first_pred = pred
        runs.append(per_event_rmse(pred, true))
    while len(runs) < n_inferences:
        runs.append(runs[0].copy())
    runs = np.stack(runs)
    means = runs.mean(axis=1)
    return EvalReport(
        rmse=float(means.mean()),
        rmse_std=float(means.std()),
        per_event=runs.mean(axis=0).tolist(),
        per_inference=means.tolist(),
        n_inferences=n_inferences,
        hist_edges=HIST_EDGES.tolist(),
        hist_pred=speed_histogram(first_pred).tolist(),
        hist_true=speed_histogram(true).tolist(),
        arch=model.spec.arch,
        event_keys=[list(Dataset.target_key(f)) for f in frames],
    )


def export_velocities(model: VelocityModel, samples: Sequence, path, seed: int = 0,
                      pitch: PitchSpec | None = None) -> None:
    """CSV of per-player true and completed velocities for every target event."""
    frames = [s.target if isinstance(s, EventWindow) else s for s in samples]
    pred = predict(model, list(samples), child_rng(seed, 5), pitch=pitch)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["match_id", "half", "event_index", "player", "vx_true", "vy_true", "vx_pred", "vy_pred"])
        for f, p in zip(frames, pred):
            for j in range(f.n_players):
                w.writerow([f.match_id, f.half, f.event_index, j, *f.player_v[j], *p[j]])
