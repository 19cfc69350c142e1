"""Training loop: adaptive-moment gradient descent over the combined loss,
per-epoch checkpointing, optional per-encoder validation tracking, and
best-epoch selection.

Runs are deterministic for a fixed seed: batch order is a pure function of
(seed, epoch) and all arithmetic is float64 numpy, so repeated runs produce
byte-identical logs and checkpoints, and a resumed run continues exactly
where an uninterrupted one would be.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import AutodiffError, GradTape, Tensor, backward
from .losses import LossBreakdown, LossConfig, LossError, training_losses
from .model import (
    MEAEConfig,
    MEAEParams,
    ModelError,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

RESUME_MAGIC = b"MEA8"
RESUME_VERSION = 1


class TrainingError(Exception):
    pass


class TrainingDiverged(TrainingError):
    """Loss went non-finite; the last completed epoch's checkpoint survives."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_dir: str | None = None
    eval_every: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise TrainingError("learning_rate must be > 0")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.eval_every < 1:
            raise TrainingError("eval_every must be >= 1")
        if self.seed < 0:
            raise TrainingError("seed must be non-negative")


@dataclass
class EpochReport:
    epoch: int
    losses: LossBreakdown
    encoder_rmse: list[float] | None = None
    checkpoint_path: str | None = None


class Adam:
    """Adaptive moment estimation over an ordered list of parameter tensors."""

    def __init__(self, tensors: Sequence[Tensor], lr: float, beta1: float,
                 beta2: float, eps: float):
        self.tensors = list(tensors)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.tensors]
        self.v = [np.zeros_like(p.data) for p in self.tensors]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            g = p.grad
            if g is None:
                raise TrainingError("optimizer stepped before backward")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.grad = None


def _as_batch_array(dataset, input_length: int) -> np.ndarray:
    """Normalize segments / arrays into one [n, 1, L] float64 array."""
    rows = []
    for item in dataset:
        data = getattr(item, "data", item)
        arr = np.asarray(data, dtype=np.float64).reshape(-1)
        if arr.shape[0] != input_length:
            raise TrainingError(
                f"segment length {arr.shape[0]} != configured {input_length}"
            )
        rows.append(arr)
    if not rows:
        raise TrainingError("dataset is empty")
    x = np.stack(rows)[:, None, :]
    if x.min() < 0.0 or x.max() > 1.0:
        raise TrainingError("dataset values must lie in [0, 1]")
    return x


def _format_float(v: float) -> str:
    return repr(float(v))


def format_log_line(report: EpochReport, num_encoders: int) -> str:
    """epoch, five loss columns, then one RMSE column per encoder."""
    parts = [str(report.epoch)]
    lb = report.losses
    parts += [_format_float(v) for v in
              (lb.recon, lb.z_reg, lb.mixing, lb.zero_recon, lb.total)]
    if report.encoder_rmse is None:
        parts += [""] * num_encoders
    else:
        parts += [_format_float(v) for v in report.encoder_rmse]
    return ",".join(parts)


def _mean_breakdown(steps: list[LossBreakdown]) -> LossBreakdown:
    n = float(len(steps))
    return LossBreakdown(
        recon=sum(s.recon for s in steps) / n,
        z_reg=sum(s.z_reg for s in steps) / n,
        mixing=sum(s.mixing for s in steps) / n,
        zero_recon=sum(s.zero_recon for s in steps) / n,
        total=sum(s.total for s in steps) / n,
    )


def train(params: MEAEParams, config: MEAEConfig, dataset,
          train_cfg: TrainConfig, loss_cfg: LossConfig,
          validate_fn: Callable[[MEAEParams], Sequence[float]] | None = None,
          log_path: str | None = None, start_epoch: int = 0,
          optimizer: Adam | None = None) -> list[EpochReport]:
    """Run the training loop, mutating `params` in place.

    validate_fn, when given, maps current params to one HR RMSE per encoder;
    it is invoked every `eval_every` epochs and on the final epoch. Each epoch
    writes a 32-bit model checkpoint plus a float64 resume state into
    checkpoint_dir (when configured) and appends one log line to log_path.
    """
    x = _as_batch_array(dataset, config.input_length)
    n = x.shape[0]
    if optimizer is None:
        optimizer = Adam(params.parameters(), train_cfg.learning_rate,
                         train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    ckpt_dir = Path(train_cfg.checkpoint_dir) if train_cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a") if log_path else None

    reports: list[EpochReport] = []
    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            perm = np.random.default_rng(
                [train_cfg.seed, epoch]).permutation(n)
            step_losses: list[LossBreakdown] = []
            for lo in range(0, n, train_cfg.batch_size):
                batch = Tensor(x[perm[lo:lo + train_cfg.batch_size]])
                try:
                    with GradTape() as tape:
                        total, breakdown = training_losses(
                            params, config, batch, loss_cfg)
                    backward(total, tape, parameters=params.parameters())
                except (AutodiffError, LossError) as err:
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}: {err}"
                    ) from err
                optimizer.step()
                step_losses.append(breakdown)

            report = EpochReport(epoch, _mean_breakdown(step_losses))
            evaluate = (epoch + 1) % train_cfg.eval_every == 0 \
                or epoch == train_cfg.epochs - 1
            if validate_fn is not None and evaluate:
                report.encoder_rmse = [float(v) for v in validate_fn(params)]
            if ckpt_dir is not None:
                path = ckpt_dir / f"epoch_{epoch:04d}.meae"
                save_checkpoint(params, config, path)
                save_resume_state(ckpt_dir / f"epoch_{epoch:04d}.state",
                                  params, config, optimizer, epoch)
                report.checkpoint_path = str(path)
            reports.append(report)
            if log_fh is not None:
                log_fh.write(format_log_line(report, config.num_encoders) + "\n")
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()
    return reports


def select_best_epoch(reports: Sequence[EpochReport]) -> tuple[int, int]:
    """(epoch, encoder) minimizing validation HR RMSE.

    Ties break to the earlier epoch, then the lower encoder index. Reports
    without metrics are skipped; no metrics anywhere is an error.
    """
    best = None
    for report in reports:
        if report.encoder_rmse is None:
            continue
        for enc, rmse in enumerate(report.encoder_rmse):
            if not math.isfinite(rmse):
                continue
            if best is None or rmse < best[0]:
                best = (rmse, report.epoch, enc)
    if best is None:
        raise TrainingError("no validation metrics available in any report")
    return best[1], best[2]


# ---------------------------------------------------------------------------
# float64 resume state (model interchange checkpoints stay 32-bit)


def _write_f64_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TrainingError("truncated resume state file")
    return data


def _read_f64_record(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape)
    return name, arr


def save_resume_state(path, params: MEAEParams, config: MEAEConfig,
                      optimizer: Adam, epoch: int) -> None:
    """Full-precision snapshot: parameters plus optimizer moments."""
    named = params.named_tensors()
    meta = json.dumps(
        {"epoch": epoch, "t": optimizer.t, "config": config.to_json()},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(RESUME_MAGIC)
        fh.write(struct.pack("<I", RESUME_VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", 3 * len(named)))
        for (name, tensor), m, v in zip(named, optimizer.m, optimizer.v):
            _write_f64_record(fh, "param." + name, tensor.data)
            _write_f64_record(fh, "adam_m." + name, m)
            _write_f64_record(fh, "adam_v." + name, v)


def load_resume_state(path, train_cfg: TrainConfig
                      ) -> tuple[MEAEParams, MEAEConfig, Adam, int]:
    """Rebuild (params, config, optimizer, last_completed_epoch)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != RESUME_MAGIC:
            raise TrainingError(f"bad resume state magic in {path}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != RESUME_VERSION:
            raise TrainingError(f"unsupported resume state version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4))
        records = dict(_read_f64_record(fh) for _ in range(n_records))

    config = MEAEConfig.from_json(meta["config"])
    params = init_params(config)
    optimizer = Adam(params.parameters(), train_cfg.learning_rate,
                     train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    optimizer.t = int(meta["t"])
    idx = 0
    for name, tensor in params.named_tensors():
        for prefix, target in (("param.", tensor.data),
                               ("adam_m.", optimizer.m[idx]),
                               ("adam_v.", optimizer.v[idx])):
            key = prefix + name
            if key not in records:
                raise TrainingError(f"resume state missing record {key!r}")
            if records[key].shape != target.shape:
                raise TrainingError(f"resume record {key!r} has wrong shape")
            target[...] = records[key]
        idx += 1
    return params, config, optimizer, int(meta["epoch"])


def resume_training(state_path, dataset, train_cfg: TrainConfig,
                    loss_cfg: LossConfig,
                    validate_fn=None, log_path=None
                    ) -> tuple[list[EpochReport], MEAEParams, MEAEConfig]:
    """Continue a run from a saved state; epoch k+1 matches an uninterrupted
    run exactly because batch order depends only on (seed, epoch)."""
    params, config, optimizer, last_epoch = load_resume_state(
        state_path, train_cfg)
    reports = train(params, config, dataset, train_cfg, loss_cfg,
                    validate_fn=validate_fn, log_path=log_path,
                    start_epoch=last_epoch + 1, optimizer=optimizer)
    return reports, params, config


__all__ = [
    "Adam",
    "EpochReport",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingError",
    "format_log_line",
    "load_checkpoint",
    "load_resume_state",
    "resume_training",
    "save_checkpoint",
    "save_resume_state",
    "select_best_epoch",
    "train",
]
