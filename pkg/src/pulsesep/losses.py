"""Training objectives: reconstruction, encoding L2, sparse mixing, zero
reconstruction, and their weighted total.

All terms are computed through the autodiff ops, so the same functions serve
both gradient computation (inside a tape) and plain evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, bce, masked_l1, scale, sum_squares
from .model import (
    Encodings,
    MEAEConfig,
    MEAEParams,
    decode,
    offdiagonal_mask,
    reconstruct,
    zero_encodings,
)


class LossError(Exception):
    pass


@dataclass(frozen=True)
class LossConfig:
    """Weights for the loss terms. Defaults are the library's trained-with
    values; all are exposed for experimentation."""

    alpha: float = 1e-4
    lambda_mixing: float = 1.0
    lambda_zero_recon: float = 1.0
    lambda_z: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "lambda_mixing", "lambda_zero_recon", "lambda_z"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise LossError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    recon: float
    z_reg: float
    mixing: float
    zero_recon: float
    total: float


def recon_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean binary cross-entropy between the input and its reconstruction."""
    return bce(x_hat, x)


def encoding_l2(encodings: Encodings, num_encoders: int | None = None,
                elements_per_encoding: int | None = None) -> Tensor:
    """Sum of squared encodings scaled by 1/(N*h), averaged over the batch.

    h is the number of elements in one encoding (channels * length), so the
    penalty is independent of encoding size.
    """
    per = encodings.per_encoder
    n = num_encoders if num_encoders is not None else len(per)
    first = per[0].data
    h = elements_per_encoding if elements_per_encoding is not None \
        else first.shape[1] * first.shape[2]
    batch = first.shape[0]
    total = sum_squares(per[0])
    for z in per[1:]:
        total = add(total, sum_squares(z))
    return scale(total, 1.0 / (n * h * batch))


def sparse_mixing_loss(decoder: list, num_encoders: int, alpha: float) -> Tensor:
    """alpha times the L1 mass on off-diagonal weight blocks of the decoder.

    Applies to every decoder layer that admits the N x N block partition on
    both channel axes; the final single-channel projection is exempt (its
    output is not group-partitioned). A hidden layer that cannot be
    partitioned is a hard error.
    """
    terms = None
    for layer in decoder:
        if layer.kind == "pointwise-affine" and layer.out_channels == 1:
            continue
        mask = offdiagonal_mask(layer, num_encoders)
        term = masked_l1(layer.weights, mask)
        terms = term if terms is None else add(terms, term)
    if terms is None:
        return Tensor(0.0)
    return scale(terms, alpha)


def zero_recon_loss(params: MEAEParams, config: MEAEConfig) -> Tensor:
    """BCE between the decode of all-zero encodings and an all-zero target.

    Depends only on decoder parameters; encoder gradients are identically
    zero because no encoder participates in the graph.
    """
    z0 = zero_encodings(config, batch=1)
    out = decode(params, config, z0)
    target = Tensor(np.zeros(out.shape))
    return bce(out, target)


def _as_float(value, name: str) -> float:
    v = value.item() if isinstance(value, Tensor) else float(value)
    if not math.isfinite(v):
        raise LossError(f"loss term {name!r} is not finite: {v}")
    return v


def total_loss(recon, mixing, zero_recon, z_reg,
               cfg: LossConfig) -> LossBreakdown:
    """Weighted sum of the four parts, with every part checked finite."""
    r = _as_float(recon, "recon")
    m = _as_float(mixing, "mixing")
    zr = _as_float(zero_recon, "zero_recon")
    z = _as_float(z_reg, "z_reg")
    # association order matches the on-tape sum in training_losses
    total = r + (cfg.lambda_mixing * m
                 + (cfg.lambda_zero_recon * zr + cfg.lambda_z * z))
    return LossBreakdown(recon=r, z_reg=z, mixing=m, zero_recon=zr,
                         total=total)


def training_losses(params: MEAEParams, config: MEAEConfig, x: Tensor,
                    cfg: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """One full forward pass: reconstruction plus all four loss terms.

    Returns the on-tape total (for backward) and the numeric breakdown.
    """
    x_hat, encodings = reconstruct(params, config, x)
    recon = recon_loss(x, x_hat)
    z_reg = encoding_l2(encodings, config.num_encoders,
                        config.elements_per_encoding)
    mixing = sparse_mixing_loss(params.decoder, config.num_encoders, cfg.alpha)
    zero_recon = zero_recon_loss(params, config)
    total = add(recon, add(scale(mixing, cfg.lambda_mixing),
                           add(scale(zero_recon, cfg.lambda_zero_recon),
                               scale(z_reg, cfg.lambda_z))))
    breakdown = total_loss(recon, mixing, zero_recon, z_reg, cfg)
    return total, breakdown
