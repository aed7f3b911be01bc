"""Supervised and domain-adversarial losses.

The adversarial losses come in two flavors: hard labels d in {0, 1} and soft
labels d in [0, 1], where the soft label equals the mixing weight delta of
the sample. Both are log-likelihood forms (always <= 0); the trainer
minimizes their negation (binary cross-entropy) with respect to the
discriminators, and the gradient reversal layer supplies the feature
extractor's opposing direction.

``adversarial_loss_hard`` / ``adversarial_loss_mixed`` are plain numeric
functions (floats or numpy arrays); ``domain_bce`` is the tape-building
counterpart used inside training steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import Annotation
from .model import ModelConfig

# discriminator outputs are clamped away from {0, 1} where the log diverges
PROB_EPS = 1e-7

Numeric = Union[float, np.ndarray]


@dataclass(frozen=True)
class LossWeights:
    lambda_sp: float = 0.1
    lambda_ch: float = 0.1
    lambda_ins: float = 0.1

    def __post_init__(self) -> None:
        for name in ("lambda_sp", "lambda_ch", "lambda_ins"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def __getitem__(self, level: str) -> float:
        return getattr(self, f"lambda_{level}")


def _clamped(disc_output: Numeric) -> np.ndarray:
    return np.clip(np.asarray(disc_output, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


def adversarial_loss_hard(d: int, disc_output: Numeric) -> Numeric:
    """d*log(D) + (1-d)*log(1-D) for a hard domain label d in {0, 1}."""
    if d not in (0, 1):
        raise ValueError(f"hard domain label must be 0 or 1, got {d}")
    return adversarial_loss_mixed(float(d), disc_output)


def adversarial_loss_mixed(d_soft: float, disc_output: Numeric) -> Numeric:
    """Soft-label variant: d~*log(D) + (1-d~)*log(1-D), d~ in [0, 1].

    Over the clamped D range this is uniquely maximized at D = d~ and reduces
    exactly to the hard-label loss at d~ in {0, 1}.
    """
    if not (np.isfinite(d_soft) and 0.0 <= d_soft <= 1.0):
        raise ValueError(f"soft domain label must be in [0, 1], got {d_soft}")
    dc = _clamped(disc_output)
    out = d_soft * np.log(dc) + (1.0 - d_soft) * np.log(1.0 - dc)
    return float(out) if out.ndim == 0 else out


def domain_bce(d_soft: float, disc_output: Tensor) -> Tensor:
    """Tape-recorded negation of the soft-label adversarial loss (scalar)."""
    if not (np.isfinite(d_soft) and 0.0 <= d_soft <= 1.0):
        raise ValueError(f"soft domain label must be in [0, 1], got {d_soft}")
    dc = ad.clip(disc_output, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.add(
        ad.mul(d_soft, ad.log(dc)),
        ad.mul(1.0 - d_soft, ad.log(ad.sub(1.0, dc))),
    )
    return ad.mul(-1.0, ad.mean(ll))


def one_hot_targets(
    annotations: Sequence[Annotation], cfg: ModelConfig
) -> np.ndarray:
    """Per-cell one-hot class targets; empty cells get the background class."""
    targets = np.zeros((cfg.num_cells, cfg.num_outputs))
    targets[:, cfg.num_classes] = 1.0
    for a in annotations:
        if not (0 <= a.cell_row < cfg.grid_size and 0 <= a.cell_col < cfg.grid_size):
            raise ValueError(f"annotation cell ({a.cell_row}, {a.cell_col}) outside grid")
        if not (0 <= a.class_id < cfg.num_classes):
            raise ValueError(f"annotation class_id {a.class_id} out of range")
        cell = a.cell_row * cfg.grid_size + a.cell_col
        targets[cell] = 0.0
        targets[cell, a.class_id] = 1.0
    return targets


def supervised_loss(
    logits: Tensor, annotations: Sequence[Annotation], cfg: ModelConfig
) -> Tensor:
    """Mean per-cell cross-entropy against the one-hot grid targets."""
    targets = one_hot_targets(annotations, cfg)
    shift = logits.value.max(axis=1, keepdims=True)  # constant, for stability
    shifted = ad.sub(logits, shift)
    log_norm = ad.log(ad.sum_(ad.exp(shifted), axis=1, keepdims=True))
    log_probs = ad.sub(shifted, log_norm)
    picked = ad.sum_(ad.mul(log_probs, targets), axis=1, keepdims=True)
    return ad.mul(-1.0, ad.mean(picked))


def total_loss(
    l_sup: Tensor, l_sp: Tensor, l_ch: Tensor, l_ins: Tensor, weights: LossWeights
) -> Tensor:
    """l_sup + lambda_sp*l_sp + lambda_ch*l_ch + lambda_ins*l_ins."""
    out = ad.add(l_sup, ad.mul(weights.lambda_sp, l_sp))
    out = ad.add(out, ad.mul(weights.lambda_ch, l_ch))
    return ad.add(out, ad.mul(weights.lambda_ins, l_ins))
