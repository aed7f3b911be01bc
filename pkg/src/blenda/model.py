"""Toy grid detector and the three-level domain discriminator bank.

The detector embeds each grid cell's pixel patch, runs one dense trunk
layer, and predicts per-cell class logits (object classes plus background).
Three alignment granularities feed the discriminators:

    sp  -- spatial mean over cells of the feature map
    ch  -- per-cell mean over feature channels
    ins -- per-cell features averaged with detection-head foreground weights

Each discriminator is a 2-layer perceptron ending in a sigmoid scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEVELS = ("sp", "ch", "ins")

BACKBONE_KEYS = ("embed_w", "embed_b", "trunk_w", "trunk_b")
HEAD_KEYS = ("head_w", "head_b")
DETECTOR_KEYS = BACKBONE_KEYS + HEAD_KEYS


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    grid_size: int = 4
    num_classes: int = 3
    feature_dim: int = 32
    disc_hidden: int = 16

    def __post_init__(self) -> None:
        if self.image_size % self.grid_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by grid_size {self.grid_size}"
            )

    @property
    def cell_size(self) -> int:
        return self.image_size // self.grid_size

    @property
    def num_cells(self) -> int:
        return self.grid_size**2

    @property
    def patch_dim(self) -> int:
        return self.cell_size * self.cell_size * 3

    @property
    def num_outputs(self) -> int:
        # object classes + background
        return self.num_classes + 1

    def query_dim(self, level: str) -> int:
        if level == "ch":
            return self.num_cells
        return self.feature_dim


def _dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def init_detector_params(cfg: ModelConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    return {
        "embed_w": _dense_init(rng, cfg.patch_dim, cfg.feature_dim),
        "embed_b": np.zeros((1, cfg.feature_dim)),
        "trunk_w": _dense_init(rng, cfg.feature_dim, cfg.feature_dim),
        "trunk_b": np.zeros((1, cfg.feature_dim)),
        "head_w": _dense_init(rng, cfg.feature_dim, cfg.num_outputs),
        "head_b": np.zeros((1, cfg.num_outputs)),
    }


def init_discriminator_params(cfg: ModelConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    params = {}
    for level in LEVELS:
        n_in = cfg.query_dim(level)
        params[f"disc_{level}_w1"] = _dense_init(rng, n_in, cfg.disc_hidden)
        params[f"disc_{level}_b1"] = np.zeros((1, cfg.disc_hidden))
        params[f"disc_{level}_w2"] = _dense_init(rng, cfg.disc_hidden, 1)
        params[f"disc_{level}_b2"] = np.zeros((1, 1))
    return params


def discriminator_keys(level: str) -> Tuple[str, ...]:
    return tuple(f"disc_{level}_{suffix}" for suffix in ("w1", "b1", "w2", "b2"))


def image_to_patches(image: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Row-major (num_cells, patch_dim) view of an image's grid cells."""
    if image.shape != (cfg.image_size, cfg.image_size, 3):
        raise ValueError(
            f"expected image shape {(cfg.image_size, cfg.image_size, 3)}, got {image.shape}"
        )
    c = cfg.cell_size
    patches = (
        image.reshape(cfg.grid_size, c, cfg.grid_size, c, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(cfg.num_cells, cfg.patch_dim)
    )
    return np.ascontiguousarray(patches)


def detector_forward(
    leaves: Dict[str, Tensor], patches: np.ndarray
) -> Tuple[Tensor, Tensor]:
    """Forward pass on the tape; returns (features, logits)."""
    x = Tensor(patches)
    h = ad.relu(ad.add(ad.matmul(x, leaves["embed_w"]), leaves["embed_b"]))
    features = ad.relu(ad.add(ad.matmul(h, leaves["trunk_w"]), leaves["trunk_b"]))
    logits = ad.add(ad.matmul(features, leaves["head_w"]), leaves["head_b"])
    return features, logits


def detector_forward_np(
    params: Dict[str, np.ndarray], patches: np.ndarray
) -> np.ndarray:
    """Tape-free forward returning per-cell logits (used by evaluation)."""
    h = np.maximum(patches @ params["embed_w"] + params["embed_b"], 0.0)
    features = np.maximum(h @ params["trunk_w"] + params["trunk_b"], 0.0)
    return features @ params["head_w"] + params["head_b"]


def softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise softmax; the row max is treated as a constant shift."""
    shift = logits.value.max(axis=1, keepdims=True)
    e = ad.exp(ad.sub(logits, shift))
    return ad.div(e, ad.sum_(e, axis=1, keepdims=True))


def query_features(
    features: Tensor, logits: Tensor, cfg: ModelConfig
) -> Dict[str, Tensor]:
    """Pooled alignment statistics, each a (1, n) tensor."""
    q_sp = ad.mean(features, axis=0, keepdims=True)
    q_ch = ad.transpose(ad.mean(features, axis=1, keepdims=True))
    probs = softmax_rows(logits)
    selector = np.zeros((cfg.num_outputs, 1))
    selector[cfg.num_classes, 0] = 1.0  # background column
    foreground = ad.sub(1.0, ad.matmul(probs, selector))  # (cells, 1)
    weighted = ad.sum_(ad.mul(features, foreground), axis=0, keepdims=True)
    q_ins = ad.div(weighted, ad.add(ad.sum_(foreground), 1e-8))
    return {"sp": q_sp, "ch": q_ch, "ins": q_ins}


def discriminator_forward(
    leaves: Dict[str, Tensor], level: str, q: Tensor
) -> Tensor:
    """2-layer perceptron with a sigmoid scalar output in (0, 1)."""
    w1, b1, w2, b2 = (leaves[k] for k in discriminator_keys(level))
    h = ad.relu(ad.add(ad.matmul(q, w1), b1))
    return ad.sigmoid(ad.add(ad.matmul(h, w2), b2))
