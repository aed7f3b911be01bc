"""Image buffers, blending operators, the fog translator, and PNG I/O.

An image is a float64 numpy array of shape (H, W, 3) with every value finite
and inside [0, 1]. Blending is done in this linear float space so the
delta=0 / delta=1 identities are exact; files on disk are 8-bit RGB PNGs.

File naming convention: a source ``name.png`` pairs with ``name.translated.png``
and, when materialized, ``name.blended.png``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageIOError(Exception):
    """Raised for unreadable, non-RGB, or corrupt image files."""


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, 3) in-[0,1] contract and return a float64 view."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} has values outside [0, 1]")
    return arr


@dataclass(frozen=True)
class FogParams:
    """Deterministic fog corruption: blend toward a gray veil plus noise."""

    fog_strength: float
    veil_luminance: float
    noise_sigma: float
    seed: int

    def __post_init__(self) -> None:
        for field in ("fog_strength", "veil_luminance", "noise_sigma"):
            v = getattr(self, field)
            if not math.isfinite(v):
                raise ValueError(f"{field} must be finite, got {v}")
        if not (0.0 <= self.fog_strength <= 1.0):
            raise ValueError(f"fog_strength must be in [0, 1], got {self.fog_strength}")
        if not (0.0 <= self.veil_luminance <= 1.0):
            raise ValueError(
                f"veil_luminance must be in [0, 1], got {self.veil_luminance}"
            )
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _convex_blend(a: np.ndarray, b: np.ndarray, delta: float) -> np.ndarray:
    # delta=0 and delta=1 short-circuit so the identities are bitwise exact;
    # the final clip pins the result inside the per-pixel convex hull against
    # last-ulp rounding.
    if not (0.0 <= delta <= 1.0):
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if delta == 0.0:
        return a.copy()
    if delta == 1.0:
        return b.copy()
    out = delta * b + (1.0 - delta) * a
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def blend_images(
    source: np.ndarray, translated: np.ndarray, delta: float
) -> np.ndarray:
    """Per-pixel delta*translated + (1-delta)*source.

    Shapes must agree exactly; there is no silent resizing.
    """
    return _convex_blend(
        validate_image(source, "source"), validate_image(translated, "translated"), delta
    )


def blend_source_target(
    source: np.ndarray, target: np.ndarray, delta: float
) -> np.ndarray:
    """Per-pixel delta*target + (1-delta)*source (same contract as blend_images)."""
    return _convex_blend(
        validate_image(source, "source"), validate_image(target, "target"), delta
    )


def fog_translate(source: np.ndarray, params: FogParams) -> np.ndarray:
    """Deterministic stand-in for an image-to-image translator.

    clamp((1 - fog_strength)*source + fog_strength*veil_luminance + noise),
    with gaussian noise drawn from the seeded generator. Geometry is
    preserved, so source annotations stay valid for the translated image.
    """
    src = validate_image(source, "source")
    out = (1.0 - params.fog_strength) * src + params.fog_strength * params.veil_luminance
    if params.noise_sigma > 0.0:
        rng = np.random.default_rng(params.seed)
        out = out + rng.normal(0.0, params.noise_sigma, size=src.shape)
    return np.clip(out, 0.0, 1.0)


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Read an 8-bit RGB PNG into a [0, 1] float buffer (byte v -> v/255)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise ImageIOError(f"{path}: expected RGB image, got mode {img.mode}")
            data = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: file not found") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageIOError(f"{path}: unreadable or corrupt image: {exc}") from exc
    return data.astype(np.float64) / 255.0


def write_image(buffer: np.ndarray, path: Union[str, Path]) -> None:
    """Write a [0, 1] float buffer as an 8-bit RGB PNG.

    Quantization is round-half-away-from-zero, so write o read is
    byte-identical on any 8-bit image.
    """
    arr = validate_image(buffer, "buffer")
    data = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")
