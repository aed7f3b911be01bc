"""Decoupled-weight-decay adaptive optimizer and binary checkpoints.

Checkpoint format: magic ``BLDA``, one version byte, then a uint32 array
count followed by name-tagged, shape-prefixed little-endian float64 arrays.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

_MAGIC = b"BLDA"
_VERSION = 1


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN/inf; the optimizer step was aborted."""


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or incompatible checkpoint file."""


def adamw_init(params: Dict[str, np.ndarray]) -> dict:
    """Zero-initialized moment estimates plus the step counter."""
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: dict,
    lr: float,
    weight_decay: float = 1e-4,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[Dict[str, np.ndarray], dict]:
    """One decoupled-weight-decay update, in place on ``params`` and ``state``.

    Only the keys present in ``grads`` are updated; parameters outside the
    current objective keep their values and moments untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape "
                f"{params[name].shape} for {name!r}"
            )
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, g in grads.items():
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + eps)
        params[name] -= lr * (update + weight_decay * params[name])
    return params, state


def save_arrays(arrays: Dict[str, np.ndarray], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            # note: ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_arrays(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc

    def take(fmt: str, offset: int) -> Tuple[tuple, int]:
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        return struct.unpack_from(fmt, blob, offset), offset + size

    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,), off = take("<B", 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (count,), off = take("<I", off)
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,), off = take("<H", off)
        if off + name_len > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,), off = take("<B", off)
        shape = []
        for _ in range(ndim):
            (dim,), off = take("<I", off)
            shape.append(dim)
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arrays[name] = np.frombuffer(
            blob[off : off + nbytes], dtype="<f8"
        ).reshape(shape).copy()
        off += nbytes
    return arrays
