"""Training progress and the dynamic mixing-weight schedule.

The mixing weight ``delta`` ramps from 0 toward an upper bound ``beta`` as a
shifted sigmoid of the training progress ``gamma``:

    delta(gamma) = (2 / (1 + exp(-alpha * gamma)) - 1) * beta

which is algebraically ``beta * tanh(alpha * gamma / 2)``. ``alpha`` controls
how fast the ramp saturates; ``beta`` bounds it from above so delta < beta for
any finite ``alpha * gamma``. All math is done in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, TextIO, Tuple


@dataclass(frozen=True)
class BlendSchedule:
    """The (alpha, beta, total_iterations) triple governing delta."""

    alpha: float
    beta: float
    total_iterations: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be finite and > 0, got {self.alpha}")
        if not (math.isfinite(self.beta) and 0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if int(self.total_iterations) < 1:
            raise ValueError(
                f"total_iterations must be >= 1, got {self.total_iterations}"
            )


@dataclass(frozen=True)
class TrainingProgress:
    """An iteration index together with its normalized progress in [0, 1]."""

    current_iteration: int
    gamma: float

    @classmethod
    def at(cls, current_iteration: int, total_iterations: int) -> "TrainingProgress":
        return cls(current_iteration, compute_gamma(current_iteration, total_iterations))


def compute_gamma(current_iteration: int, total_iterations: int) -> float:
    """Normalized training progress, clamped to [0, 1].

    Iterations are 0-based: gamma is 0 at the very first optimizer step and
    saturates at 1.0 if training runs past ``total_iterations``.
    """
    if total_iterations < 1:
        raise ValueError(f"total_iterations must be >= 1, got {total_iterations}")
    if current_iteration < 0:
        raise ValueError(f"current_iteration must be >= 0, got {current_iteration}")
    return min(current_iteration / total_iterations, 1.0)


def compute_delta(gamma: float, schedule: BlendSchedule) -> float:
    """Dynamic mixing weight for a given progress value.

    Exactly 0 at gamma=0 and strictly below ``schedule.beta`` for finite
    alpha*gamma.
    """
    if not (math.isfinite(gamma) and 0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    # 2/(1+exp(-x)) - 1 == tanh(x/2); the tanh form avoids the cancellation
    # that makes the logistic form underflow to 0 for tiny x
    return schedule.beta * math.tanh(schedule.alpha * gamma / 2.0)


def emit_schedule_curve(
    schedule: BlendSchedule, samples: int
) -> List[Tuple[float, float]]:
    """Evaluate the schedule on ``samples`` evenly spaced gammas over [0, 1]."""
    if samples < 2:
        raise ValueError(f"samples must be >= 2, got {samples}")
    step = 1.0 / (samples - 1)
    curve = []
    for i in range(samples):
        gamma = min(i * step, 1.0)
        curve.append((gamma, compute_delta(gamma, schedule)))
    return curve


def write_schedule_csv(curve: List[Tuple[float, float]], stream: TextIO) -> None:
    """Write a (gamma, delta) curve as CSV with 17-significant-digit values."""
    stream.write("gamma,delta\n")
    for gamma, delta in curve:
        stream.write(f"{gamma:.17g},{delta:.17g}\n")
