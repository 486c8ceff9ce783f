"""Time-dependent regularization (or control) functions.

Two kinds of schedule are supported: a constant, and a weighted sum of
Gaussian radial basis functions

    u(t) = sum_i w_i * exp(-beta * (t - c_i)^2)

with fixed centers ``c`` and width ``beta`` and trainable weights ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ConstantSchedule",
    "RBFSchedule",
    "Schedule",
    "grad_eval_wrt_weights",
    "load_schedule",
    "paper_lambda_centers",
    "save_schedule",
]


@dataclass(frozen=True)
class ConstantSchedule:
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"constant schedule value must be finite, got {self.value}")

    def __call__(self, t: float) -> float:
        return float(self.value)

    def values(self, times) -> np.ndarray:
        return np.full(np.shape(times), float(self.value))

    def max_value(self, t0: float, t1: float) -> float:
        return float(self.value)


@dataclass(frozen=True)
class RBFSchedule:
    weights: np.ndarray
    centers: np.ndarray
    beta: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        c = np.array(self.centers, dtype=float).ravel()
        if w.shape != c.shape:
            raise ValueError(f"{w.size} weights for {c.size} centers")
        if c.size == 0:
            raise ValueError("RBF schedule needs at least one center")
        if np.any(np.diff(c) <= 0):
            raise ValueError("RBF centers must be strictly increasing")
        if not self.beta > 0:
            raise ValueError(f"RBF width must be positive, got {self.beta}")
        w.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def size(self) -> int:
        return self.weights.size

    def basis(self, times) -> np.ndarray:
        """Matrix of basis values ``phi(t_k - c_i)``, shape ``(len(times), S)``."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        return np.exp(-self.beta * (t[:, None] - self.centers[None, :]) ** 2)

    def values(self, times) -> np.ndarray:
        return self.basis(times) @ self.weights

    def __call__(self, t: float) -> float:
        return float(self.values([t])[0])

    def with_weights(self, weights) -> "RBFSchedule":
        return RBFSchedule(weights, self.centers, self.beta)

    def max_value(self, t0: float, t1: float, samples: int = 2001) -> float:
        """Maximum over a fine grid of ``[t0, t1]``."""
        return float(np.max(self.values(np.linspace(t0, t1, samples))))

    @classmethod
    def uniform(cls, S: int, spacing: float, offset: float, beta: float, init: float = 1.0):
        """Centers ``spacing * i - offset`` for ``i = 1..S``, all weights ``init``."""
        return cls(np.full(S, float(init)), paper_lambda_centers(S, spacing, offset), beta)


Schedule = ConstantSchedule | RBFSchedule


def paper_lambda_centers(S: int, Delta: float, theta: float) -> np.ndarray:
    """Centers ``c_i = Delta * i - theta`` for ``i = 1..S``."""
    if S < 1:
        raise ValueError(f"need at least one center, got S={S}")
    return Delta * np.arange(1, S + 1, dtype=float) - theta


def grad_eval_wrt_weights(s: RBFSchedule, t: float) -> np.ndarray:
    """Gradient of ``s(t)`` with respect to the weights, i.e. the basis values at ``t``."""
    return s.basis([t])[0]


def save_schedule(s: RBFSchedule, path) -> None:
    """Text format: ``beta`` on the first line, then ``center weight`` per line."""
    lines = [repr(s.beta)] + [f"{c!r} {w!r}" for c, w in zip(s.centers.tolist(), s.weights.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_schedule(path) -> RBFSchedule:
    rows = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 1:
        raise ValueError(f"{path}: first line must hold the RBF width")
    pairs = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return RBFSchedule(pairs[:, 1], pairs[:, 0], float(rows[0][0]))
