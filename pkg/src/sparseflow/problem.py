"""Compressed-sensing instances: sensing matrix, Bernoulli-Gaussian signals, noisy observations."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .numerics import RngStream, sample_gaussian_matrix

__all__ = [
    "Observation",
    "ProblemInstance",
    "load_instance",
    "observe",
    "sample_batch",
    "sample_signal",
    "save_instance",
    "squared_error",
]

# stream ids under an experiment seed
MATRIX_STREAM = 0
TRIAL_STREAM = 1
TRAIN_STREAM = 2


@dataclass(frozen=True)
class ProblemInstance:
    """Sensing matrix plus the noise level and sparsity of the signals it is used with.

    ``gram`` (``A^T A``) is computed once at construction.  ``seed`` records
    where ``A`` came from, or is ``None`` for a user-supplied matrix.
    """

    A: np.ndarray
    sigma: float = 0.0
    p: float = 0.1
    seed: int | None = None
    gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or min(A.shape) < 1:
            raise ValueError(f"sensing matrix must be 2-D and non-empty, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("sensing matrix has non-finite entries")
        if self.sigma < 0:
            raise ValueError(f"noise level must be non-negative, got {self.sigma}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"nonzero probability must lie in [0, 1], got {self.p}")
        A.setflags(write=False)
        gram = A.T @ A
        gram = 0.5 * (gram + gram.T)
        gram.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "gram", gram)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @cached_property
    def gram_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``A^T A``, ascending."""
        return np.linalg.eigvalsh(self.gram)

    @property
    def gram_norm(self) -> float:
        """Spectral norm of ``A^T A`` (its largest eigenvalue)."""
        return float(self.gram_eigenvalues[-1])

    @classmethod
    def generate(cls, m: int, n: int, sigma: float, p: float, seed: int) -> "ProblemInstance":
        """Draw ``A`` with i.i.d. N(0, 1) entries from the matrix stream of ``seed``."""
        A = sample_gaussian_matrix(RngStream(seed, MATRIX_STREAM), m, n)
        return cls(A, sigma=sigma, p=p, seed=seed)


@dataclass(frozen=True)
class Observation:
    s: np.ndarray
    y: np.ndarray


def sample_signal(rng: RngStream, n: int, p: float, size: int | None = None) -> np.ndarray:
    """Bernoulli-Gaussian vector: each entry is N(0, 1) with probability ``p``, else 0.

    With ``size`` given, returns a ``(size, n)`` array of independent signals.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"nonzero probability must lie in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"signal length must be positive, got {n}")
    shape = (n,) if size is None else (size, n)
    gen = rng.generator()
    support = gen.random(shape) < p
    values = gen.standard_normal(shape)
    return np.where(support, values, 0.0)


def observe(inst: ProblemInstance, s, rng: RngStream) -> Observation:
    """``y = A s + noise`` with i.i.d. N(0, sigma^2) noise.

    ``s`` may also be a ``(K, n)`` stack of signals, in which case ``y`` is ``(K, m)``.
    """
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != inst.n:
        raise ValueError(f"signal length {s.shape[-1]} does not match n={inst.n}")
    y = s @ inst.A.T
    if inst.sigma > 0:
        y = y + inst.sigma * rng.generator().standard_normal(y.shape)
    return Observation(s, y)


def sample_batch(inst: ProblemInstance, rng: RngStream, size: int) -> Observation:
    """``size`` fresh (signal, observation) pairs; pair ``i`` uses ``rng.child(i)``.

    Signal and noise of a pair come from separate sub-streams, so a pair's
    signal does not depend on ``sigma``.
    """
    if size < 1:
        raise ValueError(f"batch size must be positive, got {size}")
    s = np.empty((size, inst.n))
    y = np.empty((size, inst.m))
    for i in range(size):
        trial = rng.child(i)
        s[i] = sample_signal(trial.child(0), inst.n, inst.p)
        y[i] = observe(inst, s[i], trial.child(1)).y
    return Observation(s, y)


def squared_error(x, s) -> float:
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != s.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {s.shape}")
    d = x - s
    return float(np.dot(d.ravel(), d.ravel()))


def save_instance(inst: ProblemInstance, path) -> None:
    """Write the instance as text: a ``key=value`` header line, then one row of ``A`` per line."""
    seed = "none" if inst.seed is None else str(inst.seed)
    lines = [f"m={inst.m} n={inst.n} sigma={inst.sigma!r} p={inst.p!r} seed={seed}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in inst.A]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instance(path) -> ProblemInstance:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = dict(item.split("=", 1) for item in text[0].split())
    m, n = int(header["m"]), int(header["n"])
    rows = [list(map(float, line.split())) for line in text[1:] if line.strip()]
    A = np.array(rows, dtype=float)
    if A.shape != (m, n):
        raise ValueError(f"{path}: header says {m}x{n} but found {A.shape}")
    seed = None if header["seed"] == "none" else int(header["seed"])
    return ProblemInstance(A, sigma=float(header["sigma"]), p=float(header["p"]), seed=seed)
