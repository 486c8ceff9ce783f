"""Forward-Euler integration of the recovery flow

    dx/dt = -(A^T (A x - y) + lam(t) * tanh(alpha * x))

and Monte Carlo estimation of the mean squared error along it.

All integration goes through :func:`integrate_batch`, which advances a
``(K, n)`` stack of states in lock step.  Single trajectories are a batch of
one, so constant and time-varying schedules, single runs and MSE curves
share the exact same arithmetic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._csv import write_csv
from .numerics import RngStream
from .problem import ProblemInstance, sample_batch
from .schedule import ConstantSchedule, Schedule

__all__ = [
    "DivergenceError",
    "MseCurve",
    "SolverConfig",
    "StabilityWarning",
    "Trajectory",
    "as_schedule",
    "estimate_mse_curve",
    "euler_solve",
    "integrate_batch",
    "schedule_grid",
    "stability_margin",
]


class DivergenceError(FloatingPointError):
    """A non-finite value appeared in the Euler recursion."""

    def __init__(self, step: int, row: int | None = None, context: str = ""):
        self.step = step
        self.row = row
        self.context = context
        where = f" (batch row {row})" if row is not None else ""
        prefix = f"{context}: " if context else ""
        super().__init__(f"{prefix}Euler iteration diverged at step {step}{where}")


class StabilityWarning(RuntimeWarning):
    """The Euler step exceeds the linear stability bound of the flow."""


@dataclass(frozen=True)
class SolverConfig:
    """Horizon ``T`` split into ``N`` Euler steps of width ``eta = T / N``.

    States are recorded every ``record_stride`` steps (default
    ``max(1, N // 500)``); the terminal state is always recorded.
    """

    T: float
    N: int
    record_stride: int | None = None

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"number of bins must be a positive integer, got N={self.N}")
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError(f"record stride must be positive, got {self.record_stride}")

    @property
    def eta(self) -> float:
        return self.T / self.N

    @property
    def stride(self) -> int:
        return self.record_stride if self.record_stride is not None else max(1, self.N // 500)

    def record_steps(self) -> np.ndarray:
        ks = np.arange(0, self.N + 1, self.stride)
        if ks[-1] != self.N:
            ks = np.append(ks, self.N)
        return ks

    def times(self, steps=None) -> np.ndarray:
        steps = np.arange(self.N + 1) if steps is None else np.asarray(steps)
        return self.eta * steps


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    terminal: np.ndarray
    stable: bool = True

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        header = ["t"] + [f"x_{i}" for i in range(1, n + 1)]
        write_csv(path, header, np.column_stack([self.times, self.states]))


@dataclass
class MseCurve:
    times: np.ndarray
    mse: np.ndarray
    trials: int
    stable: bool = True
    terminal_errors: np.ndarray = field(default=None, repr=False)

    def at(self, t: float) -> float:
        """MSE at the recorded time closest to ``t``."""
        return float(self.mse[int(np.argmin(np.abs(self.times - t)))])

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "mse"], np.column_stack([self.times, self.mse]))


def as_schedule(schedule) -> Schedule:
    if isinstance(schedule, (int, float, np.floating, np.integer)):
        return ConstantSchedule(float(schedule))
    return schedule


def schedule_grid(schedule, cfg: SolverConfig) -> np.ndarray:
    """Schedule values at the left bin edges ``t_k = eta * k``, ``k < N``, clamped at 0."""
    raw = as_schedule(schedule).values(cfg.times(np.arange(cfg.N)))
    return np.maximum(raw, 0.0)


def stability_margin(inst: ProblemInstance, lambda_max: float, alpha: float, eta: float) -> float:
    """``2 / (||A^T A|| + lambda_max * alpha) - eta``; negative means the step is too large.

    ``||A^T A|| + lambda_max * alpha`` bounds the largest eigenvalue of the
    flow's Jacobian, so forward Euler is linearly stable for positive margins.
    """
    return 2.0 / (inst.gram_norm + max(lambda_max, 0.0) * alpha) - eta


def _warn_if_unstable(inst, lam_grid, alpha, eta) -> bool:
    margin = stability_margin(inst, float(np.max(lam_grid, initial=0.0)), alpha, eta)
    if margin < 0:
        warnings.warn(
            f"Euler step {eta:g} exceeds the stability bound by {-margin:g}",
            StabilityWarning,
            stacklevel=3,
        )
        return False
    return True


def integrate_batch(gram, b, lam_grid, alpha, eta, x0, record_steps=(), on_record=None, context=""):
    """Advance ``x0`` (shape ``(K, n)``) through ``len(lam_grid)`` Euler steps.

    ``b`` holds ``A^T y`` per row.  ``on_record(k, x)`` is called before step
    ``k`` for every ``k`` in ``record_steps`` and once more with the terminal
    state if ``N`` is listed.  Returns the terminal states.
    """
    x = np.array(x0, dtype=float)
    N = len(lam_grid)
    record = set(int(k) for k in record_steps) if on_record is not None else set()
    # overflow is reported as a DivergenceError, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            if k in record:
                on_record(k, x)
            x = x - eta * (x @ gram - b + lam_grid[k] * np.tanh(alpha * x))
            if not np.isfinite(x).all():
                rows = np.flatnonzero(~np.isfinite(x).all(axis=1))
                raise DivergenceError(k + 1, int(rows[0]), context)
    if N in record:
        on_record(N, x)
    return x


def euler_solve(inst: ProblemInstance, y, schedule, alpha: float, cfg: SolverConfig, x0=None) -> Trajectory:
    """Integrate the flow for one observation ``y`` from ``x0`` (default zero)."""
    y = np.asarray(y, dtype=float)
    if y.shape != (inst.m,):
        raise ValueError(f"observation has shape {y.shape}, expected ({inst.m},)")
    x0 = np.zeros(inst.n) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (inst.n,):
        raise ValueError(f"initial state has shape {x0.shape}, expected ({inst.n},)")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")

    lam = schedule_grid(schedule, cfg)
    stable = _warn_if_unstable(inst, lam, alpha, cfg.eta)
    steps = cfg.record_steps()
    states = np.empty((len(steps), inst.n))
    slot = {int(k): i for i, k in enumerate(steps)}

    def keep(k, x):
        states[slot[k]] = x[0]

    b = y[None, :] @ inst.A
    xN = integrate_batch(inst.gram, b, lam, alpha, cfg.eta, x0[None, :], steps, keep)
    return Trajectory(cfg.times(steps), states, xN[0].copy(), stable)


def estimate_mse_curve(
    inst: ProblemInstance, schedule, alpha: float, cfg: SolverConfig, M: int, rng: RngStream, x0=None
) -> MseCurve:
    """Average ``||x_i(t) - s_i||^2`` over ``M`` fresh trials at every recorded time.

    Trial ``i`` draws its signal and noise from ``rng.child(i)``, so curves
    for different schedules or step counts share the same trials.
    """
    if M < 1:
        raise ValueError(f"number of trials must be positive, got {M}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    batch = sample_batch(inst, rng, M)
    lam = schedule_grid(schedule, cfg)
    stable = _warn_if_unstable(inst, lam, alpha, cfg.eta)
    steps = cfg.record_steps()
    mse = np.empty(len(steps))
    slot = {int(k): i for i, k in enumerate(steps)}

    def keep(k, x):
        d = x - batch.s
        mse[slot[k]] = np.mean(np.sum(d * d, axis=1))

    x0 = np.zeros((M, inst.n)) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (M, inst.n))
    b = batch.y @ inst.A
    xN = integrate_batch(inst.gram, b, lam, alpha, cfg.eta, x0, steps, keep, context="MSE estimate")
    d = xN - batch.s
    return MseCurve(cfg.times(steps), mse, M, stable, np.sum(d * d, axis=1))
