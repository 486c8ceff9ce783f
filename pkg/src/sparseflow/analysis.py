"""Local convergence analysis around equilibria of the recovery flow.

Near an equilibrium ``x*`` the error ``e = x - x*`` approximately obeys the
linear ODE ``de/dt = -B e`` with ``B = A^T A + lam * diag(alpha / cosh^2(alpha x*))``,
so ``e(t) = exp(-B t) e(0)`` and ``||e(t)|| / ||e(0)|| <= exp(-omega_1 t)``
where ``omega_1`` is the smallest eigenvalue of ``B``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ._csv import write_csv
from .flow import DivergenceError, SolverConfig, Trajectory, euler_solve, integrate_batch, schedule_grid
from .numerics import RngStream, sym_eig
from .objective import SmoothLassoParams, equilibrium_residual, tanh_jacobian
from .problem import ProblemInstance, sample_batch

__all__ = [
    "Equilibrium",
    "LinearizationReport",
    "RatioCurve",
    "SweepPoint",
    "alpha_sweep",
    "closed_form_error",
    "find_equilibrium",
    "fit_log_slope",
    "lambda_sweep",
    "linearize",
    "rho_curve",
    "write_sweep_csv",
]

log = logging.getLogger(__name__)

RESIDUAL_WARN = 1e-2


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Equilibrium:
    """Terminal state of a long Euler run from the origin, with its stationarity residual."""

    x: np.ndarray
    residual: float

    @property
    def converged(self) -> bool:
        return self.residual <= RESIDUAL_WARN


def find_equilibrium(
    inst: ProblemInstance, y, params: SmoothLassoParams, T_eq: float = 4.0, N_eq: int = 5000
) -> Equilibrium:
    """Approximate the flow's equilibrium by integrating from ``x = 0`` up to ``T_eq``."""
    cfg = SolverConfig(T_eq, N_eq, record_stride=N_eq)
    traj = euler_solve(inst, y, params.lam, params.alpha, cfg)
    res = equilibrium_residual(traj.terminal, inst, y, params)
    if res > RESIDUAL_WARN:
        warnings.warn(f"equilibrium residual {res:.3g} after T={T_eq}", ConvergenceWarning, stacklevel=2)
    return Equilibrium(traj.terminal, res)


@dataclass(frozen=True)
class LinearizationReport:
    xstar: np.ndarray
    B: np.ndarray
    omegas: np.ndarray
    basis: np.ndarray
    omega1_lower_bound: float

    @property
    def omega1(self) -> float:
        return float(self.omegas[0])


def linearize(inst: ProblemInstance, params: SmoothLassoParams, xstar, method: str = "lapack") -> LinearizationReport:
    """Build ``B`` at ``xstar``, diagonalise it, and evaluate the Weyl lower bound on ``omega_1``.

    The bound is ``l_min(A^T A) + lam * min_i alpha / cosh^2(alpha x*_i)``.
    """
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != (inst.n,) or not np.all(np.isfinite(xstar)):
        raise ValueError("equilibrium must be a finite vector of length n")
    J = tanh_jacobian(xstar, params.alpha)
    B = inst.gram + np.diag(params.lam * J)
    eig = sym_eig(B, method=method)
    gram_min = float(inst.gram_eigenvalues[0])
    bound = gram_min + params.lam * float(np.min(J))
    return LinearizationReport(xstar, B, eig.eigenvalues, eig.basis, bound)


def closed_form_error(report: LinearizationReport, e0, t: float) -> np.ndarray:
    """Solution ``exp(-B t) e0`` of the linearised error ODE."""
    e0 = np.asarray(e0, dtype=float)
    if e0.shape != report.xstar.shape:
        raise ValueError(f"initial error has shape {e0.shape}, expected {report.xstar.shape}")
    U = report.basis
    return U @ (np.exp(-report.omegas * t) * (U.T @ e0))


@dataclass
class RatioCurve:
    times: np.ndarray
    rho: np.ndarray
    theory: np.ndarray

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "rho", "theory"], np.column_stack([self.times, self.rho, self.theory]))


def rho_curve(traj: Trajectory, xstar, omega1: float) -> RatioCurve:
    """Error-norm ratio ``||x(t) - x*|| / ||x(0) - x*||`` along ``traj`` next to ``exp(-omega1 t)``."""
    xstar = np.asarray(xstar, dtype=float)
    dist = np.linalg.norm(traj.states - xstar, axis=1)
    if dist[0] <= 1e-12:
        raise ValueError("trajectory starts at the equilibrium; the error ratio is undefined")
    rho = dist / dist[0]
    return RatioCurve(traj.times.copy(), rho, np.exp(-omega1 * traj.times))


def fit_log_slope(times, values, window: float = 0.5, floor: float = 1e-12) -> float:
    """Least-squares slope of ``log(values)`` against ``times`` over the last ``window`` fraction of samples.

    Samples at or below ``floor`` are dropped first.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > floor
    t, v = times[keep], values[keep]
    start = int(np.floor(len(t) * (1.0 - window)))
    t, v = t[start:], v[start:]
    if len(t) < 2:
        raise ValueError("fewer than two usable samples in the fit window")
    tc = t - t.mean()
    return float(np.dot(tc, np.log(v)) / np.dot(tc, tc))


@dataclass(frozen=True)
class SweepPoint:
    lam: float
    alpha: float
    mse_inf: float
    force_norm: float
    omega1: float
    max_residual: float


def _sweep_point(inst, lam, alpha, cfg, M, batch):
    params = SmoothLassoParams(lam, alpha)
    b = batch.y @ inst.A
    try:
        xs = integrate_batch(
            inst.gram, b, schedule_grid(lam, cfg), alpha, cfg.eta, np.zeros((M, inst.n)),
        )
    except DivergenceError as exc:
        raise DivergenceError(exc.step, exc.row, f"sweep lambda={lam:g} alpha={alpha:g}") from exc
    err = np.sum((xs - batch.s) ** 2, axis=1)
    force = np.sum((lam * np.tanh(alpha * xs)) ** 2, axis=1)
    omegas = np.empty(M)
    residuals = np.empty(M)
    for i in range(M):
        omegas[i] = linearize(inst, params, xs[i]).omega1
        residuals[i] = equilibrium_residual(xs[i], inst, batch.y[i], params)
    if residuals.max() > RESIDUAL_WARN:
        log.warning("lambda=%g alpha=%g: largest equilibrium residual %.3g at T=%g", lam, alpha, residuals.max(), cfg.T)
    return SweepPoint(float(lam), float(alpha), float(err.mean()), float(force.mean()), float(omegas.mean()),
                      float(residuals.max()))


def lambda_sweep(inst: ProblemInstance, lambdas, alpha: float, cfg: SolverConfig, M: int, rng: RngStream):
    """Per ``lam``: terminal MSE, mean ``||lam tanh(alpha x*)||^2`` and mean ``omega_1`` over ``M`` trials.

    The terminal state at ``cfg.T`` stands in for the equilibrium.  All
    ``lam`` values share the same trials (trial ``i`` from ``rng.child(i)``).
    """
    if any(not lam > 0 for lam in lambdas):
        raise ValueError("all regularization weights must be positive")
    batch = sample_batch(inst, rng, M)
    return [_sweep_point(inst, lam, alpha, cfg, M, batch) for lam in lambdas]


def alpha_sweep(inst: ProblemInstance, lam: float, alphas, cfg: SolverConfig, M: int, rng: RngStream):
    """Same as :func:`lambda_sweep` but varying ``alpha`` at fixed ``lam``."""
    if any(not a > 0 for a in alphas) or not lam > 0:
        raise ValueError("lam and every alpha must be positive")
    batch = sample_batch(inst, rng, M)
    return [_sweep_point(inst, lam, a, cfg, M, batch) for a in alphas]


def write_sweep_csv(points, path, by: str = "lambda") -> None:
    """Columns ``<by>,mse_inf,force_norm,omega1``, where ``by`` is ``lambda`` or ``alpha``."""
    key = {"lambda": "lam", "alpha": "alpha"}[by]
    write_csv(path, [by, "mse_inf", "force_norm", "omega1"],
              [(getattr(p, key), p.mse_inf, p.force_norm, p.omega1) for p in points])
