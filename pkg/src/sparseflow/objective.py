"""Lasso objective, its tanh-smoothed energy, and derivatives.

The least-squares term is weighted by 1/2 in both ``lasso_f`` and
``smoothed_g`` so that ``grad_g`` is the exact gradient of ``smoothed_g``
and equals the (negated) right-hand side of the recovery flow

    dx/dt = -(A^T (A x - y) + lam * tanh(alpha * x)).

The smoothed L1 term is ``xi_alpha(x) = log(exp(alpha x) + exp(-alpha x)) / alpha``,
whose derivative is ``tanh(alpha x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ProblemInstance

__all__ = [
    "SmoothLassoParams",
    "equilibrium_residual",
    "grad_g",
    "lasso_f",
    "smoothed_g",
    "tanh_jacobian",
    "xi",
]


@dataclass(frozen=True)
class SmoothLassoParams:
    lam: float
    alpha: float

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ValueError(f"regularization weight must be positive, got {self.lam}")
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError(f"proximity parameter must be positive, got {self.alpha}")


def xi(alpha: float, x):
    """Smooth proxy of ``|x|``, evaluated as ``|x| + log1p(exp(-2 alpha |x|)) / alpha``.

    The rewritten form never overflows; the textbook form does once
    ``alpha * |x|`` exceeds roughly 710.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    ax = np.abs(np.asarray(x, dtype=float))
    out = ax + np.log1p(np.exp(-2.0 * alpha * ax)) / alpha
    return float(out) if out.ndim == 0 else out


def _check_dims(x, inst: ProblemInstance, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (inst.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({inst.n},)")
    if y.shape != (inst.m,):
        raise ValueError(f"observation has shape {y.shape}, expected ({inst.m},)")
    return x, y


def lasso_f(x, inst: ProblemInstance, y, lam: float) -> float:
    """``0.5 * ||y - A x||^2 + lam * ||x||_1``."""
    x, y = _check_dims(x, inst, y)
    r = y - inst.A @ x
    return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(x)))


def smoothed_g(x, inst: ProblemInstance, y, params: SmoothLassoParams) -> float:
    """``0.5 * ||y - A x||^2 + lam * sum_i xi_alpha(x_i)``."""
    x, y = _check_dims(x, inst, y)
    r = y - inst.A @ x
    return 0.5 * float(r @ r) + params.lam * float(np.sum(xi(params.alpha, x)))


def grad_g(x, inst: ProblemInstance, y, params: SmoothLassoParams) -> np.ndarray:
    x, y = _check_dims(x, inst, y)
    return inst.A.T @ (inst.A @ x - y) + params.lam * np.tanh(params.alpha * x)


def tanh_jacobian(xstar, alpha: float) -> np.ndarray:
    """Diagonal of the Jacobian of ``tanh(alpha x)`` at ``xstar``: ``alpha / cosh^2(alpha x*)``.

    Uses ``1/cosh^2(u) = 4 e^{-2|u|} / (1 + e^{-2|u|})^2``, which keeps full
    relative accuracy in the tail where ``1 - tanh^2`` cancels to 0.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    u = np.abs(alpha * np.asarray(xstar, dtype=float))
    e = np.exp(-2.0 * u)
    return alpha * 4.0 * e / (1.0 + e) ** 2


def equilibrium_residual(x, inst: ProblemInstance, y, params: SmoothLassoParams) -> float:
    """Euclidean norm of ``A^T (A x - y) + lam * tanh(alpha x)``; zero exactly at a fixed point of the flow."""
    return float(np.linalg.norm(grad_g(x, inst, y, params)))
