"""Dense linear algebra and seeded sampling shared by the rest of the package.

Everything here operates on plain ``numpy`` arrays.  Symmetric matrices are
the only ones that get diagonalised or exponentiated, so the helpers assume
(and check) symmetry instead of handling general matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "SymEigDecomposition",
    "jacobi_eig",
    "sample_gaussian_matrix",
    "spectral_norm",
    "sym_eig",
    "sym_matexp",
]

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id, path)``.

    The stream is a value, not a stateful generator: every call to
    :meth:`generator` starts from the same state, so a sampling function
    handed the same stream returns bit-identical output.  Independent
    sub-streams are obtained with :meth:`child`.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        if index < 0:
            raise ValueError(f"child index must be non-negative, got {index}")
        return RngStream(self.seed, self.stream_id, (*self.path, int(index)))


@dataclass(frozen=True)
class SymEigDecomposition:
    """Eigenvalues in ascending order and the orthogonal matrix of eigenvectors (columns)."""

    eigenvalues: np.ndarray
    basis: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.basis * self.eigenvalues) @ self.basis.T


def _check_symmetric(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    return S


def jacobi_eig(S, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigDecomposition:
    """Cyclic Jacobi eigensolver for a dense symmetric matrix.

    Sweeps over all off-diagonal pairs, annihilating each with a plane
    rotation, until the off-diagonal Frobenius norm drops below
    ``tol * ||S||_F``.

    Raises
    ------
    ValueError
        If ``S`` is not square and symmetric.
    RuntimeError
        If the tolerance is not met within ``max_sweeps`` sweeps.
    """
    A = _check_symmetric(S).copy()
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    target = tol * max(np.linalg.norm(A), np.finfo(float).tiny)

    def off_norm(M):
        # summed directly; subtracting the diagonal from ||M||_F cancels badly
        return np.linalg.norm(M - np.diag(np.diag(M)))

    for _ in range(max_sweeps):
        if off_norm(A) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                d = A[q, q] - A[p, p]
                if abs(apq) < 1e-300 * max(abs(d), 1.0):
                    A[p, q] = A[q, p] = 0.0
                    continue
                tau = d / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = np.copysign(1.0, tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J, J the (p, q) plane rotation
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if off_norm(A) > target:
            raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return SymEigDecomposition(w[order], V[:, order])


def sym_eig(S, method: str = "lapack") -> SymEigDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    ``method="lapack"`` (default) calls :func:`numpy.linalg.eigh`;
    ``method="jacobi"`` uses :func:`jacobi_eig`.
    """
    S = _check_symmetric(S)
    if method == "jacobi":
        return jacobi_eig(S)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    return SymEigDecomposition(w, U)


def sym_matexp(S, t: float = 1.0, eig: SymEigDecomposition | None = None) -> np.ndarray:
    """``exp(S t)`` for symmetric ``S`` via its eigendecomposition.

    A precomputed decomposition can be passed in ``eig`` to avoid
    re-diagonalising when evaluating at many times.
    """
    if eig is None:
        eig = sym_eig(S)
    U = eig.basis
    out = (U * np.exp(eig.eigenvalues * t)) @ U.T
    return 0.5 * (out + out.T)


def spectral_norm(S) -> float:
    """Largest singular value of ``S``."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0.0
    return float(np.linalg.norm(S, 2))


def sample_gaussian_matrix(rng: RngStream, m: int, n: int) -> np.ndarray:
    """``m x n`` matrix of i.i.d. standard normal entries drawn from ``rng``."""
    if m < 1 or n < 1:
        raise ValueError(f"matrix dimensions must be positive, got ({m}, {n})")
    return rng.generator().standard_normal((m, n))
