"""Small dense linear-algebra kernel layer.

Symmetric eigendecompositions, principal square roots of PSD matrices,
Moore-Penrose pseudo-inverses, the Gaspari-Cohn taper and Gaussian
sampling.  All functions are pure; RNG state is passed explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class NonSymmetricMatrixError(ValueError):
    """Matrix is not symmetric within the requested tolerance."""


class IndefiniteMatrixError(ValueError):
    """Matrix has an eigenvalue below the admissible roundoff window."""


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition A = G diag(d) G^T of a symmetric matrix.

    Eigenvalues are sorted in descending order and the eigenvector
    columns are orthonormal.  The factorization is reused to evaluate
    several matrix functions of A (inverse, square root, ...) at the
    cost of a single eigh call.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        g = self.eigenvectors
        return (g * self.eigenvalues) @ g.T

    def matrix_function(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Dense f(A) for an entrywise function of the eigenvalues."""
        g = self.eigenvectors
        return (g * fn(self.eigenvalues)) @ g.T

    def apply(self, fn: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray) -> np.ndarray:
        """f(A) @ rhs without forming f(A); rhs may be a vector or matrix."""
        g = self.eigenvectors
        w = fn(self.eigenvalues)
        if rhs.ndim == 1:
            return g @ (w * (g.T @ rhs))
        return g @ (w[:, None] * (g.T @ rhs))

    @property
    def condition_number(self) -> float:
        d = np.abs(self.eigenvalues)
        lo = d.min()
        return float(d.max() / lo) if lo > 0 else np.inf


def sym_eig(a: np.ndarray, sym_tol: float = 1e-12) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Raises NonSymmetricMatrixError when the relative asymmetry of the
    input exceeds ``sym_tol``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.size:
        scale = max(1.0, float(np.abs(a).max()))
        asym = float(np.abs(a - a.T).max())
        if asym > sym_tol * scale:
            raise NonSymmetricMatrixError(
                f"matrix asymmetry {asym:.3e} exceeds {sym_tol:.1e} relative"
            )
    w, g = np.linalg.eigh(a)
    return SymEig(eigenvalues=w[::-1].copy(), eigenvectors=g[:, ::-1].copy())


def sqrtm_psd(a: np.ndarray, neg_tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix.

    Eigenvalues in ``[-neg_tol * scale, 0)`` are treated as roundoff and
    clamped to zero; anything below raises IndefiniteMatrixError.
    """
    fac = sym_eig(a)
    d = fac.eigenvalues
    if d.size:
        scale = max(1.0, float(np.abs(d).max()))
        if d.min() < -neg_tol * scale:
            raise IndefiniteMatrixError(
                f"eigenvalue {d.min():.3e} below -{neg_tol:.1e} relative"
            )
    root = fac.matrix_function(lambda w: np.sqrt(np.maximum(w, 0.0)))
    return 0.5 * (root + root.T)


def pinv(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with singular values below
    ``tol * sigma_max`` treated as zero."""
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    a = np.asarray(a, dtype=float)
    return np.linalg.pinv(a, rcond=tol)


def gaspari_cohn(x):
    """Fifth-order piecewise rational taper with compact support [0, 2).

    Accepts a scalar or an array of non-negative values; returns values
    in [0, 1], equal to 1 at the origin and 0 beyond 2.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("taper argument must be non-negative")
    out = np.zeros_like(arr)
    near = arr <= 1.0
    far = (arr > 1.0) & (arr < 2.0)
    u = arr[near]
    out[near] = 1.0 + u * u * (-5.0 / 3.0 + u * (5.0 / 8.0 + u * (0.5 - 0.25 * u)))
    v = arr[far]
    out[far] = (
        4.0
        + v * (-5.0 + v * (5.0 / 3.0 + v * (5.0 / 8.0 + v * (-0.5 + v / 12.0))))
        - (2.0 / 3.0) / v
    )
    np.clip(out, 0.0, 1.0, out=out)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def sample_gaussian(mean: np.ndarray, diag_std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw from N(mean, diag(diag_std**2))."""
    mean = np.asarray(mean, dtype=float)
    diag_std = np.broadcast_to(np.asarray(diag_std, dtype=float), mean.shape)
    if np.any(diag_std < 0):
        raise ValueError("standard deviations must be non-negative")
    return mean + diag_std * rng.standard_normal(mean.shape)
