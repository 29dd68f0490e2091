"""Localisation structures: taper matrices, domain-localisation weights,
distances on rings and layer stacks, and the tapering-norm PSD bound.

Conventions: correlation entries are gc(2 d / r) where d is the distance
between the two variables and r the localisation radius, so the support
ends exactly at distance r.  Domain-localisation weights use the product
form sqrt(gc(.) gc(.)), which for a diagonal observation-error matrix R
turns the tapered inverse rho o R^-1 into diag(w) R^-1 diag(w); filters
therefore row-scale observation-space quantities by w instead of forming
N_y x N_y Hadamard products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import IndefiniteMatrixError, gaspari_cohn


@dataclass(frozen=True)
class RingGeometry:
    """Periodic 1D lattice of ``n`` sites with circular distance."""

    n: int

    def distance(self, i, j):
        d = np.abs(np.asarray(i) - np.asarray(j))
        return np.minimum(d, self.n - d)

    def positions(self) -> np.ndarray:
        return np.arange(self.n)


@dataclass(frozen=True)
class StackedGeometry:
    """Stack of ``n_v`` rings of ``n_h`` sites, flattened layer-major.

    The flat index of layer v (0-based) and column h is v * n_h + h, so
    the set of indices sharing column h is the strided slice h::n_h.
    """

    n_v: int
    n_h: int

    @property
    def n(self) -> int:
        return self.n_v * self.n_h

    def layer(self, idx):
        return np.asarray(idx) // self.n_h

    def column(self, idx):
        return np.asarray(idx) % self.n_h

    def vertical_distance(self, i, j):
        return np.abs(self.layer(i) - self.layer(j))

    def horizontal_distance(self, hi, hj):
        d = np.abs(np.asarray(hi) - np.asarray(hj))
        return np.minimum(d, self.n_h - d)

    def column_indices(self, h: int) -> slice:
        return slice(h, self.n, self.n_h)


@dataclass(frozen=True)
class TaperingParams:
    """Scalar taper strengths for the global (p) and local (q) parameter
    updates; 0 freezes the block, 1 leaves the update unmodified."""

    zeta_p: float = 1.0
    zeta_q: float = 1.0

    def __post_init__(self):
        if self.zeta_p < 0 or self.zeta_q < 0:
            raise ValueError("tapering parameters must be non-negative")


@dataclass(frozen=True)
class LocalisationSpec:
    """Radius plus geometry; the basic recipe for all taper builders."""

    geometry: RingGeometry | StackedGeometry
    radius: float | None = None
    radius_h: float | None = None
    radius_v: float | None = None

    def __post_init__(self):
        for r in (self.radius, self.radius_h, self.radius_v):
            if r is not None and r <= 0:
                raise ValueError("localisation radii must be positive")


def rho_ring(n: int, radius: float | None) -> np.ndarray:
    """Correlation matrix gc(2 d(m, n) / r) on a ring; all ones when the
    radius is None (localisation disabled)."""
    if radius is None:
        return np.ones((n, n))
    geom = RingGeometry(n)
    i = np.arange(n)
    d = geom.distance(i[:, None], i[None, :])
    return gaspari_cohn(2.0 * d / radius)


def rho_xx(spec: LocalisationSpec) -> np.ndarray:
    """State-state taper matrix.

    On a ring this is the circular-distance taper; on a stack the taper
    acts on the vertical distance only (horizontal localisation is done
    by domain decomposition instead).
    """
    geom = spec.geometry
    if isinstance(geom, RingGeometry):
        return rho_ring(geom.n, spec.radius)
    r_v = spec.radius_v
    if r_v is None:
        return np.ones((geom.n, geom.n))
    v = np.arange(geom.n_v)
    rho_vv = gaspari_cohn(2.0 * np.abs(v[:, None] - v[None, :]) / r_v)
    return np.kron(rho_vv, np.ones((geom.n_h, geom.n_h)))


def rho_qx(param_positions: np.ndarray, spec: LocalisationSpec, normalize: bool = False) -> np.ndarray:
    """Cross taper between local parameters (at the given ring sites) and
    state variables.  With ``normalize`` the matrix is rescaled so its
    largest entry is 1, the absorbed scale belonging to the local
    tapering parameter."""
    geom = spec.geometry
    if not isinstance(geom, RingGeometry):
        raise ValueError("rho_qx expects ring geometry; use rho_px_vertical for stacks")
    pos = np.asarray(param_positions)
    if spec.radius is None:
        rho = np.ones((pos.size, geom.n))
    else:
        d = geom.distance(pos[:, None], np.arange(geom.n)[None, :])
        rho = gaspari_cohn(2.0 * d / spec.radius)
    if normalize:
        top = rho.max()
        if top > 0:
            rho = rho / top
    return rho


def rho_px_vertical(n_uniform: int, layer_of_param: np.ndarray, spec: LocalisationSpec) -> np.ndarray:
    """Cross taper between horizontally non-local parameters and the state
    on a stack.

    The first ``n_uniform`` rows (parameters with no spatial location,
    e.g. shared dynamics coefficients) are all ones; the remaining rows
    belong to vertically located parameters and taper with the vertical
    distance to each state variable.
    """
    geom = spec.geometry
    if not isinstance(geom, StackedGeometry):
        raise ValueError("rho_px_vertical expects stacked geometry")
    layer_of_param = np.asarray(layer_of_param)
    n_p = n_uniform + layer_of_param.size
    state_layers = np.arange(geom.n) // geom.n_h
    rho = np.ones((n_p, geom.n))
    if layer_of_param.size and spec.radius_v is not None:
        d = np.abs(layer_of_param[:, None] - state_layers[None, :])
        rho[n_uniform:] = gaspari_cohn(2.0 * d / spec.radius_v)
    return rho


def dl_weights(site: int, obs_positions: np.ndarray, n_ring: int, radius: float | None) -> np.ndarray:
    """Per-observation domain-localisation weights sqrt(gc(2 d / r)) for
    one analysis site on a ring; all ones when the radius is None."""
    obs_positions = np.asarray(obs_positions)
    if radius is None:
        return np.ones(obs_positions.size)
    d = RingGeometry(n_ring).distance(obs_positions, site)
    return np.sqrt(gaspari_cohn(2.0 * d / radius))


def dl_weight_matrix(sites: np.ndarray, obs_positions: np.ndarray, n_ring: int, radius: float | None) -> np.ndarray:
    """Stack of dl_weights rows, one per analysis site."""
    sites = np.asarray(sites)
    obs_positions = np.asarray(obs_positions)
    if radius is None:
        return np.ones((sites.size, obs_positions.size))
    d = RingGeometry(n_ring).distance(sites[:, None], obs_positions[None, :])
    return np.sqrt(gaspari_cohn(2.0 * d / radius))


def compose_rho(rho_xx_mat: np.ndarray, rho_pp: np.ndarray, zeta_p: np.ndarray) -> np.ndarray:
    """Block correlation matrix [[rho_xx, 1 zeta^T], [zeta 1^T, rho_pp]]
    obtained when the state-parameter cross block is row-wise uniform."""
    zeta_p = np.asarray(zeta_p, dtype=float)
    n_x = rho_xx_mat.shape[0]
    ones = np.ones(n_x)
    return np.block([
        [rho_xx_mat, np.outer(ones, zeta_p)],
        [np.outer(zeta_p, ones), rho_pp],
    ])


def psd_bound(rho_xx_mat: np.ndarray, rho_pp: np.ndarray) -> float:
    """Norm bound on the uniform cross-taper vector that guarantees the
    composed correlation matrix stays positive semi-definite:
    sqrt(lambda_min(rho_pp) * lambda_min(rho_xx) / N_x)."""
    n_x = rho_xx_mat.shape[0]
    lam_x = np.linalg.eigvalsh(rho_xx_mat)
    lam_p = np.linalg.eigvalsh(rho_pp)
    for lam, name in ((lam_x, "rho_xx"), (lam_p, "rho_pp")):
        scale = max(1.0, float(np.abs(lam).max()))
        if lam.min() < -1e-10 * scale:
            raise IndefiniteMatrixError(f"{name} is not positive semi-definite")
    lx = max(float(lam_x.min()), 0.0)
    lp = max(float(lam_p.min()), 0.0)
    return float(np.sqrt(lp * lx / n_x))
