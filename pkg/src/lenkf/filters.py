"""Analysis algorithms for the augmented ensemble.

Square-root analyses in two families: covariance localisation (state-
space/observation-space square-root filter variants) and domain
localisation (transform filter variants with per-site local analyses),
plus the hybrid that combines horizontal domain localisation with
vertical covariance localisation, and the site-averaging baseline for
global parameters.

Shared conventions:
  * R is diagonal; R^(-1/2) is applied entrywise.
  * Every symmetric system matrix T is factorised once with sym_eig and
    all of T^-1, T^-1/2 and (T + T^1/2)^-1 are evaluated from that
    factorization.
  * Domain localisation uses per-observation weight vectors w with
    rho = w w^T, so tapering R^-1 reduces to row-scaling by w.
  * The inflation factor applies to the prior perturbations before any
    update; parameter-block increments are tapered linearly by zeta_p
    (global) and zeta_q (local); zeta = 0 freezes the block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augmented import AugmentedEnsemble, EnsembleStats, PartitionLayout, inflate, stats
from .numkit import SymEig, sym_eig
from .obs import ObsBatch, obs_anomalies


class AnalysisError(RuntimeError):
    """The analysis produced non-finite values or a factorization failed."""


class UnsupportedOperatorError(TypeError):
    """The selected algorithm needs structure this operator lacks."""


def _inv(d):
    return 1.0 / d


def _inv_sqrt(d):
    return 1.0 / np.sqrt(d)


def _inv_shifted(d):
    # (T + T^(1/2))^-1 shares eigenvectors with T
    return 1.0 / (d + np.sqrt(d))


@dataclass
class Localisation:
    """Localisation inputs consumed by the analyses.

    Covariance localisation: rho_xx, rho_qx, rho_px (None disables one
    taper).  Domain localisation: site_weights[(site, obs)] for the state
    loop, q_site_weights/q_positions for local parameters, and
    column_weights/state_columns/q_columns for the per-column hybrid.
    rho_pp is accepted for interface completeness; no analysis reads it.
    """

    rho_xx: np.ndarray | None = None
    rho_qx: np.ndarray | None = None
    rho_px: np.ndarray | None = None
    rho_pp: np.ndarray | None = None
    site_weights: np.ndarray | None = None
    q_site_weights: np.ndarray | None = None
    q_positions: np.ndarray | None = None
    column_weights: np.ndarray | None = None
    state_columns: list | None = None
    q_columns: list | None = None
    zeta_p: float = 1.0
    zeta_q: float = 1.0

    @classmethod
    def none(cls, zeta_p: float = 1.0, zeta_q: float = 1.0) -> "Localisation":
        return cls(zeta_p=zeta_p, zeta_q=zeta_q)


@dataclass(frozen=True)
class AnalysisInput:
    ensemble: AugmentedEnsemble
    obs: ObsBatch
    operator: object
    loc: Localisation = field(default_factory=Localisation)
    inflation: float = 1.0


@dataclass(frozen=True)
class AnalysisDiagnostics:
    increment_norms: dict
    condition_numbers: dict


@dataclass(frozen=True)
class AnalysisOutput:
    ensemble: AugmentedEnsemble
    diagnostics: AnalysisDiagnostics


def _prepare(inp: AnalysisInput):
    """Inflate the prior and compute the scaled innovation; returns the
    pieces every analysis starts from.  Without inflation the prior
    matrix is passed through untouched so that zero increments leave
    rows bit-identical."""
    layout = inp.ensemble.layout
    st = inflate(stats(inp.ensemble), inp.inflation)
    if inp.inflation == 1.0:
        prior = inp.ensemble.matrix
    else:
        prior = st.reconstruct(layout).matrix
    s = 1.0 / np.sqrt(inp.obs.r_diag)
    innov = inp.obs.y - inp.operator(st.mean[layout.x])
    return layout, st, prior, s, innov


def _split(layout: PartitionLayout, st: EnsembleStats):
    z = st.perturbations
    return z[layout.x], z[layout.p], z[layout.q]


def _finish(layout: PartitionLayout, st: EnsembleStats, prior: np.ndarray,
            d_mean: np.ndarray, d_pert: np.ndarray, conds: dict) -> AnalysisOutput:
    if not (np.all(np.isfinite(d_mean)) and np.all(np.isfinite(d_pert))):
        raise AnalysisError("non-finite analysis increments")
    norms = {
        "x": float(np.linalg.norm(d_mean[layout.x])),
        "p": float(np.linalg.norm(d_mean[layout.p])),
        "q": float(np.linalg.norm(d_mean[layout.q])),
    }
    matrix = prior + d_mean[:, None] + np.sqrt(st.n_e - 1.0) * d_pert
    ensemble = AugmentedEnsemble(layout=layout, matrix=matrix)
    return AnalysisOutput(ensemble=ensemble,
                          diagnostics=AnalysisDiagnostics(norms, conds))


def _zeros_like_updates(layout: PartitionLayout, n_e: int):
    return np.zeros(layout.n_z), np.zeros((layout.n_z, n_e))


# ---------------------------------------------------------------------------
# generic (no-localisation) analyses


def ensrf_generic(inp: AnalysisInput) -> AnalysisOutput:
    """Square-root analysis of the full augmented state with the sample
    covariance; dense algebra sized by the observation count."""
    layout, st, prior, s, innov = _prepare(inp)
    d_mean, d_pert = _zeros_like_updates(layout, st.n_e)
    conds = {}
    if inp.obs.y.size:
        y_mat = s[:, None] * obs_anomalies(inp.operator, prior[layout.x])
        t_y = np.eye(y_mat.shape[0]) + y_mat @ y_mat.T
        fac = sym_eig(0.5 * (t_y + t_y.T))
        conds["t_y"] = fac.condition_number
        d0 = s * innov
        d_mean = st.perturbations @ (y_mat.T @ fac.apply(_inv, d0))
        d_pert = -st.perturbations @ (y_mat.T @ fac.apply(_inv_shifted, y_mat))
    return _finish(layout, st, prior, d_mean, d_pert, conds)


def etkf_generic(inp: AnalysisInput) -> AnalysisOutput:
    """Transform analysis of the full augmented state; dense algebra
    sized by the ensemble."""
    layout, st, prior, s, innov = _prepare(inp)
    d_mean, d_pert = _zeros_like_updates(layout, st.n_e)
    conds = {}
    if inp.obs.y.size:
        y_mat = s[:, None] * obs_anomalies(inp.operator, prior[layout.x])
        n_e = st.n_e
        t_e = np.eye(n_e) + y_mat.T @ y_mat
        fac = sym_eig(0.5 * (t_e + t_e.T))
        conds["t_e"] = fac.condition_number
        w_a = fac.apply(_inv, y_mat.T @ (s * innov))
        d_mean = st.perturbations @ w_a
        d_pert = st.perturbations @ (fac.matrix_function(_inv_sqrt) - np.eye(n_e))
    return _finish(layout, st, prior, d_mean, d_pert, conds)


# ---------------------------------------------------------------------------
# covariance-localised square-root analyses


def _hadamard(rho: np.ndarray | None, mat: np.ndarray) -> np.ndarray:
    return mat if rho is None else rho * mat


def lensrf_hml(inp: AnalysisInput) -> AnalysisOutput:
    """Covariance-localised square-root analysis with split updates:
    tapered state and local-parameter covariances, an untapered (row-wise
    uniform) global-parameter cross covariance, and linear zeta tapering
    of both parameter blocks.  Requires the tangent action of the
    observation operator."""
    op = inp.operator
    if not hasattr(op, "rmatmul"):
        raise UnsupportedOperatorError("operator lacks a tangent (rmatmul)")
    layout, st, prior, s, innov = _prepare(inp)
    loc = inp.loc
    z_x, z_p, z_q = _split(layout, st)
    d_mean, d_pert = _zeros_like_updates(layout, st.n_e)
    conds = {}
    if inp.obs.y.size:
        b_xx = _hadamard(loc.rho_xx, z_x @ z_x.T)
        b_qx = _hadamard(loc.rho_qx, z_q @ z_x.T)
        b_px = z_p @ z_x.T
        hb = op.matmul(b_xx)
        a = op.matmul(hb.T)
        n_y = inp.obs.y.size
        t_y = np.eye(n_y) + s[:, None] * a * s[None, :]
        fac = sym_eig(0.5 * (t_y + t_y.T))
        conds["t_y"] = fac.condition_number
        u_x = op.rmatmul(s * fac.apply(_inv, s * innov))
        y_mat = s[:, None] * obs_anomalies(op, prior[layout.x])
        u_pert = -op.rmatmul(s[:, None] * fac.apply(_inv_shifted, y_mat))
        d_mean[layout.x] = b_xx @ u_x
        d_mean[layout.q] = loc.zeta_q * (b_qx @ u_x)
        d_mean[layout.p] = loc.zeta_p * (b_px @ u_x)
        d_pert[layout.x] = b_xx @ u_pert
        d_pert[layout.q] = loc.zeta_q * (b_qx @ u_pert)
        d_pert[layout.p] = loc.zeta_p * (b_px @ u_pert)
    return _finish(layout, st, prior, d_mean, d_pert, conds)


def lensrf_hml_obs_space(inp: AnalysisInput) -> AnalysisOutput:
    """Adjoint-free variant of the covariance-localised square-root
    analysis for fully local operators: the state-space tapers are
    transposed to observation space through the obs -> site map, and all
    increments are built from observation-space ancillaries."""
    op = inp.operator
    if not hasattr(op, "h_map"):
        raise UnsupportedOperatorError("operator is not fully local (no h_map)")
    layout, st, prior, s, innov = _prepare(inp)
    loc = inp.loc
    z_x, z_p, z_q = _split(layout, st)
    d_mean, d_pert = _zeros_like_updates(layout, st.n_e)
    conds = {}
    if inp.obs.y.size:
        hm = op.h_map
        y_mat = s[:, None] * obs_anomalies(op, prior[layout.x])
        rho_yy = None if loc.rho_xx is None else loc.rho_xx[np.ix_(hm, hm)]
        rho_xy = None if loc.rho_xx is None else loc.rho_xx[:, hm]
        rho_qy = None if loc.rho_qx is None else loc.rho_qx[:, hm]
        b_yy = _hadamard(rho_yy, y_mat @ y_mat.T)
        b_xy = _hadamard(rho_xy, z_x @ y_mat.T)
        b_qy = _hadamard(rho_qy, z_q @ y_mat.T)
        b_py = z_p @ y_mat.T
        t_y = np.eye(inp.obs.y.size) + b_yy
        fac = sym_eig(0.5 * (t_y + t_y.T))
        conds["t_y"] = fac.condition_number
        u_y = fac.apply(_inv, s * innov)
        u_pert = -fac.apply(_inv_shifted, y_mat)
        d_mean[layout.x] = b_xy @ u_y
        d_mean[layout.q] = loc.zeta_q * (b_qy @ u_y)
        d_mean[layout.p] = loc.zeta_p * (b_py @ u_y)
        d_pert[layout.x] = b_xy @ u_pert
        d_pert[layout.q] = loc.zeta_q * (b_qy @ u_pert)
        d_pert[layout.p] = loc.zeta_p * (b_py @ u_pert)
    return _finish(layout, st, prior, d_mean, d_pert, conds)


# ---------------------------------------------------------------------------
# domain-localised transform analyses


def _site_weight_rows(loc: Localisation, n_x: int, n_y: int) -> np.ndarray:
    if loc.site_weights is not None:
        return loc.site_weights
    return np.ones((n_x, n_y))


def _local_transform(y_mat: np.ndarray, d0: np.ndarray, w: np.ndarray):
    """Local transform quantities for one weight vector: the analysis
    weights, the transform correction T^-1/2 - I, the tapered residual
    in observation space and the shifted-inverse image of Y."""
    n_e = y_mat.shape[1]
    y_loc = w[:, None] * y_mat
    t_loc = np.eye(n_e) + y_loc.T @ y_loc
    fac = sym_eig(0.5 * (t_loc + t_loc.T))
    delta = w * d0
    w_a = fac.apply(_inv, y_loc.T @ delta)
    transform = fac.matrix_function(_inv_sqrt) - np.eye(n_e)
    return y_loc, fac, delta, w_a, transform


def _dl_analysis(inp: AnalysisInput, average_global: bool):
    """Per-site local analyses shared by the domain-localised variants.

    The state row of each site comes from its own local transform.
    Observation-space residual increments are assembled from the local
    analysis of the site owning each observation.  Local parameters use
    the local transform at their own position (tapering both the
    projected ensemble and the innovation).  The global block is updated
    once at the end: either from the assembled observation-space
    increments, or (``average_global``) by averaging the per-site local
    estimates over all sites.
    """
    op = inp.operator
    if not hasattr(op, "h_map"):
        raise UnsupportedOperatorError("operator is not fully local (no h_map)")
    layout, st, prior, s, innov = _prepare(inp)
    loc = inp.loc
    z_x, z_p, z_q = _split(layout, st)
    n_e = st.n_e
    d_mean, d_pert = _zeros_like_updates(layout, n_e)
    conds = {}
    if not inp.obs.y.size and not average_global:
        return _finish(layout, st, prior, d_mean, d_pert, conds)

    n_y = inp.obs.y.size
    y_mat = s[:, None] * obs_anomalies(op, prior[layout.x]) if n_y else np.zeros((0, n_e))
    d0 = s * innov if n_y else np.zeros(0)
    weights = _site_weight_rows(loc, layout.n_x, n_y)
    owned = [np.flatnonzero(op.h_map == n) for n in range(layout.n_x)]

    u_y = np.zeros(n_y)
    u_pert = np.zeros((n_y, n_e))
    wa_sum = np.zeros(n_e)
    transform_sum = np.zeros((n_e, n_e))
    cache = {}
    max_cond = 1.0
    for n in range(layout.n_x):
        w = weights[n]
        if n_y and w.any():
            y_loc, fac, delta, w_a, transform = _local_transform(y_mat, d0, w)
            max_cond = max(max_cond, fac.condition_number)
            cache[n] = (w_a, transform)
            d_mean[n] = z_x[n] @ w_a
            d_pert[n, :] = z_x[n] @ transform
            own = owned[n]
            if own.size:
                u_y[own] = (delta - y_loc @ w_a)[own]
                u_pert[own, :] = -(y_loc[own, :] @ fac.matrix_function(_inv_shifted))
            wa_sum += w_a
            transform_sum += transform
        # zero weights: the local transform is the identity, no update

    # local parameters: same machinery at the parameter's own position
    q0 = layout.q.start
    default_q = None
    for m in range(layout.n_q):
        if loc.q_positions is not None and int(loc.q_positions[m]) in cache:
            w_a, transform = cache[int(loc.q_positions[m])]
        elif loc.q_positions is not None:
            continue  # co-located site had all-zero weights: no update
        elif loc.q_site_weights is not None:
            if not (n_y and loc.q_site_weights[m].any()):
                continue
            _, fac, _, w_a, transform = _local_transform(y_mat, d0, loc.q_site_weights[m])
            max_cond = max(max_cond, fac.condition_number)
        else:
            if not n_y:
                continue
            if default_q is None:
                _, fac, _, w_a, transform = _local_transform(y_mat, d0, np.ones(n_y))
                default_q = (w_a, transform)
            w_a, transform = default_q
        d_mean[q0 + m] = loc.zeta_q * (z_q[m] @ w_a)
        d_pert[q0 + m, :] = loc.zeta_q * (z_q[m] @ transform)

    # global parameters, once, after the local loops
    if layout.n_p:
        if average_global:
            d_mean[layout.p] = loc.zeta_p * (z_p @ (wa_sum / layout.n_x))
            d_pert[layout.p] = loc.zeta_p * (z_p @ (transform_sum / layout.n_x))
        elif n_y:
            d_mean[layout.p] = loc.zeta_p * (z_p @ (y_mat.T @ u_y))
            d_pert[layout.p] = loc.zeta_p * (z_p @ (y_mat.T @ u_pert))
    conds["t_site_max"] = max_cond
    return _finish(layout, st, prior, d_mean, d_pert, conds)


def letkf_hml(inp: AnalysisInput) -> AnalysisOutput:
    """Domain-localised transform analysis with the rigorous global
    parameter update assembled from per-observation residual increments;
    local parameters are updated in the local analyses at their sites."""
    return _dl_analysis(inp, average_global=False)


def letkf_aksoy(inp: AnalysisInput) -> AnalysisOutput:
    """Domain-localised transform analysis where the global-parameter
    update is the empirical average of the per-site local estimates;
    state (and local-parameter) updates match letkf_hml."""
    return _dl_analysis(inp, average_global=True)


# ---------------------------------------------------------------------------
# hybrid: horizontal domain localisation + vertical covariance localisation


def l2ensrf_hml(inp: AnalysisInput) -> AnalysisOutput:
    """Per-column square-root analyses: each horizontal column gets its
    own observation-error taper, and only that column's state rows and
    co-located horizontally-local parameters are extracted from the
    resulting increments.  The horizontally non-local parameter block is
    updated once from the column-assembled state-space ancillaries."""
    op = inp.operator
    if not hasattr(op, "rmatmul"):
        raise UnsupportedOperatorError("operator lacks a tangent (rmatmul)")
    loc = inp.loc
    if loc.column_weights is None or loc.state_columns is None:
        raise ValueError("column_weights and state_columns are required")
    layout, st, prior, s, innov = _prepare(inp)
    z_x, z_p, z_q = _split(layout, st)
    n_e = st.n_e
    d_mean, d_pert = _zeros_like_updates(layout, n_e)
    conds = {}
    n_y = inp.obs.y.size
    if n_y:
        b_xx = _hadamard(loc.rho_xx, z_x @ z_x.T)
        b_qx = _hadamard(loc.rho_qx, z_q @ z_x.T)
        b_px = _hadamard(loc.rho_px, z_p @ z_x.T)
        hb = op.matmul(b_xx)
        a = op.matmul(hb.T)
        # extracted rows of B Hx^T products: updates become small local
        # contractions instead of full state-space matmuls
        c_x = hb.T
        c_q = op.matmul(b_qx.T).T
        y_raw = obs_anomalies(op, prior[layout.x])
        v_mean = np.zeros(layout.n_x)
        v_pert = np.zeros((layout.n_x, n_e))
        max_cond = 1.0
        for h, rows in enumerate(loc.state_columns):
            w = loc.column_weights[h]
            idx = np.flatnonzero(w > 0)
            if idx.size == 0:
                continue
            ws = (w * s)[idx]
            t_loc = np.eye(idx.size) + ws[:, None] * a[np.ix_(idx, idx)] * ws[None, :]
            fac = sym_eig(0.5 * (t_loc + t_loc.T))
            max_cond = max(max_cond, fac.condition_number)
            scaled_vec = ws * fac.apply(_inv, ws * innov[idx])
            scaled_mat = ws[:, None] * fac.apply(_inv_shifted,
                                                 ws[:, None] * y_raw[idx])
            c_loc = c_x[np.ix_(rows, idx)]
            d_mean[layout.x][rows] = c_loc @ scaled_vec
            d_pert[layout.x][rows] = -(c_loc @ scaled_mat)
            if loc.q_columns is not None and layout.n_q:
                q_rows = loc.q_columns[h]
                if len(q_rows):
                    cq_loc = c_q[np.ix_(q_rows, idx)]
                    d_mean[layout.q][q_rows] = loc.zeta_q * (cq_loc @ scaled_vec)
                    d_pert[layout.q][q_rows] = -loc.zeta_q * (cq_loc @ scaled_mat)
            if layout.n_p:
                rhs = np.zeros(n_y)
                rhs[idx] = scaled_vec
                v_mean[rows] = op.rmatmul(rhs)[rows]
                rhs_m = np.zeros((n_y, n_e))
                rhs_m[idx] = scaled_mat
                v_pert[rows] = -op.rmatmul(rhs_m)[rows]
        if layout.n_p:
            d_mean[layout.p] = loc.zeta_p * (b_px @ v_mean)
            d_pert[layout.p] = loc.zeta_p * (b_px @ v_pert)
        conds["t_col_max"] = max_cond
    return _finish(layout, st, prior, d_mean, d_pert, conds)


# ---------------------------------------------------------------------------
# square-root identity check


def full_space_perturbation_update(z_pert: np.ndarray, h_x: np.ndarray,
                                   r_diag: np.ndarray) -> np.ndarray:
    """Perturbation update (I + B H^T R^-1 H)^(-1/2) Z evaluated directly
    in the full state space with a general eigendecomposition (the matrix
    is diagonalizable with eigenvalues >= 1 but not symmetric)."""
    n_z = z_pert.shape[0]
    b = z_pert @ z_pert.T
    m = np.eye(n_z) + b @ (h_x.T / r_diag) @ h_x
    w, v = np.linalg.eig(m)
    if np.abs(w.imag).max() > 1e-8 * max(1.0, np.abs(w.real).max()):
        raise AnalysisError("unexpected complex eigenvalues in the update matrix")
    d = 1.0 / np.sqrt(np.maximum(w.real, 1e-300))
    root_inv = (v * d) @ np.linalg.inv(v)
    if np.abs(root_inv.imag).max() > 1e-8:
        raise AnalysisError("inverse square root is not numerically real")
    return root_inv.real @ z_pert


def obs_space_perturbation_update(z_pert: np.ndarray, h_x: np.ndarray,
                                  r_diag: np.ndarray) -> np.ndarray:
    """The same update computed in observation space through the
    symmetric system matrix, as used by the analyses."""
    s = 1.0 / np.sqrt(r_diag)
    y_mat = s[:, None] * (h_x @ z_pert)
    t_y = np.eye(y_mat.shape[0]) + y_mat @ y_mat.T
    fac = sym_eig(0.5 * (t_y + t_y.T))
    return z_pert - z_pert @ (y_mat.T @ fac.apply(_inv_shifted, y_mat))


def matrix_shift_gap(rng: np.random.Generator, n_z: int = 8, n_y: int = 5,
                     n_e: int = 4) -> float:
    """Relative gap between the full-space and observation-space forms of
    the perturbation update on one random linear system."""
    z_pert = rng.standard_normal((n_z, n_e))
    z_pert -= z_pert.mean(axis=1, keepdims=True)
    h_x = rng.standard_normal((n_y, n_z))
    r_diag = rng.uniform(0.5, 2.0, size=n_y)
    full = full_space_perturbation_update(z_pert, h_x, r_diag)
    obs = obs_space_perturbation_update(z_pert, h_x, r_diag)
    scale = max(np.linalg.norm(full), 1e-30)
    return float(np.linalg.norm(full - obs) / scale)


def matrix_shift_equivalence_check(rng: np.random.Generator, n_z: int = 8,
                                   n_y: int = 5, n_e: int = 4,
                                   tol: float = 1e-9) -> bool:
    return matrix_shift_gap(rng, n_z, n_y, n_e) <= tol


ANALYSES = {
    "ensrf": ensrf_generic,
    "etkf": etkf_generic,
    "lensrf_hml": lensrf_hml,
    "lensrf_hml_obs": lensrf_hml_obs_space,
    "letkf_hml": letkf_hml,
    "letkf_aksoy": letkf_aksoy,
    "l2ensrf_hml": l2ensrf_hml,
}
