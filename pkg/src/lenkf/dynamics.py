"""Truth models, the monomial surrogate, RK4 integration and diagnostics.

All tendencies accept a single state vector (n,) or a matrix of column
states (n, m) and are vectorised over columns; column results are
bitwise identical to one-at-a-time evaluation.

The truth tendencies are written in the same accumulation order as the
surrogate's canonical monomial sweep, so the surrogate evaluated at the
identifying parameter set reproduces the truth tendencies exactly (not
just to roundoff), and twin trajectories stay identical over long runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


# ---------------------------------------------------------------------------
# truth models


def default_l96i_forcing(n_x: int = 40) -> np.ndarray:
    """Inhomogeneous forcing 8 + cos(2 pi n / N), sites numbered 1..N."""
    n = np.arange(1, n_x + 1)
    return 8.0 + np.cos(2.0 * np.pi * n / n_x)


def default_ml96_forcing(n_v: int = 32, n_h: int = 40) -> np.ndarray:
    """Layer-constant forcing decreasing linearly from 8 (bottom layer)
    to 4 (top layer)."""
    profile = np.linspace(8.0, 4.0, n_v)
    return np.repeat(profile[:, None], n_h, axis=1)


@dataclass(frozen=True)
class L96iModel:
    """Single-ring advection model with a per-site forcing."""

    n_x: int = 40
    forcing: np.ndarray = None

    def __post_init__(self):
        if self.forcing is None:
            object.__setattr__(self, "forcing", default_l96i_forcing(self.n_x))
        if self.forcing.shape != (self.n_x,):
            raise ValueError("forcing length must equal n_x")

    def tendency(self, x: np.ndarray) -> np.ndarray:
        xm2 = np.roll(x, 2, axis=0)
        xm1 = np.roll(x, 1, axis=0)
        xp1 = np.roll(x, -1, axis=0)
        f = self.forcing if x.ndim == 1 else self.forcing[:, None]
        return -x - xm2 * xm1 + xm1 * xp1 + f

    def equilibrium_state(self) -> np.ndarray:
        return self.forcing.copy()


def _vertical_coupling(x3: np.ndarray) -> np.ndarray:
    """Coupling increment between adjacent layers; the flux through the
    bottom of layer 0 and the top of the last layer is zero."""
    n_v = x3.shape[0]
    gamma = np.zeros((n_v + 1,) + x3.shape[1:])
    gamma[1:n_v] = x3[1:] - x3[:-1]
    return gamma[1:] - gamma[:-1]


@dataclass(frozen=True)
class ML96Model:
    """Stack of coupled rings; layer-major state layout, index of layer v
    and column h (0-based) is v * n_h + h."""

    n_v: int = 32
    n_h: int = 40
    forcing: np.ndarray = None

    def __post_init__(self):
        if self.forcing is None:
            object.__setattr__(self, "forcing", default_ml96_forcing(self.n_v, self.n_h))
        if self.forcing.shape != (self.n_v, self.n_h):
            raise ValueError("forcing shape must be (n_v, n_h)")

    @property
    def n_x(self) -> int:
        return self.n_v * self.n_h

    def tendency(self, x: np.ndarray) -> np.ndarray:
        x3 = x.reshape((self.n_v, self.n_h) + x.shape[1:])
        xm2 = np.roll(x3, 2, axis=1)
        xm1 = np.roll(x3, 1, axis=1)
        xp1 = np.roll(x3, -1, axis=1)
        f = self.forcing if x.ndim == 1 else self.forcing[..., None]
        acc = -x3 - xm2 * xm1 + xm1 * xp1 + f
        acc = acc + _vertical_coupling(x3)
        return acc.reshape(x.shape)

    def equilibrium_state(self) -> np.ndarray:
        return self.forcing.reshape(-1).copy()


# ---------------------------------------------------------------------------
# surrogate model


def monomial_terms(stencil: int) -> list[tuple]:
    """Canonical ordering of the surrogate regressors: linear terms for
    offsets -L..L, then pair products x_{n+m} x_{n+m+l} for l = 0..L and
    m = -L..L-l."""
    terms: list[tuple] = [("lin", m) for m in range(-stencil, stencil + 1)]
    for l in range(stencil + 1):
        for m in range(-stencil, stencil - l + 1):
            terms.append(("quad", l, m))
    return terms


def monomial_count(stencil: int) -> int:
    return len(monomial_terms(stencil))


def _monomial_sum(x: np.ndarray, coeffs, stencil: int, roll_axis: int) -> np.ndarray:
    """Accumulate the linear and quadratic regressor contributions.

    ``coeffs`` indexes the canonical term order; each entry is a scalar
    or a per-column row broadcast against the state."""
    acc = np.zeros_like(x)
    k = 0
    for m in range(-stencil, stencil + 1):
        acc = acc + coeffs[k] * np.roll(x, -m, axis=roll_axis)
        k += 1
    for l in range(stencil + 1):
        for m in range(-stencil, stencil - l + 1):
            term = np.roll(x, -m, axis=roll_axis) * np.roll(x, -(m + l), axis=roll_axis)
            acc = acc + coeffs[k] * term
            k += 1
    return acc


def surrogate_tendency_1d(x: np.ndarray, coeffs: np.ndarray, forcing: np.ndarray,
                          stencil: int = 2) -> np.ndarray:
    """Ring surrogate: monomial regressors on a local stencil plus a
    per-site forcing.  ``coeffs`` has shape (n_terms,) or (n_terms, m)
    and ``forcing`` (n,) or (n, m) for per-column parameter sets."""
    acc = _monomial_sum(x, coeffs, stencil, roll_axis=0)
    if x.ndim == 2 and forcing.ndim == 1:
        forcing = forcing[:, None]
    return acc + forcing


def surrogate_tendency_2d(x: np.ndarray, coeffs: np.ndarray, f_v: np.ndarray,
                          f_h: np.ndarray, n_v: int, n_h: int,
                          stencil: int = 2) -> np.ndarray:
    """Stacked surrogate: the same monomials on every layer, a separable
    forcing built from vertical factors (with an implicit leading 1) and
    horizontal factors, and the hard-coded vertical coupling."""
    x3 = x.reshape((n_v, n_h) + x.shape[1:])
    acc = _monomial_sum(x3, coeffs, stencil, roll_axis=1)
    if x.ndim == 2:
        fv = f_v[:, None] if f_v.ndim == 1 else f_v
        fh = f_h[:, None] if f_h.ndim == 1 else f_h
        f_v_full = np.concatenate([np.ones((1, fv.shape[1])), fv], axis=0)
        f = f_v_full[:, None, :] * fh[None, :, :]
    else:
        f_v_full = np.concatenate([[1.0], f_v])
        f = f_v_full[:, None] * f_h[None, :]
    acc = acc + f
    acc = acc + _vertical_coupling(x3)
    return acc.reshape(x.shape)


@dataclass(frozen=True)
class SurrogateParams:
    """One parameter set of the surrogate: stencil size, the monomial
    coefficients in canonical order, the forcing (a per-site vector, or a
    (vertical, horizontal) factor pair for stacked grids) and the grid
    shape (n,) or (n_v, n_h)."""

    stencil: int
    coeffs: np.ndarray
    forcing: np.ndarray | tuple
    grid: tuple

    def __post_init__(self):
        if len(self.coeffs) != monomial_count(self.stencil):
            raise ValueError("coefficient vector length does not match the stencil")

    @property
    def n_x(self) -> int:
        return int(np.prod(self.grid))

    @property
    def linear(self) -> np.ndarray:
        return self.coeffs[: 2 * self.stencil + 1]

    @property
    def quadratic_matrix(self) -> np.ndarray:
        """(L+1) x (2L+1) matrix with entry (l, L+m) holding the
        coefficient of x_{n+m} x_{n+m+l}; inactive entries are zero."""
        L = self.stencil
        mat = np.zeros((L + 1, 2 * L + 1))
        k = 2 * L + 1
        for l in range(L + 1):
            for m in range(-L, L - l + 1):
                mat[l, L + m] = self.coeffs[k]
                k += 1
        return mat

    def tendency(self, x: np.ndarray) -> np.ndarray:
        if len(self.grid) == 1:
            return surrogate_tendency_1d(x, self.coeffs, self.forcing, self.stencil)
        n_v, n_h = self.grid
        f_v, f_h = self.forcing
        return surrogate_tendency_2d(x, self.coeffs, f_v, f_h, n_v, n_h, self.stencil)


def surrogate_tendency(x: np.ndarray, params: SurrogateParams) -> np.ndarray:
    return params.tendency(x)


def _identifying_coeffs(stencil: int) -> np.ndarray:
    """Monomial coefficients reproducing the ring advection core
    -x_n - x_{n-2} x_{n-1} + x_{n-1} x_{n+1}."""
    coeffs = np.zeros(monomial_count(stencil))
    terms = monomial_terms(stencil)
    coeffs[terms.index(("lin", 0))] = -1.0
    coeffs[terms.index(("quad", 1, -2))] = -1.0
    coeffs[terms.index(("quad", 2, -1))] = 1.0
    return coeffs


def identifying_params_1d(model: L96iModel, stencil: int = 2) -> SurrogateParams:
    """The unique surrogate parameter set under which the ring surrogate
    equals the truth model."""
    return SurrogateParams(
        stencil=stencil,
        coeffs=_identifying_coeffs(stencil),
        forcing=model.forcing.copy(),
        grid=(model.n_x,),
    )


def identifying_params_2d(model: ML96Model, stencil: int = 2) -> SurrogateParams:
    """Identifying parameters for the stacked surrogate; requires the
    truth forcing to be constant within each layer."""
    if not np.allclose(model.forcing, model.forcing[:, :1]):
        raise ValueError("stacked identification assumes layer-constant forcing")
    bottom = model.forcing[0, 0]
    f_h = np.full(model.n_h, bottom)
    f_v = model.forcing[1:, 0] / bottom
    return SurrogateParams(
        stencil=stencil,
        coeffs=_identifying_coeffs(stencil),
        forcing=(f_v, f_h),
        grid=(model.n_v, model.n_h),
    )


# ---------------------------------------------------------------------------
# integration


@dataclass(frozen=True)
class Integrator:
    """Fixed-step classical RK4 configuration."""

    dt: float = 0.05
    scheme: str = "rk4"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.scheme != "rk4":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def step(self, tendency_fn: Callable, x: np.ndarray) -> np.ndarray:
        return rk4_step(tendency_fn, x, self.dt)


def rk4_step(tendency_fn: Callable, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step.  Non-finite values in
    the tendency propagate to the output; callers decide how to react."""
    k1 = tendency_fn(x)
    k2 = tendency_fn(x + (0.5 * dt) * k1)
    k3 = tendency_fn(x + (0.5 * dt) * k2)
    k4 = tendency_fn(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(tendency_fn: Callable, x: np.ndarray, steps: int, dt: float) -> np.ndarray:
    for _ in range(steps):
        x = rk4_step(tendency_fn, x, dt)
    return x


# ---------------------------------------------------------------------------
# diagnostics


def climatological_std(model, dt: float = 0.05, steps: int = 10_000,
                       spinup: int = 1_000, seed: int = 94_781):
    """Per-variable standard deviation over a free run, plus its mean.

    The run uses a fixed internal seed so the climatology of a given
    model is reproducible regardless of experiment seeds.
    """
    rng = np.random.default_rng(seed)
    x = model.equilibrium_state() + 0.05 * rng.standard_normal(model.n_x)
    x = integrate(model.tendency, x, spinup, dt)
    s1 = np.zeros(model.n_x)
    s2 = np.zeros(model.n_x)
    for _ in range(steps):
        x = rk4_step(model.tendency, x, dt)
        s1 += x
        s2 += x * x
    var = s2 / steps - (s1 / steps) ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    return std, float(std.mean())


@dataclass(frozen=True)
class SkillResult:
    nrmse: float
    diverged_trials: int
    trials: int

    @property
    def diverged(self) -> bool:
        return self.diverged_trials > 0


def forecast_skill(params: SurrogateParams, reference, lead_time: float, trials: int,
                   block: str, sigma: float, rng: np.random.Generator,
                   dt: float = 0.05, decorrelation_steps: int = 40,
                   clim: float | None = None) -> SkillResult:
    """Mean forecast error of the perturbed surrogate against the
    reference model after a given lead time, normalised by the reference
    climatological variability.

    ``block`` selects which parameter block receives the N(0, sigma^2 I)
    perturbation: 'coeffs' for the monomials, 'forcing' for the per-site
    forcing (ring grids only).  Each trial uses an independent parameter
    draw and a fresh initial condition on the reference attractor.
    """
    if block not in ("coeffs", "forcing"):
        raise ValueError("block must be 'coeffs' or 'forcing'")
    if block == "forcing" and len(params.grid) != 1:
        raise ValueError("forcing perturbations are defined on ring grids")
    if clim is None:
        clim = climatological_std(reference, dt)[1]
    lead_steps = max(1, round(lead_time / dt))
    x = reference.equilibrium_state() + 0.05 * rng.standard_normal(reference.n_x)
    x = integrate(reference.tendency, x, 1_000, dt)

    total = 0.0
    diverged = 0
    for _ in range(trials):
        if block == "coeffs":
            coeffs = params.coeffs + sigma * rng.standard_normal(params.coeffs.shape)
            trial = SurrogateParams(params.stencil, coeffs, params.forcing, params.grid)
        else:
            forcing = params.forcing + sigma * rng.standard_normal(params.forcing.shape)
            trial = SurrogateParams(params.stencil, params.coeffs, forcing, params.grid)
        x_ref = integrate(reference.tendency, x, lead_steps, dt)
        with np.errstate(over="ignore", invalid="ignore"):
            x_sur = integrate(trial.tendency, x, lead_steps, dt)
        # far off the attractor counts as a diverged trial even before
        # the integration produces non-finite values
        if not np.all(np.isfinite(x_sur)) or np.abs(x_sur).max() > 1e3:
            diverged += 1
        else:
            total += float(np.sqrt(np.mean((x_sur - x_ref) ** 2))) / clim
        x = integrate(reference.tendency, x, decorrelation_steps, dt)
    counted = trials - diverged
    nrmse = total / counted if counted else np.inf
    return SkillResult(nrmse=nrmse, diverged_trials=diverged, trials=trials)


def lyapunov_spectrum(model, n_exponents: int, steps: int, dt: float = 0.05,
                      spinup: int = 500, eps_rel: float = 1e-6,
                      rng: np.random.Generator | None = None,
                      x0: np.ndarray | None = None) -> np.ndarray:
    """Leading Lyapunov exponents via finite differences of the resolvent
    with QR re-orthonormalisation each step; sorted descending, units of
    inverse model time."""
    if rng is None:
        rng = np.random.default_rng(0)
    if x0 is None:
        x0 = model.equilibrium_state() + 0.05 * rng.standard_normal(model.n_x)
    n = x0.size
    if n_exponents > n:
        raise ValueError("cannot extract more exponents than state dimensions")
    x = integrate(model.tendency, x0, spinup, dt)
    q, _ = np.linalg.qr(rng.standard_normal((n, n_exponents)))
    acc = np.zeros(n_exponents)
    for _ in range(steps):
        scale = eps_rel * max(1.0, float(np.linalg.norm(x)) / np.sqrt(n))
        block = np.concatenate([x[:, None], x[:, None] + scale * q], axis=1)
        block = rk4_step(model.tendency, block, dt)
        x = block[:, 0]
        d = (block[:, 1:] - x[:, None]) / scale
        q, r = np.linalg.qr(d)
        diag = np.diag(r)
        sign = np.sign(diag)
        sign[sign == 0] = 1.0
        q = q * sign
        acc += np.log(np.abs(diag))
    return np.sort(acc / (steps * dt))[::-1]
