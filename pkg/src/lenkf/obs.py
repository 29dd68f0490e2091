"""Observation operators and synthetic observation generation.

Two operator families are provided: point operators reading single grid
sites (fully local, with an explicit obs -> site map) and vertical
averaging-kernel operators applied to every horizontal column of a
stacked grid (local in the horizontal only).  Both are linear; filters
use the secant form H(E)(I - 11^T/n_e)/sqrt(n_e - 1) for observation
anomalies, which coincides with the tangent action here.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import climatological_std, integrate, rk4_step
from .numkit import gaspari_cohn


class CalibrationError(RuntimeError):
    """A channel produced (near) zero variability during calibration."""


@dataclass(frozen=True)
class ObsBatch:
    """One batch of observations with diagonal error variances."""

    y: np.ndarray
    r_diag: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        if np.any(self.r_diag <= 0):
            raise ValueError("observation error variances must be positive")
        if self.y.shape != self.r_diag.shape:
            raise ValueError("y and r_diag must have the same length")


@dataclass(frozen=True)
class PointObsOperator:
    """Fully local operator: observation p reads site h_map[p] scaled by
    scale[p]."""

    h_map: np.ndarray
    n_x: int
    scale: np.ndarray = None

    def __post_init__(self):
        h = np.asarray(self.h_map, dtype=int)
        object.__setattr__(self, "h_map", h)
        if self.scale is None:
            object.__setattr__(self, "scale", np.ones(h.size))
        if np.any(h < 0) or np.any(h >= self.n_x):
            raise ValueError("observation sites outside the grid")

    @property
    def n_y(self) -> int:
        return self.h_map.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        s = self.scale if x.ndim == 1 else self.scale[:, None]
        return s * x[self.h_map]

    def matmul(self, m: np.ndarray) -> np.ndarray:
        """H @ m for a matrix of column vectors."""
        return self(m)

    def rmatmul(self, m: np.ndarray) -> np.ndarray:
        """H^T @ m; accumulates repeated sites."""
        out_shape = (self.n_x,) + m.shape[1:]
        out = np.zeros(out_shape)
        s = self.scale if m.ndim == 1 else self.scale[:, None]
        np.add.at(out, self.h_map, s * m)
        return out

    def tangent(self) -> np.ndarray:
        h = np.zeros((self.n_y, self.n_x))
        h[np.arange(self.n_y), self.h_map] = self.scale
        return h


def identity_obs(n_x: int) -> PointObsOperator:
    return PointObsOperator(h_map=np.arange(n_x), n_x=n_x)


@dataclass(frozen=True)
class KernelObsOperator:
    """Vertical averaging kernels applied to every horizontal column.

    ``weights[k, v]`` is the raw kernel of channel k at level v and
    ``norm[k]`` its calibration factor.  Observations are ordered by
    column then channel: obs index = h * n_channels + k, so each block of
    n_channels consecutive observations shares one column.
    """

    weights: np.ndarray
    centers: np.ndarray
    norm: np.ndarray
    n_v: int
    n_h: int

    def __post_init__(self):
        if self.weights.shape != (self.centers.size, self.n_v):
            raise ValueError("weights shape must be (n_channels, n_v)")
        if np.any(self.weights < 0):
            raise ValueError("kernel weights must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.centers.size

    @property
    def n_x(self) -> int:
        return self.n_v * self.n_h

    @property
    def n_y(self) -> int:
        return self.n_channels * self.n_h

    def obs_columns(self) -> np.ndarray:
        """Horizontal column index of every observation."""
        return np.arange(self.n_y) // self.n_channels

    def _scaled_weights(self) -> np.ndarray:
        return self.norm[:, None] * self.weights

    def __call__(self, x: np.ndarray) -> np.ndarray:
        w = self._scaled_weights()
        x3 = x.reshape((self.n_v, self.n_h) + x.shape[1:])
        # (k, v) x (v, h, ...) -> (k, h, ...) -> obs-major (h, k, ...)
        out = np.tensordot(w, x3, axes=([1], [0])).swapaxes(0, 1)
        return np.ascontiguousarray(out).reshape((self.n_y,) + x.shape[1:])

    def matmul(self, m: np.ndarray) -> np.ndarray:
        return self(m)

    def rmatmul(self, m: np.ndarray) -> np.ndarray:
        w = self._scaled_weights()
        m3 = m.reshape((self.n_h, self.n_channels) + m.shape[1:])
        # (v, k) x (h, k, ...) summed over k -> (v, h, ...)
        out = np.tensordot(w.T, m3, axes=([1], [1]))
        return np.ascontiguousarray(out).reshape((self.n_x,) + m.shape[1:])

    def tangent(self) -> np.ndarray:
        h = np.zeros((self.n_y, self.n_x))
        w = self._scaled_weights()
        for col in range(self.n_h):
            for k in range(self.n_channels):
                h[col * self.n_channels + k, col::self.n_h] = w[k]
        return h


def build_averaging_kernels(n_v: int = 32, n_h: int = 40, n_channels: int = 8,
                            half_width: float = 10.0) -> KernelObsOperator:
    """Raw (unit-normalisation) kernels: channel centers evenly spaced
    along the vertical, weight profiles from the Gaspari-Cohn taper
    reaching zero ``half_width`` levels from the center."""
    k = np.arange(1, n_channels + 1)
    centers = (k - 0.5) * n_v / n_channels
    levels = np.arange(1, n_v + 1, dtype=float)
    dist = np.abs(levels[None, :] - centers[:, None])
    weights = gaspari_cohn(2.0 * dist / half_width)
    return KernelObsOperator(weights=weights, centers=centers,
                             norm=np.ones(n_channels), n_v=n_v, n_h=n_h)


def calibrate_kernels(op: KernelObsOperator, model, run_length: int = 10_000,
                      dt: float = 0.05, spinup: int = 1_000,
                      seed: int = 52_307,
                      target_std: float | None = None) -> KernelObsOperator:
    """Rescale each channel so the standard deviation of its output over
    a free run of the truth model equals ``target_std``.

    By default the target is the mean per-variable climatological
    standard deviation of the same run; passing it explicitly pins the
    observation informativeness to a reference variability (e.g. that of
    the single-ring model) independent of the observed stack."""
    rng = np.random.default_rng(seed)
    x = model.equilibrium_state() + 0.05 * rng.standard_normal(model.n_x)
    x = integrate(model.tendency, x, spinup, dt)
    raw = KernelObsOperator(weights=op.weights, centers=op.centers,
                            norm=np.ones(op.n_channels), n_v=op.n_v, n_h=op.n_h)
    n_ch = op.n_channels
    s1 = np.zeros(n_ch)
    s2 = np.zeros(n_ch)
    v1 = np.zeros(model.n_x)
    v2 = np.zeros(model.n_x)
    samples = run_length * op.n_h
    for _ in range(run_length):
        x = rk4_step(model.tendency, x, dt)
        obs = raw(x).reshape(op.n_h, n_ch)
        s1 += obs.sum(axis=0)
        s2 += (obs * obs).sum(axis=0)
        v1 += x
        v2 += x * x
    chan_var = s2 / samples - (s1 / samples) ** 2
    chan_std = np.sqrt(np.maximum(chan_var, 0.0))
    if target_std is None:
        state_var = v2 / run_length - (v1 / run_length) ** 2
        target = float(np.sqrt(np.maximum(state_var, 0.0)).mean())
    else:
        target = float(target_std)
    if np.any(chan_std < 1e-12 * max(target, 1.0)):
        raise CalibrationError("a channel has (near) zero variability")
    return KernelObsOperator(weights=op.weights, centers=op.centers,
                             norm=target / chan_std, n_v=op.n_v, n_h=op.n_h)


def obs_anomalies(op, ens_x: np.ndarray) -> np.ndarray:
    """Centered, scaled observation-space ensemble H(E)(I - 11^T/n_e)/
    sqrt(n_e - 1); columns sum to zero."""
    n_e = ens_x.shape[1]
    if n_e < 2:
        raise ValueError("at least two members are required")
    he = op(ens_x)
    return (he - he.mean(axis=1, keepdims=True)) / np.sqrt(n_e - 1.0)


def perturb(truth_obs: np.ndarray, r_diag: np.ndarray, rng: np.random.Generator,
            time_index: int = 0) -> ObsBatch:
    """Observations = truth plus independent N(0, r_diag) noise."""
    r_diag = np.broadcast_to(np.asarray(r_diag, dtype=float), truth_obs.shape)
    if np.any(r_diag <= 0):
        raise ValueError("observation error variances must be positive")
    y = truth_obs + np.sqrt(r_diag) * rng.standard_normal(truth_obs.shape)
    return ObsBatch(y=y, r_diag=r_diag.copy(), time_index=time_index)


def export_kernels_csv(op: KernelObsOperator, path) -> None:
    """Write (channel, level, raw weight, normalised weight) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "level", "weight", "normalized_weight"])
        for k in range(op.n_channels):
            for v in range(op.n_v):
                writer.writerow([k + 1, v + 1,
                                 f"{op.weights[k, v]:.10g}",
                                 f"{op.norm[k] * op.weights[k, v]:.10g}"])
