"""Augmented-state data model: the [state; global params; local params]
partition, ensemble statistics, inflation, initialisation and the
persistence forecast of parameter blocks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numkit import sample_gaussian


class InsufficientEnsembleError(ValueError):
    """Fewer than two ensemble members."""


class EnsembleDivergence(RuntimeError):
    """Non-finite values appeared in one or more members."""

    def __init__(self, members, context: str = ""):
        self.members = list(members)
        self.context = context
        detail = f" during {context}" if context else ""
        super().__init__(f"non-finite members {self.members}{detail}")


@dataclass(frozen=True)
class PartitionLayout:
    """Sizes of the state (x), global-parameter (p) and local-parameter
    (q) blocks of the augmented vector z = [x; p; q]."""

    n_x: int
    n_p: int = 0
    n_q: int = 0

    def __post_init__(self):
        if self.n_x < 1 or self.n_p < 0 or self.n_q < 0:
            raise ValueError("block sizes must be non-negative with n_x >= 1")

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_p + self.n_q

    @property
    def x(self) -> slice:
        return slice(0, self.n_x)

    @property
    def p(self) -> slice:
        return slice(self.n_x, self.n_x + self.n_p)

    @property
    def q(self) -> slice:
        return slice(self.n_x + self.n_p, self.n_z)


@dataclass(frozen=True)
class AugmentedEnsemble:
    """Column-wise collection of augmented states, shape (n_z, n_e)."""

    layout: PartitionLayout
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.layout.n_z:
            raise ValueError("ensemble matrix shape does not match the layout")

    @property
    def n_e(self) -> int:
        return self.matrix.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.matrix[self.layout.x]

    @property
    def p(self) -> np.ndarray:
        return self.matrix[self.layout.p]

    @property
    def q(self) -> np.ndarray:
        return self.matrix[self.layout.q]


@dataclass(frozen=True)
class EnsembleStats:
    """Ensemble mean and scaled perturbation matrix.

    The ensemble is recovered as mean 1^T + sqrt(n_e - 1) Z, and the rows
    of Z sum to zero."""

    mean: np.ndarray
    perturbations: np.ndarray

    @property
    def n_e(self) -> int:
        return self.perturbations.shape[1]

    def reconstruct(self, layout: PartitionLayout) -> AugmentedEnsemble:
        scale = np.sqrt(self.n_e - 1.0)
        matrix = self.mean[:, None] + scale * self.perturbations
        return AugmentedEnsemble(layout=layout, matrix=matrix)


def stats(ens: AugmentedEnsemble) -> EnsembleStats:
    """Mean over members and centered perturbations scaled by
    1/sqrt(n_e - 1)."""
    if ens.n_e < 2:
        raise InsufficientEnsembleError("at least two members are required")
    mean = ens.matrix.mean(axis=1)
    pert = (ens.matrix - mean[:, None]) / np.sqrt(ens.n_e - 1.0)
    return EnsembleStats(mean=mean, perturbations=pert)


def inflate(st: EnsembleStats, lam: float) -> EnsembleStats:
    """Multiplicative inflation of the perturbations, the same factor for
    every row of the augmented state; the mean is unchanged."""
    if lam <= 0:
        raise ValueError("inflation factor must be positive")
    if lam == 1.0:
        return st
    return EnsembleStats(mean=st.mean, perturbations=lam * st.perturbations)


def init_ensemble(z_true: np.ndarray, sigma: np.ndarray, n_e: int,
                  rng: np.random.Generator, layout: PartitionLayout) -> AugmentedEnsemble:
    """Members are the true augmented state plus one shared bias draw and
    independent per-member draws, all N(0, diag(sigma^2))."""
    z_true = np.asarray(z_true, dtype=float)
    if z_true.shape != (layout.n_z,):
        raise ValueError("true state length does not match the layout")
    bias = sample_gaussian(np.zeros_like(z_true), sigma, rng)
    members = np.empty((layout.n_z, n_e))
    for i in range(n_e):
        members[:, i] = z_true + bias + sample_gaussian(np.zeros_like(z_true), sigma, rng)
    return AugmentedEnsemble(layout=layout, matrix=members)


def forecast(ens: AugmentedEnsemble, stepper: Callable, steps: int = 1) -> AugmentedEnsemble:
    """Propagate each member's state block with its own parameter blocks;
    parameters follow persistence.

    ``stepper(X, P, Q)`` advances the state columns one model step.
    Raises EnsembleDivergence listing the offending members when the
    propagated states contain non-finite values.
    """
    x = ens.x
    p = ens.p
    q = ens.q
    # members with drifting parameters may blow up; the overflow itself
    # is the divergence signal
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            x = stepper(x, p, q)
    bad = np.flatnonzero(~np.all(np.isfinite(x), axis=0))
    if bad.size:
        raise EnsembleDivergence(bad, context="forecast")
    matrix = np.concatenate([x, p, q], axis=0)
    return AugmentedEnsemble(layout=ens.layout, matrix=matrix)
