"""Twin-experiment driver: builds the truth, observation and filter
stack from a configuration, cycles inflate -> analysis -> forecast, and
collects RMSE series."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..augmented import (AugmentedEnsemble, EnsembleDivergence, PartitionLayout,
                         forecast, init_ensemble)
from ..dynamics import (L96iModel, ML96Model, climatological_std,
                        identifying_params_1d, identifying_params_2d, integrate,
                        rk4_step, surrogate_tendency_1d, surrogate_tendency_2d)
from ..filters import ANALYSES, AnalysisError, AnalysisInput, Localisation
from ..localisation import (LocalisationSpec, RingGeometry, StackedGeometry,
                            dl_weight_matrix, rho_px_vertical, rho_qx, rho_ring,
                            rho_xx)
from ..numkit import gaspari_cohn
from ..obs import (KernelObsOperator, build_averaging_kernels, calibrate_kernels,
                   identity_obs, perturb)
from .config import ExperimentConfig

TRUTH_SPINUP_STEPS = 1_500
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_WINDOW = 50

_calibration_cache: dict = {}
_climatology_cache: dict = {}


def rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared difference of two equal-length vectors."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth lengths differ")
    if estimate.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


@dataclass(frozen=True)
class GroupSpec:
    """One estimated parameter group and where it lives in the augmented
    vector."""

    name: str
    block: str           # 'p' or 'q'
    offset: int          # offset inside its block
    size: int
    truth: np.ndarray
    positions: np.ndarray | None = None   # ring sites of local groups


@dataclass
class ExperimentSetup:
    config: ExperimentConfig
    truth_model: object
    layout: PartitionLayout
    groups: list
    obs_op: object
    r_diag: np.ndarray
    loc: Localisation
    sigma: np.ndarray
    p_true: np.ndarray
    q_true: np.ndarray
    stepper: object
    clim_mean_std: float

    def group(self, name: str) -> GroupSpec | None:
        for g in self.groups:
            if g.name == name:
                return g
        return None


def _model_key(model) -> tuple:
    if isinstance(model, L96iModel):
        return ("l96i", model.n_x, model.forcing.tobytes())
    return ("ml96", model.n_v, model.n_h, model.forcing.tobytes())


def _climatology(model, dt: float) -> tuple:
    key = _model_key(model) + (dt,)
    if key not in _climatology_cache:
        _climatology_cache[key] = climatological_std(model, dt)
    return _climatology_cache[key]


def _calibrated_kernels(model: ML96Model, dt: float, steps: int) -> KernelObsOperator:
    key = _model_key(model) + (dt, steps)
    if key not in _calibration_cache:
        raw = build_averaging_kernels(n_v=model.n_v, n_h=model.n_h)
        # channel variability is pinned to the single-ring model's
        # climatology, so observation informativeness does not depend on
        # the (less energetic) stack
        target = _climatology(L96iModel(), dt)[1]
        _calibration_cache[key] = calibrate_kernels(raw, model, run_length=steps,
                                                    dt=dt, target_std=target)
    return _calibration_cache[key]


def _build_groups(config: ExperimentConfig, ident) -> tuple:
    """Group placement in listed order; returns (groups, p_true, q_true)."""
    truths = {}
    positions = {}
    if config.model == "l96i":
        truths["a"] = ident.coeffs
        truths["f"] = ident.forcing
        positions["f"] = np.arange(config.n_x)
    else:
        f_v, f_h = ident.forcing
        truths["a"] = ident.coeffs
        truths["f_v"] = f_v
        truths["f_h"] = f_h
        positions["f_h"] = np.arange(config.n_h)
    groups = []
    p_parts, q_parts = [], []
    offset = 0
    for name in config.global_params:
        tv = truths[name]
        groups.append(GroupSpec(name, "p", offset, tv.size, tv.copy(),
                                positions.get(name)))
        p_parts.append(tv)
        offset += tv.size
    offset = 0
    for name in config.local_params:
        tv = truths[name]
        groups.append(GroupSpec(name, "q", offset, tv.size, tv.copy(),
                                positions.get(name)))
        q_parts.append(tv)
        offset += tv.size
    p_true = np.concatenate(p_parts) if p_parts else np.zeros(0)
    q_true = np.concatenate(q_parts) if q_parts else np.zeros(0)
    return groups, p_true, q_true


def _make_stepper(config: ExperimentConfig, groups: list, ident):
    """Closure advancing the ensemble state block one step, each member
    using its own estimated parameter values (truth values for groups
    not being estimated)."""
    dt = config.dt
    by_name = {g.name: g for g in groups}

    def pick(name, p_block, q_block, fallback):
        g = by_name.get(name)
        if g is None:
            return fallback
        block = p_block if g.block == "p" else q_block
        return block[g.offset:g.offset + g.size]

    if config.model == "l96i":
        a_t = ident.coeffs
        f_t = ident.forcing

        def stepper(x, p_block, q_block):
            coeffs = pick("a", p_block, q_block, a_t)
            forcing = pick("f", p_block, q_block, f_t)
            return rk4_step(lambda s: surrogate_tendency_1d(s, coeffs, forcing), x, dt)

        return stepper

    a_t = ident.coeffs
    f_v_t, f_h_t = ident.forcing
    n_v, n_h = config.n_v, config.n_h

    def stepper(x, p_block, q_block):
        coeffs = pick("a", p_block, q_block, a_t)
        f_v = pick("f_v", p_block, q_block, f_v_t)
        f_h = pick("f_h", p_block, q_block, f_h_t)
        return rk4_step(
            lambda s: surrogate_tendency_2d(s, coeffs, f_v, f_h, n_v, n_h), x, dt)

    return stepper


def _build_localisation(config: ExperimentConfig, groups: list, obs_op) -> Localisation:
    zp, zq = config.zeta_p, config.zeta_q
    q_groups = [g for g in groups if g.block == "q"]
    if config.filter in ("ensrf", "etkf"):
        return Localisation.none(zeta_p=zp, zeta_q=zq)

    if config.model == "l96i":
        n_x = config.n_x
        spec = LocalisationSpec(geometry=RingGeometry(n_x), radius=config.radius)
        if config.filter in ("letkf_hml", "letkf_aksoy"):
            sites = np.arange(n_x)
            weights = dl_weight_matrix(sites, obs_op.h_map, n_x, config.radius)
            q_positions = None
            q_weights = None
            if q_groups:
                q_positions = np.concatenate([g.positions for g in q_groups])
                q_weights = weights[q_positions]
            return Localisation(site_weights=weights, q_site_weights=q_weights,
                                q_positions=q_positions, zeta_p=zp, zeta_q=zq)
        # covariance localisation on the ring
        rho = rho_ring(n_x, config.radius)
        rho_q = None
        if q_groups:
            pos = np.concatenate([g.positions for g in q_groups])
            rho_q = rho_qx(pos, spec)
        return Localisation(rho_xx=rho, rho_qx=rho_q, zeta_p=zp, zeta_q=zq)

    # stacked model with the per-column hybrid
    n_v, n_h = config.n_v, config.n_h
    geom = StackedGeometry(n_v, n_h)
    spec = LocalisationSpec(geometry=geom, radius_h=config.radius_h,
                            radius_v=config.radius_v)
    obs_cols = obs_op.obs_columns()
    cols = np.arange(n_h)
    if config.radius_h is None:
        col_weights = np.ones((n_h, obs_op.n_y))
    else:
        d = geom.horizontal_distance(cols[:, None], obs_cols[None, :])
        col_weights = np.sqrt(gaspari_cohn(2.0 * d / config.radius_h))
    state_columns = [np.arange(n_v) * n_h + h for h in range(n_h)]
    q_columns = None
    if q_groups:
        q_columns = [[] for _ in range(n_h)]
        for g in q_groups:
            for j, pos in enumerate(g.positions):
                q_columns[int(pos)].append(g.offset + j)
        q_columns = [np.asarray(ix, dtype=int) for ix in q_columns]
    rho_x = rho_xx(spec)
    rho_p = None
    p_groups = [g for g in groups if g.block == "p"]
    if p_groups:
        blocks = []
        for g in p_groups:
            if g.name == "f_v":
                blocks.append(rho_px_vertical(0, np.arange(1, n_v), spec))
            else:
                blocks.append(np.ones((g.size, geom.n)))
        rho_p = np.vstack(blocks)
    return Localisation(rho_xx=rho_x, rho_qx=None, rho_px=rho_p,
                        column_weights=col_weights, state_columns=state_columns,
                        q_columns=q_columns, zeta_p=zp, zeta_q=zq)


def build_setup(config: ExperimentConfig) -> ExperimentSetup:
    config.validate()
    if config.model == "l96i":
        truth = L96iModel(n_x=config.n_x)
        ident = identifying_params_1d(truth)
        obs_op = identity_obs(config.n_x)
        n_x = config.n_x
    else:
        truth = ML96Model(n_v=config.n_v, n_h=config.n_h)
        ident = identifying_params_2d(truth)
        obs_op = _calibrated_kernels(truth, config.dt, config.obs_calibration_steps)
        n_x = truth.n_x
    groups, p_true, q_true = _build_groups(config, ident)
    layout = PartitionLayout(n_x=n_x, n_p=p_true.size, n_q=q_true.size)
    sigma = np.empty(layout.n_z)
    sigma[layout.x] = config.sigma_state()
    for g in groups:
        block = layout.p if g.block == "p" else layout.q
        sigma[block.start + g.offset: block.start + g.offset + g.size] = \
            config.sigma_group(g.name)
    loc = _build_localisation(config, groups, obs_op)
    stepper = _make_stepper(config, groups, ident)
    _, clim_mean = _climatology(truth, config.dt)
    return ExperimentSetup(
        config=config, truth_model=truth, layout=layout, groups=groups,
        obs_op=obs_op, r_diag=np.ones(obs_op.n_y), loc=loc, sigma=sigma,
        p_true=p_true, q_true=q_true, stepper=stepper, clim_mean_std=clim_mean)


@dataclass
class RepetitionResult:
    state_rmse: np.ndarray
    global_param_rmse: np.ndarray
    local_param_rmse: np.ndarray
    monomial_rmse: np.ndarray | None
    initial: dict
    diverged: bool
    diverged_cycle: int | None
    wall_time: float

    def time_averaged(self, spinup: int, series: str = "state_rmse") -> float:
        if self.diverged:
            return np.inf
        values = getattr(self, series)
        if values is None or values.size <= spinup:
            return np.inf
        return float(values[spinup:].mean())


@dataclass
class RunResult:
    config: ExperimentConfig
    repetitions: list

    @property
    def diverged_count(self) -> int:
        return sum(r.diverged for r in self.repetitions)

    @property
    def all_diverged(self) -> bool:
        return self.diverged_count == len(self.repetitions)

    def per_repetition_averages(self, series: str = "state_rmse") -> np.ndarray:
        return np.array([r.time_averaged(self.config.spinup, series)
                         for r in self.repetitions])

    def time_averaged_state_rmse(self) -> float:
        return float(self.per_repetition_averages().mean())

    def mean_series(self) -> dict:
        """Cycle-by-cycle mean over completed repetitions (empty arrays
        when every repetition diverged)."""
        done = [r for r in self.repetitions if not r.diverged]
        out = {}
        for name in ("state_rmse", "global_param_rmse", "local_param_rmse"):
            if done:
                out[name] = np.mean([getattr(r, name) for r in done], axis=0)
            else:
                out[name] = np.zeros(0)
        return out


def _run_repetition(setup: ExperimentSetup, rep: int) -> RepetitionResult:
    cfg = setup.config
    layout = setup.layout
    rng = np.random.default_rng(cfg.seed + rep)
    truth = setup.truth_model
    analysis = ANALYSES[cfg.filter]
    started = time.perf_counter()

    x_t = truth.equilibrium_state() + 0.05 * rng.standard_normal(layout.n_x)
    x_t = integrate(truth.tendency, x_t, TRUTH_SPINUP_STEPS, cfg.dt)
    z_true = np.concatenate([x_t, setup.p_true, setup.q_true])
    ens = init_ensemble(z_true, setup.sigma, cfg.n_e, rng, layout)

    mono = setup.group("a")
    mean0 = ens.matrix.mean(axis=1)
    initial = {
        "state_rmse": rmse(mean0[layout.x], x_t),
        "global_param_rmse": rmse(mean0[layout.p], setup.p_true),
        "local_param_rmse": rmse(mean0[layout.q], setup.q_true),
    }
    if mono is not None:
        block = layout.p if mono.block == "p" else layout.q
        sl = slice(block.start + mono.offset, block.start + mono.offset + mono.size)
        initial["monomial_rmse"] = rmse(mean0[sl], mono.truth)

    n_c = cfg.cycles
    state_series = np.zeros(n_c)
    p_series = np.zeros(n_c)
    q_series = np.zeros(n_c)
    mono_series = np.zeros(n_c) if mono is not None else None
    threshold = DIVERGENCE_FACTOR * setup.clim_mean_std
    consecutive = 0
    diverged = False
    diverged_cycle = None

    for c in range(n_c):
        x_t = rk4_step(truth.tendency, x_t, cfg.dt)
        batch = perturb(setup.obs_op(x_t), setup.r_diag, rng, time_index=c)
        try:
            ens = forecast(ens, setup.stepper)
            out = analysis(AnalysisInput(ensemble=ens, obs=batch,
                                         operator=setup.obs_op, loc=setup.loc,
                                         inflation=cfg.inflation))
        except (EnsembleDivergence, AnalysisError):
            diverged, diverged_cycle = True, c
            break
        ens = out.ensemble
        mean = ens.matrix.mean(axis=1)
        state_series[c] = rmse(mean[layout.x], x_t)
        p_series[c] = rmse(mean[layout.p], setup.p_true)
        q_series[c] = rmse(mean[layout.q], setup.q_true)
        if mono_series is not None:
            mono_series[c] = rmse(mean[sl], mono.truth)
        if state_series[c] > threshold:
            consecutive += 1
            if consecutive >= DIVERGENCE_WINDOW:
                diverged, diverged_cycle = True, c
                break
        else:
            consecutive = 0

    if diverged:
        keep = diverged_cycle
        state_series = state_series[:keep]
        p_series = p_series[:keep]
        q_series = q_series[:keep]
        if mono_series is not None:
            mono_series = mono_series[:keep]
    return RepetitionResult(
        state_rmse=state_series, global_param_rmse=p_series,
        local_param_rmse=q_series, monomial_rmse=mono_series, initial=initial,
        diverged=diverged, diverged_cycle=diverged_cycle,
        wall_time=time.perf_counter() - started)


def run_twin(config: ExperimentConfig) -> RunResult:
    """Run the configured twin experiment; repetitions use fresh truth,
    observations and initialisation through seed offsets, and a diverged
    repetition is recorded while the remaining ones still run."""
    setup = build_setup(config)
    reps = [_run_repetition(setup, rep) for rep in range(config.repetitions)]
    return RunResult(config=config, repetitions=reps)
