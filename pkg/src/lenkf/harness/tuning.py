"""Grid search over the algorithmic parameters (localisation radii,
inflation, tapering) minimising the time-averaged state RMSE."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .runner import RunResult, run_twin

GRID_KEYS = ("radius", "radius_h", "radius_v", "inflation", "zeta_p", "zeta_q")


class TuningError(RuntimeError):
    """Every grid point diverged."""


@dataclass(frozen=True)
class TuneEntry:
    values: dict
    score: float
    diverged_repetitions: int


@dataclass(frozen=True)
class TuneResult:
    best: ExperimentConfig
    best_score: float
    entries: list


def _sort_key(entry: TuneEntry):
    # ties: smaller inflation first, then smaller radius
    lam = entry.values.get("inflation", np.inf)
    rad = entry.values.get("radius", entry.values.get("radius_h", np.inf))
    rad = np.inf if rad is None else rad
    return (entry.score, lam, rad)


def grid_tune(config: ExperimentConfig, grid: dict) -> TuneResult:
    """Evaluate every point of the cartesian grid with the template
    configuration and return the argmin of the time-averaged state RMSE
    (diverged points score infinity)."""
    for key in grid:
        if key not in GRID_KEYS:
            raise ValueError(f"{key!r} is not a tunable key {GRID_KEYS}")
    if not grid:
        raise ValueError("empty grid")
    keys = list(grid.keys())
    entries = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = dict(zip(keys, combo))
        result = run_twin(config.with_overrides(values))
        entries.append(TuneEntry(values=values,
                                 score=result.time_averaged_state_rmse(),
                                 diverged_repetitions=result.diverged_count))
    finite = [e for e in entries if np.isfinite(e.score)]
    if not finite:
        raise TuningError("all grid points diverged")
    best = min(finite, key=_sort_key)
    return TuneResult(best=config.with_overrides(best.values),
                      best_score=best.score, entries=entries)
