"""Experiment configuration: a flat key-value file format plus typed
command-line overrides.  Defaults mirror the standard twin-experiment
setups of the two test models."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

MODELS = ("l96i", "ml96")
FILTERS = ("ensrf", "etkf", "lensrf_hml", "lensrf_hml_obs", "letkf_hml",
           "letkf_aksoy", "l2ensrf_hml")
OBS_KINDS = ("identity", "kernels")
PARAM_GROUPS = ("a", "f", "f_v", "f_h")

# filters that need a fully local observation operator
_FULLY_LOCAL_FILTERS = ("lensrf_hml_obs", "letkf_hml", "letkf_aksoy")

_TUPLE_KEYS = ("global_params", "local_params")
_OPTIONAL_FLOAT_KEYS = ("radius", "radius_h", "radius_v", "init_std_state",
                        "init_std_a", "init_std_f", "init_std_fh", "init_std_fv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one twin experiment.

    ``cycles`` is the total number of assimilation cycles; the first
    ``spinup`` of them are excluded from time averages.  ``radius`` is
    the single-ring localisation radius, ``radius_h``/``radius_v`` the
    horizontal and vertical radii of the stacked case; None disables the
    corresponding localisation.  Parameter groups listed in
    ``global_params`` join the globally updated block, groups in
    ``local_params`` the locally updated block.
    """

    model: str = "l96i"
    filter: str = "letkf_hml"
    global_params: tuple = ()
    local_params: tuple = ()
    n_e: int = 30
    cycles: int = 400
    spinup: int = 200
    repetitions: int = 1
    seed: int = 0
    dt: float = 0.05
    obs: str = "identity"
    radius: float | None = 8.0
    radius_h: float | None = 8.0
    radius_v: float | None = 6.0
    inflation: float = 1.02
    zeta_p: float = 1.0
    zeta_q: float = 1.0
    n_x: int = 40
    n_v: int = 32
    n_h: int = 40
    init_std_state: float | None = None
    init_std_a: float | None = None
    init_std_f: float | None = None
    init_std_fh: float | None = None
    init_std_fv: float | None = None
    obs_calibration_steps: int = 10_000

    # -- validation ---------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.filter not in FILTERS:
            raise ConfigError(f"unknown filter {self.filter!r}")
        if self.obs not in OBS_KINDS:
            raise ConfigError(f"unknown observation kind {self.obs!r}")
        if self.model == "l96i" and self.obs != "identity":
            raise ConfigError("the ring model is observed with the identity operator")
        if self.model == "ml96" and self.obs != "kernels":
            raise ConfigError("the stacked model is observed with averaging kernels")
        if self.model == "ml96" and self.filter in _FULLY_LOCAL_FILTERS:
            raise ConfigError(f"{self.filter} needs a fully local operator; "
                              "kernel observations are vertically non-local")
        seen = set()
        for name in self.global_params + self.local_params:
            if name not in PARAM_GROUPS:
                raise ConfigError(f"unknown parameter group {name!r}")
            if name in seen:
                raise ConfigError(f"parameter group {name!r} listed twice")
            seen.add(name)
        if "a" in self.local_params or "f_v" in self.local_params:
            raise ConfigError("groups 'a' and 'f_v' have no site geometry; "
                              "they can only be estimated globally")
        for name in seen:
            if self.model == "l96i" and name not in ("a", "f"):
                raise ConfigError(f"group {name!r} does not exist in the ring model")
            if self.model == "ml96" and name not in ("a", "f_v", "f_h"):
                raise ConfigError(f"group {name!r} does not exist in the stacked model")
        if self.n_e < 2:
            raise ConfigError("at least two ensemble members are required")
        if self.cycles < 0 or self.spinup < 0:
            raise ConfigError("cycle counts must be non-negative")
        if self.cycles and self.spinup >= self.cycles:
            raise ConfigError("spinup must be smaller than the total cycle count")
        if self.repetitions < 1:
            raise ConfigError("at least one repetition is required")
        if self.dt <= 0:
            raise ConfigError("the time step must be positive")
        if self.inflation < 1.0:
            raise ConfigError("the inflation factor must be at least 1")
        for key in ("radius", "radius_h", "radius_v"):
            val = getattr(self, key)
            if val is not None and val <= 0:
                raise ConfigError(f"{key} must be positive (or none)")
        if self.zeta_p < 0 or self.zeta_q < 0:
            raise ConfigError("tapering parameters must be non-negative")
        return self

    # -- resolved initial standard deviations -------------------------

    def sigma_state(self) -> float:
        if self.init_std_state is not None:
            return self.init_std_state
        return 1.0 if self.model == "l96i" else 0.5

    def sigma_group(self, name: str) -> float:
        if name == "a":
            if self.init_std_a is not None:
                return self.init_std_a
            return 0.2 if self.model == "l96i" else 0.1
        if name == "f":
            return self.init_std_f if self.init_std_f is not None else 0.2
        if name == "f_h":
            return self.init_std_fh if self.init_std_fh is not None else 0.17
        if name == "f_v":
            return self.init_std_fv if self.init_std_fv is not None else 0.012
        raise ConfigError(f"unknown parameter group {name!r}")

    # -- serialisation -------------------------------------------------

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                text = "none"
            elif isinstance(val, tuple):
                text = ",".join(val) if val else "none"
            else:
                text = str(val)
            out.append(f"{f.name} = {text}")
        return out

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        coerced = {key: coerce_value(key, val) for key, val in overrides.items()}
        return replace(self, **coerced).validate()


_FIELD_NAMES = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}


def coerce_value(key: str, raw):
    """Convert a raw (string) override to the field's type."""
    if key not in _FIELD_NAMES:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key in _TUPLE_KEYS:
        if text.lower() in ("none", ""):
            return ()
        return tuple(part.strip() for part in text.split(",") if part.strip())
    if text.lower() == "none":
        if key not in _OPTIONAL_FLOAT_KEYS:
            raise ConfigError(f"{key} cannot be none")
        return None
    default = ExperimentConfig.__dataclass_fields__[key].default
    if key in _OPTIONAL_FLOAT_KEYS:
        return float(text)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def load_config(path) -> ExperimentConfig:
    """Read a flat ``key = value`` file ('#' starts a comment)."""
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = body.partition("=")
        overrides[key.strip()] = val.strip()
    return ExperimentConfig().with_overrides(overrides)
