"""Experiment configuration: nested dataclasses with strict JSON round-trip.

One JSON document per experiment, sections mirroring the module names.
Command-line overrides address fields by dotted path; unknown keys are
rejected with the offending key named.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .models import BatteryParams


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class ModelConfig:
    family: str = "battery_alpha"  # battery_alpha | sinc
    battery: BatteryParams = field(default_factory=BatteryParams)
    sinc_normalized: bool = True  # sinc convention; unnormalized as experiment


@dataclass
class OfflineConfig:
    J: int = 10  # number of captured realizations
    K: int = 200  # samples per realization
    sigma_xi: float = 0.01  # observation noise std in the offline dataset
    N: int = 50  # original basis size
    M: int = 2  # conditioned rank (ignored if energy_threshold set)
    energy_threshold: float | None = None  # smallest M reaching this energy
    domain_lower: float | None = None  # explicit 1-D domain; else padded data range
    domain_upper: float | None = None
    padding: float = 0.5  # domain widening fraction of the data range
    grid: str = "uniform"  # uniform | random input locations
    optimize_hyper: bool = False
    sigma2: float = 100.0  # SE signal variance (used when not optimizing)
    lengthscale: float = 0.2
    sigma_xi2_fit: float = 1e-4  # regularization noise variance for the fit
    seed: int = 123


@dataclass
class FilterConfig:
    num_particles: int = 100
    c: float = 3e-5  # exploration scale on the coefficient random walk
    lambda_f: float = 0.995  # forgetting factor on the noise statistics
    nu0: float = 3.0
    lambda0_diag: float = 1.0  # Lambda_0 = lambda0_diag * I
    q_diag: float = 1e-5  # process noise Q = q_diag * I (also used in truth)
    r_diag: float = 1e-2  # measurement noise R = r_diag * I (truth)
    prior_x_std: float = 0.01  # x-prior std per state, centered at truth
    seed: int = 0
    sigma_power: int = 2  # exponent p in the random-walk covariance c*Sigma^p
    ess_resample_fraction: float | None = None  # None: resample every step
    use_original_basis: bool = False  # baseline: learn w directly (N DOF)


@dataclass
class ScheduleConfig:
    steps: int = 2000
    dt: float = 0.01  # integration step (s)
    switch_step: int = 1000  # sudden change of the true function
    j_before: float = 1.0
    j_after: float = 10.0
    j_init: float = 5.0  # wrong initialization: coefficients of this realization
    x0: tuple = (0.5, 0.0, 298.15)  # initial (z, V1, Tc); Tc defaults to ambient
    input_amplitude: float = 2.0  # charging-current sinusoid amplitude (A)
    input_offset: float = 2.5  # charging-current bias (A)
    input_frequency: float = 0.05  # charging-current frequency (Hz)


@dataclass
class McConfig:
    runs: int = 50
    base_seed: int = 1000


@dataclass
class SweepConfig:
    d_max: int = 10  # degrees of freedom swept from 1 to d_max
    error_grid: int = 201


@dataclass
class OutputConfig:
    dir: str = "runs/default"
    quiet: bool = False


@dataclass
class ScenarioConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mc: McConfig = field(default_factory=McConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


def default_battery_config() -> ScenarioConfig:
    """The battery study defaults: N=50, M=2, Np=100, nu0=3, c=3e-5, dt=0.01,
    switch at k=1000, Q=1e-5 I, R=1e-2 I, 50 MC runs."""
    return ScenarioConfig()


def default_sinc_config() -> ScenarioConfig:
    """Sinc-family setup: J=30 realizations on the explicit domain [-15, 15]."""
    cfg = ScenarioConfig()
    cfg.model.family = "sinc"
    cfg.offline.J = 30
    cfg.offline.domain_lower = -15.0
    cfg.offline.domain_upper = 15.0
    cfg.offline.sigma2 = 25.0
    cfg.offline.lengthscale = 1.0
    cfg.offline.sigma_xi2_fit = 1e-8
    cfg.offline.sigma_xi = 0.0
    return cfg


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return _to_dict(cfg)


def _from_dict(cls, doc: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    template = cls()  # every config dataclass is fully defaulted
    kwargs = {}
    for key, value in doc.items():
        if key not in names:
            raise ConfigError(f"unknown config key '{path}{key}'")
        current = getattr(template, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{path}{key}' must be an object")
            kwargs[key] = _from_dict(type(current), value, f"{path}{key}.")
        else:
            if isinstance(current, tuple) and isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ScenarioConfig:
    return _from_dict(ScenarioConfig, doc, "")


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=1, sort_keys=True)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: ScenarioConfig, dotted: str, raw_value: str) -> None:
    """Set a config field by dotted path, e.g. 'filter.num_particles=50'."""
    parts = dotted.split(".")
    chain = [cfg]
    for i, part in enumerate(parts[:-1]):
        obj = chain[-1]
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config key '{'.'.join(parts[: i + 1])}'")
        chain.append(getattr(obj, part))
    leaf = parts[-1]
    obj = chain[-1]
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key '{dotted}'")
    value = _parse_value(raw_value)
    current = getattr(obj, leaf)
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"config key '{dotted}' is a section, not a value")
    if isinstance(current, tuple) and isinstance(value, list):
        value = tuple(value)
    try:
        setattr(obj, leaf, value)
    except dataclasses.FrozenInstanceError:
        # frozen sections (battery params) are replaced wholesale on the parent
        new_obj = dataclasses.replace(obj, **{leaf: value})
        setattr(chain[-2], parts[-2], new_obj)
