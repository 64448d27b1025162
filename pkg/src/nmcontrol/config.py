"""Run configuration: dataclass sections, YAML round-trip, presets, env overrides.

Physics inputs are in lab units (eV, K, fs, W/cm^2) and converted to atomic
units when the domain objects are built.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields
from dataclasses import field as _field
from pathlib import Path
from typing import Any, List, Optional, Union

import numpy as np
import yaml

from .bath import GAMMA_READINGS, BathSpec, LorentzianSet
from .fields import SHAPES, PulseSpec
from .heom import PropagationConfig
from .model import SystemParams, intensity_to_amplitude

ENV_PREFIX = "NMCONTROL_"
INITIAL_STATES = ("diabatic_1", "diabatic_2", "plus", "plus_i", "custom")
PRESETS = ("fig2", "fig4", "fig7", "smoke", "thz120fs", "thz40fs")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field (e.g. ``field.period_fs``)."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class SystemSection:
    gap_ev: float = 0.517
    w_ev: float = 0.2
    mu0_au: float = 1.0


@dataclass
class BathSection:
    gamma_reading: str = "x1e-4"
    n_lorentzians: int = 5
    temperature_k: float = 300.0
    n_matsubara: Union[int, str] = 4
    # multiplies every p_k; 0.25 corresponds to a sigma_z/2 system-bath coupling
    coupling_scale: float = 1.0
    # explicit [p, Omega, Gamma] rows (a.u.) replace the table when given
    lorentzians: Optional[List[List[float]]] = None


@dataclass
class FieldSection:
    shape: str = "none"
    intensity_w_cm2: float = 0.0
    sign: int = 1
    period_fs: float = 120.0
    start_fs: float = 0.0


@dataclass
class PropagationSection:
    l_max: int = 6
    dt_au: float = 0.5
    t_final_fs: float = 100.0
    output_stride_fs: float = 0.1
    rescaling: bool = False
    adaptive: bool = False
    rtol: float = 1e-8
    atol: float = 1e-11


@dataclass
class AnalysisSection:
    bump_prominence: float = 0.005
    linearity_tol: float = 1e-6


@dataclass
class OutputSection:
    directory: str = "runs/default"
    trajectory_csv: bool = True
    analysis_csv: bool = True
    ellipsoid_frames: bool = True
    checkpoint: bool = False


@dataclass
class RunConfig:
    system: SystemSection = _field(default_factory=SystemSection)
    bath: BathSection = _field(default_factory=BathSection)
    field: FieldSection = _field(default_factory=FieldSection)
    propagation: PropagationSection = _field(default_factory=PropagationSection)
    analysis: AnalysisSection = _field(default_factory=AnalysisSection)
    outputs: OutputSection = _field(default_factory=OutputSection)
    initial_state: str = "diabatic_1"
    # [rho11, rho22, re rho12, im rho12] when initial_state == "custom"
    custom_rho: Optional[List[float]] = None
    threads: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dump())

    # domain objects -----------------------------------------------------

    def system_params(self) -> SystemParams:
        s = self.system
        return SystemParams.from_ev(s.gap_ev, s.w_ev, s.mu0_au)

    def bath_spec(self) -> BathSpec:
        b = self.bath
        if b.lorentzians is not None:
            rows = np.asarray(b.lorentzians, dtype=float)
            lor = LorentzianSet(tuple(rows[:, 0]), tuple(rows[:, 1]), tuple(rows[:, 2]))
        else:
            lor = LorentzianSet.table_one(b.gamma_reading, b.n_lorentzians)
        if b.coupling_scale != 1.0:
            lor = LorentzianSet(tuple(b.coupling_scale * x for x in lor.p), lor.omega, lor.gamma)
        return BathSpec(lor, b.temperature_k, b.n_matsubara)

    def pulse_spec(self) -> PulseSpec:
        f = self.field
        e0 = intensity_to_amplitude(f.intensity_w_cm2) * f.sign
        return PulseSpec(f.shape, e0, f.period_fs, f.start_fs)

    def propagation_config(self) -> PropagationConfig:
        p = self.propagation
        return PropagationConfig(l_max=p.l_max, dt_au=p.dt_au, t_final_fs=p.t_final_fs,
                                 output_stride_fs=p.output_stride_fs, rescaling=p.rescaling,
                                 adaptive=p.adaptive, rtol=p.rtol, atol=p.atol)

    def initial_rho(self) -> np.ndarray:
        from .analysis import projector

        if self.initial_state == "custom":
            r11, r22, re12, im12 = self.custom_rho
            c = complex(re12, im12)
            return np.array([[r11, c], [c.conjugate(), r22]], dtype=complex)
        return projector(self.initial_state)


_SECTIONS = {
    "system": SystemSection,
    "bath": BathSection,
    "field": FieldSection,
    "propagation": PropagationSection,
    "analysis": AnalysisSection,
    "outputs": OutputSection,
}


def _coerce(key: str, value: Any, default: Any):
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected true/false, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, str) and value == "auto" and key == "bath.n_matsubara":
            return value
        try:
            ok = not isinstance(value, bool) and float(value).is_integer()
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
        if not math.isfinite(out):
            raise ConfigError(key, "must be finite")
        return out
    return value


def from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from nested mappings, rejecting unknown keys."""
    data = dict(data or {})
    cfg = RunConfig()
    for name, cls in _SECTIONS.items():
        raw = data.pop(name, None) or {}
        if not isinstance(raw, dict):
            raise ConfigError(name, "expected a mapping")
        section = getattr(cfg, name)
        known = {f.name for f in fields(cls)}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"{name}.{key}", "unknown key")
            setattr(section, key, _coerce(f"{name}.{key}", value, getattr(cls(), key)))
    for key in ("initial_state", "custom_rho", "threads"):
        if key in data:
            setattr(cfg, key, data.pop(key))
    if data:
        raise ConfigError(next(iter(data)), "unknown key")
    validate(cfg)
    return cfg


def parse(text: str) -> RunConfig:
    return from_dict(yaml.safe_load(text) or {})


def load(path) -> RunConfig:
    return parse(Path(path).read_text())


def validate(cfg: RunConfig) -> None:
    """Raise ConfigError naming the first invalid field."""
    s, b, f, p = cfg.system, cfg.bath, cfg.field, cfg.propagation
    for key, val in (("system.gap_ev", s.gap_ev), ("system.w_ev", s.w_ev), ("system.mu0_au", s.mu0_au)):
        if not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ConfigError(key, "must be a finite number")
    if b.gamma_reading not in GAMMA_READINGS:
        raise ConfigError("bath.gamma_reading", f"must be one of {sorted(GAMMA_READINGS)}")
    if not 1 <= b.n_lorentzians <= 5:
        raise ConfigError("bath.n_lorentzians", "must be in 1..5")
    if not (b.coupling_scale > 0 and math.isfinite(b.coupling_scale)):
        raise ConfigError("bath.coupling_scale", "must be a finite number > 0")
    if not b.temperature_k > 0:
        raise ConfigError("bath.temperature_k", "must be > 0")
    if b.n_matsubara != "auto" and not (isinstance(b.n_matsubara, int) and b.n_matsubara >= 0):
        raise ConfigError("bath.n_matsubara", "must be a non-negative integer or 'auto'")
    if b.lorentzians is not None:
        rows = b.lorentzians
        if not rows or any(len(r) != 3 or min(r) <= 0 for r in rows):
            raise ConfigError("bath.lorentzians", "rows must be [p, Omega, Gamma] with positive entries")
    if f.shape not in SHAPES:
        raise ConfigError("field.shape", f"must be one of {SHAPES}")
    if not f.intensity_w_cm2 >= 0:
        raise ConfigError("field.intensity_w_cm2", "must be >= 0")
    if f.sign not in (1, -1):
        raise ConfigError("field.sign", "must be +1 or -1")
    if not f.period_fs > 0:
        raise ConfigError("field.period_fs", f"must be > 0, got {f.period_fs}")
    if not f.start_fs >= 0:
        raise ConfigError("field.start_fs", "must be >= 0")
    if p.l_max < 1:
        raise ConfigError("propagation.l_max", "must be >= 1")
    for key in ("dt_au", "t_final_fs", "output_stride_fs", "rtol", "atol"):
        if not getattr(p, key) > 0:
            raise ConfigError(f"propagation.{key}", "must be > 0")
    n = round(p.t_final_fs / p.output_stride_fs)
    if not math.isclose(n * p.output_stride_fs, p.t_final_fs, rel_tol=1e-9):
        raise ConfigError("propagation.t_final_fs", "must be a multiple of output_stride_fs")
    if not cfg.analysis.bump_prominence > 0:
        raise ConfigError("analysis.bump_prominence", "must be > 0")
    if not cfg.analysis.linearity_tol > 0:
        raise ConfigError("analysis.linearity_tol", "must be > 0")
    if cfg.initial_state not in INITIAL_STATES:
        raise ConfigError("initial_state", f"must be one of {INITIAL_STATES}")
    if cfg.initial_state == "custom":
        rho = cfg.custom_rho
        if rho is None or len(rho) != 4:
            raise ConfigError("custom_rho", "needs [rho11, rho22, re_rho12, im_rho12]")
        r11, r22, re12, im12 = (float(x) for x in rho)
        lam = np.linalg.eigvalsh(np.array([[r11, re12 + 1j * im12], [re12 - 1j * im12, r22]]))
        if abs(r11 + r22 - 1) > 1e-12 or lam.min() < -1e-12:
            raise ConfigError("custom_rho", "must describe a unit-trace positive state")
    if cfg.threads is not None and (not isinstance(cfg.threads, int) or cfg.threads < 1):
        raise ConfigError("threads", "must be a positive integer")


def apply_env(cfg: RunConfig, environ=None) -> RunConfig:
    """Override keys from ``NMCONTROL_<SECTION>__<KEY>`` (or ``NMCONTROL_<KEY>`` for top level)."""
    environ = os.environ if environ is None else environ
    data = cfg.to_dict()
    touched = False
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        value = yaml.safe_load(raw)
        if len(path) == 1 and path[0] in data and path[0] not in _SECTIONS:
            data[path[0]] = value
        elif len(path) == 2 and path[0] in _SECTIONS:
            if path[1] not in data[path[0]]:
                raise ConfigError(".".join(path), f"unknown key (from {name})")
            data[path[0]][path[1]] = value
        else:
            raise ConfigError(name, "cannot map environment variable to a config key")
        touched = True
    return from_dict(data) if touched else cfg


def preset(name: str) -> RunConfig:
    """Named starting points; every value stays overridable."""
    cfg = RunConfig()
    if name == "fig2":
        cfg.outputs.directory = "runs/fig2"
    elif name == "fig4":
        cfg.field = FieldSection("dc_flash", 3.5e12, 1, 120.0, 0.0)
        cfg.outputs.directory = "runs/fig4"
    elif name == "fig7":
        cfg.field = FieldSection("single_cycle_sine", 3.5e12, 1, 40.0, 0.0)
        cfg.propagation.t_final_fs = 60.0
        cfg.outputs.directory = "runs/fig7"
    elif name == "smoke":
        cfg.bath.n_matsubara = 0
        cfg.propagation.l_max = 3
        cfg.propagation.t_final_fs = 20.0
        cfg.propagation.output_stride_fs = 0.2
        cfg.outputs.directory = "runs/smoke"
    elif name in ("thz120fs", "thz40fs"):
        period = 120.0 if name == "thz120fs" else 40.0
        cfg.field = FieldSection("single_cycle_sine", 3.5e12, 1, period, 0.0)
        cfg.outputs.directory = f"runs/{name}"
    else:
        raise ConfigError("preset", f"must be one of {PRESETS}")
    return cfg


def merge(base: RunConfig, overrides: dict) -> RunConfig:
    """Deep-merge a (possibly partial) mapping onto ``base``."""
    data = base.to_dict()
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return from_dict(data)
