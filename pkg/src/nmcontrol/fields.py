"""Zero-area control waveforms: a square dc flash and a single-cycle sine."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from scipy.integrate import quad

from .model import fs_to_au

SHAPES = ("none", "dc_flash", "single_cycle_sine")


@dataclass(frozen=True)
class PulseSpec:
    """One field cycle of period ``period_fs`` starting at ``start_fs``.

    ``amplitude_e0`` is signed (a.u.); a positive value means the field starts
    positive.
    """

    shape: str = "none"
    amplitude_e0: float = 0.0
    period_fs: float = 120.0
    start_fs: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        for name in ("amplitude_e0", "period_fs", "start_fs"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.shape != "none" and not self.period_fs > 0:
            raise ValueError(f"period_fs must be > 0, got {self.period_fs}")

    @property
    def start_au(self) -> float:
        return float(fs_to_au(self.start_fs))

    @property
    def period_au(self) -> float:
        return float(fs_to_au(self.period_fs))

    def breakpoints_au(self) -> list:
        """Times where the waveform (or its derivative) is discontinuous."""
        if self.shape == "none" or self.amplitude_e0 == 0.0:
            return []
        t0, T = self.start_au, self.period_au
        if self.shape == "dc_flash":
            return [t0, t0 + 0.5 * T, t0 + T]
        return [t0, t0 + T]

    def flipped(self) -> "PulseSpec":
        return PulseSpec(self.shape, -self.amplitude_e0, self.period_fs, self.start_fs)


def field_amplitude(t: float, spec: PulseSpec, left: bool = False) -> float:
    """E(t) in a.u. at time ``t`` (a.u.).

    The flash is right-continuous at its jumps; ``left=True`` returns the left
    limit instead, which is what an integrator step ending on a jump needs.
    """
    if spec.shape == "none":
        return 0.0
    t0, T, e0 = spec.start_au, spec.period_au, spec.amplitude_e0
    s = t - t0
    if spec.shape == "single_cycle_sine":
        if 0.0 <= s <= T:
            return e0 * math.sin(2.0 * math.pi * s / T)
        return 0.0
    half = 0.5 * T
    if left:
        if 0.0 < s <= half:
            return e0
        if half < s <= T:
            return -e0
        return 0.0
    if 0.0 <= s < half:
        return e0
    if half <= s < T:
        return -e0
    return 0.0


def pulse_area(spec: PulseSpec, waveform: Optional[Callable] = None) -> float:
    """Time integral of the field over one period (a.u. field x a.u. time)."""
    if spec.shape == "none":
        return 0.0
    f = waveform or (lambda t: field_amplitude(t, spec))
    t0, T = spec.start_au, spec.period_au
    first = quad(f, t0, t0 + 0.5 * T, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    second = quad(f, t0 + 0.5 * T, t0 + T, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return first + second


def validate_zero_area(spec: PulseSpec, quadrature_tol: float = 1e-10,
                       waveform: Optional[Callable] = None) -> bool:
    """True iff ``|area| <= quadrature_tol * |E0| * T``; ``none`` is always valid."""
    if spec.shape == "none":
        return True
    area = pulse_area(spec, waveform)
    return abs(area) <= quadrature_tol * abs(spec.amplitude_e0) * spec.period_au


PRESET_PERIODS_FS = {"thz120fs": 120.0, "thz40fs": 40.0}
