"""Driven two-level system: units, Hamiltonian, Stark-shifted gap, eigenframe.

All quantities are in Hartree atomic units unless a name says otherwise.
The system operator coupled to the bath and to the field is ``sigma_z`` in
the diabatic basis ``{|1>, |2>}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as _sc

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class UnitSystem:
    """Conversion factors between lab units and atomic units (CODATA via scipy)."""

    hartree_per_ev: float = 1.0 / _sc.physical_constants["Hartree energy in eV"][0]
    au_time_per_fs: float = 1e-15 / _sc.physical_constants["atomic unit of time"][0]
    au_intensity: float = (
        0.5 * _sc.c * _sc.epsilon_0
        * _sc.physical_constants["atomic unit of electric field"][0] ** 2 * 1e-4
    )  # W/cm^2
    boltzmann_au: float = (
        _sc.physical_constants["Boltzmann constant in eV/K"][0]
        / _sc.physical_constants["Hartree energy in eV"][0]
    )  # hartree / K

    def __post_init__(self):
        for name in ("hartree_per_ev", "au_time_per_fs", "au_intensity", "boltzmann_au"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


UNITS = UnitSystem()


def _check_finite(value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite input: {value!r}")
    return value


def to_atomic_units(value: float, unit: str, units: UnitSystem = UNITS) -> float:
    """Convert ``value`` given in ``unit`` to atomic units.

    ``unit`` is one of ``"eV"`` (-> hartree), ``"fs"`` (-> atomic time) or
    ``"kelvin_to_beta"`` (temperature in K -> inverse temperature 1/(k_B T)).
    """
    value = _check_finite(value)
    if unit == "eV":
        return value * units.hartree_per_ev
    if unit == "fs":
        return value * units.au_time_per_fs
    if unit == "kelvin_to_beta":
        if value <= 0:
            raise ValueError(f"temperature must be > 0 K, got {value}")
        return 1.0 / (units.boltzmann_au * value)
    raise ValueError(f"unknown unit {unit!r}")


def from_atomic_units(value: float, unit: str, units: UnitSystem = UNITS) -> float:
    """Inverse of :func:`to_atomic_units`."""
    value = _check_finite(value)
    if unit == "eV":
        return value / units.hartree_per_ev
    if unit == "fs":
        return value / units.au_time_per_fs
    if unit == "kelvin_to_beta":
        if value <= 0:
            raise ValueError(f"beta must be > 0, got {value}")
        return 1.0 / (units.boltzmann_au * value)
    raise ValueError(f"unknown unit {unit!r}")


def fs_to_au(t_fs):
    return np.asarray(t_fs) * UNITS.au_time_per_fs


def au_to_fs(t_au):
    return np.asarray(t_au) / UNITS.au_time_per_fs


def intensity_to_amplitude(intensity: float, units: UnitSystem = UNITS) -> float:
    """Peak field amplitude (a.u.) for a peak intensity in W/cm^2."""
    intensity = _check_finite(intensity)
    if intensity < 0:
        raise ValueError(f"intensity must be >= 0, got {intensity}")
    return math.sqrt(intensity / units.au_intensity)


@dataclass(frozen=True)
class SystemParams:
    """Diabatic two-level parameters in atomic units.

    ``delta`` is half the diabatic gap, ``w_coupling`` the interstate
    coupling and ``mu0`` the dipole magnitude (dipole operator mu0*sigma_z).
    """

    delta: float
    w_coupling: float
    mu0: float = 1.0
    omega0: float = field(init=False)

    def __post_init__(self):
        for name in ("delta", "w_coupling", "mu0"):
            _check_finite(getattr(self, name))
        if self.w_coupling == 0:
            warnings.warn("w_coupling == 0: adiabatic and diabatic frames coincide", stacklevel=2)
        object.__setattr__(self, "omega0", 2.0 * math.hypot(self.delta, self.w_coupling))

    @classmethod
    def from_ev(cls, gap_ev: float = 0.517, w_ev: float = 0.2, mu0: float = 1.0) -> "SystemParams":
        """Build from the full diabatic gap ``2*delta`` and ``W`` in eV."""
        return cls(
            delta=to_atomic_units(gap_ev, "eV") / 2.0,
            w_coupling=to_atomic_units(w_ev, "eV"),
            mu0=mu0,
        )


def default_params() -> SystemParams:
    """Heterojunction at R = 2.5 Angstrom: 2*delta = 0.517 eV, W = 0.2 eV, mu0 = 1 a.u."""
    return SystemParams.from_ev(0.517, 0.2, 1.0)


def system_hamiltonian(params: SystemParams, field_au: float) -> np.ndarray:
    """``delta*sz + W*sx - mu0*E*sz``; the scalar renormalisation term is omitted."""
    d = params.delta - params.mu0 * field_au
    w = params.w_coupling
    return np.array([[d, w], [w, -d]], dtype=complex)


def dressed_gap(params: SystemParams, field_au: float) -> float:
    """Instantaneous eigengap of :func:`system_hamiltonian` at field ``field_au``."""
    return 2.0 * math.hypot(params.delta - params.mu0 * field_au, params.w_coupling)


def rabi_period_fs(params: SystemParams) -> float:
    return from_atomic_units(2.0 * math.pi / params.omega0, "fs")


def adiabatic_frame(params: SystemParams) -> np.ndarray:
    """Real orthogonal U with columns the field-free eigenvectors, ascending energy.

    Each column is sign-fixed so that its first nonzero component is positive.
    ``U.T @ H(0) @ U == diag(-omega0/2, +omega0/2)``.
    """
    h = np.array([[params.delta, params.w_coupling], [params.w_coupling, -params.delta]])
    _, vecs = np.linalg.eigh(h)
    for j in range(2):
        col = vecs[:, j]
        lead = col[np.flatnonzero(np.abs(col) > 1e-15)[0]]
        if lead < 0:
            vecs[:, j] = -col
    return vecs
