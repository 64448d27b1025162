"""Dynamical-map tomography, volume of accessible states and derived witnesses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.signal import find_peaks

from .model import SystemParams, adiabatic_frame, fs_to_au

log = logging.getLogger(__name__)

# |1><1|, |2><2|, |+><+|, |+i><+i|, then the redundancy probe 1/2
_S = 1.0 / np.sqrt(2.0)
_KETS = {
    "diabatic_1": np.array([1.0, 0.0], dtype=complex),
    "diabatic_2": np.array([0.0, 1.0], dtype=complex),
    "plus": np.array([_S, _S], dtype=complex),
    "plus_i": np.array([_S, 1j * _S], dtype=complex),
}
TOMOGRAPHY_STATES = ("diabatic_1", "diabatic_2", "plus", "plus_i")

LINEARITY_TOL = 1e-6
RATE_FLOOR = 1e-12
BUMP_PROMINENCE = 0.005


def projector(name: str) -> np.ndarray:
    ket = _KETS[name]
    return np.outer(ket, ket.conj())


def tomography_inputs() -> np.ndarray:
    """(5, 2, 2): the four basis projectors followed by the maximally mixed probe."""
    return np.stack([projector(n) for n in TOMOGRAPHY_STATES] + [0.5 * np.eye(2, dtype=complex)])


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))


def bloch_coords(rho) -> BlochVector:
    """x = 2 Re rho12, y = 2 Im rho12, z = rho22 - rho11."""
    rho = np.asarray(rho)
    return BlochVector(2.0 * rho[0, 1].real, 2.0 * rho[0, 1].imag, (rho[1, 1] - rho[0, 0]).real)


def bloch_array(rho) -> np.ndarray:
    """Vectorised :func:`bloch_coords` over leading axes: (..., 2, 2) -> (..., 3)."""
    rho = np.asarray(rho)
    return np.stack([2.0 * rho[..., 0, 1].real, 2.0 * rho[..., 0, 1].imag,
                     (rho[..., 1, 1] - rho[..., 0, 0]).real], axis=-1)


def density_from_bloch(r) -> np.ndarray:
    x, y, z = r
    return 0.5 * np.array([[1 - z, x + 1j * y], [x - 1j * y, 1 + z]])


@dataclass(frozen=True)
class AffineBlochMap:
    """r(t) = linear @ r(0) + translation."""

    linear: np.ndarray
    translation: np.ndarray
    time_fs: float = 0.0

    def __call__(self, r):
        return np.asarray(r) @ self.linear.T + self.translation


@dataclass
class MapSeries:
    """Time series of reconstructed maps plus the linearity diagnostic."""

    times_fs: np.ndarray
    linear: np.ndarray
    translation: np.ndarray
    linearity_error: float
    reliable: bool

    def __getitem__(self, i) -> AffineBlochMap:
        return AffineBlochMap(self.linear[i], self.translation[i], float(self.times_fs[i]))

    def __len__(self):
        return self.times_fs.size

    @property
    def volumes(self) -> np.ndarray:
        return np.linalg.det(self.linear)


def solve_affine(inputs: np.ndarray, outputs: np.ndarray):
    """Exact affine fit through four non-coplanar Bloch points.

    inputs (4, 3), outputs (..., 4, 3) -> (A (..., 3, 3), b (..., 3)).
    """
    m = np.hstack([inputs, np.ones((4, 1))])
    coef = np.linalg.solve(m, outputs)
    a = np.swapaxes(coef[..., :3, :], -1, -2)
    return a, coef[..., 3, :]


def maps_from_trajectory(times_fs, rho_batch, linearity_tol: float = LINEARITY_TOL) -> MapSeries:
    """Affine maps from propagated tomography states.

    ``rho_batch`` has shape (T, 5, 2, 2) in the order of :func:`tomography_inputs`.
    """
    ins = bloch_array(tomography_inputs())
    outs = bloch_array(rho_batch)
    a, b = solve_affine(ins[:4], outs[:, :4])
    # the probe has Bloch vector 0, so its image must equal b
    lin_err = float(np.max(np.abs(outs[:, 4] - b)))
    reliable = lin_err <= linearity_tol
    if not reliable:
        log.warning("map linearity violated: probe deviation %.3e > %.1e", lin_err, linearity_tol)
    return MapSeries(np.asarray(times_fs, dtype=float), a, b, lin_err, reliable)


def reconstruct_map(config, hierarchy, expansion, params, field_spec, operator=None,
                    extra_states=None):
    """Propagate the tomography set (plus ``extra_states``) and rebuild the maps.

    Returns ``(MapSeries, Trajectory)``; the trajectory batch holds the five
    tomography states first, then any extras.
    """
    from .heom import propagate

    inputs = tomography_inputs()
    if extra_states is not None:
        inputs = np.concatenate([inputs, np.asarray(extra_states, dtype=complex).reshape(-1, 2, 2)])
    traj = propagate(inputs, config, hierarchy, expansion, params, field_spec, operator)
    return maps_from_trajectory(traj.times_fs, traj.rho[:, :5]), traj


def volume(bloch_map: AffineBlochMap) -> float:
    """det of the linear block; 1 for the identity map."""
    return float(np.linalg.det(bloch_map.linear))


@dataclass
class VolumeSeries:
    times_fs: np.ndarray
    volume: np.ndarray
    rate: Optional[np.ndarray] = None
    bumps: List[tuple] = field(default_factory=list)
    non_markovian: bool = False

    def __post_init__(self):
        self.times_fs = np.asarray(self.times_fs, dtype=float)
        self.volume = np.asarray(self.volume, dtype=float)


def decoherence_rate(series: VolumeSeries, floor: float = RATE_FLOOR) -> np.ndarray:
    """Gamma(t) = -(1/2) d ln V / dt in a.u.^-1 (NaN once V <= floor).

    Centered three-point differences, one-sided at the ends.
    """
    t = fs_to_au(series.times_fs)
    v = series.volume
    rate = np.full(v.shape, np.nan)
    bad = np.flatnonzero(v <= floor)
    stop = bad[0] if bad.size else v.size
    if stop >= 2:
        rate[:stop] = -0.5 * np.gradient(np.log(v[:stop]), t[:stop])
    return rate


def integrate_rate(times_fs, rate) -> np.ndarray:
    """exp(-2 * cumulative trapezoid of Gamma): the volume implied by the rate."""
    t = fs_to_au(np.asarray(times_fs, dtype=float))
    seg = 0.5 * (rate[1:] + rate[:-1]) * np.diff(t)
    return np.exp(-2.0 * np.concatenate([[0.0], np.cumsum(seg)]))


def detect_nonmarkovianity(series: VolumeSeries, prominence: float = BUMP_PROMINENCE,
                           noise_tol: float = 1e-6):
    """Bumps of V(t) and the dV/dt > 0 flag.

    Returns ``(bumps, flagged)`` with bumps as ``(t_fs, V, prominence)``.
    ``noise_tol`` is the largest tolerated positive slope (per fs).
    """
    v = series.volume
    slope = np.gradient(v, series.times_fs)
    flagged = bool(np.nanmax(slope) > noise_tol) if v.size > 1 else False
    peaks, props = find_peaks(v, prominence=prominence)
    bumps = [(float(series.times_fs[i]), float(v[i]), float(p))
             for i, p in zip(peaks, props["prominences"])]
    return bumps, flagged


def volume_series(maps: MapSeries, prominence: float = BUMP_PROMINENCE) -> VolumeSeries:
    series = VolumeSeries(maps.times_fs, maps.volumes)
    series.rate = decoherence_rate(series)
    series.bumps, series.non_markovian = detect_nonmarkovianity(series, prominence)
    return series


class UnphysicalStateError(ValueError):
    pass


def entropy(rho) -> float:
    """von Neumann entropy in bits."""
    rho = np.asarray(rho)
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam.min() < -1e-6 or lam.max() > 1 + 1e-6:
        raise UnphysicalStateError(f"eigenvalues {lam} outside [0, 1]")
    lam = np.clip(lam, 0.0, 1.0)
    nz = lam[lam > 0]
    return float(-np.sum(nz * np.log2(nz)))


def adiabatic_density(rho, params: SystemParams) -> np.ndarray:
    """U^dagger rho U in the field-free eigenbasis (ground state first)."""
    u = adiabatic_frame(params)
    return u.T @ np.asarray(rho) @ u


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    semi_axes: np.ndarray
    directions: np.ndarray


def ellipsoid(bloch_map: AffineBlochMap) -> Ellipsoid:
    """Image of the unit ball: center b, semi-axes = singular values of A
    (descending), directions = matching left singular vectors (columns)."""
    u, s, _ = np.linalg.svd(bloch_map.linear)
    return Ellipsoid(np.array(bloch_map.translation, dtype=float), s, u)


def pure_dephasing_coherence(t_au, rho12_0: complex, delta: float, phi) -> np.ndarray:
    """Exact rho_12(t) for W = 0, E = 0: rho12(0) exp(-2i delta t - Phi(t)).

    ``phi`` holds the dephasing exponent on ``t_au`` (see
    :func:`nmcontrol.bath.dephasing_exponent`). The bath-induced level shift is
    the same for both states, so no extra phase appears.
    """
    t_au = np.asarray(t_au, dtype=float)
    return rho12_0 * np.exp(-2j * delta * t_au - np.asarray(phi))
