"""Hierarchical equations of motion for a sigma_z-coupled two-level system.

For each occupation vector n of the K bath exponents,

    d rho_n/dt = -i[H_S(t), rho_n] + i sum_k n_k zeta_k rho_n
                 - i [sz, sum_k rho_{n+k}]
                 - i sum_k n_k (alpha_k sz rho_{n-k} - alpha_tilde_k rho_{n-k} sz)

truncated by dropping every ADO above level ``l_max``.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .bath import CorrelationExpansion
from .fields import PulseSpec, field_amplitude
from .model import SIGMA_Z, SystemParams, au_to_fs, fs_to_au, system_hamiltonian

log = logging.getLogger(__name__)

MAX_ADOS = 3_000_000


class HierarchyTooLarge(ValueError):
    def __init__(self, count, cap):
        super().__init__(f"hierarchy would hold {count} ADOs, above the cap of {cap}")
        self.count = count


class PropagationAbort(RuntimeError):
    """Non-finite state or step-size underflow during propagation."""

    def __init__(self, message, time_au):
        super().__init__(f"{message} at t = {time_au:.6g} a.u. ({au_to_fs(time_au):.4g} fs)")
        self.time_au = time_au


class UnderTruncationWarning(RuntimeWarning):
    """rho_0 developed eigenvalues below -1e-6."""


@dataclass(frozen=True)
class Hierarchy:
    """All occupation vectors up to ``l_max`` with raising/lowering tables.

    ``plus[i, k]`` / ``minus[i, k]`` give the position of ``n + e_k`` /
    ``n - e_k``, or -1 where that ADO is absent (truncated or negative).
    """

    k_modes: int
    l_max: int
    occupations: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    @property
    def size(self) -> int:
        return self.occupations.shape[0]

    @property
    def levels(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    def level_indices(self, level: int) -> np.ndarray:
        return np.flatnonzero(self.levels == level)

    @property
    def index_hash(self) -> bytes:
        occ = np.ascontiguousarray(self.occupations, dtype="<i4")
        return hashlib.sha256(occ.tobytes()).digest()


def hierarchy_size(k_modes: int, l_max: int) -> int:
    return comb(k_modes + l_max, k_modes)


def build_hierarchy(k_modes: int, l_max: int, max_ados: int = MAX_ADOS) -> Hierarchy:
    """Enumerate occupations in graded order (level, then descending lexicographic)."""
    if k_modes < 1:
        raise ValueError(f"k_modes must be >= 1, got {k_modes}")
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    count = hierarchy_size(k_modes, l_max)
    if count > max_ados:
        raise HierarchyTooLarge(count, max_ados)

    occ = np.zeros((count, k_modes), dtype=np.int32)
    row = 0
    for level in range(l_max + 1):
        for combo in itertools.combinations_with_replacement(range(k_modes), level):
            for k in combo:
                occ[row, k] += 1
            row += 1

    lookup = {v.tobytes(): i for i, v in enumerate(occ)}
    plus = np.full((count, k_modes), -1, dtype=np.int64)
    minus = np.full((count, k_modes), -1, dtype=np.int64)
    levels = occ.sum(axis=1)
    for i in range(count):
        v = occ[i].copy()
        for k in range(k_modes):
            if levels[i] < l_max:
                v[k] += 1
                plus[i, k] = lookup[v.tobytes()]
                v[k] -= 1
            if v[k] > 0:
                v[k] -= 1
                minus[i, k] = lookup[v.tobytes()]
                v[k] += 1
    return Hierarchy(k_modes, l_max, occ, plus, minus)


@dataclass
class HierarchyState:
    """ADOs ``ados[i, b]`` for each index i and batch member b, at ``time`` (a.u.).

    With rescaling on, the physical ADO is ``scales[i] * ados[i]``.
    """

    ados: np.ndarray
    time: float = 0.0
    scales: Optional[np.ndarray] = None

    @property
    def rho(self) -> np.ndarray:
        """Reduced density matrices, shape (B, 2, 2)."""
        return self.ados[0]

    def physical(self) -> np.ndarray:
        if self.scales is None:
            return self.ados
        return self.ados * self.scales[:, None, None, None]


def initial_state(rho0, hierarchy: Hierarchy, scales=None) -> HierarchyState:
    """Factorised start: rho_0 = rho0, every higher ADO exactly zero."""
    rho0 = np.asarray(rho0, dtype=complex)
    batch = rho0.reshape(-1, 2, 2)
    ados = np.zeros((hierarchy.size, batch.shape[0], 2, 2), dtype=complex)
    ados[0] = batch
    return HierarchyState(ados, 0.0, scales)


class HeomOperator:
    """Precomputed coefficient tables for one (hierarchy, bath, system, field)."""

    def __init__(self, hierarchy: Hierarchy, expansion: CorrelationExpansion,
                 params: SystemParams, field_spec: PulseSpec, rescaling: bool = False):
        if expansion.count != hierarchy.k_modes:
            raise ValueError(
                f"expansion has K={expansion.count} terms, hierarchy K={hierarchy.k_modes}")
        self.hierarchy = hierarchy
        self.expansion = expansion
        self.params = params
        self.field_spec = field_spec
        self.rescaling = rescaling

        occ = hierarchy.occupations
        alpha, alpha_t, zeta = expansion.alpha, expansion.alpha_tilde, expansion.zeta
        self.diag = (1j * (occ @ zeta)).astype(np.complex128)

        if rescaling:
            mag = np.abs(alpha)
            if np.any(mag == 0):
                raise ValueError("rescaling needs every |alpha_k| > 0")
            log_s = 0.5 * (occ @ np.log(mag) + np.array(
                [sum(math.lgamma(n + 1) for n in row) for row in occ]))
            self.scales = np.exp(log_s)
        else:
            mag = None
            self.scales = None

        p_ptr, p_idx, p_w = [0], [], []
        m_ptr, m_idx, m_a, m_at = [0], [], [], []
        for i in range(hierarchy.size):
            for k in range(hierarchy.k_modes):
                j = hierarchy.plus[i, k]
                if j >= 0:
                    p_idx.append(j)
                    # rho_{n+k} / s_n = sqrt((n_k + 1)|alpha_k|) sigma_{n+k}
                    p_w.append(math.sqrt((occ[i, k] + 1) * mag[k]) if rescaling else 1.0)
                j = hierarchy.minus[i, k]
                if j >= 0:
                    nk = occ[i, k]
                    f = math.sqrt(nk / mag[k]) if rescaling else nk
                    m_idx.append(j)
                    m_a.append(f * alpha[k])
                    m_at.append(f * alpha_t[k])
            p_ptr.append(len(p_idx))
            m_ptr.append(len(m_idx))
        self.p_ptr = np.array(p_ptr, dtype=np.int64)
        self.p_idx = np.array(p_idx, dtype=np.int64)
        self.p_w = np.array(p_w, dtype=np.complex128)
        self.m_ptr = np.array(m_ptr, dtype=np.int64)
        self.m_idx = np.array(m_idx, dtype=np.int64)
        self.m_a = np.array(m_a, dtype=np.complex128)
        self.m_at = np.array(m_at, dtype=np.complex128)
        self._level1 = hierarchy.level_indices(1)

    def hamiltonian(self, t: float, left: bool = False) -> np.ndarray:
        return system_hamiltonian(self.params, field_amplitude(t, self.field_spec, left))

    def apply(self, ados: np.ndarray, h: np.ndarray, out: np.ndarray) -> np.ndarray:
        _kernels.heom_rhs_kernel(ados, h, self.diag, self.p_ptr, self.p_idx, self.p_w,
                                 self.m_ptr, self.m_idx, self.m_a, self.m_at, out)
        return out

    def first_moment(self, ados: np.ndarray) -> np.ndarray:
        """X1 = -sum of level-1 ADOs (physical scale), shape (B, 2, 2)."""
        lvl = ados[self._level1]
        if self.scales is not None:
            lvl = lvl * self.scales[self._level1][:, None, None, None]
        return -lvl.sum(axis=0)

    def new_state(self, rho0) -> HierarchyState:
        return initial_state(rho0, self.hierarchy, self.scales)


def heom_rhs(t: float, state: HierarchyState, hierarchy: Hierarchy,
             expansion: CorrelationExpansion, params: SystemParams,
             field_spec: PulseSpec, operator: Optional[HeomOperator] = None) -> np.ndarray:
    """Time derivative of every ADO at time ``t``; same shape as ``state.ados``."""
    op = operator or HeomOperator(hierarchy, expansion, params, field_spec,
                                  rescaling=state.scales is not None)
    if state.ados.shape[0] != hierarchy.size:
        raise ValueError("state does not match hierarchy size")
    out = np.empty_like(state.ados)
    op.apply(state.ados, op.hamiltonian(t), out)
    if not np.all(np.isfinite(out)):
        raise PropagationAbort("non-finite derivative", t)
    return out


def first_moment(state: HierarchyState, hierarchy: Hierarchy) -> np.ndarray:
    """X1 = -sum_{level(n)=1} rho_n, per batch member; zero matrix at t = 0."""
    idx = hierarchy.level_indices(1)
    phys = state.ados[idx]
    if state.scales is not None:
        phys = phys * state.scales[idx][:, None, None, None]
    x1 = -phys.sum(axis=0)
    return x1[0] if x1.shape[0] == 1 else x1


@dataclass
class PropagationConfig:
    l_max: int = 6
    dt_au: float = 0.5
    t_final_fs: float = 100.0
    output_stride_fs: float = 0.1
    rescaling: bool = False
    adaptive: bool = False
    rtol: float = 1e-8
    atol: float = 1e-11
    check_identity: bool = True

    def __post_init__(self):
        if int(self.l_max) != self.l_max or self.l_max < 1:
            raise ValueError(f"l_max must be an integer >= 1, got {self.l_max}")
        if not self.dt_au > 0:
            raise ValueError(f"dt_au must be > 0, got {self.dt_au}")
        if not self.t_final_fs > 0:
            raise ValueError(f"t_final_fs must be > 0, got {self.t_final_fs}")
        if not self.output_stride_fs > 0:
            raise ValueError(f"output_stride_fs must be > 0, got {self.output_stride_fs}")


@dataclass
class Trajectory:
    """Sampled output of a propagation; arrays indexed [sample, batch, ...]."""

    times_au: np.ndarray
    rho: np.ndarray
    x1: np.ndarray
    field: np.ndarray
    hierarchy_size: int
    identity_residual: float = 0.0
    steps: int = 0
    min_eigenvalue: float = 0.0
    final_state: Optional[HierarchyState] = field(default=None, repr=False)

    @property
    def times_fs(self) -> np.ndarray:
        return au_to_fs(self.times_au)

    def member(self, b: int) -> "Trajectory":
        return Trajectory(self.times_au, self.rho[:, b:b + 1], self.x1[:, b:b + 1], self.field,
                          self.hierarchy_size, self.identity_residual, self.steps,
                          self.min_eigenvalue)


def _sample_times(config: PropagationConfig) -> np.ndarray:
    n = int(round(config.t_final_fs / config.output_stride_fs))
    if not math.isclose(n * config.output_stride_fs, config.t_final_fs, rel_tol=1e-9):
        raise ValueError("t_final_fs must be a multiple of output_stride_fs")
    return fs_to_au(np.arange(n + 1) * config.output_stride_fs)


def _segments(samples: np.ndarray, breaks: list) -> np.ndarray:
    t_end = samples[-1]
    nodes = set(samples.tolist())
    for b in breaks:
        if 0.0 < b < t_end and not np.any(np.isclose(samples, b, rtol=0, atol=1e-9)):
            nodes.add(float(b))
    return np.array(sorted(nodes))


def _identity_residual(op: HeomOperator, h, rho, x1, deriv) -> float:
    """max |d rho/dt - (-i[H, rho] + i[sz, X1])| over the batch."""
    comm = h @ rho - rho @ h
    sx = SIGMA_Z @ x1 - x1 @ SIGMA_Z
    return float(np.max(np.abs(deriv - (-1j * comm + 1j * sx))))


def propagate(rho0, config: PropagationConfig, hierarchy: Hierarchy,
              expansion: CorrelationExpansion, params: SystemParams,
              field_spec: PulseSpec, operator: Optional[HeomOperator] = None) -> Trajectory:
    """Integrate the hierarchy from a factorised initial state.

    ``rho0`` is a 2x2 density matrix or a (B, 2, 2) batch propagated together.
    Fixed-step RK4 places steps exactly on output samples and on field
    discontinuities; ``config.adaptive`` switches to an embedded RK pair.
    """
    rho0 = np.asarray(rho0, dtype=complex).reshape(-1, 2, 2)
    for r in rho0:
        if not np.allclose(r, r.conj().T, atol=1e-12):
            raise ValueError("rho0 must be Hermitian")
        if abs(np.trace(r) - 1) > 1e-12:
            raise ValueError("rho0 must have unit trace")
        if np.linalg.eigvalsh(r).min() < -1e-12:
            raise ValueError("rho0 must be positive semidefinite")
    if config.l_max != hierarchy.l_max:
        raise ValueError("config.l_max differs from hierarchy.l_max")
    op = operator or HeomOperator(hierarchy, expansion, params, field_spec, config.rescaling)

    samples = _sample_times(config)
    nodes = _segments(samples, field_spec.breakpoints_au())
    sample_pos = {float(s): i for i, s in enumerate(samples)}

    state = op.new_state(rho0)
    n_s, n_b = samples.size, rho0.shape[0]
    rho_out = np.zeros((n_s, n_b, 2, 2), dtype=complex)
    x1_out = np.zeros_like(rho_out)
    field_out = np.zeros(n_s)
    rho_out[0] = state.ados[0]
    field_out[0] = field_amplitude(0.0, field_spec)

    if config.adaptive:
        steps, residual = _run_adaptive(op, state, nodes, sample_pos, rho_out, x1_out,
                                        field_out, config)
    else:
        steps, residual = _run_rk4(op, state, nodes, sample_pos, rho_out, x1_out,
                                   field_out, config)

    herm = 0.5 * (rho_out + np.conj(np.swapaxes(rho_out, -1, -2)))
    min_eig = float(np.linalg.eigvalsh(herm).min())
    if min_eig < -1e-6:
        warnings.warn(f"rho_0 eigenvalue {min_eig:.3e} < -1e-6: hierarchy may be under-truncated",
                      UnderTruncationWarning, stacklevel=2)
    return Trajectory(samples, rho_out, x1_out, field_out, hierarchy.size, residual, steps,
                      min_eig, state)


def _record(op, state, t, sample_pos, rho_out, x1_out, field_out):
    i = sample_pos.get(float(t))
    if i is None:
        return
    rho_out[i] = state.ados[0]
    x1_out[i] = op.first_moment(state.ados)
    field_out[i] = field_amplitude(t, op.field_spec)


def _run_rk4(op, state, nodes, sample_pos, rho_out, x1_out, field_out, config):
    y = state.ados
    k1, k2, k3, k4 = (np.empty_like(y) for _ in range(4))
    tmp = np.empty_like(y)
    yf, tf_ = y.reshape(-1), tmp.reshape(-1)
    f1, f2, f3, f4 = (k.reshape(-1) for k in (k1, k2, k3, k4))
    residual = 0.0
    steps = 0
    for a, b in zip(nodes[:-1], nodes[1:]):
        n_sub = max(1, math.ceil((b - a) / config.dt_au - 1e-9))
        h = (b - a) / n_sub
        for s in range(n_sub):
            t = a + s * h
            h0 = op.hamiltonian(t)
            hm = op.hamiltonian(t + 0.5 * h)
            h1 = op.hamiltonian(t + h, left=True)
            op.apply(y, h0, k1)
            if config.check_identity:
                x1 = op.first_moment(y)
                residual = max(residual, _identity_residual(op, h0, y[0], x1, k1[0]))
            _kernels.axpy(yf, 0.5 * h, f1, tf_)
            op.apply(tmp, hm, k2)
            _kernels.axpy(yf, 0.5 * h, f2, tf_)
            op.apply(tmp, hm, k3)
            _kernels.axpy(yf, h, f3, tf_)
            op.apply(tmp, h1, k4)
            _kernels.rk4_combine(yf, h, f1, f2, f3, f4)
            steps += 1
        if not np.all(np.isfinite(y[0])) or not np.isfinite(np.abs(y).max()):
            raise PropagationAbort("non-finite ADO entries", b)
        state.time = b
        _record(op, state, b, sample_pos, rho_out, x1_out, field_out)
    return steps, residual


def _run_adaptive(op, state, nodes, sample_pos, rho_out, x1_out, field_out, config):
    shape = state.ados.shape
    buf = np.empty(shape, dtype=complex)
    steps = 0
    residual = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        def fun(t, y, b=b):
            h = op.hamiltonian(t, left=t >= b)
            return op.apply(y.reshape(shape), h, buf).reshape(-1).copy()

        sol = solve_ivp(fun, (a, b), state.ados.reshape(-1), method="DOP853",
                        rtol=config.rtol, atol=config.atol, first_step=config.dt_au)
        if sol.status != 0:
            raise PropagationAbort(f"adaptive integrator failed: {sol.message}", float(sol.t[-1]))
        steps += sol.t.size - 1
        state.ados[...] = sol.y[:, -1].reshape(shape)
        if not np.all(np.isfinite(state.ados)):
            raise PropagationAbort("non-finite ADO entries", b)
        if config.check_identity:
            h = op.hamiltonian(b, left=True)
            deriv = op.apply(state.ados, h, buf)[0].copy()
            residual = max(residual, _identity_residual(op, h, state.ados[0],
                                                        op.first_moment(state.ados), deriv))
        state.time = b
        _record(op, state, b, sample_pos, rho_out, x1_out, field_out)
    return steps, residual


_CHECKPOINT_MAGIC = b"NMCHKPT1"
_HEADER = struct.Struct("<8sIIQIBd32s")


def save_checkpoint(path, state: HierarchyState, hierarchy: Hierarchy) -> None:
    """Binary restart file.

    Layout (little endian): magic ``NMCHKPT1``; u32 K; u32 L_max; u64 ADO
    count; u32 batch size; u8 rescaled flag; f64 time (a.u.); 32-byte SHA-256
    of the int32 occupation table in index order; then, if rescaled, one f64
    scale per ADO; then the ADOs as row-major complex128 (re, im) pairs with
    shape (ADO, batch, 2, 2).
    """
    ados = np.ascontiguousarray(state.ados, dtype="<c16")
    header = _HEADER.pack(_CHECKPOINT_MAGIC, hierarchy.k_modes, hierarchy.l_max,
                          hierarchy.size, ados.shape[1], int(state.scales is not None),
                          float(state.time), hierarchy.index_hash)
    with open(path, "wb") as fh:
        fh.write(header)
        if state.scales is not None:
            fh.write(np.ascontiguousarray(state.scales, dtype="<f8").tobytes())
        fh.write(ados.tobytes())


def load_checkpoint(path, hierarchy: Hierarchy) -> HierarchyState:
    raw = Path(path).read_bytes()
    magic, k, l_max, n, batch, rescaled, t, digest = _HEADER.unpack_from(raw, 0)
    if magic != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a hierarchy checkpoint")
    if (k, l_max, n) != (hierarchy.k_modes, hierarchy.l_max, hierarchy.size):
        raise ValueError(f"{path}: checkpoint is for K={k}, L={l_max}, {n} ADOs")
    if digest != hierarchy.index_hash:
        raise ValueError(f"{path}: ADO index order differs from this hierarchy")
    offset = _HEADER.size
    scales = None
    if rescaled:
        scales = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
    ados = np.frombuffer(raw, dtype="<c16", count=n * batch * 4, offset=offset)
    return HierarchyState(ados.reshape(n, batch, 2, 2).astype(complex), t, scales)
