"""Structured spectral density and its exponential correlation expansion.

The spectral density is a sum of two-pole Lorentzians

    J(w) = sum_k w p_k / ([(w - W_k)^2 + G_k^2] [(w + W_k)^2 + G_k^2])

and the bath correlation function at inverse temperature beta is

    C(t) = (1/pi) int dw exp(-i w t) J(w) / (1 - exp(-beta w)).

``decompose_correlation`` evaluates the integral by residues (lower
half-plane, t > 0) and ``correlation_numeric`` by direct quadrature; the two
are kept independent so that one can check the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import quad

from .model import fs_to_au, to_atomic_units

# Table I of the heterojunction fit: p_k, Omega_k, Gamma_k mantissa (a.u.).
_TABLE_P = (3.72e-10, 1.90e-11, 7.80e-12, 5.80e-12, 8.00e-12)
_TABLE_OMEGA = (6.99e-3, 3.05e-3, 4.00e-3, 1.94e-3, 5.20e-3)
_TABLE_GAMMA_MANTISSA = (5.86, 5.50, 4.70, 6.83, 7.00)

GAMMA_READINGS = {"x1e-4": 1e-4, "as_printed": 1e4}

POLE_COLLISION_TOL = 1e-12
AUTO_TOLERANCE = 1e-3
AUTO_MAX_MATSUBARA = 64


class PoleCollisionError(ValueError):
    """A Matsubara pole coincides with a Lorentzian pole (degenerate residue)."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved abs error {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class LorentzianSet:
    """Parameters ``(p_k, Omega_k, Gamma_k)`` of the Lorentzian terms, a.u."""

    p: tuple
    omega: tuple
    gamma: tuple

    def __post_init__(self):
        p, om, ga = (tuple(float(v) for v in x) for x in (self.p, self.omega, self.gamma))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "gamma", ga)
        if not (len(p) == len(om) == len(ga)) or len(p) < 1:
            raise ValueError("need M >= 1 terms with matching p/omega/gamma lengths")
        for name, vals in (("p", p), ("omega", om), ("gamma", ga)):
            if not all(v > 0 and math.isfinite(v) for v in vals):
                raise ValueError(f"all {name}_k must be finite and > 0, got {vals}")

    @property
    def count(self) -> int:
        return len(self.p)

    @classmethod
    def table_one(cls, gamma_reading: str = "x1e-4", m: int = 5) -> "LorentzianSet":
        """Heterojunction fit; ``gamma_reading`` picks the exponent of Gamma_k."""
        try:
            scale = GAMMA_READINGS[gamma_reading]
        except KeyError:
            raise ValueError(f"gamma_reading must be one of {sorted(GAMMA_READINGS)}") from None
        if not 1 <= m <= len(_TABLE_P):
            raise ValueError(f"m must be in 1..{len(_TABLE_P)}")
        return cls(
            p=_TABLE_P[:m],
            omega=_TABLE_OMEGA[:m],
            gamma=tuple(g * scale for g in _TABLE_GAMMA_MANTISSA[:m]),
        )


@dataclass(frozen=True)
class BathSpec:
    lorentzians: LorentzianSet
    temperature: float = 300.0
    n_matsubara: Union[int, str] = 4

    def __post_init__(self):
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be > 0 K, got {self.temperature}")
        n = self.n_matsubara
        if n != "auto" and not (isinstance(n, (int, np.integer)) and n >= 0):
            raise ValueError(f"n_matsubara must be a non-negative integer or 'auto', got {n!r}")

    @property
    def beta(self) -> float:
        return to_atomic_units(self.temperature, "kelvin_to_beta")


@dataclass(frozen=True)
class CorrelationExpansion:
    """``C(t) = sum_k alpha_k exp(i zeta_k t)``, ``C*(t) = sum_k alpha_tilde_k exp(i zeta_k t)``."""

    alpha: np.ndarray
    alpha_tilde: np.ndarray
    zeta: np.ndarray
    n_matsubara: int = 0

    def __post_init__(self):
        for name in ("alpha", "alpha_tilde", "zeta"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.alpha.shape == self.alpha_tilde.shape == self.zeta.shape):
            raise ValueError("alpha, alpha_tilde and zeta must have equal length")
        if np.any(self.zeta.imag <= 0):
            raise ValueError("every zeta_k needs Im(zeta_k) > 0")

    @property
    def count(self) -> int:
        return self.zeta.size

    def __call__(self, t):
        """C(t) on scalar or array ``t`` (a.u.)."""
        t = np.asarray(t, dtype=float)
        return np.exp(1j * t[..., None] * self.zeta) @ self.alpha

    def conjugate(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * t[..., None] * self.zeta) @ self.alpha_tilde

    def scaled(self, factor: float) -> "CorrelationExpansion":
        """Same exponents, coupling strength multiplied by ``factor``."""
        return CorrelationExpansion(self.alpha * factor, self.alpha_tilde * factor,
                                    self.zeta, self.n_matsubara)


def spectral_density(omega, lorentzians: LorentzianSet):
    w = np.asarray(omega)
    out = np.zeros(np.shape(w), dtype=np.result_type(w, float))
    for p, om, ga in zip(lorentzians.p, lorentzians.omega, lorentzians.gamma):
        out = out + w * p / (((w - om) ** 2 + ga**2) * ((w + om) ** 2 + ga**2))
    return out if out.ndim else out.item()


def spectral_peak(lorentzians: LorentzianSet, w_max: float = 0.03, n: int = 300001) -> float:
    """Location of the maximum of J on the grid (0, w_max]."""
    w = np.linspace(0.0, w_max, n)[1:]
    return float(w[np.argmax(spectral_density(w, lorentzians))])


def _j_slope_at_zero(lorentzians: LorentzianSet) -> float:
    return sum(p / (om**2 + ga**2) ** 2
               for p, om, ga in zip(lorentzians.p, lorentzians.omega, lorentzians.gamma))


def _lorentzian_terms(lorentzians: LorentzianSet, beta: float):
    alphas, zetas = [], []
    for p, om, ga in zip(lorentzians.p, lorentzians.omega, lorentzians.gamma):
        roots = (om + 1j * ga, om - 1j * ga, -om + 1j * ga, -om - 1j * ga)
        for z in (om - 1j * ga, -om - 1j * ga):
            denom = np.prod([z - r for r in roots if r != z])
            residue = p * z / denom
            bose = 1.0 / (-np.expm1(-beta * z))
            # clockwise contour: (1/pi) * (-2 pi i) * Res
            alphas.append(-2j * residue * bose)
            zetas.append(-z)
    return alphas, zetas


def _matsubara_terms(lorentzians: LorentzianSet, beta: float, n: int):
    alphas, zetas = [], []
    for j in range(1, n + 1):
        nu = 2.0 * math.pi * j / beta
        for ga in lorentzians.gamma:
            if abs(nu - ga) < POLE_COLLISION_TOL:
                raise PoleCollisionError(
                    f"Matsubara frequency nu_{j}={nu:.15e} collides with Gamma={ga:.15e}"
                )
        # residue of the Bose factor at -i nu is 1/beta
        alphas.append(-2j * spectral_density(-1j * nu, lorentzians) / beta)
        zetas.append(1j * nu)
    return alphas, zetas


def expansion_with(spec: BathSpec, n_matsubara: int) -> CorrelationExpansion:
    """Residue expansion with an explicit Matsubara count (K = 2M + n)."""
    beta = spec.beta
    la, lz = _lorentzian_terms(spec.lorentzians, beta)
    ma, mz = _matsubara_terms(spec.lorentzians, beta, n_matsubara)
    alpha = np.array(la + ma, dtype=complex)
    m = spec.lorentzians.count
    alpha_tilde = np.empty_like(alpha)
    for k in range(m):
        # the two Lorentzian poles of term k are each other's conjugate partner
        a, b = 2 * k, 2 * k + 1
        alpha_tilde[a] = np.conj(alpha[b])
        alpha_tilde[b] = np.conj(alpha[a])
    alpha_tilde[2 * m:] = np.conj(alpha[2 * m:])
    return CorrelationExpansion(alpha, alpha_tilde, np.array(lz + mz), n_matsubara)


def decompose_correlation(spec: BathSpec, t_max_fs: float = 100.0, n_grid: int = 201,
                          tol: float = AUTO_TOLERANCE) -> CorrelationExpansion:
    """Exponential decomposition of C(t).

    With ``spec.n_matsubara == "auto"`` the Matsubara count is raised until the
    expansion matches :func:`correlation_numeric` on ``[0, t_max_fs]`` to
    ``tol`` relative to ``|C(0)|``.
    """
    if spec.n_matsubara != "auto":
        return expansion_with(spec, int(spec.n_matsubara))
    t = fs_to_au(np.linspace(0.0, t_max_fs, n_grid))
    reference = correlation_numeric(t, spec)
    scale = abs(reference[0])
    for n in range(AUTO_MAX_MATSUBARA + 1):
        exp = expansion_with(spec, n)
        if np.max(np.abs(exp(t) - reference)) / scale <= tol:
            return exp
    raise RuntimeError(f"auto Matsubara did not reach {tol} within {AUTO_MAX_MATSUBARA} terms")


def expansion_error(expansion: CorrelationExpansion, spec: BathSpec, t_au) -> float:
    """max_t |C_expansion - C_numeric| / |C_numeric(0)| over ``t_au``."""
    t_au = np.asarray(t_au, dtype=float)
    ref = correlation_numeric(t_au, spec)
    c0 = correlation_numeric(0.0, spec)
    return float(np.max(np.abs(expansion(t_au) - ref)) / abs(c0))


class _Quadrature:
    """Folded-integrand quadrature of C(t) for one bath."""

    def __init__(self, spec: BathSpec, tail_rtol: float = 1e-7, epsrel: float = 1e-10):
        self.spec = spec
        self.beta = spec.beta
        self.lor = spec.lorentzians
        self.epsrel = epsrel
        self._zero_limit = 2.0 / self.beta * _j_slope_at_zero(self.lor)
        self._terms = [(p, o * o, g * g, o) for p, o, g in zip(self.lor.p, self.lor.omega, self.lor.gamma)]
        edge = max(o + g for o, g in zip(self.lor.omega, self.lor.gamma))
        f = self.even_weight
        # pi * C(0), used as the accuracy scale
        self._c0 = quad(f, 0.0, 50 * edge, limit=500)[0] + quad(f, 50 * edge, np.inf, limit=500)[0]
        # tail of J ~ sum(p)/w^3 integrates to sum(p)/(2 W^2)
        w_tail = math.sqrt(sum(self.lor.p) / (2.0 * tail_rtol * self._c0))
        self.w_max = max(50.0 * edge, w_tail)
        marks = {0.0, 4 * edge, 20 * edge, self.w_max}
        for o, g in zip(self.lor.omega, self.lor.gamma):
            marks.update((max(o - 5 * g, 0.0), o + 5 * g))
        self.breaks = sorted(b for b in marks if b <= self.w_max)

    def _j(self, w):
        total = 0.0
        for p, om2, ga2, om in self._terms:
            total += p / (((w - om) ** 2 + ga2) * ((w + om) ** 2 + ga2))
        return w * total

    def even_weight(self, w):
        """J(w) coth(beta w / 2), with its finite limit at w = 0."""
        if w == 0.0:
            return self._zero_limit
        return self._j(w) / math.tanh(0.5 * self.beta * w)

    def _integrate(self, f, t, kind):
        total, err = 0.0, 0.0
        for a, b in zip(self.breaks[:-1], self.breaks[1:]):
            if t == 0.0:
                if kind == "sin":
                    continue
                val, e = quad(f, a, b, limit=500, epsabs=0.0, epsrel=self.epsrel)
            else:
                val, e = quad(f, a, b, weight=kind, wvar=t, limit=500,
                              epsabs=0.0, epsrel=self.epsrel)
            total += val
            err += e
        return total, err

    def _re_part(self, t):
        val, err = self._integrate(self.even_weight, abs(t), "cos")
        self._check(err)
        return val / math.pi

    def _im_part(self, t):
        val, err = self._integrate(self._j, abs(t), "sin")
        self._check(err)
        return -math.copysign(1.0, t) * val / math.pi

    def _check(self, err):
        if err > 1e-9 * self._c0:
            raise QuadratureError("correlation quadrature did not converge", err)

    def __call__(self, t):
        return complex(self._re_part(t), self._im_part(t))


def correlation_numeric(t, spec: BathSpec):
    """C(t) by adaptive quadrature (independent of the residue expansion).

    Accepts scalar or array ``t`` in a.u.; negative times are allowed and give
    ``conj(C(|t|))``.
    """
    q = _Quadrature(spec)
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([q(float(x)) for x in arr])
    return out if np.ndim(t) else complex(out[0])


def correlation_decay_ratio(spec: BathSpec, t_fs: float) -> float:
    """``|C(t)| / |C(0)|`` from quadrature."""
    c = correlation_numeric(np.array([0.0, float(fs_to_au(t_fs))]), spec)
    return float(abs(c[1]) / abs(c[0]))


def dephasing_exponent(t, spec: BathSpec, split: float = 2e-3):
    """Phi(t) = 4 int_0^t (t - s) Re C(s) ds, by quadrature over frequency.

    Equals (4/pi) int_0^inf J(w) coth(beta w/2) (1 - cos wt) / w^2 dw. Below
    ``split`` the factor is kept as 2 sin^2(wt/2)/w^2 so nothing cancels near
    w = 0; above it the cosine part goes through a weighted rule.
    """
    q = _Quadrature(spec)
    f = q.even_weight
    breaks = [split] + [b for b in q.breaks if b > split]

    def one(t):
        t = abs(t)
        if t == 0.0:
            return 0.0
        low = quad(lambda w: f(w) * 2.0 * math.sin(0.5 * w * t) ** 2 / (w * w) if w > 0 else 0.5 * f(0.0) * t * t,
                   0.0, split, limit=2000, epsabs=0.0, epsrel=1e-12)[0]
        g = lambda w: f(w) / (w * w)
        flat = osc = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            flat += quad(g, a, b, limit=500, epsabs=0.0, epsrel=1e-12)[0]
            osc += quad(g, a, b, weight="cos", wvar=t, limit=500, epsabs=1e-13, epsrel=1e-12)[0]
        return 4.0 / math.pi * (low + flat - osc)

    arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([one(float(x)) for x in arr])
    return out if np.ndim(t) else float(out[0])


def dephasing_exponent_expansion(t, expansion: CorrelationExpansion):
    """Phi(t) from the exponential expansion (closed-form double integral)."""
    t = np.asarray(t, dtype=float)
    iz = 1j * expansion.zeta
    terms = expansion.alpha * (np.exp(iz * t[..., None]) - 1.0 - iz * t[..., None]) / iz ** 2
    return 4.0 * terms.sum(axis=-1).real
