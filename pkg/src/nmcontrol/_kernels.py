"""Compiled inner loops for the hierarchy right-hand side."""

import os

import numba
import numpy as np
from numba import prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old; workqueue is always available
    numba.config.THREADING_LAYER = "workqueue"


@numba.njit(parallel=True, cache=True)
def heom_rhs_kernel(rho, h, diag, p_ptr, p_idx, p_w, m_ptr, m_idx, m_a, m_at, out):
    """Fill ``out`` with d(rho)/dt for every ADO.

    rho, out : (N, B, 2, 2) complex; B independent initial conditions share
    the hierarchy. Row i reads rho[i] and its neighbours and writes out[i]
    only, so the ADO loop partitions across threads without locking.
    Coupling operator is sigma_z.
    """
    n_ado = rho.shape[0]
    n_batch = rho.shape[1]
    h00 = h[0, 0]
    h01 = h[0, 1]
    h10 = h[1, 0]
    h11 = h[1, 1]
    for i in prange(n_ado):
        d = diag[i]
        for b in range(n_batch):
            r00 = rho[i, b, 0, 0]
            r01 = rho[i, b, 0, 1]
            r10 = rho[i, b, 1, 0]
            r11 = rho[i, b, 1, 1]
            c00 = h01 * r10 - r01 * h10
            c01 = h00 * r01 + h01 * r11 - r00 * h01 - r01 * h11
            c10 = h10 * r00 + h11 * r10 - r10 * h00 - r11 * h10
            c11 = h10 * r01 - r10 * h01
            out[i, b, 0, 0] = -1j * c00 + d * r00
            out[i, b, 0, 1] = -1j * c01 + d * r01
            out[i, b, 1, 0] = -1j * c10 + d * r10
            out[i, b, 1, 1] = -1j * c11 + d * r11
        # -i [sz, sum_k w rho_{n+k}] only touches off-diagonals
        for q in range(p_ptr[i], p_ptr[i + 1]):
            j = p_idx[q]
            w = p_w[q]
            for b in range(n_batch):
                out[i, b, 0, 1] += -2j * w * rho[j, b, 0, 1]
                out[i, b, 1, 0] += 2j * w * rho[j, b, 1, 0]
        # -i (a sz rho_{n-k} - at rho_{n-k} sz)
        for q in range(m_ptr[i], m_ptr[i + 1]):
            j = m_idx[q]
            a = m_a[q]
            at = m_at[q]
            for b in range(n_batch):
                x00 = rho[j, b, 0, 0]
                x01 = rho[j, b, 0, 1]
                x10 = rho[j, b, 1, 0]
                x11 = rho[j, b, 1, 1]
                out[i, b, 0, 0] += -1j * (a - at) * x00
                out[i, b, 0, 1] += -1j * (a + at) * x01
                out[i, b, 1, 0] += 1j * (a + at) * x10
                out[i, b, 1, 1] += 1j * (a - at) * x11


@numba.njit(parallel=True, cache=True)
def axpy(y, a, x, out):
    """out = y + a*x, elementwise on flat views."""
    for i in prange(y.size):
        out[i] = y[i] + a * x[i]


@numba.njit(parallel=True, cache=True)
def rk4_combine(y, h, k1, k2, k3, k4):
    """y += h/6 (k1 + 2 k2 + 2 k3 + k4) in place, flat views."""
    c = h / 6.0
    for i in prange(y.size):
        y[i] += c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def warmup():
    """Compile the kernels on a tiny problem."""
    rho = np.zeros((2, 1, 2, 2), dtype=np.complex128)
    out = np.empty_like(rho)
    h = np.zeros((2, 2), dtype=np.complex128)
    ptr = np.zeros(3, dtype=np.int64)
    idx = np.zeros(0, dtype=np.int64)
    w = np.zeros(0, dtype=np.complex128)
    heom_rhs_kernel(rho, h, np.zeros(2, np.complex128), ptr, idx, w, ptr, idx, w, w, out)
    flat = rho.reshape(-1)
    axpy(flat, 0.5, flat, out.reshape(-1))
    rk4_combine(flat, 0.5, flat, flat, flat, flat)
