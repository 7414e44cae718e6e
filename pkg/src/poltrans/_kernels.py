"""Hot loops with numba and pure-numpy implementations.

Each public name here is bound at import time to one of the two
versions according to :mod:`poltrans._accel`.  Both versions are kept
importable (``*_numba`` / ``*_numpy``) for testing and benchmarking.
"""
from __future__ import annotations

import numpy as np

from ._accel import maybe_njit, prange, select


# ----------------------------------------------------------------------
# forward coupling block entries for paired directions
def pair_gamma_numpy(ax, ay, bx, by):
    """Entries (g11, g12, g21, g22) of the forward block for pairs (a_i, b_i)."""
    na = np.hypot(ax, ay)
    nb = np.hypot(bx, by)
    beta_a = np.sqrt(1.0 - na * na)
    beta_b = np.sqrt(1.0 - nb * nb)
    root = np.sqrt(beta_a * beta_b)
    ratio = np.sqrt(beta_b / beta_a)
    inv = 1.0 / (na * nb)
    c = (ax * bx + ay * by) * inv
    s = (ax * by - ay * bx) * inv
    g11 = na * nb / root + c * root
    g12 = -s / ratio
    g21 = s * ratio
    g22 = c / root
    return g11, g12, g21, g22


@maybe_njit(parallel=False, fastmath=False)
def pair_gamma_numba(ax, ay, bx, by):
    n = ax.size
    g11 = np.empty(n)
    g12 = np.empty(n)
    g21 = np.empty(n)
    g22 = np.empty(n)
    for i in range(n):
        na = np.hypot(ax[i], ay[i])
        nb = np.hypot(bx[i], by[i])
        beta_a = np.sqrt(1.0 - na * na)
        beta_b = np.sqrt(1.0 - nb * nb)
        root = np.sqrt(beta_a * beta_b)
        ratio = np.sqrt(beta_b / beta_a)
        inv = 1.0 / (na * nb)
        c = (ax[i] * bx[i] + ay[i] * by[i]) * inv
        s = (ax[i] * by[i] - ay[i] * bx[i]) * inv
        g11[i] = na * nb / root + c * root
        g12[i] = -s / ratio
        g21[i] = s * ratio
        g22[i] = c / root
    return g11, g12, g21, g22


def _pair_gamma_numba_entry(ax, ay, bx, by):
    shape = np.shape(ax)
    args = [np.ascontiguousarray(np.broadcast_to(v, np.broadcast_shapes(
        np.shape(ax), np.shape(ay), np.shape(bx), np.shape(by))), dtype=float).ravel()
        for v in (ax, ay, bx, by)]
    shape = np.broadcast_shapes(shape, np.shape(ay), np.shape(bx), np.shape(by))
    out = pair_gamma_numba(*args)
    return tuple(o.reshape(shape) for o in out)


pair_gamma = select(_pair_gamma_numba_entry, pair_gamma_numpy)


# ----------------------------------------------------------------------
# gain term of the transport operator over a sparse pair list (CSR)
def apply_gain_numpy(indptr, indices, weight, g11, g12, g21, g22, p11, p22, p12):
    """Sum over neighbours j of weight_ij * G_ij P_j G_ij^T.

    ``p11`` and ``p22`` are real, ``p12`` complex; returns (q11, q22, q12).
    """
    a11 = p11[indices]
    a22 = p22[indices]
    a12 = p12[indices]
    x = a12.real
    y = a12.imag
    t11 = weight * (g11 * g11 * a11 + 2.0 * g11 * g12 * x + g12 * g12 * a22)
    t22 = weight * (g21 * g21 * a11 + 2.0 * g21 * g22 * x + g22 * g22 * a22)
    tre = weight * (g11 * g21 * a11 + (g11 * g22 + g12 * g21) * x + g12 * g22 * a22)
    tim = weight * ((g11 * g22 - g12 * g21) * y)
    n = indptr.size - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    q11 = np.bincount(rows, t11, minlength=n)
    q22 = np.bincount(rows, t22, minlength=n)
    q12 = np.bincount(rows, tre, minlength=n) + 1j * np.bincount(rows, tim, minlength=n)
    return q11, q22, q12


@maybe_njit(parallel=True)
def apply_gain_numba(indptr, indices, weight, g11, g12, g21, g22, p11, p22, p12):
    n = indptr.size - 1
    q11 = np.zeros(n)
    q22 = np.zeros(n)
    q12 = np.zeros(n, dtype=np.complex128)
    for i in prange(n):
        s11 = 0.0
        s22 = 0.0
        sre = 0.0
        sim = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = weight[p]
            a = g11[p]
            b = g12[p]
            c = g21[p]
            d = g22[p]
            x = p12[j].real
            y = p12[j].imag
            s11 += w * (a * a * p11[j] + 2.0 * a * b * x + b * b * p22[j])
            s22 += w * (c * c * p11[j] + 2.0 * c * d * x + d * d * p22[j])
            sre += w * (a * c * p11[j] + (a * d + b * c) * x + b * d * p22[j])
            sim += w * ((a * d - b * c) * y)
        q11[i] = s11
        q22[i] = s22
        q12[i] = sre + 1j * sim
    return q11, q22, q12


apply_gain = select(apply_gain_numba, apply_gain_numpy)
