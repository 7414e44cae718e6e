"""Wave-vector kinematics and the TM/TE coupling matrices.

All functions accept transverse slowness vectors ``kappa`` with a trailing
axis of length 2 and broadcast over leading axes.  Scalars come back as
numpy scalars, arrays keep their leading shape.
"""
from __future__ import annotations

import numpy as np


class DomainError(ValueError):
    """Raised when a wave vector lies outside the admissible domain."""


def _as_kappa(kappa) -> np.ndarray:
    arr = np.asarray(kappa, dtype=float)
    if arr.shape[-1:] != (2,):
        raise DomainError(f"expected a trailing axis of length 2, got shape {arr.shape}")
    return arr


def _norm(kappa: np.ndarray) -> np.ndarray:
    return np.hypot(kappa[..., 0], kappa[..., 1])


def _check_propagating(norm: np.ndarray) -> None:
    if np.any(~np.isfinite(norm)) or np.any(norm >= 1.0):
        raise DomainError("|kappa| must be < 1 (propagating waves only)")


def _check_nonzero(norm: np.ndarray) -> None:
    if np.any(norm <= 0.0):
        raise DomainError("|kappa| must be > 0 (direction undefined at the origin)")


def perp(kappa) -> np.ndarray:
    """Rotate by +90 degrees: (k1, k2) -> (-k2, k1)."""
    kappa = np.asarray(kappa, dtype=float)
    return np.stack([-kappa[..., 1], kappa[..., 0]], axis=-1)


def beta(kappa):
    """Longitudinal slowness sqrt(1 - |kappa|^2)."""
    kappa = _as_kappa(kappa)
    norm = _norm(kappa)
    _check_propagating(norm)
    return np.sqrt(1.0 - norm * norm)


def grad_beta(kappa):
    """Gradient of :func:`beta`, equal to ``-kappa / beta``."""
    kappa = _as_kappa(kappa)
    return -kappa / beta(kappa)[..., None]


def frame_vectors(kappa):
    """TM and TE unit vectors and the unit propagation direction.

    Returns
    -------
    u, u_perp, kvec : ndarray, shape (..., 3)
        ``u = (beta * khat, -|kappa|)``, ``u_perp = (khat_perp, 0)`` and
        ``kvec = (kappa, beta)``.  The triple is orthonormal with
        ``u x u_perp = kvec``.
    """
    kappa = _as_kappa(kappa)
    norm = _norm(kappa)
    _check_propagating(norm)
    _check_nonzero(norm)
    b = np.sqrt(1.0 - norm * norm)
    khat = kappa / norm[..., None]
    kperp = perp(khat)
    u = np.concatenate([b[..., None] * khat, -norm[..., None]], axis=-1)
    u_perp = np.concatenate([kperp, np.zeros_like(norm)[..., None]], axis=-1)
    kvec = np.concatenate([kappa, b[..., None]], axis=-1)
    return u, u_perp, kvec


def m_matrix(kappa) -> np.ndarray:
    """The 4x4 matrix whose eigenvectors define the mode decomposition."""
    kappa = _as_kappa(kappa)
    eye = np.eye(2)
    kp = perp(kappa)
    upper = eye - kappa[..., :, None] * kappa[..., None, :]
    lower = eye - kp[..., :, None] * kp[..., None, :]
    out = np.zeros(kappa.shape[:-1] + (4, 4))
    out[..., :2, 2:] = upper
    out[..., 2:, :2] = lower
    return out


def eigensystem(kappa):
    """Eigenvectors of :func:`m_matrix` for eigenvalues +beta and -beta.

    Returns
    -------
    psi_plus, psi_plus_perp, psi_minus, psi_minus_perp : ndarray (..., 4)
    beta : ndarray
    """
    kappa = _as_kappa(kappa)
    norm = _norm(kappa)
    _check_propagating(norm)
    _check_nonzero(norm)
    b = np.sqrt(1.0 - norm * norm)[..., None]
    khat = kappa / norm[..., None]
    kperp = perp(khat)
    sb = np.sqrt(b)
    psi_plus = np.concatenate([sb * khat, khat / sb], axis=-1)
    psi_minus = np.concatenate([-sb * khat, khat / sb], axis=-1)
    psi_plus_perp = np.concatenate([kperp / sb, sb * kperp], axis=-1)
    psi_minus_perp = np.concatenate([kperp / sb, -sb * kperp], axis=-1)
    return psi_plus, psi_plus_perp, psi_minus, psi_minus_perp, b[..., 0]


def coupling_factors(kappa, kappa_prime):
    """Building blocks shared by all coupling blocks.

    Returns the tuple ``(radial, cos_term, sin_term, ratio)`` with
    ``radial = |k||k'| / sqrt(b b')``, ``cos_term = khat . khat'``,
    ``sin_term = khat_perp . khat'`` and ``ratio = sqrt(b' / b)``; also the
    products ``sqrt(b b')``.  No domain checks are made here.
    """
    k1, k2 = kappa[..., 0], kappa[..., 1]
    p1, p2 = kappa_prime[..., 0], kappa_prime[..., 1]
    n = np.hypot(k1, k2)
    n_p = np.hypot(p1, p2)
    b = np.sqrt(1.0 - n * n)
    b_p = np.sqrt(1.0 - n_p * n_p)
    root = np.sqrt(b * b_p)
    inv = 1.0 / (n * n_p)
    cos_term = (k1 * p1 + k2 * p2) * inv
    sin_term = (k1 * p2 - k2 * p1) * inv
    return n * n_p / root, cos_term, sin_term, root, np.sqrt(b_p / b)


def _gamma_from_factors(radial, cos_term, sin_term, root, ratio, kind="aa"):
    # sin_term = khat_perp . khat' ; khat . khat'_perp = -sin_term
    g = np.empty(np.shape(radial) + (2, 2))
    if kind == "aa":
        g[..., 0, 0] = radial + cos_term * root
        g[..., 1, 0] = sin_term * ratio
        g[..., 1, 1] = cos_term / root
    elif kind == "bb":
        g[..., 0, 0] = -radial - cos_term * root
        g[..., 1, 0] = sin_term * ratio
        g[..., 1, 1] = -cos_term / root
    elif kind == "ab":
        g[..., 0, 0] = radial - cos_term * root
        g[..., 1, 0] = -sin_term * ratio
        g[..., 1, 1] = cos_term / root
    elif kind == "ba":
        g[..., 0, 0] = -radial + cos_term * root
        g[..., 1, 0] = -sin_term * ratio
        g[..., 1, 1] = -cos_term / root
    else:
        raise ValueError(f"unknown coupling block {kind!r}")
    g[..., 0, 1] = -sin_term / ratio
    return g


def gamma_block(kind, kappa, kappa_prime) -> np.ndarray:
    """Coupling block between directions ``kappa`` and ``kappa_prime``.

    Parameters
    ----------
    kind : {"aa", "bb", "ab", "ba"}
        Which pair of forward (a) / backward (b) amplitudes is coupled.
        Only ``"aa"`` enters the forward-scattering dynamics.
    kappa, kappa_prime : array_like (..., 2)
        Nonzero propagating wave vectors.

    Returns
    -------
    ndarray (..., 2, 2)
        Rows and columns are ordered (TM, TE).
    """
    kappa = _as_kappa(kappa)
    kappa_prime = _as_kappa(kappa_prime)
    for arr in (kappa, kappa_prime):
        norm = _norm(arr)
        _check_propagating(norm)
        _check_nonzero(norm)
    kappa, kappa_prime = np.broadcast_arrays(kappa, kappa_prime)
    return _gamma_from_factors(*coupling_factors(kappa, kappa_prime), kind=kind)


def gamma_aa_unchecked(kappa, kappa_prime) -> np.ndarray:
    """Forward coupling block without domain checks (hot paths)."""
    return _gamma_from_factors(*coupling_factors(kappa, kappa_prime), kind="aa")


def gamma_hf(kappa, kappa_prime) -> np.ndarray:
    """High-frequency limit of the forward coupling block.

    A plane rotation by the angle from ``kappa_prime`` to ``kappa``:
    ``[[c, -s], [s, c]]`` with ``c = khat . khat'`` and
    ``s = khat_perp . khat'``.  Magnitudes are unconstrained.
    """
    kappa = _as_kappa(kappa)
    kappa_prime = _as_kappa(kappa_prime)
    n = _norm(kappa)
    n_p = _norm(kappa_prime)
    _check_nonzero(n)
    _check_nonzero(n_p)
    inv = 1.0 / (n * n_p)
    c = (kappa[..., 0] * kappa_prime[..., 0] + kappa[..., 1] * kappa_prime[..., 1]) * inv
    s = (kappa[..., 0] * kappa_prime[..., 1] - kappa[..., 1] * kappa_prime[..., 0]) * inv
    g = np.empty(np.shape(c) + (2, 2))
    g[..., 0, 0] = c
    g[..., 0, 1] = -s
    g[..., 1, 0] = s
    g[..., 1, 1] = c
    return g
