"""Cross-checks of the kernel against the radiative-transfer formulation.

The radiative-transfer picture works with 3D wave vectors K on the sphere
|K| = k and a polarization basis (z0, z1, z2) attached to each of them.
Two independent routes to the real part of the scattering kernel are
provided here:

* :func:`sigma_total` integrates the cross section over the transverse
  disk using the 3D basis overlap matrix T instead of the coupling block.
* :func:`re_q_sphere` integrates over the unit sphere in coordinates
  rotated so that K sits at the north pole.  This needs an isotropic
  power spectrum.

Both should reproduce ``kernel.re_q_from_psd`` (with the speed factor set
to 1 in scaled units: Sigma * I = -2 beta Re Q).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import DomainError
from .kernel import IsotropyError, QuadSpec, _window_length, _window_rule
from .medium import SpectralMedium


class NonScalarError(ValueError):
    """Raised when a matrix expected to be a multiple of I is not."""


@dataclass(frozen=True)
class RTBasis:
    """Orthonormal polarization basis attached to a 3D wave vector."""

    z0: np.ndarray
    z1: np.ndarray
    z2: np.ndarray


def _basis_arrays(K: np.ndarray):
    """Vectorized basis for K of shape (..., 3); no domain checks."""
    norm = np.linalg.norm(K, axis=-1)
    kt = np.hypot(K[..., 0], K[..., 1])
    c = K[..., 0] / kt
    s = K[..., 1] / kt
    z0 = K / norm[..., None]
    z1 = np.stack([K[..., 2] * c, K[..., 2] * s, -kt], axis=-1) / norm[..., None]
    z2 = np.stack([-s, c, np.zeros_like(c)], axis=-1)
    return z0, z1, z2


def rt_basis(K) -> RTBasis:
    """Polarization basis for the 3D wave vector ``K``.

    ``z0 = K/|K|``, ``z1 = (K_z khat, -|K_t|)/|K|`` and
    ``z2 = (khat_perp, 0)``, where ``K_t`` is the transverse part.

    Raises
    ------
    DomainError
        If the transverse part of ``K`` vanishes.
    """
    K = np.asarray(K, dtype=float)
    if K.shape != (3,):
        raise DomainError("K must be a 3-vector")
    if math.hypot(K[0], K[1]) <= 0.0:
        raise DomainError("transverse part of K is zero; azimuthal direction undefined")
    z0, z1, z2 = _basis_arrays(K)
    return RTBasis(z0, z1, z2)


def _overlap(K, Kp) -> np.ndarray:
    _, a1, a2 = _basis_arrays(K)
    _, b1, b2 = _basis_arrays(Kp)
    t = np.empty(np.broadcast_shapes(K.shape, Kp.shape)[:-1] + (2, 2))
    t[..., 0, 0] = np.sum(a1 * b1, axis=-1)
    t[..., 0, 1] = np.sum(a1 * b2, axis=-1)
    t[..., 1, 0] = np.sum(a2 * b1, axis=-1)
    t[..., 1, 1] = np.sum(a2 * b2, axis=-1)
    return t


def t_matrix(K, K_prime, k: float | None = None, rtol: float = 1e-8) -> np.ndarray:
    """Overlap matrix ``T_lq = z_l(K) . z_q(K')`` for l, q in {1, 2}.

    Parameters
    ----------
    K, K_prime : array_like (3,)
        Wave vectors on a common sphere.
    k : float, optional
        Sphere radius; defaults to ``|K|``.
    rtol : float
        Allowed relative deviation from the sphere.
    """
    K = np.asarray(K, dtype=float)
    Kp = np.asarray(K_prime, dtype=float)
    radius = float(np.linalg.norm(K)) if k is None else float(k)
    for vec in (K, Kp):
        if abs(np.linalg.norm(vec) - radius) > rtol * radius:
            raise DomainError("wave vectors must lie on the sphere |K| = k")
        if math.hypot(vec[0], vec[1]) <= 0.0:
            raise DomainError("transverse part of K is zero; azimuthal direction undefined")
    return _overlap(K, Kp)


def lift(kappa, k: float = 2.0 * math.pi) -> np.ndarray:
    """Map transverse slowness to the 3D wave vector ``k (kappa, beta)``."""
    kappa = np.asarray(kappa, dtype=float)
    b = np.sqrt(1.0 - np.sum(kappa * kappa, axis=-1))
    return k * np.concatenate([kappa, b[..., None]], axis=-1)


def _assert_scalar(mat: np.ndarray, tol: float, what: str) -> None:
    diag = 0.5 * (mat[..., 0, 0] + mat[..., 1, 1])
    dev = np.max(np.abs(mat - diag[..., None, None] * np.eye(2)), axis=(-2, -1))
    rel = dev / np.abs(diag)
    if np.any(rel > tol):
        raise NonScalarError(f"{what} deviates from a multiple of I by {rel.max():.3e} (tol {tol:g})")


def sigma_matrix(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec()) -> np.ndarray:
    """Matrix-valued total cross section at each row of ``kappa``.

    Integrates ``PSD * T T^T / (beta beta')`` over the transverse disk with
    T built from the 3D polarization bases.  Returns shape (n, 2, 2).
    """
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    norms = np.hypot(kappa[:, 0], kappa[:, 1])
    if np.any(norms <= 0) or np.any(norms >= quad.kappa_max):
        raise DomainError("nodes must satisfy 0 < |kappa| < kappa_max")
    k = medium.k
    k_over_g = k / medium.gamma
    px, py, wts, rho = _window_rule(kappa, _window_length(medium, quad), quad)
    b = np.sqrt(1.0 - norms ** 2)
    b_p = np.sqrt(1.0 - (px * px + py * py))
    K = lift(kappa, k)[:, None, :]
    Kp = k * np.stack([px, py, b_p], axis=-1)
    t = _overlap(np.broadcast_to(K, Kp.shape), Kp)
    spec = medium.psd3_sq((k_over_g * rho) ** 2, k_over_g * (b[:, None] - b_p))
    weight = spec * wts / (b[:, None] * b_p)
    tt = np.einsum("nmij,nmkj->nmik", t, t)
    integral = np.einsum("nm,nmij->nij", weight, tt)
    pref = k ** 2 * medium.alpha ** 2 / (4.0 * medium.gamma ** 3) * k ** 2 / (2.0 * math.pi) ** 2
    return pref * b[:, None, None] * integral


def sigma_total(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec(),
                tol: float = 1e-6) -> np.ndarray:
    """Scalar total cross section at each row of ``kappa``.

    Raises
    ------
    NonScalarError
        If the integrated matrix is not within ``tol`` of a multiple of I.
    """
    mat = sigma_matrix(medium, kappa, quad)
    _assert_scalar(mat, tol, "total cross section")
    return 0.5 * (mat[:, 0, 0] + mat[:, 1, 1])


@dataclass(frozen=True)
class SphereQuad:
    """Product rule on a polar cap: Gauss-Legendre in cos(theta) x trapezoid."""

    n_polar: int = 64
    n_azimuth: int = 128
    kappa_max: float = 0.95
    window: float | None = None


def _rotation_rows(kappa: np.ndarray) -> np.ndarray:
    """Rows of the rotation sending k (kappa, beta) to the north pole."""
    n = np.hypot(kappa[:, 0], kappa[:, 1])
    st, ct = n, np.sqrt(1.0 - n * n)
    cp, sp = kappa[:, 0] / n, kappa[:, 1] / n
    u = np.empty((kappa.shape[0], 3, 3))
    u[:, 0] = np.stack([-sp, cp, np.zeros_like(n)], axis=-1)
    u[:, 1] = np.stack([ct * cp, ct * sp, -st], axis=-1)
    u[:, 2] = np.stack([st * cp, st * sp, ct], axis=-1)
    return u


def re_q_sphere(medium: SpectralMedium, kappa, quad: SphereQuad = SphereQuad()) -> np.ndarray:
    """Real part of Q from an integral over the unit sphere.

    In coordinates where the incident direction is the pole the overlap
    product reduces to ``[[1 - c2^2, -c1 c2], [-c1 c2, 1 - c1^2]]`` and the
    spectrum depends on ``c3`` only.  Directions outside the forward disk
    ``|kappa'| < kappa_max`` are dropped so the domain matches the disk
    quadrature.

    Raises
    ------
    IsotropyError
        If the medium's power spectrum is not a function of |q| only.
    """
    if not medium.is_isotropic:
        raise IsotropyError("the sphere route needs an isotropic power spectrum")
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    norms = np.hypot(kappa[:, 0], kappa[:, 1])
    if np.any(norms <= 0) or np.any(norms >= quad.kappa_max):
        raise DomainError("nodes must satisfy 0 < |kappa| < kappa_max")
    k, g = medium.k, medium.gamma
    window = quad.window if quad.window is not None else medium.spectral_radius()
    # |K - K'| = k sqrt(2 (1 - c3)) <= window * gamma
    cap = min(2.0, 0.5 * (window * g / k) ** 2)
    x, w = np.polynomial.legendre.leggauss(quad.n_polar)
    c3 = 1.0 - 0.5 * cap * (x + 1.0)
    w3 = 0.5 * cap * w
    phi = 2.0 * math.pi * np.arange(quad.n_azimuth) / quad.n_azimuth
    s3 = np.sqrt(np.maximum(0.0, 1.0 - c3 * c3))
    c1 = (s3[:, None] * np.cos(phi)[None, :]).ravel()
    c2 = (s3[:, None] * np.sin(phi)[None, :]).ravel()
    c3f = np.repeat(c3, quad.n_azimuth)
    wts = np.repeat(w3, quad.n_azimuth) * (2.0 * math.pi / quad.n_azimuth)
    spec = medium.psd3_sq(2.0 * (k / g) ** 2 * (1.0 - c3f), 0.0)
    ent = np.stack([1.0 - c2 * c2, -c1 * c2, 1.0 - c1 * c1], axis=-1)

    rows = _rotation_rows(kappa)
    local = np.stack([c1, c2, c3f], axis=-1)
    out = np.empty((kappa.shape[0], 2, 2))
    for i in range(kappa.shape[0]):
        direction = local @ rows[i]  # U^T applied to each local vector
        t2 = direction[:, 0] ** 2 + direction[:, 1] ** 2
        keep = (direction[:, 2] > 0) & (t2 < quad.kappa_max ** 2)
        acc = np.sum((spec * wts * keep)[:, None] * ent, axis=0)
        out[i] = [[acc[0], acc[1]], [acc[1], acc[2]]]
    b = np.sqrt(1.0 - norms ** 2)
    pref = -k ** 4 * medium.alpha ** 2 / (8.0 * (2.0 * math.pi) ** 2 * g ** 3 * b)
    return pref[:, None, None] * out


def isotropic_leading_mfp(medium: SpectralMedium, kappa) -> np.ndarray:
    """Leading small-gamma mean free path for an isotropic medium.

    ``(gamma / k^2) * 4 beta / (alpha^2 * int_0^inf R_iso)``.
    """
    if not medium.is_isotropic:
        raise IsotropyError("formula holds for isotropic media only")
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    b = np.sqrt(1.0 - np.sum(kappa * kappa, axis=1))
    half_line = 0.5 * float(medium.longitudinal_integral(0.0))
    return medium.gamma / medium.k ** 2 * 4.0 * b / (medium.alpha ** 2 * half_line)
