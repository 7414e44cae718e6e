"""Scattering kernel Q(kappa), loss matrix S and mean free paths.

Q(kappa) is a 2x2 complex symmetric matrix.  Its real part controls the
exponential decay of the coherent (mean) mode amplitudes, its imaginary
part a dispersive phase.  The angular-spectral integral over kappa' is
concentrated in a ball of radius ~gamma/k around kappa, so it is
evaluated in local polar coordinates centred at kappa: each ray from
kappa is integrated with Gauss-Legendre nodes up to the window edge or
the disk boundary |kappa'| = kappa_max, whichever comes first, and the
rays are spread uniformly in angle (trapezoid rule).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import pair_gamma
from .grid import DirectionGrid
from .medium import SpectralMedium


class QuadratureError(RuntimeError):
    """Raised when two quadrature resolutions disagree beyond tolerance."""


class IsotropyError(ValueError):
    """Raised when a diagonal-Q formula is applied to a coupled kernel."""


@dataclass(frozen=True)
class QuadSpec:
    """Resolution of the local window quadrature.

    Attributes
    ----------
    n_radial : int
        Gauss-Legendre nodes along each ray.
    n_angular : int
        Number of rays (trapezoid rule in angle).
    kappa_max : float
        Radius of the integration disk.
    window : float or None
        Ray length in units of gamma/k.  ``None`` uses the medium's
        spectral radius (power spectrum below 1e-20 of its peak).
    check_tol : float or None
        If set, the integral is recomputed at half resolution and a
        :class:`QuadratureError` is raised when the two differ by more
        than this relative amount.
    """

    n_radial: int = 96
    n_angular: int = 256
    kappa_max: float = 0.95
    window: float | None = None
    check_tol: float | None = None

    def halved(self) -> "QuadSpec":
        return QuadSpec(max(self.n_radial // 2, 4), max(self.n_angular // 2, 8),
                        self.kappa_max, self.window, None)


def _window_length(medium: SpectralMedium, quad: QuadSpec) -> float:
    window = quad.window if quad.window is not None else medium.spectral_radius()
    return window * medium.gamma / medium.k


def _window_rule(kappa: np.ndarray, length: float, quad: QuadSpec):
    """Points and weights of the local polar rule around each row of ``kappa``.

    Returns arrays of shape (n_nodes, n_angular * n_radial).
    """
    x, w = np.polynomial.legendre.leggauss(quad.n_radial)
    base = np.arctan2(kappa[:, 1], kappa[:, 0])
    phi = base[:, None] + 2.0 * math.pi * np.arange(quad.n_angular)[None, :] / quad.n_angular
    ex, ey = np.cos(phi), np.sin(phi)
    proj = kappa[:, 0:1] * ex + kappa[:, 1:2] * ey
    norm2 = np.sum(kappa * kappa, axis=1)[:, None]
    exit_len = -proj + np.sqrt(proj * proj + quad.kappa_max ** 2 - norm2)
    ray = np.minimum(exit_len, length)
    rho = 0.5 * ray[:, :, None] * (x[None, None, :] + 1.0)
    wts = (0.5 * ray[:, :, None] * w[None, None, :]) * rho * (2.0 * math.pi / quad.n_angular)
    px = kappa[:, 0, None, None] + rho * ex[:, :, None]
    py = kappa[:, 1, None, None] + rho * ey[:, :, None]
    n = kappa.shape[0]
    return px.reshape(n, -1), py.reshape(n, -1), wts.reshape(n, -1), rho.reshape(n, -1)


def _integrate(medium, kappa, quad, kind):
    """Window integral of Gamma Gamma^T times the chosen spectral weight.

    ``kind`` is "dispersion" (complex one-sided lag integral) or "psd"
    (half the power spectrum, the real part of the former).
    Returns (n, 3) complex entries (11, 12, 22) without prefactors.
    """
    length = _window_length(medium, quad)
    k_over_g = medium.k / medium.gamma
    out = np.empty((kappa.shape[0], 3), dtype=complex)
    chunk = max(1, 400_000 // (quad.n_radial * quad.n_angular))
    for start in range(0, kappa.shape[0], chunk):
        kk = kappa[start:start + chunk]
        px, py, wts, rho = _window_rule(kk, length, quad)
        ax = np.broadcast_to(kk[:, 0:1], px.shape)
        ay = np.broadcast_to(kk[:, 1:2], px.shape)
        g11, g12, g21, g22 = pair_gamma(ax, ay, px, py)
        b_here = np.sqrt(1.0 - np.sum(kk * kk, axis=1))[:, None]
        b_there = np.sqrt(1.0 - (px * px + py * py))
        qt2 = (k_over_g * rho) ** 2
        lag = k_over_g * (b_here - b_there)
        if kind == "dispersion":
            spec = medium.dispersion_sq(qt2, lag)
        else:
            spec = 0.5 * medium.psd3_sq(qt2, lag)
        spec = spec * wts
        out[start:start + chunk, 0] = np.sum(spec * (g11 * g11 + g12 * g12), axis=1)
        out[start:start + chunk, 1] = np.sum(spec * (g11 * g21 + g12 * g22), axis=1)
        out[start:start + chunk, 2] = np.sum(spec * (g21 * g21 + g22 * g22), axis=1)
    return out


def _to_matrix(entries: np.ndarray) -> np.ndarray:
    mat = np.empty(entries.shape[:-1] + (2, 2), dtype=entries.dtype)
    mat[..., 0, 0] = entries[..., 0]
    mat[..., 0, 1] = entries[..., 1]
    mat[..., 1, 0] = entries[..., 1]
    mat[..., 1, 1] = entries[..., 2]
    return mat


def _prefactor(medium: SpectralMedium) -> float:
    # -(k^2 alpha^2 / (4 gamma^3)) * k^2 / (2 pi)^2
    return -(medium.k ** 2 * medium.alpha ** 2) / (4.0 * medium.gamma ** 3) \
        * medium.k ** 2 / (2.0 * math.pi) ** 2


def _check_nodes(kappa, quad):
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    norms = np.hypot(kappa[:, 0], kappa[:, 1])
    if np.any(norms <= 0) or np.any(norms > quad.kappa_max * (1 + 1e-12)):
        raise ValueError("q_matrix needs 0 < |kappa| <= kappa_max")
    return kappa


def homogenization_term(medium: SpectralMedium, kappa) -> np.ndarray:
    """The imaginary TM-only correction -(i k alpha^2 / 2) R(0) |kappa|^2 / beta."""
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    norm2 = np.sum(kappa * kappa, axis=1)
    out = np.zeros((kappa.shape[0], 2, 2), dtype=complex)
    out[:, 0, 0] = -0.5j * medium.k * medium.alpha ** 2 * medium.autocorr_origin() \
        * norm2 / np.sqrt(1.0 - norm2)
    return out


def q_matrices(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec()) -> np.ndarray:
    """Q at each row of ``kappa`` (shape (n, 2)); returns (n, 2, 2) complex."""
    kappa = _check_nodes(kappa, quad)
    q = _prefactor(medium) * _to_matrix(_integrate(medium, kappa, quad, "dispersion"))
    q += homogenization_term(medium, kappa)
    if quad.check_tol is not None:
        coarse = _prefactor(medium) * _to_matrix(
            _integrate(medium, kappa, quad.halved(), "dispersion"))
        coarse += homogenization_term(medium, kappa)
        scale = np.max(np.abs(q), axis=(1, 2))
        err = np.max(np.abs(q - coarse), axis=(1, 2)) / scale
        if np.any(err > quad.check_tol):
            raise QuadratureError(f"window quadrature not converged: relative change "
                                  f"{float(np.max(err)):.3e} > {quad.check_tol:.1e}")
    return q


def q_matrix(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec()) -> np.ndarray:
    """Scattering kernel Q(kappa) as a 2x2 complex matrix (TM, TE order)."""
    return q_matrices(medium, np.reshape(kappa, (1, 2)), quad)[0]


def re_q_from_psd(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec()) -> np.ndarray:
    """Real part of Q assembled directly from the 3D power spectrum."""
    kappa = _check_nodes(kappa, quad)
    return _prefactor(medium) * _to_matrix(_integrate(medium, kappa, quad, "psd")).real


def s_matrix(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec()) -> np.ndarray:
    """Loss matrix S = -Q - Q^dagger, asserted positive definite."""
    q = q_matrix(medium, kappa, quad)
    s = loss_from_q(q)
    eig = np.linalg.eigvalsh(s)
    if eig[0] <= -1e-12 * np.trace(s):
        raise AssertionError(f"loss matrix is not positive definite: eigenvalues {eig}")
    return s


def loss_from_q(q: np.ndarray) -> np.ndarray:
    return (-(q + np.conj(np.swapaxes(q, -1, -2)))).real


def mean_free_paths(medium: SpectralMedium, kappa, quad: QuadSpec = QuadSpec(),
                    tol: float = 1e-8):
    """TM and TE scattering mean free paths -1/Re Q11 and -1/Re Q22.

    ``kappa`` is a single node (2,) or a stack of nodes (n, 2).
    """
    kappa = np.asarray(kappa, dtype=float)
    q = q_matrix(medium, kappa, quad) if kappa.ndim == 1 else q_matrices(medium, kappa, quad)
    return mfp_from_q(q, tol)


def mfp_from_q(q: np.ndarray, tol: float = 1e-8):
    off = np.maximum(np.abs(q[..., 0, 1]), np.abs(q[..., 1, 0]))
    scale = np.max(np.abs(q), axis=(-1, -2))
    if np.any(off > tol * scale):
        raise IsotropyError("Q has off-diagonal entries; mean free paths are undefined")
    return -1.0 / q[..., 0, 0].real, -1.0 / q[..., 1, 1].real


def expm2(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of stacked 2x2 complex matrices (closed form).

    exp(A) = e^mu [cosh(d) I + sinh(d)/d (A - mu I)] with mu = tr(A)/2 and
    d^2 = ((a11 - a22)/2)^2 + a12 a21.  A Taylor series replaces sinh(d)/d
    when the eigenvalues nearly coincide.
    """
    a = np.asarray(a, dtype=complex)
    mu = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    d2 = (0.5 * (a[..., 0, 0] - a[..., 1, 1])) ** 2 + a[..., 0, 1] * a[..., 1, 0]
    d = np.sqrt(d2)
    small = np.abs(d) < 1e-10
    safe_d = np.where(small, 1.0, d)
    sinhc = np.where(small, 1.0 + d2 / 6.0 + d2 * d2 / 120.0, np.sinh(safe_d) / safe_d)
    cosh = np.where(small, 1.0 + d2 / 2.0 + d2 * d2 / 24.0, np.cosh(safe_d))
    eye = np.eye(2)
    shifted = a - mu[..., None, None] * eye
    return np.exp(mu)[..., None, None] * (cosh[..., None, None] * eye
                                          + sinhc[..., None, None] * shifted)


@dataclass(frozen=True, eq=False)
class ScatteringKernelField:
    """Q, S, eigenvalues of S and mean free paths on a direction grid."""

    grid: DirectionGrid
    medium: SpectralMedium
    Q: np.ndarray
    S: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    mfp_tm: np.ndarray
    mfp_te: np.ndarray


def kernel_field_from_q(grid: DirectionGrid, medium: SpectralMedium,
                        q: np.ndarray) -> ScatteringKernelField:
    s = loss_from_q(q)
    eig = np.linalg.eigvalsh(s)
    return ScatteringKernelField(grid, medium, q, s, eig[:, 1], eig[:, 0],
                                 -1.0 / q[:, 0, 0].real, -1.0 / q[:, 1, 1].real)


def build_kernel_field(medium: SpectralMedium, grid: DirectionGrid,
                       quad: QuadSpec | None = None, radial_only: bool = False
                       ) -> ScatteringKernelField:
    """Assemble Q at every node of ``grid``.

    With ``radial_only=True`` (polar grids, transverse-isotropic media) Q
    is computed once per radius and copied to every angle.
    """
    if quad is None:
        quad = QuadSpec(kappa_max=grid.kappa_max)
    if radial_only:
        if grid.radii is None:
            raise ValueError("radial_only needs a polar grid")
        ray = np.stack([grid.radii, np.zeros_like(grid.radii)], axis=-1)
        q_r = q_matrices(medium, ray, quad)
        q = np.repeat(q_r, grid.n_angular, axis=0)
    else:
        q = q_matrices(medium, grid.nodes, quad)
    return kernel_field_from_q(grid, medium, q)


def mean_amplitude(kernel_field: ScatteringKernelField, a0, z: float) -> np.ndarray:
    """Coherent amplitudes exp(Q z) A_o at every node; ``a0`` is (n, 2)."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    prop = expm2(kernel_field.Q * z)
    return np.einsum("nij,nj->ni", prop, np.asarray(a0, dtype=complex))
