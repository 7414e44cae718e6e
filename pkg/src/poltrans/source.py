"""Initial mode amplitudes from a current source at z = 0.

A source emits forward (a) and backward (b) TM/TE plane-wave amplitudes
determined by the jump conditions of the fields across the source
plane.  Only the forward amplitudes are evolved by the transport
solvers; the backward ones are exposed for completeness.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .geometry import DomainError, frame_vectors
from .grid import DirectionGrid

GAUSSIAN_TM = "GaussianTMPower"
ANISOTROPIC_TM = "AnisotropicGaussianTMPower"
CURRENT = "CurrentDensity"
KINDS = (GAUSSIAN_TM, ANISOTROPIC_TM, CURRENT)


class QuadratureFailure(RuntimeError):
    """Raised when the field synthesis fails its two-resolution check."""


class InitialAmplitudes(NamedTuple):
    """Forward (a) and backward (b) TM and TE amplitudes at a set of directions."""

    a: np.ndarray
    a_perp: np.ndarray
    b: np.ndarray
    b_perp: np.ndarray


@dataclass(frozen=True)
class CurrentTable:
    """Current spectra sampled on a product grid of transverse wave vectors.

    ``j_t`` has shape (n1, n2, 2) and ``j_z`` shape (n1, n2); both complex.
    Values outside the grid are zero.
    """

    q1: np.ndarray
    q2: np.ndarray
    j_t: np.ndarray
    j_z: np.ndarray

    @classmethod
    def from_csv(cls, path) -> "CurrentTable":
        """Read columns ``q1,q2,Jx_re,Jx_im,Jy_re,Jy_im,Jz_re,Jz_im``."""
        expected = ["q1", "q2", "Jx_re", "Jx_im", "Jy_re", "Jy_im", "Jz_re", "Jz_im"]
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            names = [h.strip() for h in next(reader)]
            if names != expected:
                raise ValueError(f"{path}: expected header {','.join(expected)}, got {names}")
            data = np.array([[float(v) for v in row] for row in reader if row])
        q1 = np.unique(data[:, 0])
        q2 = np.unique(data[:, 1])
        if q1.size * q2.size != data.shape[0]:
            raise ValueError(f"{path}: samples do not fill a product grid")
        i1 = np.searchsorted(q1, data[:, 0])
        i2 = np.searchsorted(q2, data[:, 1])
        j_t = np.zeros((q1.size, q2.size, 2), dtype=complex)
        j_z = np.zeros((q1.size, q2.size), dtype=complex)
        j_t[i1, i2, 0] = data[:, 2] + 1j * data[:, 3]
        j_t[i1, i2, 1] = data[:, 4] + 1j * data[:, 5]
        j_z[i1, i2] = data[:, 6] + 1j * data[:, 7]
        return cls(q1, q2, j_t, j_z)

    def callables(self):
        def interp(values):
            re = RegularGridInterpolator((self.q1, self.q2), values.real,
                                         bounds_error=False, fill_value=0.0)
            im = RegularGridInterpolator((self.q1, self.q2), values.imag,
                                         bounds_error=False, fill_value=0.0)
            return lambda q: re(q) + 1j * im(q)

        jx, jy, jz = interp(self.j_t[..., 0]), interp(self.j_t[..., 1]), interp(self.j_z)
        return (lambda q: np.stack([jx(q), jy(q)], axis=-1)), jz


@dataclass(frozen=True)
class SourceSpec:
    """Description of the source.

    Attributes
    ----------
    kind : str
        ``GaussianTMPower``: TM-only, |a_o|^2 = exp(-k^2 |kappa|^2 / (2 gamma_j^2)),
        so the beam has angular width gamma_j / k.
        ``AnisotropicGaussianTMPower``: TM-only, |a_o|^2 = peak *
        exp(-eta_1^2 / (2 w_1^2) - eta_2^2 / (2 w_2^2)) with
        eta_1 = sqrt(2) kappa . e(theta), eta_2 = sqrt(2) kappa . e(theta)_perp.
        With the defaults (theta = pi/4) these are kappa_1 + kappa_2 and
        kappa_2 - kappa_1.
        ``CurrentDensity``: amplitudes from the transverse and
        longitudinal current spectra.
    gamma_j : float
        Source-aperture parameter.
    k : float
        Scaled wavenumber.
    widths : tuple of float
        (w_1, w_2) for the anisotropic source.
    rotation : float
        theta for the anisotropic source.
    peak : float
        Peak of |a_o|^2 for the anisotropic source.
    j_t, j_z : callable
        Current spectra for ``CurrentDensity``: ``j_t(q)`` maps (..., 2)
        wave vectors to (..., 2) complex, ``j_z(q)`` to (...) complex.
    """

    kind: str = GAUSSIAN_TM
    gamma_j: float = 2.0 * math.pi / 50.0
    k: float = 2.0 * math.pi
    widths: tuple = (0.1, 0.03)
    rotation: float = math.pi / 4.0
    peak: float = 1.0
    j_t: Callable | None = None
    j_z: Callable | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {KINDS}")
        if not self.gamma_j > 0 or not self.k > 0:
            raise ValueError("gamma_j and k must be positive")
        if self.kind == ANISOTROPIC_TM and (min(self.widths) <= 0 or self.peak <= 0):
            raise ValueError("anisotropic widths and peak must be positive")
        if self.kind == CURRENT and self.j_t is None and self.j_z is None:
            raise ValueError("CurrentDensity needs j_t and/or j_z")

    @classmethod
    def from_current_table(cls, table: CurrentTable, gamma_j: float, k: float = 2.0 * math.pi):
        j_t, j_z = table.callables()
        return cls(CURRENT, gamma_j=gamma_j, k=k, j_t=j_t, j_z=j_z)

    @property
    def support_radius(self) -> float:
        """Radius beyond which |a_o|^2 is below 1e-8 of its peak (Gaussian kinds)."""
        if self.kind == GAUSSIAN_TM:
            return math.sqrt(2.0 * math.log(1e8)) * self.gamma_j / self.k
        if self.kind == ANISOTROPIC_TM:
            return math.sqrt(2.0 * math.log(1e8)) * max(self.widths) / math.sqrt(2.0)
        return float("inf")


def _as_nodes(kappa):
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape[-1:] != (2,):
        raise DomainError("kappa needs a trailing axis of length 2")
    norm = np.hypot(kappa[..., 0], kappa[..., 1])
    if np.any(norm >= 1.0) or np.any(norm <= 0.0):
        raise DomainError("source amplitudes need 0 < |kappa| < 1")
    return kappa, norm


def tm_power(spec: SourceSpec, kappa) -> np.ndarray:
    """|a_o(kappa)|^2 for the TM-only Gaussian kinds."""
    kappa = np.asarray(kappa, dtype=float)
    if spec.kind == GAUSSIAN_TM:
        norm2 = np.sum(kappa * kappa, axis=-1)
        return np.exp(-0.5 * spec.k ** 2 * norm2 / spec.gamma_j ** 2)
    if spec.kind == ANISOTROPIC_TM:
        c, s = math.cos(spec.rotation), math.sin(spec.rotation)
        eta1 = math.sqrt(2.0) * (c * kappa[..., 0] + s * kappa[..., 1])
        eta2 = math.sqrt(2.0) * (-s * kappa[..., 0] + c * kappa[..., 1])
        w1, w2 = spec.widths
        return spec.peak * np.exp(-0.5 * (eta1 / w1) ** 2 - 0.5 * (eta2 / w2) ** 2)
    raise ValueError("tm_power is only defined for the Gaussian TM kinds")


def initial_amplitudes(spec: SourceSpec, kappa) -> InitialAmplitudes:
    """Forward and backward amplitudes at ``kappa`` (shape (..., 2))."""
    kappa, norm = _as_nodes(kappa)
    if spec.kind in (GAUSSIAN_TM, ANISOTROPIC_TM):
        a = np.sqrt(tm_power(spec, kappa)).astype(complex)
        zero = np.zeros_like(a)
        # a purely tangential current along kappa-hat: b_o = -a_o
        return InitialAmplitudes(a, zero, -a, zero.copy())
    b = np.sqrt(1.0 - norm * norm)
    khat = kappa / norm[..., None]
    kperp = np.stack([-khat[..., 1], khat[..., 0]], axis=-1)
    q = spec.k * kappa / spec.gamma_j
    scale = 1.0 / (2.0 * spec.gamma_j ** 2)
    jz = spec.j_z(q) if spec.j_z is not None else np.zeros(norm.shape, dtype=complex)
    jt = spec.j_t(q) if spec.j_t is not None else np.zeros(norm.shape + (2,), dtype=complex)
    longitudinal = norm * jz / np.sqrt(b)
    along = np.sqrt(b) * np.sum(khat * jt, axis=-1)
    across = np.sum(kperp * jt, axis=-1) / np.sqrt(b)
    a = scale * (longitudinal - along)
    bb = scale * (longitudinal + along)
    a_perp = -scale * across
    return InitialAmplitudes(a, a_perp, bb, a_perp.copy())


def initial_coherence(spec: SourceSpec, kappa) -> np.ndarray:
    """Rank-one coherence matrix A_o A_o^dagger, shape (..., 2, 2)."""
    amps = initial_amplitudes(spec, kappa)
    vec = np.stack([amps.a, amps.a_perp], axis=-1)
    return vec[..., :, None] * np.conj(vec[..., None, :])


def initial_field(spec: SourceSpec, grid: DirectionGrid) -> np.ndarray:
    """Initial coherence matrices at every node of ``grid``."""
    return initial_coherence(spec, grid.nodes)


def amplitude_energy(spec: SourceSpec, grid: DirectionGrid) -> float:
    """Integral of (|a_o|^2 + |a_o^perp|^2) d(k kappa) / (2 pi)^2 on ``grid``."""
    amps = initial_amplitudes(spec, grid.nodes)
    dens = np.abs(amps.a) ** 2 + np.abs(amps.a_perp) ** 2
    return float(spec.k ** 2 / (2.0 * math.pi) ** 2 * np.sum(grid.weights * dens))


def plane_wave_terms(spec: SourceSpec, kappa):
    """Per-direction electric and magnetic plane-wave vectors (without phase).

    Returns (e_vec, h_vec), each (..., 3) complex, equal to
    beta^{-1/2} (a u + a_perp u_perp) and beta^{-1/2} (a u_perp - a_perp u).
    """
    kappa, norm = _as_nodes(kappa)
    amps = initial_amplitudes(spec, kappa)
    u, u_perp, _ = frame_vectors(kappa)
    w = (1.0 - norm * norm) ** -0.25
    a = (w * amps.a)[..., None]
    ap = (w * amps.a_perp)[..., None]
    return a * u + ap * u_perp, a * u_perp - ap * u


def _synthesize(spec: SourceSpec, points: np.ndarray, grid: DirectionGrid):
    e_vec, h_vec = plane_wave_terms(spec, grid.nodes)
    b = np.sqrt(1.0 - grid.norms ** 2)
    kvec = np.column_stack([grid.nodes, b])
    w = grid.weights * spec.k ** 2 / (2.0 * math.pi) ** 2
    e_out = np.empty((points.shape[0], 3), dtype=complex)
    h_out = np.empty((points.shape[0], 3), dtype=complex)
    chunk = max(1, 2_000_000 // grid.size)
    for start in range(0, points.shape[0], chunk):
        phase = np.exp(1j * spec.k * (points[start:start + chunk] @ kvec.T)) * w
        e_out[start:start + chunk] = phase @ e_vec
        h_out[start:start + chunk] = phase @ h_vec
    return e_out, h_out


def homogeneous_field(spec: SourceSpec, x, n_radial: int = 96, n_angular: int = 256,
                      kappa_max: float = 0.95, rtol: float = 1e-4):
    """Electric and magnetic field of the source in a homogeneous medium.

    The forward plane-wave superposition over |kappa| <= kappa_max is
    evaluated with a Gauss-Legendre x trapezoid rule and checked against
    a second rule with twice the resolution in each direction.

    Parameters
    ----------
    x : array_like (..., 3)
        Evaluation points with z > 0.

    Returns
    -------
    E, H : ndarray (..., 3) complex
        Fields in scaled units (free-space impedance 1).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (3,):
        raise ValueError("x needs a trailing axis of length 3")
    if np.any(x[..., 2] <= 0):
        raise DomainError("homogeneous_field is defined in the forward region z > 0")
    pts = x.reshape(-1, 3)
    coarse = DirectionGrid.polar(n_radial, n_angular, kappa_max)
    fine = DirectionGrid.polar(2 * n_radial, 2 * n_angular, kappa_max)
    e1, h1 = _synthesize(spec, pts, coarse)
    e2, h2 = _synthesize(spec, pts, fine)
    scale = max(np.max(np.abs(e2)), np.max(np.abs(h2)), np.finfo(float).tiny)
    err = max(np.max(np.abs(e1 - e2)), np.max(np.abs(h1 - h2))) / scale
    if err > rtol:
        raise QuadratureFailure(f"field synthesis not converged: relative change {err:.3e} "
                                f"> {rtol:.1e}")
    return e2.reshape(x.shape), h2.reshape(x.shape)


def transverse_flux(e_field: np.ndarray, h_field: np.ndarray) -> np.ndarray:
    """Re(E_t . conj(U_t)) with U_t = (H_2, -H_1) the rotated magnetic field."""
    u1 = h_field[..., 1]
    u2 = -h_field[..., 0]
    return np.real(e_field[..., 0] * np.conj(u1) + e_field[..., 1] * np.conj(u2))
