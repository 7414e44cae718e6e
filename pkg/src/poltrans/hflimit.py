"""High-frequency (gamma -> 0) limit of the coherence transport.

Wave vectors and ranges are rescaled as kappa_full = gamma * kappa and
z_full = gamma * z.  In these variables the forward coupling becomes
the plane rotation ``geometry.gamma_hf``, Q becomes a negative multiple
of the identity, and the coherence matrix of the Cartesian field
components (x1, x2) obeys a scalar transport equation that never mixes
its entries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.spatial import cKDTree

from ._kernels import apply_gain
from .geometry import DomainError, gamma_hf
from .grid import DirectionGrid
from .kernel import QuadSpec, q_matrices
from .medium import SpectralMedium
from .source import SourceSpec, initial_field
from .transport import CoherenceField, PairOperator, evolve, min_eigenvalues


def q_hf(medium: SpectralMedium) -> float:
    """Scalar Q_hf with lim gamma Q(gamma kappa) = Q_hf I.

    Equals -(k^4 alpha^2 / 8) int R~(k u, 0) du / (2 pi)^2, which by the
    Fourier slice identity is -(k^2 alpha^2 / 8) int R(0, zeta) d zeta.
    """
    return -0.125 * medium.k ** 2 * medium.alpha ** 2 * float(medium.longitudinal_integral(0.0))


def q_hf_quadrature(medium: SpectralMedium) -> float:
    """Q_hf from the 2D spectral integral (independent route to :func:`q_hf`)."""
    k = medium.k
    reach = medium.spectral_radius(1e-30) / k

    def radial(u):
        return 2.0 * math.pi * u * float(medium.psd3_sq(k * k * u * u, 0.0))

    val, _ = integrate.quad(radial, 0.0, reach, epsabs=0.0, epsrel=1e-13, limit=200)
    return -0.125 * k ** 4 * medium.alpha ** 2 * val / (2.0 * math.pi) ** 2


def hf_mean_free_path(medium: SpectralMedium) -> float:
    """-1 / Q_hf: the mean free path in rescaled range units."""
    return -1.0 / q_hf(medium)


def paraxial_mfp(medium: SpectralMedium, ell: float = 1.0) -> float:
    """8 / (k^2 ell alpha^2 int R(0, zeta) d zeta)."""
    return 8.0 / (medium.k ** 2 * ell * medium.alpha ** 2
                  * float(medium.longitudinal_integral(0.0)))


def leading_mean_free_path(medium: SpectralMedium, kappa):
    """Leading small-gamma mean free path (gamma / k^2) 8 beta^2 / (alpha^2 I(kappa)).

    I(kappa) is the integral of R(kappa zeta / beta, zeta) over zeta.
    """
    kappa = np.asarray(kappa, dtype=float)
    norm = np.hypot(kappa[..., 0], kappa[..., 1])
    b = np.sqrt(1.0 - norm * norm)
    integral = medium.longitudinal_integral(norm / b)
    return medium.gamma / medium.k ** 2 * 8.0 * b * b / (medium.alpha ** 2 * integral)


def _rotation(kappa):
    kappa = np.asarray(kappa, dtype=float)
    norm = np.hypot(kappa[..., 0], kappa[..., 1])
    if np.any(norm <= 0):
        raise DomainError("the Cartesian rotation is undefined at kappa = 0")
    c = kappa[..., 0] / norm
    s = kappa[..., 1] / norm
    r = np.empty(kappa.shape[:-1] + (2, 2))
    r[..., 0, 0] = c
    r[..., 0, 1] = -s
    r[..., 1, 0] = s
    r[..., 1, 1] = c
    return r


def rotate_to_cartesian(p, kappa) -> np.ndarray:
    """Coherence of the (x1, x2) field components from the (TM, TE) one."""
    r = _rotation(kappa)
    return r @ np.asarray(p, dtype=complex) @ np.swapaxes(r, -1, -2)


def rotate_from_cartesian(p_tilde, kappa) -> np.ndarray:
    """Inverse of :func:`rotate_to_cartesian`."""
    r = _rotation(kappa)
    return np.swapaxes(r, -1, -2) @ np.asarray(p_tilde, dtype=complex) @ r


@dataclass(frozen=True, eq=False)
class HFCoherenceField:
    """P and P~ on a grid of rescaled wave vectors at rescaled range z."""

    grid: DirectionGrid
    P: np.ndarray
    P_tilde: np.ndarray
    z: float = 0.0


@dataclass(eq=False)
class ScalarTransportOperator:
    """Scalar kernel W_ij = c w_j R~(k (kappa_i - kappa_j), 0) and its row sums.

    c = k^4 alpha^2 / (4 (2 pi)^2).  Applied identically to every entry
    of P~, so entries cannot mix.
    """

    grid: DirectionGrid
    medium: SpectralMedium
    matrix: sp.csr_matrix
    loss: np.ndarray

    @classmethod
    def build(cls, medium: SpectralMedium, grid: DirectionGrid, cutoff: float = 1e-16):
        k = medium.k
        reach = medium.spectral_radius(cutoff) / k
        n = grid.size
        pairs = cKDTree(grid.nodes).query_pairs(reach, output_type="ndarray")
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        diff = grid.nodes[rows] - grid.nodes[cols]
        spec = medium.psd3_sq(k * k * np.sum(diff * diff, axis=1), 0.0)
        c = k ** 4 * medium.alpha ** 2 / (4.0 * (2.0 * math.pi) ** 2)
        vals = c * grid.weights[cols] * spec
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(grid, medium, mat, np.asarray(mat.sum(axis=1)).ravel())

    def rhs(self, p_tilde: np.ndarray) -> np.ndarray:
        flat = p_tilde.reshape(p_tilde.shape[0], 4)
        out = self.matrix @ flat - self.loss[:, None] * flat
        return out.reshape(p_tilde.shape)

    def mean_free_path(self) -> np.ndarray:
        return 2.0 / self.loss


@dataclass(eq=False)
class HFPairOperator:
    """Gamma_hf-coupled operator for the rescaled (TM, TE) coherence P_hf.

    Loss is 2 Q_hf P_hf with the discrete row sums standing in for
    -2 Q_hf (Gamma_hf is a rotation, so Gamma Gamma^T = I).
    """

    grid: DirectionGrid
    medium: SpectralMedium
    indptr: np.ndarray
    indices: np.ndarray
    weight: np.ndarray
    g: tuple
    loss: np.ndarray

    @classmethod
    def build(cls, medium: SpectralMedium, grid: DirectionGrid, cutoff: float = 1e-16):
        scalar = ScalarTransportOperator.build(medium, grid, cutoff)
        mat = scalar.matrix.tocsr()
        mat.sort_indices()
        rows = np.repeat(np.arange(grid.size), np.diff(mat.indptr))
        g = gamma_hf(grid.nodes[rows], grid.nodes[mat.indices])
        parts = tuple(np.ascontiguousarray(g[:, a, b]) for a, b in ((0, 0), (0, 1), (1, 0), (1, 1)))
        return cls(grid, medium, mat.indptr.astype(np.int64), mat.indices.astype(np.int64),
                   np.ascontiguousarray(mat.data), parts, scalar.loss)

    def rhs(self, p: np.ndarray) -> np.ndarray:
        out = -self.loss[:, None, None] * p
        g11, g22, g12 = apply_gain(self.indptr, self.indices, self.weight, *self.g,
                                   np.ascontiguousarray(p[:, 0, 0].real),
                                   np.ascontiguousarray(p[:, 1, 1].real),
                                   np.ascontiguousarray(p[:, 0, 1]))
        out[:, 0, 0] += g11
        out[:, 1, 1] += g22
        out[:, 0, 1] += g12
        out[:, 1, 0] += np.conj(g12)
        return out


def _rk4(rhs, state, z_end, dz, record=None):
    n = int(math.ceil(z_end / dz - 1e-9)) if z_end > 0 else 0
    h = z_end / n if n else 0.0
    if record is not None:
        record(0.0, state)
    for step in range(n):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state = 0.5 * (state + np.conj(np.swapaxes(state, 1, 2)))
        if record is not None:
            record((step + 1) * h, state)
    return state


def _energy(grid, p, k):
    tr = p[:, 0, 0].real + p[:, 1, 1].real
    return float(k * k / (2.0 * math.pi) ** 2 * np.sum(grid.weights * tr))


def evolve_p_tilde(medium: SpectralMedium, grid: DirectionGrid, p_tilde0: np.ndarray,
                   z_end: float, dz: float | None = None, operator=None,
                   drift_tol: float = 1e-4):
    """RK4 integration of the scalar transport equation for P~.

    Returns the final :class:`HFCoherenceField` and a dict of per-step
    diagnostics (z, energy, max_cross).  ``max_cross`` is the largest
    |P~12| + |P~22| relative to the largest P~11.
    """
    op = operator or ScalarTransportOperator.build(medium, grid)
    if dz is None:
        dz = float(np.min(op.mean_free_path())) / 200.0
    if z_end < 0 or not dz > 0:
        raise ValueError("need z_end >= 0 and dz > 0")
    diag = {"z": [], "energy": [], "max_cross": [], "min_eig": []}
    k = medium.k

    def record(z, p):
        diag["z"].append(z)
        diag["energy"].append(_energy(grid, p, k))
        top = max(float(np.max(np.abs(p[:, 0, 0]))), np.finfo(float).tiny)
        diag["max_cross"].append(float(np.max(np.abs(p[:, 0, 1]) + np.abs(p[:, 1, 1]))) / top)
        diag["min_eig"].append(float(np.min(min_eigenvalues(p))))

    state = _rk4(op.rhs, np.asarray(p_tilde0, dtype=complex).copy(), z_end, dz, record)
    e = np.asarray(diag["energy"])
    if e[0] > 0 and np.max(np.abs(e - e[0])) > drift_tol * e[0]:
        raise RuntimeError("energy drift beyond tolerance in the high-frequency solver")
    diag = {key: np.asarray(val) for key, val in diag.items()}
    return HFCoherenceField(grid, rotate_from_cartesian(state, grid.nodes), state, z_end), diag


def evolve_p_hf(medium: SpectralMedium, grid: DirectionGrid, p0: np.ndarray, z_end: float,
                dz: float | None = None):
    """RK4 integration of the Gamma_hf-coupled equation for P_hf (TM, TE frame)."""
    op = HFPairOperator.build(medium, grid)
    if dz is None:
        dz = float(np.min(2.0 / op.loss)) / 200.0
    state = _rk4(op.rhs, np.asarray(p0, dtype=complex).copy(), z_end, dz)
    return HFCoherenceField(grid, state, rotate_to_cartesian(state, grid.nodes), z_end)


def hf_grid(kappa_bar_j: float = 1.0, k: float = 2.0 * math.pi, radius: float | None = None,
            spacing: float | None = None) -> DirectionGrid:
    """Cartesian grid in rescaled wave vectors.

    Defaults: radius 6 kappa_bar_j / k + 3 / k, spacing 1 / (4 k).
    """
    if radius is None:
        radius = (6.0 * kappa_bar_j + 3.0) / k
    if spacing is None:
        spacing = 1.0 / (4.0 * k)
    nodes_radius = min(radius, 0.999)
    grid = DirectionGrid.cartesian(spacing, nodes_radius)
    return grid


def hf_initial_tilde(source_width: float, grid: DirectionGrid, k: float = 2.0 * math.pi):
    """x1-polarized Gaussian start: P~ = diag(exp(-k^2 |kappa|^2 / (2 kbar^2)), 0)."""
    p = np.zeros((grid.size, 2, 2), dtype=complex)
    p[:, 0, 0] = np.exp(-0.5 * k * k * grid.norms ** 2 / source_width ** 2)
    return p


@dataclass(frozen=True)
class FullModelComparison:
    """Relative L2 gap between the rescaled full solution and the limit."""

    gammas: tuple
    rel_l2: tuple
    z_hf: float
    mfp_full: tuple
    mfp_hf: float


def compare_full_model(medium: SpectralMedium, gammas, z_hf: float, kappa_bar_j: float = 1.0,
                       radius: float | None = None, spacing: float | None = None,
                       steps_per_mfp: int = 100) -> FullModelComparison:
    """Evolve the full equation at each gamma and compare with the limit.

    The full model runs on the grid gamma * (rescaled grid) with a TM
    Gaussian source of aperture gamma_j = kappa_bar_j * gamma, to range
    gamma * z_hf.  Its coherence is rotated to Cartesian components and
    compared with the limit solution started from the same (rescaled)
    data.  Both sources have unit peak, so no amplitude renormalization
    is needed.
    """
    k = medium.k
    base = hf_grid(kappa_bar_j, k, radius, spacing)
    tm0 = np.zeros((base.size, 2, 2), dtype=complex)
    tm0[:, 0, 0] = np.exp(-0.5 * k * k * base.norms ** 2 / kappa_bar_j ** 2)
    tilde0 = rotate_to_cartesian(tm0, base.nodes)
    mfp_hf = hf_mean_free_path(medium)
    limit, _ = evolve_p_tilde(medium, base, tilde0, z_hf, dz=mfp_hf / steps_per_mfp)
    ref = limit.P_tilde
    gaps, mfps = [], []
    for gamma in gammas:
        med = medium.with_params(gamma=gamma, gamma_j=kappa_bar_j * gamma)
        grid = DirectionGrid(base.layout, gamma * base.nodes, gamma ** 2 * base.weights,
                             gamma * base.kappa_max, spacing=gamma * base.spacing)
        innermost = grid.nodes[np.argmin(grid.norms)][None, :]
        quad = QuadSpec(n_radial=48, n_angular=64, kappa_max=grid.kappa_max)
        iq = q_matrices(med, innermost, quad)
        op = PairOperator.build(med, grid, quad=quad)
        mfps.append(float(-1.0 / iq[0, 0, 0].real))
        src = SourceSpec(gamma_j=med.gamma_j, k=k)
        p0 = CoherenceField(grid, initial_field(src, grid))
        final, _ = evolve(op, p0, gamma * z_hf, dz=gamma * mfp_hf / steps_per_mfp)
        full_tilde = rotate_to_cartesian(final.P, grid.nodes)
        num = np.sqrt(np.sum(base.weights[:, None, None] * np.abs(full_tilde - ref) ** 2))
        den = np.sqrt(np.sum(base.weights[:, None, None] * np.abs(ref) ** 2))
        gaps.append(float(num / den))
    return FullModelComparison(tuple(gammas), tuple(gaps), z_hf, tuple(mfps), mfp_hf)


def fit_order(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)),
                            np.log(np.asarray(ys, dtype=float)), 1)[0])


def kernel_hf_gap(medium: SpectralMedium, kappa_hf, gammas, quad: QuadSpec | None = None):
    """max-norm of gamma Q(gamma kappa) - Q_hf I for each gamma."""
    kappa_hf = np.atleast_2d(np.asarray(kappa_hf, dtype=float))
    target = q_hf(medium)
    out = []
    for gamma in gammas:
        med = medium.with_params(gamma=gamma)
        q = q_matrices(med, gamma * kappa_hf, quad or QuadSpec())
        gap = gamma * q - target * np.eye(2)
        out.append(float(np.max(np.abs(gap))))
    return out
