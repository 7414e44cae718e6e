"""Evolution of the coherence matrix of the TM/TE mode amplitudes.

The coherence matrix P(kappa, z) obeys

    dP/dz = Q P + P Q^dagger + c * int Gamma(kappa, kappa') P(kappa') Gamma(kappa', kappa)
            * R~(k (kappa_vec - kappa_vec') / gamma) d kappa'

with c = k^4 alpha^2 / (4 gamma^3 (2 pi)^2).  The loss part of Q is the
row sum of the same discrete gain operator, so the discrete total energy
is conserved exactly; the dispersive (imaginary) part of Q comes from
the kernel module.

Two operators are provided:

``RadialOperator``
    Polar grids with angle-independent data.  The angular integral of
    the gain kernel is done once per pair of radii, which reduces the
    problem to (P11, P22, P12) as functions of |kappa| only.
``PairOperator``
    Any grid.  Sparse list of node pairs closer than the spectral
    radius of R~, applied with a compiled loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from ._kernels import apply_gain, pair_gamma
from .grid import CARTESIAN, POLAR, DirectionGrid
from .kernel import QuadSpec, q_matrices
from .medium import SpectralMedium

__all__ = [
    "CoherenceField", "StokesState", "Trajectory", "RadialOperator", "PairOperator",
    "build_operator", "scattering_rhs", "evolve", "total_energy", "stokes",
    "power_coefficient", "wigner_sheet", "min_eigenvalues", "DirectionGrid",
    "GridMismatchError", "PositivityError", "EnergyDriftError",
]


class GridMismatchError(ValueError):
    """Raised when an operator and a field live on different grids."""


class PositivityError(RuntimeError):
    """Raised when a coherence matrix loses positivity (step too large)."""


class EnergyDriftError(RuntimeError):
    """Raised when the total energy drifts beyond tolerance."""


@dataclass(frozen=True, eq=False)
class CoherenceField:
    """Coherence matrices P (shape (n, 2, 2)) on the nodes of ``grid`` at range ``z``."""

    grid: DirectionGrid
    P: np.ndarray
    z: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.P, dtype=complex)
        if p.shape != (self.grid.size, 2, 2):
            raise GridMismatchError(f"P has shape {p.shape}, grid has {self.grid.size} nodes")
        object.__setattr__(self, "P", p)

    @property
    def p11(self) -> np.ndarray:
        return self.P[:, 0, 0].real

    @property
    def p22(self) -> np.ndarray:
        return self.P[:, 1, 1].real

    @property
    def p12(self) -> np.ndarray:
        return self.P[:, 0, 1]

    @classmethod
    def from_components(cls, grid, p11, p22, p12=None, z=0.0) -> "CoherenceField":
        p = np.zeros((grid.size, 2, 2), dtype=complex)
        p[:, 0, 0] = p11
        p[:, 1, 1] = p22
        if p12 is not None:
            p[:, 0, 1] = p12
            p[:, 1, 0] = np.conj(p12)
        return cls(grid, p, z)

    def scaled(self, factor: float) -> "CoherenceField":
        return CoherenceField(self.grid, factor * self.P, self.z)


class StokesState(NamedTuple):
    """Stokes components and degree of polarization per node."""

    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    s4: np.ndarray
    pol: np.ndarray


@dataclass
class Trajectory:
    """Per-step diagnostics of an evolution."""

    z: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)
    min_eig_ratio: list = field(default_factory=list)
    c_p: list = field(default_factory=list)
    max_p12: list = field(default_factory=list)
    mean_pol: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def as_arrays(self) -> dict:
        return {name: np.asarray(getattr(self, name)) for name in
                ("z", "energy", "min_eig", "min_eig_ratio", "c_p", "max_p12", "mean_pol")}

    @property
    def energy_drift(self) -> float:
        e = np.asarray(self.energy)
        return float(np.max(np.abs(e - e[0])) / abs(e[0])) if e.size and e[0] else 0.0


# ----------------------------------------------------------------------
# diagnostics
def min_eigenvalues(p: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each Hermitian 2x2 matrix in ``p``."""
    a = p[..., 0, 0].real
    d = p[..., 1, 1].real
    half = 0.5 * (a - d)
    return 0.5 * (a + d) - np.sqrt(half * half + np.abs(p[..., 0, 1]) ** 2)


def total_energy(field_: CoherenceField, k: float = 2.0 * math.pi) -> float:
    """Integral of Tr P d(k kappa) / (2 pi)^2."""
    tr = field_.P[:, 0, 0].real + field_.P[:, 1, 1].real
    return float(k * k / (2.0 * math.pi) ** 2 * np.sum(field_.grid.weights * tr))


def stokes(field_: CoherenceField) -> StokesState:
    """Stokes vector with P12 = (S3 + i S4) / 2."""
    p = field_.P if isinstance(field_, CoherenceField) else np.asarray(field_)
    p11 = p[..., 0, 0].real
    p22 = p[..., 1, 1].real
    p12 = p[..., 0, 1]
    s1 = p11 + p22
    s2 = p11 - p22
    s3 = 2.0 * p12.real
    s4 = 2.0 * p12.imag
    num = np.sqrt(s2 * s2 + s3 * s3 + s4 * s4)
    with np.errstate(invalid="ignore", divide="ignore"):
        pol = np.where(s1 > 0, num / np.where(s1 > 0, s1, 1.0), 0.0)
    return StokesState(s1, s2, s3, s4, np.minimum(pol, 1.0))


def power_coefficient(field_: CoherenceField) -> float:
    """Weighted TM minus TE power over the total power."""
    w = field_.grid.weights
    total = np.sum(w * (field_.p11 + field_.p22))
    if not total > 0:
        raise ValueError("power coefficient needs positive total energy")
    return float(np.sum(w * (field_.p11 - field_.p22)) / total)


def wigner_sheet(field_: CoherenceField, kappa, z: float | None = None, atol: float = 1e-12):
    """Support point x = kappa z / beta of the delta sheet and P there."""
    kappa = np.asarray(kappa, dtype=float)
    z = field_.z if z is None else z
    dist = np.hypot(*(field_.grid.nodes - kappa[None, :]).T)
    idx = int(np.argmin(dist))
    if dist[idx] > atol * max(1.0, float(np.hypot(*kappa))):
        raise KeyError(f"no grid node at kappa = {kappa.tolist()}")
    b = math.sqrt(1.0 - float(kappa @ kappa))
    return kappa * z / b, field_.P[idx].copy()


# ----------------------------------------------------------------------
# operators
def _gain_constant(medium: SpectralMedium) -> float:
    k = medium.k
    return k ** 4 * medium.alpha ** 2 / (4.0 * medium.gamma ** 3 * (2.0 * math.pi) ** 2)


def _imag_q_at_radii(medium: SpectralMedium, radii: np.ndarray, quad: QuadSpec | None):
    quad = quad or QuadSpec(n_radial=64, n_angular=128, kappa_max=max(float(np.max(radii)), 1e-3))
    nodes = np.stack([radii, np.zeros_like(radii)], axis=-1)
    return q_matrices(medium, nodes, quad).imag


def _imag_q_on_nodes(medium: SpectralMedium, grid: DirectionGrid, quad: QuadSpec | None):
    """Im Q interpolated in |kappa| (transverse-isotropic media)."""
    norms = grid.norms
    lo, hi = float(np.min(norms)), float(np.max(norms))
    if hi - lo < 1e-12:
        return np.repeat(_imag_q_at_radii(medium, np.array([hi]), quad), grid.size, axis=0)
    table = np.linspace(lo, hi, 129)
    iq = _imag_q_at_radii(medium, table, quad)
    out = np.zeros((grid.size, 2, 2))
    for a in range(2):
        for b in range(2):
            out[:, a, b] = CubicSpline(table, iq[:, a, b])(norms)
    return out


class _Operator:
    """Common interface: ``rhs`` on a (n, 2, 2) state and the effective Q."""

    grid: DirectionGrid
    medium: SpectralMedium
    loss: np.ndarray      # (n, 2, 2) real symmetric, discrete S
    imag_q: np.ndarray    # (n, 2, 2) real, Im Q

    @property
    def q_effective(self) -> np.ndarray:
        return -0.5 * self.loss + 1j * self.imag_q

    @property
    def state_size(self) -> int:
        return self.loss.shape[0]

    def mean_free_paths(self):
        """2 / Lambda_1 and 2 / Lambda_2 of the discrete loss matrix per state node."""
        eig = np.linalg.eigvalsh(self.loss)
        return 2.0 / eig[:, 1], 2.0 / eig[:, 0]

    def _loss_part(self, p):
        qp = np.einsum("nij,njk->nik", self.q_effective, p)
        return qp + np.conj(np.swapaxes(qp, 1, 2))

    def rhs(self, p: np.ndarray) -> np.ndarray:
        out = self._loss_part(p)
        g11, g22, g12 = self.gain(p[:, 0, 0].real, p[:, 1, 1].real, p[:, 0, 1])
        out[:, 0, 0] += g11
        out[:, 1, 1] += g22
        out[:, 0, 1] += g12
        out[:, 1, 0] += np.conj(g12)
        return out

    def state_weights(self) -> np.ndarray:
        raise NotImplementedError

    def reduce(self, field_: CoherenceField) -> np.ndarray:
        if field_.grid is not self.grid and not (
                field_.grid.size == self.grid.size
                and np.array_equal(field_.grid.nodes, self.grid.nodes)):
            raise GridMismatchError("coherence field and operator use different grids")
        return field_.P

    def expand(self, state: np.ndarray) -> np.ndarray:
        return state


@dataclass(eq=False)
class PairOperator(_Operator):
    """Sparse pair operator on an arbitrary direction grid."""

    grid: DirectionGrid
    medium: SpectralMedium
    indptr: np.ndarray
    indices: np.ndarray
    weight: np.ndarray
    g: tuple
    loss: np.ndarray
    imag_q: np.ndarray

    @classmethod
    def build(cls, medium: SpectralMedium, grid: DirectionGrid, imag_q=None,
              cutoff: float = 1e-16, quad: QuadSpec | None = None,
              spectrum=None) -> "PairOperator":
        """Assemble the pair list.

        Parameters
        ----------
        imag_q : ndarray (n, 2, 2), optional
            Imaginary part of Q per node; computed from the kernel if omitted.
        cutoff : float
            Pairs whose spectral weight is below ``cutoff`` times its peak are dropped.
        spectrum : callable, optional
            ``spectrum(i, j)`` returning the spectral weight per pair in
            place of R~(k (kappa_i - kappa_j) / gamma); the callable must be
            symmetric in (i, j) for exact energy conservation.
        """
        nodes = grid.nodes
        n = grid.size
        scale = medium.k / medium.gamma
        if spectrum is None:
            # cutoff <= 0 keeps every pair on the grid
            radius = (medium.spectral_radius(cutoff) / scale if cutoff > 0
                      else 2.0 * float(grid.norms.max()) + 1.0)
            tree = cKDTree(nodes)
            pairs = tree.query_pairs(radius, output_type="ndarray")
            rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
            cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        else:
            rows, cols = np.divmod(np.arange(n * n), n)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        b = np.sqrt(1.0 - grid.norms ** 2)
        if spectrum is None:
            diff = nodes[rows] - nodes[cols]
            qt2 = scale ** 2 * np.sum(diff * diff, axis=1)
            spec = medium.psd3_sq(qt2, scale * (b[rows] - b[cols]))
            keep = spec > cutoff * float(medium.psd3_sq(0.0, 0.0)) if cutoff > 0 else spec >= 0.0
            rows, cols, spec = rows[keep], cols[keep], spec[keep]
        else:
            spec = np.asarray(spectrum(rows, cols), dtype=float)
        weight = _gain_constant(medium) * grid.weights[cols] * spec
        g = pair_gamma(nodes[rows, 0], nodes[rows, 1], nodes[cols, 0], nodes[cols, 1])
        g = tuple(np.ascontiguousarray(x) for x in g)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        g11, g12, g21, g22 = g
        loss = np.zeros((n, 2, 2))
        loss[:, 0, 0] = np.bincount(rows, weight * (g11 * g11 + g12 * g12), minlength=n)
        loss[:, 1, 1] = np.bincount(rows, weight * (g21 * g21 + g22 * g22), minlength=n)
        off = np.bincount(rows, weight * (g11 * g21 + g12 * g22), minlength=n)
        loss[:, 0, 1] = off
        loss[:, 1, 0] = off
        if imag_q is None:
            imag_q = _imag_q_on_nodes(medium, grid, quad)
        return cls(grid, medium, indptr, np.ascontiguousarray(cols, dtype=np.int64),
                   np.ascontiguousarray(weight), g, loss, np.asarray(imag_q, dtype=float))

    @property
    def n_pairs(self) -> int:
        return int(self.indices.size)

    def gain(self, p11, p22, p12):
        return apply_gain(self.indptr, self.indices, self.weight, *self.g,
                          np.ascontiguousarray(p11), np.ascontiguousarray(p22),
                          np.ascontiguousarray(p12))

    def state_weights(self) -> np.ndarray:
        return self.grid.weights


@dataclass(eq=False)
class RadialOperator(_Operator):
    """Angle-reduced operator for angle-independent data on a polar grid.

    The state is (P11, P22, P12) at each radius.  For transverse-isotropic
    media the angular integrals of the odd parts of the gain vanish, and
    the gain reduces to five radial kernels acting on P11, P22, Re P12
    and Im P12 separately.
    """

    grid: DirectionGrid
    medium: SpectralMedium
    m11: np.ndarray
    m12: np.ndarray
    m21: np.ndarray
    m22: np.ndarray
    m_re: np.ndarray
    m_im: np.ndarray
    loss: np.ndarray
    imag_q: np.ndarray

    @classmethod
    def build(cls, medium: SpectralMedium, grid: DirectionGrid, n_phi: int = 64,
              cutoff: float = 1e-16, imag_q=None, quad: QuadSpec | None = None
              ) -> "RadialOperator":
        if grid.layout != POLAR:
            raise ValueError("the radial operator needs a polar grid")
        r = grid.radii
        b = np.sqrt(1.0 - r * r)
        scale = medium.k / medium.gamma
        reach = medium.spectral_radius(cutoff) / scale if cutoff > 0 else 2.0 * float(r.max()) + 1.0
        ri, rj = r[:, None], r[None, :]
        cos_max = (ri * ri + rj * rj - reach * reach) / (2.0 * ri * rj)
        active = cos_max < 1.0
        phi_max = np.arccos(np.clip(cos_max, -1.0, 1.0))
        x, w = np.polynomial.legendre.leggauss(n_phi)
        phi = 0.5 * phi_max[..., None] * (x + 1.0)
        wphi = 0.5 * phi_max[..., None] * w
        c, s = np.cos(phi), np.sin(phi)
        ri3, rj3 = ri[..., None], rj[..., None]
        bi3, bj3 = b[:, None, None], b[None, :, None]
        dist2 = ri3 * ri3 + rj3 * rj3 - 2.0 * ri3 * rj3 * c
        spec = medium.psd3_sq(scale ** 2 * np.maximum(dist2, 0.0), scale * (bi3 - bj3))
        spec = 2.0 * spec * wphi
        root = np.sqrt(bi3 * bj3)
        g11 = ri3 * rj3 / root + c * root
        g22 = c / root
        t11 = np.sum(spec * g11 * g11, axis=-1)
        t22 = np.sum(spec * g22 * g22, axis=-1)
        a = np.sum(spec * s * s, axis=-1)
        k_re = np.sum(spec * (g11 * g22 - s * s), axis=-1)
        k_im = np.sum(spec * (g11 * g22 + s * s), axis=-1)
        wt = _gain_constant(medium) * (grid.radial_weights * r)[None, :] * active
        m11 = wt * t11
        m12 = wt * a * (b[:, None] / b[None, :])
        m21 = wt * a * (b[None, :] / b[:, None])
        m22 = wt * t22
        loss = np.zeros((r.size, 2, 2))
        loss[:, 0, 0] = np.sum(m11 + m12, axis=1)
        loss[:, 1, 1] = np.sum(m21 + m22, axis=1)
        if imag_q is None:
            imag_q = _imag_q_at_radii(medium, r, quad)
        return cls(grid, medium, m11, m12, m21, m22, wt * k_re, wt * k_im, loss,
                   np.asarray(imag_q, dtype=float))

    def gain(self, p11, p22, p12):
        g11 = self.m11 @ p11 + self.m12 @ p22
        g22 = self.m21 @ p11 + self.m22 @ p22
        g12 = self.m_re @ p12.real + 1j * (self.m_im @ p12.imag)
        return g11, g22, g12

    def state_weights(self) -> np.ndarray:
        return self.grid.radial_weights * self.grid.radii * 2.0 * math.pi

    def reduce(self, field_: CoherenceField, rtol: float = 1e-12) -> np.ndarray:
        super().reduce(field_)
        nr, na = self.grid.n_radial, self.grid.n_angular
        p = field_.P.reshape(nr, na, 2, 2)
        scale = max(float(np.max(np.abs(p))), np.finfo(float).tiny)
        if np.max(np.abs(p - p[:, :1])) > rtol * scale:
            raise ValueError("the radial operator needs angle-independent data")
        return p[:, 0].copy()

    def expand(self, state: np.ndarray) -> np.ndarray:
        return np.repeat(state, self.grid.n_angular, axis=0)


def build_operator(medium: SpectralMedium, grid: DirectionGrid, radial: bool | None = None,
                   **kwargs):
    """Radial operator on polar grids by default, pair operator otherwise."""
    if radial is None:
        radial = grid.layout == POLAR
    if radial:
        return RadialOperator.build(medium, grid, **kwargs)
    return PairOperator.build(medium, grid, **kwargs)


def scattering_rhs(operator, field_: CoherenceField) -> np.ndarray:
    """Right-hand side of the coherence equation on the full grid (Hermitian)."""
    state = operator.reduce(field_)
    out = operator.rhs(state)
    out = 0.5 * (out + np.conj(np.swapaxes(out, 1, 2)))
    return operator.expand(out)


# ----------------------------------------------------------------------
# integration
def _state_energy(op, state, k):
    tr = state[:, 0, 0].real + state[:, 1, 1].real
    return float(k * k / (2.0 * math.pi) ** 2 * np.sum(op.state_weights() * tr))


def _record(traj, op, state, z, k):
    w = op.state_weights()
    p11 = state[:, 0, 0].real
    p22 = state[:, 1, 1].real
    tr = p11 + p22
    lam = min_eigenvalues(state)
    big = tr > 1e-30 * max(float(np.max(tr)), np.finfo(float).tiny)
    traj.z.append(float(z))
    traj.energy.append(_state_energy(op, state, k))
    traj.min_eig.append(float(np.min(lam)))
    traj.min_eig_ratio.append(float(np.min(lam[big] / tr[big])) if big.any() else 0.0)
    total = float(np.sum(w * tr))
    traj.c_p.append(float(np.sum(w * (p11 - p22)) / total) if total > 0 else 0.0)
    traj.max_p12.append(float(np.max(np.abs(state[:, 0, 1]))))
    st = stokes(state)
    num = np.sqrt(st.s2 ** 2 + st.s3 ** 2 + st.s4 ** 2)
    traj.mean_pol.append(float(np.sum(w * num) / total) if total > 0 else 0.0)


def default_step(operator) -> float:
    """One two-hundredth of the shortest mean free path on the grid."""
    mfp_tm, _ = operator.mean_free_paths()
    return float(np.min(mfp_tm)) / 200.0


def evolve(operator, p0: CoherenceField, z_end: float, dz: float | None = None,
           snapshots=(), positivity_tol: float = 1e-6, drift_tol: float = 1e-4):
    """Classical RK4 integration of the coherence equation.

    Parameters
    ----------
    operator : RadialOperator or PairOperator
    p0 : CoherenceField
        Initial data on the operator's grid.
    z_end : float
        Final range (>= 0).
    dz : float, optional
        Maximum step; defaults to :func:`default_step`.  Steps are shrunk
        so that ``z_end`` and every snapshot range are hit exactly.
    snapshots : iterable of float
        Ranges at which full-grid fields are stored in the trajectory.

    Returns
    -------
    CoherenceField, Trajectory
    """
    if z_end < 0:
        raise ValueError("z_end must be nonnegative")
    if dz is None:
        dz = default_step(operator)
    if not dz > 0:
        raise ValueError("dz must be positive")
    k = operator.medium.k
    state = operator.reduce(p0).copy()
    z = float(p0.z)
    traj = Trajectory()
    _record(traj, operator, state, z, k)
    stops = sorted({float(s) for s in snapshots if 0 <= s <= z_end} | {float(z_end)})
    if 0.0 in stops:
        traj.snapshots[0.0] = CoherenceField(operator.grid, operator.expand(state), z)
    e0 = traj.energy[0]
    start = 0.0
    for stop in stops:
        span = stop - start
        n = int(math.ceil(span / dz - 1e-9)) if span > 0 else 0
        h = span / n if n else 0.0
        for _ in range(n):
            k1 = operator.rhs(state)
            k2 = operator.rhs(state + 0.5 * h * k1)
            k3 = operator.rhs(state + 0.5 * h * k2)
            k4 = operator.rhs(state + h * k3)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            state = 0.5 * (state + np.conj(np.swapaxes(state, 1, 2)))
            z += h
            _record(traj, operator, state, z, k)
            if traj.min_eig_ratio[-1] < -positivity_tol:
                raise PositivityError(f"coherence lost positivity at z = {z:.6g} "
                                      f"(min eigenvalue / trace = {traj.min_eig_ratio[-1]:.3e}); "
                                      "reduce dz")
            if e0 > 0 and abs(traj.energy[-1] - e0) > drift_tol * e0:
                raise EnergyDriftError(f"energy drifted by {abs(traj.energy[-1] - e0) / e0:.3e} "
                                       f"at z = {z:.6g}")
        start = stop
        if stop > 0 and stop in {float(s) for s in snapshots}:
            traj.snapshots[stop] = CoherenceField(operator.grid, operator.expand(state),
                                                  p0.z + stop)
    if z_end == 0:
        return CoherenceField(p0.grid, p0.P.copy(), p0.z), traj
    return CoherenceField(operator.grid, operator.expand(state), p0.z + z_end), traj
