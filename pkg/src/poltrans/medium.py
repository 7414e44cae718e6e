"""Statistics of the random permittivity fluctuations.

Two correlation models are supported:

``GaussianIsotropic``
    R(r) = exp(-|r|^2 / 2), with every transform in closed form.
``TabulatedTransverseIsotropic``
    R(|r_t|, r_z) sampled on a product grid and interpolated with a
    bicubic spline (zero outside the table).  Transforms are computed
    by quadrature; the kernel assembly uses precomputed spline tables.

Everything is in scaled, dimensionless units: lengths in units of the
correlation length and the wavenumber ``k`` defaults to 2*pi.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special
from scipy.interpolate import RectBivariateSpline

GAUSSIAN = "GaussianIsotropic"
TABULATED = "TabulatedTransverseIsotropic"
MODELS = (GAUSSIAN, TABULATED)

_TWO_PI = 2.0 * math.pi
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


@dataclass(frozen=True)
class CorrelationTable:
    """Samples of R(|r_t|, r_z) on a product grid with r_t, r_z >= 0."""

    r_t: np.ndarray
    r_z: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r_t = np.asarray(self.r_t, dtype=float)
        r_z = np.asarray(self.r_z, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (r_t.size, r_z.size):
            raise ValueError("table values must have shape (len(r_t), len(r_z))")
        if r_t.size < 4 or r_z.size < 4:
            raise ValueError("cubic interpolation needs at least 4 samples per axis")
        if np.any(np.diff(r_t) <= 0) or np.any(np.diff(r_z) <= 0):
            raise ValueError("table axes must be strictly increasing")
        if r_t[0] != 0.0 or r_z[0] != 0.0:
            raise ValueError("table axes must start at 0")
        object.__setattr__(self, "r_t", r_t)
        object.__setattr__(self, "r_z", r_z)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_csv(cls, path) -> "CorrelationTable":
        """Read a long-format CSV with columns ``r_t, r_z, R``."""
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = [h.strip() for h in header]
            if names != ["r_t", "r_z", "R"]:
                raise ValueError(f"{path}: expected header r_t,r_z,R, got {names}")
            for line in reader:
                if line:
                    rows.append([float(v) for v in line])
        data = np.array(rows)
        r_t = np.unique(data[:, 0])
        r_z = np.unique(data[:, 1])
        values = np.full((r_t.size, r_z.size), np.nan)
        values[np.searchsorted(r_t, data[:, 0]), np.searchsorted(r_z, data[:, 1])] = data[:, 2]
        if np.isnan(values).any():
            raise ValueError(f"{path}: samples do not fill a product grid")
        return cls(r_t, r_z, values)

    @classmethod
    def from_function(cls, func, r_t_max=8.0, r_z_max=8.0, n_t=161, n_z=161):
        """Sample ``func(r_t, r_z)`` on a uniform product grid."""
        r_t = np.linspace(0.0, r_t_max, n_t)
        r_z = np.linspace(0.0, r_z_max, n_z)
        values = func(r_t[:, None], r_z[None, :])
        return cls(r_t, r_z, values)


def _composite_gauss(edges: np.ndarray, order: int = 4):
    """Nodes and weights of a composite Gauss-Legendre rule over ``edges``."""
    x, w = np.polynomial.legendre.leggauss(order)
    left, right = edges[:-1, None], edges[1:, None]
    half = 0.5 * (right - left)
    nodes = (left + half * (x[None, :] + 1.0)).ravel()
    weights = (half * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class SpectralMedium:
    """Random-medium model plus the scaled parameters.

    Parameters
    ----------
    model : str
        ``"GaussianIsotropic"`` or ``"TabulatedTransverseIsotropic"``.
    alpha : float
        Standard deviation of the permittivity fluctuations (scaled).
    gamma : float
        Wavelength over correlation length, in (0, 1).
    gamma_j : float
        Source aperture parameter.
    k : float
        Scaled wavenumber.
    table : CorrelationTable, optional
        Required for the tabulated model.
    """

    model: str = GAUSSIAN
    alpha: float = 1.0
    gamma: float = 2.0 * math.pi / 50.0
    gamma_j: float = 2.0 * math.pi / 50.0
    k: float = 2.0 * math.pi
    table: CorrelationTable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown medium model {self.model!r}; expected one of {MODELS}")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.gamma_j > 0:
            raise ValueError("gamma_j must be > 0")
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if self.model == TABULATED and self.table is None:
            raise ValueError("the tabulated model needs a correlation table")

    def with_params(self, **changes) -> "SpectralMedium":
        params = dict(model=self.model, alpha=self.alpha, gamma=self.gamma,
                      gamma_j=self.gamma_j, k=self.k, table=self.table)
        params.update(changes)
        return SpectralMedium(**params)

    # ------------------------------------------------------------------
    # tabulated helpers
    @cached_property
    def _spline(self) -> RectBivariateSpline:
        t = self.table
        return RectBivariateSpline(t.r_t, t.r_z, t.values, kx=3, ky=3)

    def _table_eval(self, rho, zeta):
        rho = np.abs(np.asarray(rho, dtype=float))
        zeta = np.abs(np.asarray(zeta, dtype=float))
        rho, zeta = np.broadcast_arrays(rho, zeta)
        out = self._spline.ev(rho, zeta)
        inside = (rho <= self.table.r_t[-1]) & (zeta <= self.table.r_z[-1])
        return np.where(inside, out, 0.0)

    @cached_property
    def _rho_rule(self):
        return _composite_gauss(self.table.r_t)

    @cached_property
    def _zeta_rule(self):
        return _composite_gauss(self.table.r_z)

    def _hankel(self, q, zeta):
        """2*pi * int_0^inf R(rho, zeta) J0(q rho) rho d rho, vectorized."""
        rho, w = self._rho_rule
        q = np.asarray(q, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        q, zeta = np.broadcast_arrays(q, zeta)
        vals = self._table_eval(rho[None, :], zeta.reshape(-1, 1))
        bessel = special.j0(q.reshape(-1, 1) * rho[None, :])
        out = _TWO_PI * np.sum(vals * bessel * (rho * w)[None, :], axis=1)
        return out.reshape(q.shape)

    @cached_property
    def _hankel_grid(self):
        """Hankel transform on (q grid) x (zeta quadrature nodes)."""
        rho, w_rho = self._rho_rule
        zeta, w_zeta = self._zeta_rule
        vals = self._table_eval(rho[:, None], zeta[None, :])
        q_probe = np.linspace(0.0, 50.0, 1001)
        bessel = special.j0(q_probe[:, None] * rho[None, :]) * (rho * w_rho)[None, :]
        h_probe = _TWO_PI * bessel @ vals
        scale = np.max(np.abs(h_probe[0]))
        # interpolation noise leaves a floor near 1e-10; cut the spectrum
        # at the first wavenumber where it has decayed below 1e-9
        small = np.max(np.abs(h_probe), axis=1) < 1e-9 * scale
        q_max = q_probe[np.argmax(small)] if small.any() else q_probe[-1]
        q_grid = np.linspace(0.0, q_max, max(int(q_max / 0.04) + 1, 16))
        bessel = special.j0(q_grid[:, None] * rho[None, :]) * (rho * w_rho)[None, :]
        return q_grid, zeta, w_zeta, _TWO_PI * bessel @ vals

    @cached_property
    def _dispersion_tables(self):
        q_grid, zeta, w_zeta, hank = self._hankel_grid
        b_max = 64.0
        b_grid = np.linspace(0.0, b_max, 1281)
        phase = b_grid[None, :] * zeta[:, None]
        weighted = hank * w_zeta[None, :]
        re = weighted @ np.cos(phase)
        im = -(weighted @ np.sin(phase))
        spl_re = RectBivariateSpline(q_grid, b_grid, re, kx=3, ky=3)
        spl_im = RectBivariateSpline(q_grid, b_grid, im, kx=3, ky=3)
        h0 = RectBivariateSpline(q_grid, zeta, hank, kx=3, ky=3).ev(q_grid, np.zeros_like(q_grid))
        return q_grid[-1], b_max, spl_re, spl_im, q_grid, h0

    # ------------------------------------------------------------------
    @property
    def is_isotropic(self) -> bool:
        """True when R depends on |r| only (checked on the table if tabulated)."""
        if self.model == GAUSSIAN:
            return True
        return self._tabulated_isotropic

    @cached_property
    def _tabulated_isotropic(self) -> bool:
        t = self.table
        rho = np.linspace(0.0, t.r_t[-1], 25)
        zeta = np.linspace(0.0, t.r_z[-1], 25)
        rr, zz = np.meshgrid(rho, zeta, indexing="ij")
        radius = np.hypot(rr, zz)
        a = self._table_eval(rr, zz)
        b = self._table_eval(radius, 0.0)
        mask = radius <= min(t.r_t[-1], t.r_z[-1])
        scale = abs(self._table_eval(0.0, 0.0))
        return bool(np.max(np.abs(a - b)[mask]) <= 1e-6 * scale)

    def autocorr_origin(self) -> float:
        if self.model == GAUSSIAN:
            return 1.0
        return float(self._table_eval(0.0, 0.0))

    def spectral_radius(self, rtol: float = 1e-20) -> float:
        """Radius beyond which the power spectrum is negligible."""
        if self.model == GAUSSIAN:
            return math.sqrt(2.0 * math.log(1.0 / rtol))
        return float(self._dispersion_tables[0])

    def longitudinal_integral(self, slope=0.0):
        """Integral over the whole line of R(slope * |zeta|, zeta) d zeta."""
        slope = np.asarray(slope, dtype=float)
        if self.model == GAUSSIAN:
            return math.sqrt(_TWO_PI) / np.sqrt(1.0 + slope * slope)
        zeta, w = self._zeta_rule
        vals = self._table_eval(slope[..., None] * zeta, zeta)
        return 2.0 * np.sum(vals * w, axis=-1)

    # ------------------------------------------------------------------
    # fast radial forms used by the kernel assembly
    def psd3_sq(self, qt2, qz):
        """Power spectrum from squared transverse magnitude and q_z."""
        qt2 = np.asarray(qt2, dtype=float)
        qz = np.asarray(qz, dtype=float)
        if self.model == GAUSSIAN:
            return _TWO_PI ** 1.5 * np.exp(-0.5 * (qt2 + qz * qz))
        return 2.0 * self.dispersion_sq(qt2, qz).real

    def dispersion_sq(self, qt2, b):
        """One-sided lag integral from squared transverse magnitude."""
        qt2 = np.asarray(qt2, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.model == GAUSSIAN:
            envelope = _TWO_PI * np.exp(-0.5 * qt2)
            re = _SQRT_HALF_PI * np.exp(-0.5 * b * b)
            im = -math.sqrt(2.0) * special.dawsn(b / math.sqrt(2.0))
            return envelope * (re + 1j * im)
        q_max, b_max, spl_re, spl_im, q_grid, h0 = self._dispersion_tables
        q = np.sqrt(qt2)
        q, b = np.broadcast_arrays(q, b)
        ab = np.abs(b)
        inside_q = q <= q_max
        qc = np.minimum(q, q_max)
        bc = np.minimum(ab, b_max)
        re = np.where(ab <= b_max, spl_re.ev(qc, bc), 0.0)
        im = spl_im.ev(qc, bc)
        # beyond the table the sine transform behaves like -H(q, 0) / b
        far = ab > b_max
        if np.any(far):
            h_at = np.interp(qc[far], q_grid, h0)
            im = im.copy()
            im[far] = -h_at / ab[far]
        im = np.sign(b) * im
        out = np.where(inside_q, re + 1j * im, 0.0)
        return out


def autocorr(medium: SpectralMedium, r):
    """Autocorrelation R at 3-vectors ``r`` (trailing axis of length 3)."""
    r = np.asarray(r, dtype=float)
    if medium.model == GAUSSIAN:
        return np.exp(-0.5 * np.sum(r * r, axis=-1))
    return medium._table_eval(np.hypot(r[..., 0], r[..., 1]), r[..., 2])


def psd3(medium: SpectralMedium, q):
    """Three-dimensional power spectral density at wave vectors ``q``."""
    q = np.asarray(q, dtype=float)
    qt2 = q[..., 0] ** 2 + q[..., 1] ** 2
    if medium.model == GAUSSIAN:
        return medium.psd3_sq(qt2, q[..., 2])
    # direct quadrature: 2 * int_0^inf H(q_t, zeta) cos(q_z zeta) d zeta
    zeta, w = medium._zeta_rule
    qt = np.sqrt(qt2).reshape(-1)
    qz = q[..., 2].reshape(-1)
    out = np.empty(qt.size)
    for idx in range(qt.size):
        h = medium._hankel(np.full(zeta.shape, qt[idx]), zeta)
        out[idx] = 2.0 * np.sum(h * np.cos(qz[idx] * zeta) * w)
    return out.reshape(qt2.shape)


def psd_partial(medium: SpectralMedium, q_t, zeta):
    """Transverse 2D Fourier transform of R at longitudinal lag ``zeta``."""
    q_t = np.asarray(q_t, dtype=float)
    qt = np.hypot(q_t[..., 0], q_t[..., 1])
    zeta = np.asarray(zeta, dtype=float)
    if medium.model == GAUSSIAN:
        return _TWO_PI * np.exp(-0.5 * qt * qt) * np.exp(-0.5 * zeta * zeta)
    return medium._hankel(qt, np.abs(zeta))


def dispersion_integral(medium: SpectralMedium, q_t, b):
    """One-sided lag integral of the partial transform against exp(-i b zeta).

    For the tabulated model this is an adaptive quadrature with absolute
    tolerance 1e-10 and accepts scalar inputs only.
    """
    q_t = np.asarray(q_t, dtype=float)
    qt2 = q_t[..., 0] ** 2 + q_t[..., 1] ** 2
    if medium.model == GAUSSIAN:
        return medium.dispersion_sq(qt2, b)
    qt = math.sqrt(float(qt2))
    b = float(b)
    upper = float(medium.table.r_z[-1])

    def h(zeta):
        return float(medium._hankel(qt, zeta))

    opts = dict(epsabs=1e-10, epsrel=1e-10, limit=400)
    if b == 0.0:
        re = integrate.quad(h, 0.0, upper, **opts)[0]
        return complex(re, 0.0)
    re = integrate.quad(h, 0.0, upper, weight="cos", wvar=b, **opts)[0]
    im = integrate.quad(h, 0.0, upper, weight="sin", wvar=b, **opts)[0]
    return complex(re, -im)
