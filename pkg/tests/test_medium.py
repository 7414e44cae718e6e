import math

import numpy as np
import pytest
from scipy import integrate, special

from poltrans.medium import (GAUSSIAN, TABULATED, CorrelationTable, SpectralMedium, autocorr,
                             dispersion_integral, psd3, psd_partial)

LZ = 2.0


@pytest.fixture(scope="module")
def elongated():
    tab = CorrelationTable.from_function(
        lambda rt, rz: np.exp(-rt ** 2 / 2 - rz ** 2 / (2 * LZ ** 2)), 8.0, 16.0, 161, 161)
    return SpectralMedium(model=TABULATED, table=tab)


def _elongated_dispersion(q, b):
    return 2 * math.pi * math.exp(-q * q / 2) * LZ * (
        math.sqrt(math.pi / 2) * math.exp(-(LZ * b) ** 2 / 2)
        - 1j * math.sqrt(2) * special.dawsn(LZ * b / math.sqrt(2)))


def test_gaussian_autocorr_and_psd_at_origin():
    m = SpectralMedium()
    assert autocorr(m, [0.0, 0.0, 0.0]) == 1.0
    assert psd3(m, [0.0, 0.0, 0.0]) == pytest.approx((2 * math.pi) ** 1.5, rel=1e-15)


def test_gaussian_psd_matches_fft_of_autocorr():
    # independent route: direct 3D Fourier sum of R on a fine lattice
    m = SpectralMedium()
    h = 0.25
    x = np.arange(-8, 8 + h / 2, h)
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    r = np.exp(-0.5 * (X ** 2 + Y ** 2 + Z ** 2))
    for q in ([0.0, 0.0, 0.0], [0.7, -0.2, 1.1], [1.5, 0.0, 0.3]):
        direct = np.sum(r * np.cos(q[0] * X + q[1] * Y + q[2] * Z)) * h ** 3
        assert psd3(m, q) == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("q,b", [(0.0, 0.0), (0.4, 0.9), (1.2, -2.5), (0.3, 6.0)])
def test_gaussian_dispersion_against_quadrature(q, b):
    m = SpectralMedium()
    env = 2 * math.pi * math.exp(-q * q / 2)
    re = integrate.quad(lambda s: math.exp(-s * s / 2) * math.cos(b * s), 0, 40, limit=200)[0]
    im = -integrate.quad(lambda s: math.exp(-s * s / 2) * math.sin(b * s), 0, 40, limit=200)[0]
    got = dispersion_integral(m, [q, 0.0], b)
    assert got == pytest.approx(env * (re + 1j * im), rel=1e-10, abs=1e-13)


def test_psd_partial_and_longitudinal_integral():
    m = SpectralMedium()
    assert psd_partial(m, [0.0, 0.0], 0.0) == pytest.approx(2 * math.pi)
    assert m.longitudinal_integral(0.0) == pytest.approx(math.sqrt(2 * math.pi))
    assert m.longitudinal_integral(0.5) == pytest.approx(math.sqrt(2 * math.pi / 1.25))


def test_spectral_radius_bounds_spectrum():
    m = SpectralMedium()
    u = m.spectral_radius()
    assert m.psd3_sq(u * u, 0.0) / m.psd3_sq(0.0, 0.0) == pytest.approx(1e-20, rel=1e-9)


def test_tabulated_psd_matches_closed_form(elongated):
    # spline-table error is measured against the spectral peak
    peak = (2 * math.pi) ** 1.5 * LZ
    for q, qz in [(0.0, 0.0), (1.0, 0.3), (2.0, 1.0), (0.5, 2.0)]:
        exact = (2 * math.pi) ** 1.5 * LZ * math.exp(-q * q / 2 - LZ ** 2 * qz ** 2 / 2)
        assert elongated.psd3_sq(q * q, qz) == pytest.approx(exact, abs=1e-7 * peak)
        assert psd3(elongated, [q, 0.0, qz]) == pytest.approx(exact, abs=1e-7 * peak)


@pytest.mark.parametrize("q,b", [(0.5, 0.7), (1.0, 5.0), (1.5, 0.0)])
def test_tabulated_dispersion_matches_closed_form(elongated, q, b):
    exact = _elongated_dispersion(q, b)
    assert abs(elongated.dispersion_sq(q * q, b) - exact) <= 1e-6 * abs(exact)
    assert abs(dispersion_integral(elongated, [q, 0.0], b) - exact) <= 1e-6 * abs(exact)


def test_tabulated_dispersion_far_tail(elongated):
    # beyond the table the sine transform follows its -H/b asymptote
    exact = _elongated_dispersion(0.2, 80.0)
    assert abs(elongated.dispersion_sq(0.04, 80.0) - exact) <= 1e-4 * abs(exact)


def test_isotropy_detection(elongated):
    assert SpectralMedium().is_isotropic
    assert not elongated.is_isotropic
    iso = CorrelationTable.from_function(lambda rt, rz: np.exp(-(rt ** 2 + rz ** 2) / 2),
                                         8.0, 8.0, 81, 81)
    assert SpectralMedium(model=TABULATED, table=iso).is_isotropic


def test_table_csv_round_trip(tmp_path):
    tab = CorrelationTable.from_function(lambda rt, rz: np.exp(-(rt ** 2 + rz ** 2) / 2),
                                         4.0, 4.0, 9, 9)
    path = tmp_path / "r.csv"
    with open(path, "w") as fh:
        fh.write("r_t,r_z,R\n")
        for i, rt in enumerate(tab.r_t):
            for j, rz in enumerate(tab.r_z):
                fh.write(f"{float(rt)!r},{float(rz)!r},{float(tab.values[i, j])!r}\n")
    back = CorrelationTable.from_csv(path)
    np.testing.assert_array_equal(back.values, tab.values)


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(gamma=1.0), dict(gamma=0.0),
                                    dict(k=-1.0), dict(model="Exponential"),
                                    dict(model=TABULATED)])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        SpectralMedium(**kwargs)


def test_bad_table_shapes():
    with pytest.raises(ValueError):
        CorrelationTable(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 1.0, 2.0, 3.0]),
                         np.zeros((3, 4)))
    with pytest.raises(ValueError):
        CorrelationTable(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.zeros((2, 2)))


def test_with_params_keeps_model():
    m = SpectralMedium().with_params(gamma=0.1)
    assert m.gamma == 0.1 and m.model == GAUSSIAN
