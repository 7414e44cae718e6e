import math

import numpy as np
import pytest
from scipy.linalg import expm

from poltrans.grid import DirectionGrid
from poltrans.kernel import (IsotropyError, QuadratureError, QuadSpec, build_kernel_field, expm2,
                             loss_from_q, mean_amplitude, mean_free_paths, mfp_from_q, q_matrices,
                             q_matrix, re_q_from_psd, s_matrix)
from poltrans.medium import TABULATED, CorrelationTable, SpectralMedium

GAMMAS = [2 * math.pi / 50, 2 * math.pi / 17, 2 * math.pi / 10]
NODES = np.array([[0.05, 0.0], [0.1, 0.1], [0.2, -0.05], [0.3, 0.3], [-0.4, 0.1],
                  [0.5, 0.0], [0.0, 0.6], [-0.45, -0.45], [0.75, 0.1], [0.0, -0.85]])


@pytest.fixture(scope="module")
def q_nodes():
    return {g: q_matrices(SpectralMedium(gamma=g), NODES) for g in GAMMAS}


@pytest.mark.parametrize("g", GAMMAS)
def test_real_part_matches_psd_assembly(q_nodes, g):
    rq = re_q_from_psd(SpectralMedium(gamma=g), NODES)
    q = q_nodes[g]
    err = np.max(np.abs(q.real - rq), axis=(1, 2)) / np.max(np.abs(q), axis=(1, 2))
    assert np.all(err < 1e-8)


def _interior(g, kappa_max=0.95):
    # nodes whose spectral window (power above 1e-10 of peak) stays inside the disk
    reach = math.sqrt(2 * math.log(1e10)) * g / (2 * math.pi)
    return np.hypot(*NODES.T) + reach <= kappa_max


@pytest.mark.parametrize("g", GAMMAS)
def test_isotropic_structure(q_nodes, g):
    q = q_nodes[g]
    scale = np.max(np.abs(q), axis=(1, 2))
    assert np.all(np.abs(q[:, 0, 1]) < 1e-10 * scale)
    assert np.all(np.abs(q[:, 1, 0]) < 1e-10 * scale)
    assert np.all(np.abs(q - np.swapaxes(q, 1, 2)) < 1e-12 * scale[:, None, None])
    inner = _interior(g)
    assert inner.sum() >= 3
    re11, re22 = q[inner, 0, 0].real, q[inner, 1, 1].real
    assert np.all(np.abs(re11 - re22) < 1e-8 * np.abs(re11))


@pytest.mark.parametrize("g", GAMMAS)
def test_resolution_doubling(q_nodes, g):
    fine = q_matrices(SpectralMedium(gamma=g), NODES[:6], QuadSpec(192, 512))
    q = q_nodes[g][:6]
    err = np.max(np.abs(fine - q), axis=(1, 2)) / np.max(np.abs(q), axis=(1, 2))
    assert np.all(err < 1e-6)


def test_depends_on_radius_only():
    m = SpectralMedium()
    r = 0.4
    t = np.linspace(0, 2 * math.pi, 7, endpoint=False)
    q = q_matrices(m, np.stack([r * np.cos(t), r * np.sin(t)], -1))
    assert np.max(np.abs(q - q[0])) < 1e-8 * np.max(np.abs(q[0]))


def test_loss_matrix_and_eigenvalues():
    m = SpectralMedium()
    q = q_matrix(m, [0.3, 0.2])
    s = s_matrix(m, [0.3, 0.2])
    np.testing.assert_allclose(s, -2 * q.real, atol=1e-12)
    grid = DirectionGrid.polar(8, 8, 0.6)
    kf = build_kernel_field(m, grid, QuadSpec(kappa_max=0.95), radial_only=True)
    assert np.all(kf.lambda1 >= kf.lambda2) and np.all(kf.lambda2 > 0)
    np.testing.assert_allclose(kf.lambda1, kf.lambda2, rtol=1e-8)


def test_mean_free_path_monotone_in_radius():
    r = np.linspace(0.05, 0.9, 12)
    nodes = np.stack([r, np.zeros_like(r)], -1)
    for g in GAMMAS:
        tm, te = mean_free_paths(SpectralMedium(gamma=g), nodes)
        assert np.all(np.diff(tm) < 0) and np.all(np.diff(te) < 0)


def test_small_gamma_anchor():
    m = SpectralMedium(gamma=1e-3, alpha=1.0)
    tm, _ = mean_free_paths(m, [1e-3 * 0.05, 0.0])
    expected = 8e-3 / (m.k ** 2 * math.sqrt(2 * math.pi))
    assert tm == pytest.approx(expected, rel=5e-2)


def test_quadrature_error_raised():
    coarse = QuadSpec(n_radial=8, n_angular=16, check_tol=1e-6)
    with pytest.raises(QuadratureError):
        q_matrices(SpectralMedium(), NODES[:2], coarse)


def test_mfp_requires_diagonal():
    q = np.array([[-1.0, 0.2], [0.2, -1.0]], dtype=complex)
    with pytest.raises(IsotropyError):
        mfp_from_q(q)


def test_elongated_medium_splits_te_and_tm():
    tab = CorrelationTable.from_function(lambda rt, rz: np.exp(-rt ** 2 / 2 - rz ** 2 / 8),
                                         8.0, 16.0, 161, 161)
    m = SpectralMedium(model=TABULATED, table=tab, gamma=2 * math.pi / 10)
    q = q_matrix(m, [0.6, 0.0])
    assert abs(q[0, 1]) < 1e-10 * np.max(np.abs(q))
    assert abs(q[0, 0].real - q[1, 1].real) > 1e-6 * abs(q[0, 0].real)


def test_expm2_against_scipy():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(40, 2, 2)) + 1j * rng.normal(size=(40, 2, 2))
    a[:5] = np.diag([0.3 + 0.1j, 0.3 + 0.1j])  # repeated eigenvalue
    a[5] = [[1.0, 1.0], [0.0, 1.0]]            # defective
    ref = np.array([expm(x) for x in a])
    np.testing.assert_allclose(expm2(a), ref, rtol=1e-12, atol=1e-13)


def test_mean_amplitude():
    m = SpectralMedium()
    grid = DirectionGrid.polar(6, 4, 0.8)
    kf = build_kernel_field(m, grid, radial_only=True)
    a0 = np.zeros((grid.size, 2), dtype=complex)
    a0[:, 0] = 1.0
    np.testing.assert_array_equal(mean_amplitude(kf, a0, 0.0), a0)
    z = 3e-3
    a = mean_amplitude(kf, a0, z)
    np.testing.assert_allclose(np.abs(a[:, 0]), np.exp(kf.Q[:, 0, 0].real * z), rtol=1e-14)
    rng = np.random.default_rng(1)
    a0 = rng.normal(size=(grid.size, 2)) + 1j * rng.normal(size=(grid.size, 2))
    n0 = np.linalg.norm(a0, axis=1)
    last = n0
    for z in np.linspace(1e-3, 2e-2, 10):
        n = np.linalg.norm(mean_amplitude(kf, a0, z), axis=1)
        assert np.all(n >= np.exp(-kf.lambda1 * z / 2) * n0 * (1 - 1e-12))
        assert np.all(n <= np.exp(-kf.lambda2 * z / 2) * n0 * (1 + 1e-12))
        assert np.all(n <= last * (1 + 1e-12))
        last = n
    with pytest.raises(ValueError):
        mean_amplitude(kf, a0, -1.0)


def test_loss_from_q_definition():
    q = np.array([[-2.0 + 1j, 0.5j], [0.5j, -3.0 + 0.2j]])
    np.testing.assert_allclose(loss_from_q(q), [[4.0, 0.0], [0.0, 6.0]])
