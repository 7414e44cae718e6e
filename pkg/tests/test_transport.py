import math

import numpy as np
import pytest

from poltrans.geometry import gamma_block
from poltrans.grid import DirectionGrid
from poltrans.medium import SpectralMedium
from poltrans.source import ANISOTROPIC_TM, SourceSpec, initial_field
from poltrans.transport import (CoherenceField, EnergyDriftError, GridMismatchError, PairOperator,
                                PositivityError, RadialOperator, evolve, min_eigenvalues,
                                power_coefficient, scattering_rhs, stokes, total_energy,
                                wigner_sheet)

G50 = 2 * math.pi / 50


@pytest.fixture(scope="module")
def polar_setup():
    m = SpectralMedium(gamma=G50, alpha=1.0)
    grid = DirectionGrid.polar(32, 32, 0.5)
    rop = RadialOperator.build(m, grid)
    pop = PairOperator.build(m, grid, imag_q=np.repeat(rop.imag_q, grid.n_angular, axis=0))
    return m, grid, rop, pop


def _random_psd(n, rng):
    a = rng.normal(size=(n, 2, 2)) + 1j * rng.normal(size=(n, 2, 2))
    return a @ np.conj(np.swapaxes(a, 1, 2))


def test_energy_closed_form(polar_setup):
    _, grid, _, _ = polar_setup
    fine = DirectionGrid.polar(96, 256, 0.95)
    p = CoherenceField(fine, initial_field(SourceSpec(gamma_j=G50), fine))
    assert total_energy(p) == pytest.approx(G50 ** 2 / (2 * math.pi), rel=1e-6)
    assert total_energy(p.scaled(0.0)) == 0.0


def test_rhs_zero_and_trace_conservation(polar_setup):
    _, grid, _, pop = polar_setup
    zero = CoherenceField(grid, np.zeros((grid.size, 2, 2)))
    assert np.max(np.abs(scattering_rhs(pop, zero))) == 0.0
    rng = np.random.default_rng(5)
    p = CoherenceField(grid, _random_psd(grid.size, rng))
    rhs = scattering_rhs(pop, p)
    flux = np.sum(grid.weights * np.trace(rhs, axis1=1, axis2=2).real)
    energy = np.sum(grid.weights * np.trace(p.P, axis1=1, axis2=2).real)
    assert abs(flux) < 1e-8 * energy


def test_two_node_hand_computation():
    m = SpectralMedium(gamma=G50, alpha=1.0)
    nodes = np.array([[0.1, 0.0], [0.1, 0.02]])
    grid = DirectionGrid("Cartesian", nodes, np.array([1e-4, 1e-4]), 0.2)
    op = PairOperator.build(m, grid, imag_q=np.zeros((2, 2, 2)))
    p = np.zeros((2, 2, 2), dtype=complex)
    p[1, 0, 0] = 1.0
    c = m.k ** 4 * m.alpha ** 2 / (4 * m.gamma ** 3 * (2 * math.pi) ** 2)
    d = nodes[0] - nodes[1]
    b = np.sqrt(1 - np.sum(nodes ** 2, 1))
    spec = (2 * math.pi) ** 1.5 * math.exp(-0.5 * (m.k / m.gamma) ** 2 * (d @ d + (b[0] - b[1]) ** 2))
    g = gamma_block("aa", nodes[0], nodes[1])
    gain = c * 1e-4 * spec * g @ p[1] @ g.T
    out = op.rhs(p)
    np.testing.assert_allclose(out[0], gain, rtol=1e-12, atol=1e-300)
    # discrete loss: row sum over the self pair (Gamma = I / beta) and the neighbour
    self_term = (2 * math.pi) ** 1.5 * np.eye(2) / b[0] ** 2
    ref = c * 1e-4 * (self_term + spec * g @ g.T)
    np.testing.assert_allclose(op.loss[0], ref, rtol=1e-12, atol=1e-14 * np.max(ref))


def test_radial_and_pair_operators_agree(polar_setup):
    m = polar_setup[0]
    grid = DirectionGrid.polar(32, 128, 0.5)
    rop = RadialOperator.build(m, grid)
    pop = PairOperator.build(m, grid, imag_q=np.repeat(rop.imag_q, grid.n_angular, axis=0))
    p0 = CoherenceField(grid, initial_field(SourceSpec(gamma_j=2 * G50), grid))
    f1, _ = evolve(rop, p0, 2e-3)
    f2, _ = evolve(pop, p0, 2e-3)
    assert np.max(np.abs(f1.P - f2.P)) < 1e-10 * np.max(np.abs(f1.P))
    # isotropic data stays angle-independent on the pair operator
    p = f2.P.reshape(grid.n_radial, grid.n_angular, 2, 2)
    assert np.max(np.abs(p - p[:, :1])) < 1e-8 * np.max(np.abs(p))


def test_evolution_invariants(polar_setup):
    m, grid, rop, _ = polar_setup
    p0 = CoherenceField(grid, initial_field(SourceSpec(gamma_j=G50), grid))
    mfp = float(rop.mean_free_paths()[0][0])
    f, traj = evolve(rop, p0, 2 * mfp)
    a = traj.as_arrays()
    assert traj.energy_drift < 1e-6
    assert np.all(a["min_eig_ratio"] >= -1e-10)
    assert np.max(a["max_p12"]) < 1e-10 * np.max(p0.p11)
    assert a["c_p"][0] == pytest.approx(1.0)
    assert np.all(np.diff(a["c_p"]) <= 1e-14)
    st = stokes(f)
    assert np.all(st.s1 + 1e-15 >= np.sqrt(st.s2 ** 2 + st.s3 ** 2 + st.s4 ** 2))
    f2, _ = evolve(rop, p0.scaled(3.0), 2 * mfp)
    np.testing.assert_allclose(f2.P, 3.0 * f.P, rtol=1e-12, atol=1e-15 * np.max(np.abs(f.P)))


def test_zero_range_returns_initial(polar_setup):
    _, grid, rop, _ = polar_setup
    p0 = CoherenceField(grid, initial_field(SourceSpec(gamma_j=G50), grid))
    f, traj = evolve(rop, p0, 0.0, snapshots=[0.0])
    np.testing.assert_array_equal(f.P, p0.P)
    assert 0.0 in traj.snapshots


def test_snapshots_hit_exactly(polar_setup):
    _, grid, rop, _ = polar_setup
    p0 = CoherenceField(grid, initial_field(SourceSpec(gamma_j=G50), grid))
    _, traj = evolve(rop, p0, 1e-3, snapshots=[3.3e-4, 1e-3])
    assert set(traj.snapshots) == {3.3e-4, 1e-3}
    assert any(abs(z - 3.3e-4) < 1e-15 for z in traj.z)


def test_cartesian_anisotropic_start_builds_cross_terms():
    m = SpectralMedium(gamma=G50, alpha=2.796)
    grid = DirectionGrid.cartesian(0.04, 0.4)
    op = PairOperator.build(m, grid)
    p0 = CoherenceField(grid, initial_field(SourceSpec(ANISOTROPIC_TM), grid))
    _, traj = evolve(op, p0, 2e-3)
    a = traj.as_arrays()
    assert a["max_p12"][0] == 0.0 and a["max_p12"][-1] > 1e-3
    assert traj.energy_drift < 1e-10


def test_integrator_errors(polar_setup):
    _, grid, rop, _ = polar_setup
    p0 = CoherenceField(grid, initial_field(SourceSpec(gamma_j=G50), grid))
    mfp = float(rop.mean_free_paths()[0][0])
    with pytest.raises((PositivityError, EnergyDriftError)):
        evolve(rop, p0, 10 * mfp, dz=5 * mfp)
    with pytest.raises(ValueError):
        evolve(rop, p0, -1.0)


def test_grid_mismatch(polar_setup):
    _, _, rop, _ = polar_setup
    other = DirectionGrid.polar(8, 8, 0.5)
    with pytest.raises(GridMismatchError):
        scattering_rhs(rop, CoherenceField(other, np.zeros((other.size, 2, 2))))
    with pytest.raises(GridMismatchError):
        CoherenceField(other, np.zeros((3, 2, 2)))


def test_stokes_examples():
    p = np.array([[[2.0, 0.0], [0.0, 0.0]], [[1.5, 0.0], [0.0, 1.5]], [[1.0, 1.0], [1.0, 1.0]]],
                 dtype=complex)
    st = stokes(p)
    np.testing.assert_allclose(np.stack([st.s1, st.s2, st.s3, st.s4], 1),
                               [[2, 2, 0, 0], [3, 0, 0, 0], [2, 0, 2, 0]])
    np.testing.assert_allclose(st.pol, [1, 0, 1])
    # S3 + i S4 is the (1, 2) entry of 2 v v^dagger
    v = np.array([0.6, 0.3 - 0.5j])
    pv = np.outer(v, np.conj(v))[None]
    st = stokes(pv)
    assert st.s3[0] + 1j * st.s4[0] == pytest.approx(2 * pv[0, 0, 1])


def test_power_coefficient():
    grid = DirectionGrid.polar(4, 4, 0.5)
    assert power_coefficient(CoherenceField.from_components(grid, 1.0, 0.0)) == 1.0
    assert power_coefficient(CoherenceField.from_components(grid, 1.0, 1.0)) == 0.0
    with pytest.raises(ValueError):
        power_coefficient(CoherenceField.from_components(grid, 0.0, 0.0))


def test_wigner_sheet():
    grid = DirectionGrid("Cartesian", np.array([[0.6, 0.0], [0.3, 0.4]]), np.ones(2), 0.6)
    f = CoherenceField.from_components(grid, [1.0, 2.0], [0.0, 0.0], z=1.0)
    pos, p = wigner_sheet(f, [0.6, 0.0])
    np.testing.assert_allclose(pos, [0.75, 0.0])
    assert p[0, 0] == 1.0
    pos, _ = wigner_sheet(f, [0.3, 0.4], z=0.0)
    np.testing.assert_array_equal(pos, [0.0, 0.0])
    pos, _ = wigner_sheet(f, [0.3, 0.4])
    assert abs(pos[0] * 0.4 - pos[1] * 0.3) < 1e-15
    with pytest.raises(KeyError):
        wigner_sheet(f, [0.1, 0.1])


def test_min_eigenvalues():
    p = np.array([[[2.0, 1.0], [1.0, 2.0]]], dtype=complex)
    assert min_eigenvalues(p)[0] == pytest.approx(1.0)
