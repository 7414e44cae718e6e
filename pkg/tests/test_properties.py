"""Invariants checked on randomly drawn inputs."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from poltrans.geometry import (beta, eigensystem, frame_vectors, gamma_block, gamma_hf,
                               grad_beta, m_matrix)
from poltrans.hflimit import rotate_from_cartesian, rotate_to_cartesian
from poltrans.transport import min_eigenvalues, stokes

CASES = settings(max_examples=1000, deadline=None)

radius = st.floats(1e-3, 0.99)
angle = st.floats(0.0, 2 * math.pi)
coeff = st.floats(-1.0, 1.0)


@st.composite
def kappas(draw):
    r, t = draw(radius), draw(angle)
    return np.array([r * math.cos(t), r * math.sin(t)])


@st.composite
def coherence(draw):
    a = np.array([[draw(coeff) + 1j * draw(coeff) for _ in range(2)] for _ in range(2)])
    return a @ a.conj().T


@CASES
@given(kappas())
def test_frame_orthonormal(k):
    u, up, kv = frame_vectors(k)
    m = np.stack([u, up, kv])
    np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.cross(u, up), kv, atol=1e-12)


@CASES
@given(kappas())
def test_mode_eigenvectors(k):
    pp, ppp, pm, pmp, b = eigensystem(k)
    m = m_matrix(k)
    scale = 1.0 / math.sqrt(b)
    for vec, lam in ((pp, b), (ppp, b), (pm, -b), (pmp, -b)):
        assert np.max(np.abs(m @ vec - lam * vec)) < 1e-11 * scale


@CASES
@given(kappas(), kappas())
def test_coupling_block_transpose(a, b):
    np.testing.assert_allclose(gamma_block("aa", b, a), gamma_block("aa", a, b).T,
                               rtol=1e-12, atol=1e-12 * np.max(np.abs(gamma_block("aa", a, b))))


@CASES
@given(kappas(), kappas())
def test_hf_block_is_rotation(a, b):
    g = gamma_hf(a, b)
    np.testing.assert_allclose(g @ g.T, np.eye(2), atol=1e-12)
    assert np.linalg.det(g) > 0


@CASES
@given(coherence())
def test_stokes_bounds(p):
    s = stokes(p)
    assert s.s2 ** 2 + s.s3 ** 2 + s.s4 ** 2 <= s.s1 ** 2 * (1 + 1e-12) + 1e-15
    assert 0.0 <= s.pol <= 1.0
    np.testing.assert_allclose(s.s3 + 1j * s.s4, 2 * p[0, 1], atol=1e-14)
    assert min_eigenvalues(p[None])[0] >= -1e-12 * max(1.0, np.trace(p).real)


@CASES
@given(coherence(), kappas())
def test_cartesian_rotation_round_trip(p, k):
    t = rotate_to_cartesian(p, k)
    np.testing.assert_allclose(np.trace(t), np.trace(p), atol=1e-12)
    np.testing.assert_allclose(rotate_from_cartesian(t, k), p, atol=1e-12)


@CASES
@given(st.floats(0.0, 0.95), angle)
def test_grad_beta_finite_difference(r, t):
    k = np.array([r * math.cos(t), r * math.sin(t)])
    h = 1e-6
    fd = np.array([(beta(k + h * e) - beta(k - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(grad_beta(k), fd, atol=1e-7)
