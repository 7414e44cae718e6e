import math

import numpy as np
import pytest

from poltrans.geometry import (DomainError, beta, eigensystem, frame_vectors, gamma_aa_unchecked,
                               gamma_block, gamma_hf, grad_beta, m_matrix, perp)

RNG = np.random.default_rng(7)


def _random_kappa(n, r_max=0.95):
    r = r_max * np.sqrt(RNG.uniform(0.01, 1.0, n))
    t = RNG.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)


def test_beta_values():
    assert beta([0.6, 0.0]) == pytest.approx(0.8)
    np.testing.assert_allclose(beta([[0.0, 0.0], [0.3, 0.4]]), [1.0, math.sqrt(0.75)])


def test_grad_beta_formula():
    k = np.array([0.3, -0.2])
    np.testing.assert_allclose(grad_beta(k), -k / math.sqrt(1 - 0.13))


def test_perp_rotates_by_quarter_turn():
    np.testing.assert_array_equal(perp([1.0, 2.0]), [-2.0, 1.0])


def test_frame_is_right_handed():
    u, up, kv = frame_vectors(_random_kappa(50))
    np.testing.assert_allclose(np.cross(u, up), kv, atol=1e-14)


def test_eigensystem_residuals():
    kappa = _random_kappa(50)
    m = m_matrix(kappa)
    pp, ppp, pm, pmp, b = eigensystem(kappa)
    for vec, sign in ((pp, 1), (ppp, 1), (pm, -1), (pmp, -1)):
        res = np.einsum("nij,nj->ni", m, vec) - sign * b[:, None] * vec
        assert np.max(np.abs(res)) < 1e-13


def test_gamma_matches_frame_overlaps():
    # Gamma^aa = [u.u', u.u'_perp; u_perp.u', u_perp.u'_perp] / sqrt(beta beta')
    a, c = _random_kappa(200), _random_kappa(200)
    u, up, _ = frame_vectors(a)
    v, vp, _ = frame_vectors(c)
    ref = np.empty((200, 2, 2))
    ref[:, 0, 0] = np.sum(u * v, -1)
    ref[:, 0, 1] = np.sum(u * vp, -1)
    ref[:, 1, 0] = np.sum(up * v, -1)
    ref[:, 1, 1] = np.sum(up * vp, -1)
    ref /= np.sqrt(beta(a) * beta(c))[:, None, None]
    np.testing.assert_allclose(gamma_block("aa", a, c), ref, atol=1e-12)


def test_gamma_diagonal_limit():
    k = np.array([0.4, 0.25])
    np.testing.assert_allclose(gamma_block("aa", k, k), np.eye(2) / beta(k), atol=1e-14)


def test_gamma_unchecked_agrees():
    a, c = _random_kappa(20), _random_kappa(20)
    np.testing.assert_array_equal(gamma_aa_unchecked(a, c), gamma_block("aa", a, c))


def test_gamma_hf_is_rotation():
    a, c = _random_kappa(30), _random_kappa(30)
    g = gamma_hf(a, c)
    np.testing.assert_allclose(g @ np.swapaxes(g, 1, 2), np.broadcast_to(np.eye(2), g.shape),
                               atol=1e-14)
    np.testing.assert_allclose(np.linalg.det(g), 1.0, atol=1e-14)


@pytest.mark.parametrize("bad", [[0.0, 0.0], [1.0, 0.0], [0.8, 0.7]])
def test_domain_errors(bad):
    with pytest.raises(DomainError):
        gamma_block("aa", bad, [0.1, 0.1])
    with pytest.raises(DomainError):
        frame_vectors(bad)


def test_beta_rejects_evanescent_and_bad_shape():
    with pytest.raises(DomainError):
        beta([1.2, 0.0])
    with pytest.raises(DomainError):
        beta([0.1, 0.2, 0.3])


def test_unknown_block():
    with pytest.raises(ValueError):
        gamma_block("xy", [0.1, 0.0], [0.2, 0.0])
