import os
import subprocess
import sys

import numpy as np
import pytest

from poltrans import _accel, _kernels


def _pairs(n=40, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.05, 0.9, size=(4, n))
    t = rng.uniform(0, 2 * np.pi, size=(2, n))
    return r[0] * np.cos(t[0]), r[0] * np.sin(t[0]), r[1] * np.cos(t[1]), r[1] * np.sin(t[1])


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_pair_gamma_paths_agree():
    args = _pairs()
    for fast, slow in zip(_kernels._pair_gamma_numba_entry(*args), _kernels.pair_gamma_numpy(*args)):
        np.testing.assert_allclose(fast, slow, rtol=1e-13, atol=1e-15)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_apply_gain_paths_agree():
    rng = np.random.default_rng(1)
    n = 30
    indptr = np.concatenate([[0], np.cumsum(rng.integers(1, 6, size=n))])
    indices = rng.integers(0, n, size=indptr[-1])
    weight = rng.random(indptr[-1])
    g = [rng.normal(size=indptr[-1]) for _ in range(4)]
    p11, p22 = rng.random(n), rng.random(n)
    p12 = rng.normal(size=n) + 1j * rng.normal(size=n)
    args = (indptr, indices, weight, *g, p11, p22, p12)
    for fast, slow in zip(_kernels.apply_gain_numba(*args), _kernels.apply_gain_numpy(*args)):
        np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-14)


def test_select():
    assert _accel.select("a", "b", use_numba=False) == "b"
    if _accel.HAVE_NUMBA:
        assert _accel.select("a", "b", use_numba=True) == "a"


def test_disable_flag_selects_numpy():
    env = dict(os.environ, POLTRANS_DISABLE_NUMBA="1")
    code = ("from poltrans import _accel, _kernels; "
            "print(_accel.USE_NUMBA, _kernels.apply_gain is _kernels.apply_gain_numpy)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.split() == ["False", "True"], out.stderr
