"""Backend equivalence for the convolution kernels.

The numba loops and the numpy shifted-slice path must produce the same
forward values and gradients; a scalar reference implementation pins
the semantics (zero padding of (k//2)*dilation, cell-aligned output).
"""

import numpy as np
import pytest

from crener import kernels


def scalar_conv(x, w, b, dilation):
    n, _, c_in = x.shape
    k = w.shape[0]
    c_out = w.shape[3]
    half = k // 2
    out = np.zeros((n, n, c_out), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            for co in range(c_out):
                acc = float(b[co])
                for a in range(k):
                    for c in range(k):
                        ii = i + (a - half) * dilation
                        jj = j + (c - half) * dilation
                        if 0 <= ii < n and 0 <= jj < n:
                            for ci in range(c_in):
                                acc += x[ii, jj, ci] * w[a, c, ci, co]
                out[i, j, co] = acc
    return out


@pytest.fixture
def case(rng):
    x = rng.normal(size=(6, 6, 3)).astype(np.float64)
    w = rng.normal(size=(3, 3, 3, 4)).astype(np.float64)
    b = rng.normal(size=(4,)).astype(np.float64)
    g = rng.normal(size=(6, 6, 4)).astype(np.float64)
    return x, w, b, g


@pytest.mark.parametrize("dilation", [1, 2, 3])
def test_numpy_forward_matches_scalar_reference(case, dilation):
    x, w, b, _ = case
    ref = scalar_conv(x, w, b, dilation)
    old = kernels.active_backend()
    try:
        kernels.set_backend("numpy")
        np.testing.assert_allclose(kernels.conv2d_forward(x, w, b, dilation), ref, rtol=1e-12)
    finally:
        kernels.set_backend(old)


@pytest.mark.parametrize("dilation", [1, 2, 3])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree(case, dilation, dtype):
    x, w, b, g = (a.astype(dtype) for a in case)
    results = {}
    old = kernels.active_backend()
    try:
        for backend in ("numpy", "numba"):
            kernels.set_backend(backend)
            fwd = kernels.conv2d_forward(x, w, b, dilation)
            bwd = kernels.conv2d_backward(x, w, g, dilation)
            results[backend] = (fwd, *bwd)
    finally:
        kernels.set_backend(old)
    tol = 1e-4 if dtype == np.float32 else 1e-10
    for a, bb in zip(results["numpy"], results["numba"]):
        assert a.dtype == dtype
        np.testing.assert_allclose(a, bb, rtol=tol, atol=tol)


def test_backward_matches_finite_differences(rng):
    x = rng.normal(size=(4, 4, 2))
    w = rng.normal(size=(3, 3, 2, 2))
    b = rng.normal(size=(2,))
    g = rng.normal(size=(4, 4, 2))
    old = kernels.active_backend()
    try:
        kernels.set_backend("numpy")
        dx, dw, db = kernels.conv2d_backward(x, w, g, 2)

        def loss(xv, wv, bv):
            return float((kernels.conv2d_forward(xv, wv, bv, 2) * g).sum())

        h = 1e-6
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for idx in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss(x, w, b)
                flat[idx] = orig - h
                lm = loss(x, w, b)
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                assert abs(fd - gflat[idx]) < 1e-6 * max(1.0, abs(fd))
    finally:
        kernels.set_backend(old)


def test_set_backend_validates():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_env_flag_parsing(monkeypatch):
    for value, expect in [("1", True), ("0", False), ("false", False),
                          ("off", False), ("FALSE", False), ("yes", True)]:
        monkeypatch.setenv("CRENER_NUMBA", value)
        assert kernels._env_wants_numba() is expect
    monkeypatch.delenv("CRENER_NUMBA")
    assert kernels._env_wants_numba() is True


def test_env_flag_selects_backend_at_import(tmp_path):
    import subprocess
    import sys

    code = "import crener.kernels as k; print(k.active_backend())"
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "CRENER_NUMBA": "0"},
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
