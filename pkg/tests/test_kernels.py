import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedate import _kernels_py, kernels

try:
    from fedate import _kernels as compiled
except ImportError:
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def _backend(env_value):
    env = {"FEDATE_PURE_PYTHON": env_value} if env_value is not None else {}
    import os
    full = {k: v for k, v in os.environ.items() if k != "FEDATE_PURE_PYTHON"}
    full.update(env)
    out = subprocess.run([sys.executable, "-c", "from fedate import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=full, check=True)
    return out.stdout.strip()


def test_env_forces_fallback():
    assert _backend("1") == "python"


@needs_compiled
def test_compiled_selected_by_default():
    assert _backend(None) == "cython"
    assert kernels.BACKEND in ("cython", "python")


def _problem(gen, K, p, n=40):
    grams, xty = [], []
    for _ in range(K):
        X = np.column_stack([np.ones(n), gen.normal(size=(n, p - 1))])
        y = X @ gen.normal(size=p) + gen.normal(size=n)
        grams.append(X.T @ X)
        xty.append(X.T @ y)
    counts = np.full(K, float(n))
    lam = max(np.linalg.eigvalsh(g / n)[-1] for g in grams)
    return np.stack(grams), np.stack(xty), counts, counts / counts.sum(), np.full(K, 0.4 / lam), np.zeros(p)


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_backends_agree_fedavg(K, p, E, seed):
    prob = _problem(np.random.default_rng(seed), K, p)
    a = _kernels_py.fedavg_full_batch(*prob, 50, E, -1.0, 1e12)
    b = compiled.fedavg_full_batch(*prob, 50, E, -1.0, 1e12)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-10, atol=1e-12)
    assert a[1] == b[1] and a[2] == b[2]


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_backends_agree_power_iteration(p, seed):
    A = np.random.default_rng(seed).normal(size=(20, p))
    G = np.ascontiguousarray(A.T @ A)
    start = np.ones(p) / np.sqrt(p)
    a = _kernels_py.power_iteration(G, start, 1e-12, 10000)
    b = compiled.power_iteration(G, start, 1e-12, 10000)
    assert a[0] == pytest.approx(b[0], rel=1e-10)
    assert a[2] == b[2]


def test_power_iteration_matches_eigvalsh(gen):
    A = gen.normal(size=(30, 5))
    G = np.ascontiguousarray(A.T @ A)
    lam, _, ok = kernels.power_iteration(G, np.ones(5) / np.sqrt(5), 1e-14, 100000)
    assert ok and lam == pytest.approx(np.linalg.eigvalsh(G)[-1], rel=1e-8)


def test_fedavg_kernel_reaches_least_squares(gen):
    grams, xty, counts, w, eta, theta0 = _problem(gen, 3, 4)
    theta, done, status, *_ = kernels.fedavg_full_batch(grams, xty, counts, w, eta, theta0, 20000, 1, 1e-13, 1e12)
    assert status == kernels.CONVERGED and done < 20000
    np.testing.assert_allclose(theta, np.linalg.solve(grams.sum(0), xty.sum(0)), atol=1e-9)


def test_fedavg_kernel_flags_divergence(gen):
    grams, xty, counts, w, eta, theta0 = _problem(gen, 2, 3)
    out = kernels.fedavg_full_batch(grams, xty, counts, w, eta * 20, theta0, 5000, 1, -1.0, 1e6)
    assert out[2] == kernels.DIVERGED
