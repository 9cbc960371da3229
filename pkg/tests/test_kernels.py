import os
import subprocess
import sys

import numpy as np
import pytest

from lossy_kalman import LinearSystem, kernels, riccati_step, riccati_trajectory
from lossy_kalman import _fallback
from lossy_kalman.filtering import draw_gammas

try:
    from lossy_kalman import _kernels
except ImportError:  # extension not built
    _kernels = None

IMPLS = [pytest.param(_fallback, id="python"),
         pytest.param(_kernels, id="cython",
                      marks=pytest.mark.skipif(_kernels is None, reason="extension not built"))]


def _random_system(rng, n, m):
    X = rng.normal(size=(n, n))
    Y = rng.normal(size=(m, m))
    return LinearSystem(A=rng.normal(size=(n, n)), C=rng.normal(size=(m, n)),
                        Q=X @ X.T + np.eye(n), R=Y @ Y.T + np.eye(m))


@pytest.mark.parametrize("impl", IMPLS)
def test_batch_matches_reference(impl):
    rng = np.random.default_rng(0)
    for n, m in [(1, 1), (2, 1), (3, 2), (4, 3)]:
        s = _random_system(rng, n, m)
        X = rng.normal(size=(6, n, n))
        P = X @ np.swapaxes(X, 1, 2) + np.eye(n)
        g = rng.integers(0, 2, 6).astype(np.uint8)
        out = kernels.riccati_batch(P, g, s.A, s.C, s.Q, s.R, impl=impl)
        for b in range(6):
            want = riccati_step(P[b], g[b], s)
            np.testing.assert_allclose(out[b], want, rtol=1e-12, atol=1e-12 * np.abs(want).max())


@pytest.mark.parametrize("impl", IMPLS)
def test_traces_match_reference(impl, degenerate_pair):
    G = np.stack([draw_gammas(0.7, 40, seed=1, trial=t) for t in range(5)])
    traces, stop = kernels.trace_trajectories(degenerate_pair, G, impl=impl)
    assert np.all(stop == 40)
    for t in range(5):
        want = np.trace(riccati_trajectory(degenerate_pair, G[t]), axis1=1, axis2=2)
        np.testing.assert_allclose(traces[t], want, rtol=1e-11)


@pytest.mark.parametrize("impl", IMPLS)
def test_stop_at_threshold(impl, scalar_sys):
    G = np.zeros((2, 10), np.uint8)
    G[1] = 1
    traces, stop = kernels.trace_trajectories(scalar_sys, G, threshold=100.0, impl=impl)
    # open loop: 5, 21, 85, 341 -> stops at index 3
    assert stop.tolist() == [3, 10]
    np.testing.assert_array_equal(traces[0, :4], [5.0, 21.0, 85.0, 341.0])
    assert np.isnan(traces[0, 4:]).all()


@pytest.mark.parametrize("impl", IMPLS)
def test_overflow_stops_trial(impl, scalar_sys):
    G = np.zeros((1, 600), np.uint8)
    traces, stop = kernels.trace_trajectories(scalar_sys, G, impl=impl)
    assert stop[0] < 600
    assert not np.isfinite(traces[0, stop[0]])


@pytest.mark.parametrize("impl", IMPLS)
def test_batch_rejects_indefinite(impl, scalar_sys):
    P = np.array([[[-5.0]]])
    with pytest.raises(ArithmeticError):
        kernels.riccati_batch(P, np.ones(1, np.uint8), scalar_sys.A, scalar_sys.C,
                              scalar_sys.Q, scalar_sys.R, impl=impl)


@pytest.mark.skipif(_kernels is None, reason="extension not built")
def test_backends_agree_on_monte_carlo():
    rng = np.random.default_rng(4)
    s = _random_system(rng, 3, 1)
    # keep P well conditioned: summation order differences grow with cond(P)
    s = LinearSystem(A=1.3 * s.A / np.abs(np.linalg.eigvals(s.A)).max(), C=s.C, Q=s.Q, R=s.R)
    G = (rng.random((64, 200)) < 0.8).astype(np.uint8)
    t1, s1 = kernels.trace_trajectories(s, G, 1e12, impl=_fallback)
    t2, s2 = kernels.trace_trajectories(s, G, 1e12, impl=_kernels)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_allclose(t1, t2, rtol=1e-9)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels is not None and not os.environ.get("LOSSY_KALMAN_PURE"):
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, LOSSY_KALMAN_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "import lossy_kalman; print(lossy_kalman.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
