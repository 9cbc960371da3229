"""Backend selection for the Riccati kernels.

The compiled extension is used when it imports; setting the environment
variable ``LOSSY_KALMAN_PURE=1`` forces the NumPy fallback. ``BACKEND``
names the active choice.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("LOSSY_KALMAN_PURE", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def _mat(M):
    return np.ascontiguousarray(M, dtype=np.float64)


def riccati_batch(P, gammas, A, C, Q, R, impl=None):
    """Apply one Riccati step to each matrix in the stack ``P`` (shape ``(B, n, n)``)."""
    impl = impl or _impl
    return impl.riccati_batch(
        _mat(P), np.ascontiguousarray(gammas, dtype=np.uint8),
        _mat(A), _mat(C), _mat(Q), _mat(R),
    )


def trace_trajectories(sys, gammas, threshold=np.inf, impl=None):
    """Traces of ``P[1..K]`` for every row of ``gammas`` plus per-trial stop indices.

    A trial stops at the first step whose trace exceeds ``threshold`` or is
    not finite; later entries are NaN and ``stop`` is ``K`` for trials that
    never stopped.
    """
    impl = impl or _impl
    return impl.trace_trajectories(
        _mat(sys.A), _mat(sys.C), _mat(sys.Q), _mat(sys.R), _mat(sys.Sigma0),
        np.ascontiguousarray(gammas, dtype=np.uint8), float(threshold),
    )
