# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Riccati kernels.

Each step computes ``A P⁺ Aᵀ + Q`` where ``P⁺ = P`` on a loss and on an
arrival ``P⁺ = (I - K C) P (I - K C)ᵀ + K R Kᵀ`` with ``K = P Cᵀ S⁻¹``
and ``S = C P Cᵀ + R`` solved through its Cholesky factor. Matrices are
small, so plain loops beat BLAS calls.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, INFINITY

cnp.import_array()


cdef int _step(double[:, ::1] P, double[:, ::1] out, int gamma,
               const double[:, ::1] A, const double[:, ::1] C,
               const double[:, ::1] Q, const double[:, ::1] R,
               double[:, ::1] W1, double[:, ::1] W2, double[:, ::1] CP,
               double[:, ::1] S, double[:, ::1] K) noexcept nogil:
    """Write one Riccati step of ``P`` into ``out``. Returns 0, or 1 if
    ``C P Cᵀ + R`` failed to factor.

    ``W1``, ``W2`` (n x n), ``CP`` (m x n), ``S`` (m x m) and ``K`` (n x m)
    are scratch space.
    """
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = C.shape[0]
    cdef Py_ssize_t i, j, l, c
    cdef double acc, v
    cdef double[:, ::1] Pf = P

    if gamma:
        # S = C P Cᵀ + R
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc = acc + C[i, l] * P[l, j]
                CP[i, j] = acc
        for i in range(m):
            for j in range(i + 1):
                acc = R[i, j]
                for l in range(n):
                    acc = acc + CP[i, l] * C[j, l]
                S[i, j] = acc
        # in-place Cholesky, lower triangle
        for j in range(m):
            v = S[j, j]
            for l in range(j):
                v = v - S[j, l] * S[j, l]
            if not v > 0.0:
                return 1
            v = sqrt(v)
            S[j, j] = v
            for i in range(j + 1, m):
                acc = S[i, j]
                for l in range(j):
                    acc = acc - S[i, l] * S[j, l]
                S[i, j] = acc / v
        # Kᵀ = S⁻¹ C P: forward then backward substitution, column by column
        for c in range(n):
            for i in range(m):
                acc = CP[i, c]
                for l in range(i):
                    acc = acc - S[i, l] * K[c, l]
                K[c, i] = acc / S[i, i]
            for i in range(m - 1, -1, -1):
                acc = K[c, i]
                for l in range(i + 1, m):
                    acc = acc - S[l, i] * K[c, l]
                K[c, i] = acc / S[i, i]
        # Joseph form: W2 = (I - K C) P (I - K C)ᵀ + K R Kᵀ
        for i in range(n):
            for j in range(n):
                acc = 1.0 if i == j else 0.0
                for l in range(m):
                    acc = acc - K[i, l] * C[l, j]
                W1[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc = acc + W1[i, l] * P[l, j]
                out[i, j] = acc
        for i in range(n):
            for j in range(i + 1):
                acc = 0.0
                for l in range(n):
                    acc = acc + out[i, l] * W1[j, l]
                for l in range(m):
                    for c in range(m):
                        acc = acc + K[i, l] * R[l, c] * K[j, c]
                W2[i, j] = acc
                W2[j, i] = acc
        Pf = W2

    # out = A Pf Aᵀ + Q
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for l in range(n):
                acc = acc + A[i, l] * Pf[l, j]
            W1[i, j] = acc
    for i in range(n):
        for j in range(i + 1):
            acc = Q[i, j]
            for l in range(n):
                acc = acc + W1[i, l] * A[j, l]
            out[i, j] = acc
    for i in range(n):
        for j in range(i):
            out[j, i] = out[i, j]
    return 0


def riccati_batch(double[:, :, ::1] P, const unsigned char[::1] gammas,
                  const double[:, ::1] A, const double[:, ::1] C,
                  const double[:, ::1] Q, const double[:, ::1] R):
    """One Riccati step for each ``P[b]`` with arrival ``gammas[b]``."""
    cdef Py_ssize_t B = P.shape[0]
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = C.shape[0]
    cdef Py_ssize_t b
    cdef int bad = 0
    out_arr = np.empty((B, n, n))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] W1 = np.empty((n, n))
    cdef double[:, ::1] W2 = np.empty((n, n))
    cdef double[:, ::1] CP = np.empty((m, n))
    cdef double[:, ::1] S = np.empty((m, m))
    cdef double[:, ::1] G = np.empty((n, m))
    with nogil:
        for b in range(B):
            if _step(P[b], out[b], gammas[b], A, C, Q, R, W1, W2, CP, S, G):
                bad = 1
                break
    if bad:
        raise ArithmeticError("C P Cᵀ + R is not numerically positive definite")
    return out_arr


def trace_trajectories(const double[:, ::1] A, const double[:, ::1] C,
                       const double[:, ::1] Q, const double[:, ::1] R,
                       const double[:, ::1] Sigma0,
                       const unsigned char[:, ::1] gammas, double threshold):
    """Traces of ``P[1..K]`` for each row of ``gammas`` (shape ``(N, K)``).

    A trial stops at the first ``k`` whose trace exceeds ``threshold`` or is
    not finite; ``stop[t]`` holds that index (``K`` if never). Entries after
    the stop are NaN.
    """
    cdef Py_ssize_t N = gammas.shape[0]
    cdef Py_ssize_t K = gammas.shape[1]
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = C.shape[0]
    cdef Py_ssize_t t, k, i
    cdef double tr
    cdef int bad
    traces_arr = np.full((N, K), np.nan)
    stop_arr = np.full(N, K, dtype=np.int64)
    cdef double[:, ::1] traces = traces_arr
    cdef long long[::1] stop = stop_arr
    cdef double[:, ::1] P = np.empty((n, n))
    cdef double[:, ::1] P2 = np.empty((n, n))
    cdef double[:, ::1] tmp
    cdef double[:, ::1] W1 = np.empty((n, n))
    cdef double[:, ::1] W2 = np.empty((n, n))
    cdef double[:, ::1] CP = np.empty((m, n))
    cdef double[:, ::1] S = np.empty((m, m))
    cdef double[:, ::1] G = np.empty((n, m))
    with nogil:
        for t in range(N):
            P[:, :] = Sigma0
            for k in range(K):
                bad = _step(P, P2, gammas[t, k], A, C, Q, R, W1, W2, CP, S, G)
                tr = 0.0
                for i in range(n):
                    tr = tr + P2[i, i]
                if bad:
                    tr = INFINITY
                traces[t, k] = tr
                if not isfinite(tr) or tr > threshold:
                    stop[t] = k
                    break
                tmp = P
                P = P2
                P2 = tmp
    return traces_arr, stop_arr
