"""Independent reference computations used by the tests.

Nothing here imports the package under test. Scalar recursions run in
exact rational arithmetic, matrix recursions in 60-digit mpmath.
"""

from fractions import Fraction

import mpmath
import numpy as np


def scalar_riccati(a, c, q, r, p0, gammas):
    """Exact ``P[1..K]`` for a scalar system, as Fractions."""
    a, c, q, r, P = (Fraction(v) for v in (a, c, q, r, p0))
    out = []
    for g in gammas:
        if g:
            P = a * a * P + q - (a * a * P * P * c * c) / (c * c * P + r)
        else:
            P = a * a * P + q
        out.append(P)
    return out


def _mp(M):
    return mpmath.matrix([[mpmath.mpf(float(x)) for x in row] for row in np.atleast_2d(M)])


def mp_riccati(A, C, Q, R, Sigma0, gammas, dps=60):
    """``P[K]`` from the textbook (subtractive) recursion at high precision."""
    with mpmath.workdps(dps):
        A, C, Q, R, P = (_mp(M) for M in (A, C, Q, R, Sigma0))
        for g in gammas:
            APA = A * P * A.T + Q
            if g:
                W = A * P * C.T
                S = C * P * C.T + R
                APA = APA - W * mpmath.inverse(S) * W.T
            P = (APA + APA.T) / 2
        return np.array(P.tolist(), dtype=float)


def grammian_sum(eigenvalues, C_tilde, gammas):
    """``sum_i gamma_i (Λ^-i)ᴴ C̃ᴴ C̃ Λ^-i``, one explicit term at a time."""
    lam = np.asarray(eigenvalues, dtype=complex)
    H = C_tilde.conj().T @ C_tilde
    out = np.zeros_like(H, dtype=complex)
    for i, g in enumerate(gammas, start=1):
        if g:
            D = np.diag(lam ** (-i))
            out += D.conj().T @ H @ D
    return out


def dominant_bound(eigenvalues):
    """``max(1 - |λ1|^-2, 0)``."""
    lam = max(abs(complex(z)) for z in eigenvalues)
    return max(1.0 - lam ** -2, 0.0)


def degenerate_pair_value(magnitude, denominator=None):
    """``1 - |λ|^(-2 / (1 - 1/q))`` for angle ``r/q``; irrational when ``None``."""
    d = 0.0 if denominator is None else 1.0 / denominator
    return 1.0 - magnitude ** (-2.0 / (1.0 - d))


def geometric_pmf(p, k):
    """``P(Δ = k) = (1 - p)^(k-1) p`` for ``k >= 1``."""
    return (1.0 - p) ** (k - 1) * p
