"""Kalman filtering over a Bernoulli erasure channel.

Measurement ``y[k]`` reaches the estimator when ``gamma[k] = 1``, which
happens independently with probability ``p``. The one-step predictor
covariance then obeys the random Riccati recursion::

    P[k+1] = A P Aᵀ + Q - gamma[k] A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ

with ``P[0] = Sigma0``. It does not depend on the measured values, so
everything here except :func:`kalman_step` works on covariances alone.

:func:`ml_covariance` recomputes ``P[k+1]`` from scratch as the error
covariance of the maximum-likelihood estimate of ``x[k+1]`` given every
received measurement and the prior. It is slow and exists as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .spectral import SpectralForm
from .system import LinearSystem, NumericError

ML_MAX_STEPS = 200


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based generator for one trial.

    Philox keyed by ``SeedSequence(seed, spawn_key=(trial,))``: streams for
    different trials are independent and need no coordination, so trials
    can run in any order or process.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(trial,))
    return np.random.Generator(np.random.Philox(ss))


def draw_gammas(p: float, length: int, seed: int, trial: int = 0) -> np.ndarray:
    """Arrival indicators ``gamma[0..length-1]`` as a uint8 array."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"arrival probability must lie in [0, 1], got {p}")
    u = trial_rng(seed, trial).random(length)
    return (u < p).astype(np.uint8)


@dataclass(frozen=True)
class ErasureTrace:
    gammas: np.ndarray
    p: float
    seed: int
    trial: int = 0

    @classmethod
    def draw(cls, p: float, length: int, seed: int, trial: int = 0) -> "ErasureTrace":
        if length < 1:
            raise ValueError("trace length must be positive")
        g = draw_gammas(p, length, seed, trial)
        g.setflags(write=False)
        return cls(g, float(p), int(seed), int(trial))

    @property
    def length(self) -> int:
        return self.gammas.shape[0]

    def prefix(self, length: int) -> np.ndarray:
        return self.gammas[:length]


@dataclass(frozen=True)
class FilterState:
    """Predictor ``x_hat = x[k|k-1]`` and its error covariance ``P = P[k]``."""

    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, sys: LinearSystem) -> "FilterState":
        return cls(sys.x0_mean.copy(), sys.Sigma0.copy(), 0)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _check_finite(P: np.ndarray, what: str = "P") -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        raise NumericError(f"{what} has non-finite entries")
    return P


def _cho(M: np.ndarray, what: str):
    try:
        return sla.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is not numerically positive definite") from exc


def _measurement_update(P: np.ndarray, sys: LinearSystem):
    """Gain and Joseph-form filtered covariance ``(I-KC) P (I-KC)ᵀ + K R Kᵀ``.

    Algebraically ``P - P Cᵀ S⁻¹ C P``, but a sum of PSD terms: once ``P``
    has grown large the subtraction cancels catastrophically and can leave
    an indefinite matrix, the Joseph form does not.
    """
    C = sys.C
    S = _cho(C @ P @ C.T + sys.R, "C P Cᵀ + R")
    K = sla.cho_solve(S, C @ P, check_finite=False).T
    M = np.eye(P.shape[0]) - K @ C
    return K, M @ P @ M.T + K @ sys.R @ K.T


def riccati_step(P: np.ndarray, gamma: int, sys: LinearSystem) -> np.ndarray:
    """One step of the covariance recursion."""
    P = _check_finite(P)
    if gamma:
        _, P = _measurement_update(P, sys)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _symmetrize(sys.A @ P @ sys.A.T + sys.Q)
    if not np.all(np.isfinite(out)):
        raise NumericError("Riccati step overflowed")
    return out


def information_step(P: np.ndarray, gamma: int, sys: LinearSystem) -> np.ndarray:
    """Same map as :func:`riccati_step`, written as
    ``A (P⁻¹ + gamma Cᵀ R⁻¹ C)⁻¹ Aᵀ + Q``. Needs ``P`` positive definite."""
    P = _check_finite(P)
    n = P.shape[0]
    info = sla.cho_solve(_cho(P, "P"), np.eye(n), check_finite=False)
    if gamma:
        C = sys.C
        info = info + C.T @ sla.cho_solve(_cho(sys.R, "R"), C, check_finite=False)
    L = _cho(_symmetrize(info), "information matrix")
    # A M⁻¹ Aᵀ = (L⁻¹ Aᵀ)ᵀ (L⁻¹ Aᵀ)
    Z = sla.solve_triangular(L[0], sys.A.T, lower=True, check_finite=False)
    return _symmetrize(Z.T @ Z + sys.Q)


def kalman_step(state: FilterState, y, gamma: int, sys: LinearSystem) -> FilterState:
    """Measurement update with ``y`` (if it arrived) followed by the time update."""
    P = _check_finite(state.P)
    x = np.asarray(state.x_hat, dtype=float)
    if gamma:
        if y is None:
            raise ValueError("gamma = 1 requires a measurement y")
        y = np.asarray(y, dtype=float).reshape(sys.m)
        K, _ = _measurement_update(P, sys)
        x = x + K @ (y - sys.C @ x)
    return FilterState(sys.A @ x, riccati_step(P, gamma, sys), state.k + 1)


def riccati_trajectory(sys: LinearSystem, gammas, P0=None) -> np.ndarray:
    """``P[1..K]`` for the arrival sequence ``gammas[0..K-1]``, shape ``(K, n, n)``."""
    P = sys.Sigma0 if P0 is None else np.asarray(P0, dtype=float)
    out = np.empty((len(gammas),) + P.shape)
    for k, g in enumerate(gammas):
        P = riccati_step(P, g, sys)
        out[k] = P
    return out


def propagation_matrix(A: np.ndarray, k: int) -> np.ndarray:
    """Block lower-triangular ``F`` with block ``(r, c) = A^-(r-c+1)`` for ``c <= r``.

    Maps the noise stack ``(w[k], ..., w[0])`` to its contribution to
    ``(x[k], ..., x[0])`` when states are written backwards from ``x[k+1]``.
    """
    A = np.asarray(A)
    n = A.shape[0]
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError("A is singular") from exc
    powers = [A_inv]
    for _ in range(k):
        powers.append(powers[-1] @ A_inv)
    F = np.zeros((n * (k + 1), n * (k + 1)), dtype=np.result_type(A, float))
    for r in range(k + 1):
        for c in range(r + 1):
            F[r * n:(r + 1) * n, c * n:(c + 1) * n] = powers[r - c]
    return F


def ml_covariance(gammas, sys: LinearSystem, max_steps: int = ML_MAX_STEPS) -> np.ndarray:
    """Error covariance of the ML estimate of ``x[k+1]`` from the prior and
    every ``y[i]`` with ``gamma[i] = 1``, ``i = 0..k``.

    ``gammas`` holds ``gamma[0..k]``. Stacks the linear model
    ``Y = T x[k+1] + e`` row by row, newest measurement first, deletes the
    rows of lost packets and returns ``(Tᵀ Cov(e)⁻¹ T)⁻¹``.
    """
    g = np.asarray(gammas, dtype=np.uint8).ravel()
    k = g.shape[0] - 1
    if k < 0:
        raise ValueError("need at least one arrival indicator")
    if k > max_steps:
        raise ValueError(f"prefix length {k + 1} exceeds the cap of {max_steps + 1}")
    A, C, n, m = sys.A, sys.C, sys.n, sys.m

    F = propagation_matrix(A, k)
    A_inv_pows = [F[r * n:(r + 1) * n, 0:n] for r in range(k + 1)]  # A^-(r+1)
    # rows: y[k], ..., y[0], then the prior on x[0]
    T = np.vstack([C @ A_inv_pows[r] for r in range(k + 1)] + [A_inv_pows[k]])
    G = np.zeros((m * (k + 1) + n, n * (k + 1)))
    for r in range(k + 1):
        G[r * m:(r + 1) * m, r * n:(r + 1) * n] = C
    G[m * (k + 1):, k * n:] = np.eye(n)
    GF = G @ F
    cov = GF @ np.kron(np.eye(k + 1), sys.Q) @ GF.T
    cov += sla.block_diag(*([sys.R] * (k + 1) + [sys.Sigma0]))

    # row block r belongs to y[k - r]
    keep = np.concatenate(
        [np.full(m, bool(g[k - r])) for r in range(k + 1)] + [np.ones(n, bool)]
    )
    T = T[keep]
    cov = cov[np.ix_(keep, keep)]
    L = _cho(_symmetrize(cov), "Cov(e)")
    Z = sla.solve_triangular(L[0], T, lower=True, check_finite=False)
    # (Zᵀ Z)⁻¹ = R⁻¹ R⁻ᵀ with Z = Q R; avoids squaring the condition number
    Rf = np.linalg.qr(Z, mode="r")
    try:
        R_inv = sla.solve_triangular(Rf, np.eye(n), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError("stacked observation model is rank deficient") from exc
    return _symmetrize(R_inv @ R_inv.T)


def grammian_partial_sum(sf: SpectralForm, gammas) -> np.ndarray:
    """``sum_i gamma_i (Λ^-i)ᴴ C̃ᴴ C̃ Λ^-i`` for ``i = 1..len(gammas)``.

    ``gammas[0]`` multiplies the ``i = 1`` term. All eigenvalues must be
    strictly unstable.
    """
    lams = np.asarray(sf.eigenvalues, dtype=complex)
    if np.any(np.abs(lams) <= 1.0):
        raise ValueError("grammian sum needs every |lambda| > 1")
    g = np.asarray(gammas, dtype=float).ravel()
    H = sf.C_tilde.conj().T @ sf.C_tilde
    if g.size == 0:
        return np.zeros_like(H)
    i = np.arange(1, g.size + 1)[:, None]
    inv_pows = lams[None, :] ** (-i)  # (L, n)
    # entry (a, b): H_ab * sum_i gamma_i conj(lambda_a^-i) lambda_b^-i
    weights = np.einsum("i,ia,ib->ab", g, inv_pows.conj(), inv_pows)
    out = H * weights
    return 0.5 * (out + out.conj().T)
