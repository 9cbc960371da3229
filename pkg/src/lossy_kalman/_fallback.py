"""Pure-NumPy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and semantics; trials are vectorised over the batch axis
instead of looped.
"""

import numpy as np


def _batch_step(P, gammas, A, C, Q, R):
    P = P.copy()
    hit = np.nonzero(gammas)[0]
    if hit.size:
        Ph = P[hit]
        CP = C @ Ph
        S = CP @ C.T + R
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ArithmeticError("C P Cᵀ + R is not numerically positive definite") from exc
        K = np.swapaxes(np.linalg.solve(S, CP), 1, 2)
        M = np.eye(A.shape[0]) - K @ C
        P[hit] = M @ Ph @ np.swapaxes(M, 1, 2) + K @ R @ np.swapaxes(K, 1, 2)
    out = A @ P @ A.T + Q
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def riccati_batch(P, gammas, A, C, Q, R):
    """One Riccati step for each ``P[b]`` with arrival ``gammas[b]``."""
    return _batch_step(np.asarray(P, dtype=float), np.asarray(gammas), A, C, Q, R)


def trace_trajectories(A, C, Q, R, Sigma0, gammas, threshold):
    """Traces of ``P[1..K]`` per row of ``gammas``; see ``_kernels.trace_trajectories``."""
    gammas = np.asarray(gammas)
    N, K = gammas.shape
    n = A.shape[0]
    traces = np.full((N, K), np.nan)
    stop = np.full(N, K, dtype=np.int64)
    P = np.broadcast_to(Sigma0, (N, n, n)).copy()
    live = np.arange(N)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            if live.size == 0:
                break
            try:
                P = _batch_step(P, gammas[live, k], A, C, Q, R)
            except ArithmeticError:
                # isolate the offending trials one at a time
                P = np.stack([_safe_step(P[i], gammas[t, k], A, C, Q, R)
                              for i, t in enumerate(live)])
            tr = np.trace(P, axis1=1, axis2=2)
            traces[live, k] = tr
            done = ~np.isfinite(tr) | (tr > threshold)
            if done.any():
                stop[live[done]] = k
                live = live[~done]
                P = P[~done]
    return traces, stop


def _safe_step(P, g, A, C, Q, R):
    try:
        return _batch_step(P[None], np.array([g]), A, C, Q, R)[0]
    except ArithmeticError:
        return np.full_like(P, np.inf)
