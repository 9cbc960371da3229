"""Monte Carlo estimation of whether ``E[P_k]`` stays bounded.

Each trial draws its own arrival sequence from a counter-based generator
keyed by ``(base_seed, trial)`` and runs the Riccati recursion on it.
Aggregates are reductions over fixed trial slots, so results do not
depend on how trials are split across processes.

Sample means of ``trace(P_k)`` say little about ``sup_k E[P_k]``: for any
``p > 0`` the law of ``P_k`` converges, so cross-sectional means flatten
out even when the expectation is infinite, and the heavy tail that makes
it infinite is rarely sampled. The verdict therefore rests on a second
statistic, the branching growth rate. Starting from the worst covariances
seen in the Monte Carlo run, rescaled far above the noise floor, every
arrival pattern of a short horizon ``h`` is expanded with its exact
probability and ``G_j = E[(tr P_j / tr P_0)^q]`` is accumulated. At large
scale the recursion is nearly homogeneous, so ``G_j`` grows like
``rho^j`` with ``rho > 1`` exactly when the q-th moment diverges.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .filtering import draw_gammas, riccati_step
from .system import LinearSystem

DEFAULT_SEED = 12345
DIVERGENCE_THRESHOLD = 1e8
QUANTILES = (0.5, 0.9, 0.99)
CHUNK = 64

BOUNDED = "bounded"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"

# verdict calibration
MAX_DIVERGED_FRACTION = 0.01
RATE_DIVERGENT = 1.02
RATE_BOUNDED = 0.98

# branching growth estimator
GROWTH_DEPTH = 24
GROWTH_SCALE = 1e12
GROWTH_STARTS = 8
GROWTH_MAX_PATHS = 4096
GROWTH_PRUNE = 1e-10
GROWTH_COLLAPSE = 1e-6


@dataclass(frozen=True)
class TrialConfig:
    p: float
    horizon: int = 300
    trials: int = 500
    base_seed: int = DEFAULT_SEED
    divergence_threshold: float = DIVERGENCE_THRESHOLD
    moment_order: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.horizon < 10:
            raise ValueError(f"horizon must be at least 10, got {self.horizon}")
        if self.trials < 1:
            raise ValueError(f"trials must be positive, got {self.trials}")
        if not self.divergence_threshold > 1:
            raise ValueError("divergence_threshold must exceed 1")
        if self.moment_order < 1:
            raise ValueError("moment_order must be a positive integer")
        if self.base_seed < 0 or self.base_seed >= 2 ** 64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")

    def with_p(self, p: float) -> "TrialConfig":
        return replace(self, p=float(p))


class Trajectory(NamedTuple):
    traces: np.ndarray
    diverged: bool


@dataclass(frozen=True)
class SimulationSummary:
    per_k_mean_trace: np.ndarray
    per_k_quantiles: np.ndarray  # (K, len(QUANTILES))
    diverged_fraction: float
    log_slope: float
    growth_rate: float
    verdict: str
    config: TrialConfig

    def to_csv(self, fh=None) -> str:
        """Rows ``k, mean_trace, q50, q90, q99`` for ``k = 1..K``."""
        buf = fh or io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mean_trace", "q50", "q90", "q99"])
        for k, (mean, qs) in enumerate(zip(self.per_k_mean_trace, self.per_k_quantiles), 1):
            w.writerow([k, repr(float(mean))] + [repr(float(x)) for x in qs])
        return buf.getvalue() if fh is None else ""


class SweepPoint(NamedTuple):
    p: float
    verdict: str
    log_slope: float
    diverged_fraction: float
    growth_rate: float
    horizon: int


@dataclass(frozen=True)
class SweepResult:
    evaluated_points: tuple[SweepPoint, ...]
    estimated_pc: float
    bracket: tuple[float, float]
    analytic_pc: object = None  # CriticalValueResult or None
    resolved: bool = True
    anomalies: tuple[str, ...] = field(default=())

    def _analytic_cell(self) -> str:
        a = self.analytic_pc
        if a is None:
            return ""
        if a.exact is not None:
            return repr(a.exact)
        upper = "" if a.upper is None else repr(a.upper)
        return f"[{a.lower!r}, {upper}]"

    def to_csv(self, fh=None) -> str:
        """Rows ``p, verdict, log_slope, diverged_fraction, analytic_pc``."""
        buf = fh or io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "verdict", "log_slope", "diverged_fraction", "analytic_pc"])
        cell = self._analytic_cell()
        for pt in self.evaluated_points:
            w.writerow([repr(pt.p), pt.verdict, repr(pt.log_slope),
                        repr(pt.diverged_fraction), cell])
        return buf.getvalue() if fh is None else ""


class SweepError(RuntimeError):
    """No evaluated point gave a usable verdict."""


# -- single trajectories ----------------------------------------------------

def simulate_trajectory(sys: LinearSystem, p: float, horizon: int, seed: int,
                        trial: int = 0) -> Trajectory:
    """``trace(P_k)`` for ``k = 1..horizon`` along one seeded arrival sequence.

    On overflow the sequence is cut at the offending step (which is kept,
    as ``inf``) and flagged diverged.
    """
    g = draw_gammas(p, horizon, seed, trial)[None, :]
    traces, stop = kernels.trace_trajectories(sys, g)
    s = int(stop[0])
    if s < horizon:
        out = traces[0, : s + 1].copy()
        out[-1] = np.inf
        return Trajectory(out, True)
    return Trajectory(traces[0], False)


# -- Monte Carlo ------------------------------------------------------------

def _run_chunk(args):
    sys, p, horizon, seed, lo, hi, threshold = args
    g = np.stack([draw_gammas(p, horizon, seed, t) for t in range(lo, hi)])
    return kernels.trace_trajectories(sys, g, threshold)


def _run_trials(sys, cfg: TrialConfig, threshold: float, jobs: int):
    N, K = cfg.trials, cfg.horizon
    bounds = [(lo, min(lo + CHUNK, N)) for lo in range(0, N, CHUNK)]
    tasks = [(sys, cfg.p, K, cfg.base_seed, lo, hi, threshold) for lo, hi in bounds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            parts = list(ex.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    traces = np.concatenate([t for t, _ in parts])
    stop = np.concatenate([s for _, s in parts])
    return traces, stop


def _winsorize(traces, stop, threshold):
    K = traces.shape[1]
    after = np.arange(K)[None, :] >= stop[:, None]
    return np.where(after, threshold, np.minimum(traces, threshold))


def _log_slope(mean_trace: np.ndarray) -> float:
    K = mean_trace.shape[0]
    ks = np.arange(K // 2, K)
    y = np.log(mean_trace[K // 2:])
    return float(np.polyfit(ks, y, 1)[0])


def _start_covariances(sys, cfg, traces, stop, count):
    """Covariances at the peak of the ``count`` worst trials, plus ``Sigma0``."""
    K = traces.shape[1]
    stopped = stop < K
    peak = np.where(stopped, stop, np.nanargmax(np.nan_to_num(traces, nan=-np.inf), axis=1))
    peak_val = np.where(stopped, np.inf, traces[np.arange(len(stop)), peak])
    # worst first; ties broken by trial index for determinism
    order = np.lexsort((np.arange(len(stop)), -stopped.astype(int), -peak_val))
    starts = [sys.Sigma0]
    for t in order[:count]:
        g = draw_gammas(cfg.p, K, cfg.base_seed, int(t))
        P = sys.Sigma0
        for k in range(int(peak[t]) + 1):
            try:
                P_next = riccati_step(P, g[k], sys)
            except ArithmeticError:
                break
            if not np.all(np.isfinite(P_next)):
                break
            P = P_next
        starts.append(P)
    return starts


def branching_growth(sys: LinearSystem, p: float, starts, moment_order: int = 1,
                     depth: int = GROWTH_DEPTH, scale: float = GROWTH_SCALE,
                     max_paths: int = GROWTH_MAX_PATHS) -> tuple[float, bool]:
    """Per-step growth rate of ``E[(tr P)^q]`` from large initial covariances.

    Returns ``(rate, collapsed)``. ``collapsed`` means the expected
    moment ratio fell below ``GROWTH_COLLAPSE`` within ``depth`` steps;
    the rate is then the geometric mean decay over the whole horizon.
    Otherwise it is measured over the second half of the horizon.
    """
    q = moment_order
    ref = scale * float(np.trace(sys.Sigma0))
    G = np.zeros(depth + 1)
    for P0 in starts:
        P = (np.asarray(P0) * (ref / np.trace(P0)))[None]
        t0 = float(np.trace(P[0]))
        w = np.ones(1)
        G[0] += 1.0
        for j in range(1, depth + 1):
            B = P.shape[0]
            P2 = np.concatenate([P, P])
            g = np.concatenate([np.zeros(B, np.uint8), np.ones(B, np.uint8)])
            w2 = np.concatenate([w * (1.0 - p), w * p])
            live = w2 > 0
            P2, g, w2 = P2[live], g[live], w2[live]
            P2 = kernels.riccati_batch(P2, g, sys.A, sys.C, sys.Q, sys.R)
            tr = np.trace(P2, axis1=1, axis2=2)
            # far above the noise floor the map is homogeneous: pull large
            # covariances back to the reference scale and carry the factor
            # in the weight, which keeps CPCᵀ + R free of cancellation
            factor = np.maximum(tr / t0, 1.0)
            P2 = P2 / factor[:, None, None]
            w2 = w2 * factor ** q
            r = tr / (t0 * factor)
            c = w2 * r ** q
            total = float(c.sum())
            G[j] += total
            keep = np.nonzero(c > max(GROWTH_PRUNE * total, 1e-300))[0]
            if keep.size > max_paths:
                # stable sort keeps the choice deterministic on ties
                keep = np.sort(keep[np.argsort(-c[keep], kind="stable")[:max_paths]])
            if keep.size == 0:
                break
            P, w = P2[keep], w2[keep]
    G /= len(starts)
    if G[depth] < GROWTH_COLLAPSE:
        return float(G[depth] ** (1.0 / depth)), True
    half = depth // 2
    return float((G[depth] / G[half]) ** (1.0 / (depth - half))), False


def verdict_for(diverged_fraction: float, growth_rate: float) -> str:
    if diverged_fraction > MAX_DIVERGED_FRACTION:
        return DIVERGENT
    if growth_rate > RATE_DIVERGENT:
        return DIVERGENT
    if growth_rate < RATE_BOUNDED and diverged_fraction == 0:
        return BOUNDED
    return INCONCLUSIVE


def estimate(sys: LinearSystem, cfg: TrialConfig, jobs: int = 1) -> SimulationSummary:
    """Run ``cfg.trials`` seeded trajectories and classify the q-th moment."""
    threshold = cfg.divergence_threshold * float(np.trace(sys.Sigma0))
    traces, stop = _run_trials(sys, cfg, threshold, jobs)
    K = cfg.horizon
    wins = _winsorize(traces, stop, threshold)
    q = cfg.moment_order
    mean = (wins ** q).mean(axis=0)
    quant = np.quantile(wins, QUANTILES, axis=0).T
    diverged = float(np.mean(stop < K))
    slope = _log_slope(mean)
    starts = _start_covariances(sys, cfg, traces, stop, GROWTH_STARTS)
    rate, _ = branching_growth(sys, cfg.p, starts, q)
    return SimulationSummary(
        per_k_mean_trace=mean,
        per_k_quantiles=quant,
        diverged_fraction=diverged,
        log_slope=slope,
        growth_rate=rate,
        verdict=verdict_for(diverged, rate),
        config=cfg,
    )


# -- sweeps -----------------------------------------------------------------

def _anomalies(points) -> list[str]:
    out = []
    for a in points:
        for b in points:
            if a.verdict == BOUNDED and b.verdict == DIVERGENT and a.p < b.p:
                out.append(f"bounded at p={a.p:.6g} but divergent at p={b.p:.6g}")
    return out


def empirical_pc(sys: LinearSystem, resolution: float, budget: TrialConfig,
                 jobs: int = 1, analytic=None) -> SweepResult:
    """Bisect on ``p`` until the bounded/divergent bracket is at most ``resolution`` wide.

    An inconclusive point is rerun once with twice the horizon; if it stays
    inconclusive the search probes a quarter-width either side of it. If
    neither probe is conclusive the bracket is returned unresolved.
    """
    if resolution < 0.005:
        raise ValueError("resolution must be at least 0.005")
    points: list[SweepPoint] = []

    def evaluate(p: float) -> str:
        cfg = budget.with_p(p)
        s = estimate(sys, cfg, jobs)
        if s.verdict == INCONCLUSIVE:
            cfg = replace(cfg, horizon=2 * cfg.horizon)
            s = estimate(sys, cfg, jobs)
        points.append(SweepPoint(float(p), s.verdict, s.log_slope,
                                 s.diverged_fraction, s.growth_rate, cfg.horizon))
        return s.verdict

    def finish(pc, lo, hi, resolved=True, notes=()):
        if all(pt.verdict == INCONCLUSIVE for pt in points):
            raise SweepError(
                "every evaluated point was inconclusive; increase trials or horizon"
            )
        return SweepResult(tuple(points), pc, (lo, hi), analytic, resolved,
                           tuple(_anomalies(points)) + tuple(notes))

    if evaluate(0.0) == BOUNDED:
        return finish(0.0, 0.0, 0.0)
    notes = []
    if evaluate(1.0) != BOUNDED:
        notes.append("not bounded at p=1; upper end of the bracket assumed")
    lo, hi = 0.0, 1.0
    resolved = True
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        v = evaluate(mid)
        if v == INCONCLUSIVE:
            quarter = 0.25 * (hi - lo)
            for cand in (mid - quarter, mid + quarter):
                v = evaluate(cand)
                if v != INCONCLUSIVE:
                    mid = cand
                    break
        if v == DIVERGENT:
            lo = mid
        elif v == BOUNDED:
            hi = mid
        else:
            resolved = False
            notes.append(f"no conclusive verdict near p={0.5 * (lo + hi):.6g}")
            break
    return finish(0.5 * (lo + hi), lo, hi, resolved, notes)


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else (os.cpu_count() or 1))
