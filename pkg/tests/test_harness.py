import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from lossy_kalman import (
    TrialConfig,
    critical_value,
    empirical_pc,
    estimate,
    simulate_trajectory,
)
from lossy_kalman import harness
from lossy_kalman.harness import (
    BOUNDED,
    DIVERGENT,
    INCONCLUSIVE,
    SimulationSummary,
    SweepError,
    branching_growth,
    verdict_for,
)

FULL = dict(horizon=300, trials=500)


def test_config_validation():
    for bad in (dict(p=1.2), dict(p=0.5, horizon=5), dict(p=0.5, trials=0),
                dict(p=0.5, moment_order=0), dict(p=0.5, divergence_threshold=0.5),
                dict(p=0.5, base_seed=-1)):
        with pytest.raises(ValueError):
            TrialConfig(**bad)
    assert TrialConfig(p=0.5).with_p(0.7).p == 0.7
    assert TrialConfig(p=0.5).base_seed == 12345


def test_verdict_rules():
    assert verdict_for(0.02, 0.5) == DIVERGENT
    assert verdict_for(0.0, 1.05) == DIVERGENT
    assert verdict_for(0.0, 0.9) == BOUNDED
    assert verdict_for(0.004, 0.9) == INCONCLUSIVE
    assert verdict_for(0.0, 1.0) == INCONCLUSIVE
    assert verdict_for(0.01, 0.9) == INCONCLUSIVE


def test_simulate_trajectory(scalar_sys):
    tr = simulate_trajectory(scalar_sys, 0.0, 50, seed=1)
    assert not tr.diverged
    np.testing.assert_array_equal(tr.traces[:3], [5.0, 21.0, 85.0])
    tr = simulate_trajectory(scalar_sys, 0.0, 1000, seed=1)
    assert tr.diverged and np.isinf(tr.traces[-1])
    a = simulate_trajectory(scalar_sys, 0.7, 100, seed=3, trial=2)
    b = simulate_trajectory(scalar_sys, 0.7, 100, seed=3, trial=2)
    np.testing.assert_array_equal(a.traces, b.traces)


@pytest.mark.parametrize("p, rate", [(0.9, 0.4), (0.5, 2.0), (0.8, 0.8)])
def test_growth_rate_scalar(scalar_sys, p, rate):
    # far above the noise floor a loss multiplies P by 4 and an arrival resets it
    got, _ = branching_growth(scalar_sys, p, [np.eye(1)])
    assert got == pytest.approx(rate, rel=0.02)


def test_growth_rate_second_moment(scalar_sys):
    got, _ = branching_growth(scalar_sys, 0.9, [np.eye(1)], moment_order=2)
    assert got == pytest.approx(1.6, rel=0.02)


def test_growth_rate_degenerate_pair(degenerate_pair):
    # the pair loses information on every other step: rate sqrt(16 (1 - p))
    got, _ = branching_growth(degenerate_pair, 0.85, [np.eye(2)])
    assert got == pytest.approx(np.sqrt(16 * 0.15), rel=0.05)


def test_summary_shape_and_csv(scalar_sys):
    s = estimate(scalar_sys, TrialConfig(p=0.9, horizon=40, trials=20))
    assert s.per_k_mean_trace.shape == (40,)
    assert s.per_k_quantiles.shape == (40, 3)
    rows = list(csv.reader(io.StringIO(s.to_csv())))
    assert rows[0] == ["k", "mean_trace", "q50", "q90", "q99"]
    assert len(rows) == 41 and rows[1][0] == "1"
    assert float(rows[1][1]) == s.per_k_mean_trace[0]
    q = s.per_k_quantiles
    assert np.all(q[:, 0] <= q[:, 1]) and np.all(q[:, 1] <= q[:, 2])


def test_winsorized_mean_stays_finite(scalar_sys):
    cfg = TrialConfig(p=0.3, horizon=100, trials=64)
    s = estimate(scalar_sys, cfg)
    assert np.all(np.isfinite(s.per_k_mean_trace))
    assert s.per_k_mean_trace.max() <= cfg.divergence_threshold
    assert s.diverged_fraction > 0.01
    assert s.verdict == DIVERGENT


def test_trials_do_not_depend_on_batch(scalar_sys):
    cfg = TrialConfig(p=0.6, horizon=50, trials=70)
    big, _ = harness._run_trials(scalar_sys, cfg, 1e8, 1)
    small, _ = harness._run_trials(scalar_sys, replace(cfg, trials=5), 1e8, 1)
    np.testing.assert_array_equal(big[:5], small)


def test_parallel_output_identical(degenerate_pair):
    cfg = TrialConfig(p=0.9, horizon=60, trials=200)
    serial = estimate(degenerate_pair, cfg, jobs=1)
    parallel = estimate(degenerate_pair, cfg, jobs=3)
    assert serial.to_csv() == parallel.to_csv()
    assert serial.verdict == parallel.verdict
    assert serial.growth_rate == parallel.growth_rate


@pytest.mark.slow
@pytest.mark.parametrize("name, p", [("scalar", 0.9), ("scalar", 0.5),
                                     ("degenerate_pair", 0.85),
                                     ("nondegenerate_pair", 0.85)])
def test_verdict_does_not_depend_on_seed(golden, name, p):
    s = golden(name)
    verdicts = {estimate(s, TrialConfig(p=p, base_seed=seed, **FULL)).verdict
                for seed in (12345, 777)}
    assert len(verdicts) == 1 and INCONCLUSIVE not in verdicts


@pytest.mark.slow
def test_degeneracy_separates_verdicts(degenerate_pair, nondegenerate_pair):
    cfg = TrialConfig(p=0.85, **FULL)
    assert estimate(degenerate_pair, cfg).verdict == DIVERGENT
    assert estimate(nondegenerate_pair, cfg).verdict == BOUNDED


@pytest.mark.slow
def test_verdicts_monotone_in_p(scalar_sys):
    order = {DIVERGENT: 0, INCONCLUSIVE: 1, BOUNDED: 2}
    ranks = [order[estimate(scalar_sys, TrialConfig(p=p, horizon=150, trials=200)).verdict]
             for p in np.linspace(0.1, 1.0, 10)]
    assert ranks == sorted(ranks)


def test_sweep_stable_system(golden):
    res = empirical_pc(golden("stable"), 0.05, TrialConfig(p=0.5, horizon=50, trials=50))
    assert res.estimated_pc == 0.0 and res.bracket == (0.0, 0.0)
    assert len(res.evaluated_points) == 1


def test_sweep_resolution_floor(scalar_sys):
    with pytest.raises(ValueError):
        empirical_pc(scalar_sys, 0.001, TrialConfig(p=0.5))


@pytest.mark.slow
def test_sweep_brackets_scalar(scalar_sys):
    analytic = critical_value(scalar_sys)
    res = empirical_pc(scalar_sys, 0.05, TrialConfig(p=0.5, **FULL), analytic=analytic)
    lo, hi = res.bracket
    assert hi - lo <= 0.05 and lo <= 0.75 <= hi
    assert res.resolved and not res.anomalies
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["p", "verdict", "log_slope", "diverged_fraction", "analytic_pc"]
    assert {r[4] for r in rows[1:]} == {"0.75"}
    assert rows[1][0] == "0.0" and rows[1][1] == DIVERGENT


def _fake_estimate(verdicts):
    """Stand-in for ``estimate`` returning verdicts by p."""
    def fake(sys, cfg, jobs=1):
        v = verdicts(cfg.p)
        K = cfg.horizon
        return SimulationSummary(np.ones(K), np.ones((K, 3)), 0.0, 0.0, 1.0, v, cfg)
    return fake


def test_sweep_all_inconclusive_raises(monkeypatch, scalar_sys):
    monkeypatch.setattr(harness, "estimate", _fake_estimate(lambda p: INCONCLUSIVE))
    with pytest.raises(SweepError):
        empirical_pc(scalar_sys, 0.05, TrialConfig(p=0.5, horizon=20, trials=2))


def test_sweep_inconclusive_point_probes_neighbours(monkeypatch, scalar_sys):
    def verdicts(p):
        if abs(p - 0.5) < 1e-12:
            return INCONCLUSIVE
        return BOUNDED if p > 0.6 else DIVERGENT
    monkeypatch.setattr(harness, "estimate", _fake_estimate(verdicts))
    res = empirical_pc(scalar_sys, 0.05, TrialConfig(p=0.5, horizon=20, trials=2))
    lo, hi = res.bracket
    assert lo <= 0.6 <= hi and hi - lo <= 0.05
    # the inconclusive midpoint was retried with a doubled horizon
    mid = [pt for pt in res.evaluated_points if pt.p == 0.5]
    assert mid[0].horizon == 40


def test_sweep_unresolved_when_probes_fail(monkeypatch, scalar_sys):
    def verdicts(p):
        return {0.0: DIVERGENT, 1.0: BOUNDED}.get(p, INCONCLUSIVE)
    monkeypatch.setattr(harness, "estimate", _fake_estimate(verdicts))
    res = empirical_pc(scalar_sys, 0.05, TrialConfig(p=0.5, horizon=20, trials=2))
    assert not res.resolved and res.bracket == (0.0, 1.0)
    assert any("no conclusive verdict" in a for a in res.anomalies)


def test_sweep_reports_non_monotone_points(monkeypatch, scalar_sys):
    monkeypatch.setattr(harness, "estimate",
                        _fake_estimate(lambda p: BOUNDED if 0.3 < p < 0.7 else DIVERGENT))
    res = empirical_pc(scalar_sys, 0.05, TrialConfig(p=0.5, horizon=20, trials=2))
    assert any("bounded at p=0.5 but divergent at p=1" in a for a in res.anomalies)


def test_sweep_not_bounded_at_one(monkeypatch, scalar_sys):
    monkeypatch.setattr(harness, "estimate", _fake_estimate(lambda p: DIVERGENT))
    res = empirical_pc(scalar_sys, 0.05, TrialConfig(p=0.5, horizon=20, trials=2))
    assert res.bracket[1] == 1.0
    assert any("p=1" in a for a in res.anomalies)


def test_sweep_csv_interval_cell():
    from lossy_kalman.critical import CriticalValueResult
    res = harness.SweepResult((harness.SweepPoint(0.5, DIVERGENT, 0.1, 0.0, 1.5, 300),),
                              0.8, (0.75, 0.8), CriticalValueResult(None, 0.75, None))
    row = list(csv.reader(io.StringIO(res.to_csv())))[1]
    assert row[4] == "[0.75, ]"
