import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatehold.calibration import (REFERENCE_PARAMS, CalibrationError, TakeoffParams, ThroughputCurve,
                                  build_NT, correlation_scan, detect_saturation, fit_takeoff_params,
                                  fit_taxi_by_terminal, fit_taxi_lognormal, npb_from_events,
                                  solve_probabilities, takeoff_count_pmf)


def test_reference_moments():
    assert REFERENCE_PARAMS.std() == pytest.approx(0.1234, abs=5e-4)
    # the weighted mean of the reference table, not the rounded figure quoted alongside it
    assert REFERENCE_PARAMS.mean() == pytest.approx(0.59165, abs=1e-5)


def test_invalid_probabilities():
    with pytest.raises(CalibrationError):
        TakeoffParams(0.5, 1.0, 0.0, 0.7, 0.5)
    with pytest.raises(CalibrationError):
        TakeoffParams(-0.1, 1.0, 0.0, 0.3, 0.3)


def test_build_nt_small():
    s = build_NT([(0, 3), (1, 2)], start=0, end=4)
    assert s.n.tolist() == [1, 2, 1, 0, 0]
    assert s.rate[0] == pytest.approx(0.2)
    assert s.rate[3] == pytest.approx(0.1)  # take-off at 3 still inside [3, 12]
    assert s.rate[4] == 0


def test_build_nt_requires_sorted():
    with pytest.raises(CalibrationError):
        build_NT([(5, 9), (1, 4)])


def test_correlation_constant_series_is_undefined():
    scan = correlation_scan(np.ones(20), np.arange(20.0), [0, 1])
    assert all(math.isnan(r) for r in scan.correlation)
    assert scan.best_offset is None


def test_correlation_finds_shift():
    rng = np.random.default_rng(0)
    n = rng.normal(size=300)
    t = np.roll(n, 4)  # t[k] = n[k-4]
    scan = correlation_scan(n, t, range(-6, 7))
    assert scan.best_offset == 4


def _curve(mean):
    n = np.arange(len(mean))
    return ThroughputCurve(n, np.asarray(mean, dtype=float), np.zeros(len(mean)), np.ones(len(mean), dtype=int))


def test_saturation_flat():
    assert detect_saturation(_curve([0.6] * 10)) == 0


def test_saturation_piecewise():
    mean = [min(n, 15) * 0.04 for n in range(30)]
    assert detect_saturation(_curve(mean)) == 15


def test_saturation_hub_like():
    mean = [min(n, 40) * 0.025 for n in range(70)]
    assert abs(detect_saturation(_curve(mean)) - 40) <= 2


def test_saturation_missing():
    with pytest.raises(CalibrationError, match="no saturation"):
        detect_saturation(_curve([0.05 * n for n in range(20)]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 0.2), min_size=5, max_size=40), st.floats(0.001, 0.05), st.floats(0.001, 0.05))
def test_saturation_monotone_in_threshold(steps, t1, t2):
    mean = np.cumsum(steps)
    lo, hi = sorted((t1, t2))
    try:
        strict = detect_saturation(_curve(mean), threshold=lo)
    except CalibrationError:
        return
    assert detect_saturation(_curve(mean), threshold=hi) <= strict


def test_solve_probabilities_round_trip():
    r = REFERENCE_PARAMS
    p1, p2 = solve_probabilities(r.c1, r.c2, r.c3, r.mean(), r.std())
    assert float(p1) == pytest.approx(r.p1, abs=1e-12)
    assert float(p2) == pytest.approx(r.p2, abs=1e-12)


def test_count_pmf_normalized_without_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pmf = takeoff_count_pmf([[0.5, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    assert pmf.sum() == pytest.approx(1.0)
    assert pmf[0, 5] == pytest.approx(1.0)


def test_fit_takeoff_reproduces_targets():
    fit = fit_takeoff_params(REFERENCE_PARAMS.mean(), REFERENCE_PARAMS.std())
    p = fit.params
    assert p.mean() == pytest.approx(REFERENCE_PARAMS.mean(), abs=1e-9)
    assert p.std() == pytest.approx(REFERENCE_PARAMS.std(), abs=1e-9)
    assert min(p.probs) >= 0
    assert fit.distance < 0.05


def test_fit_taxi_lognormal_recovers_parameters():
    rng = np.random.default_rng(1)
    x = rng.lognormal(math.log(12), 0.3, size=20000)
    fit = fit_taxi_lognormal(x, "A")
    assert fit.mu_log == pytest.approx(math.log(12), abs=0.01)
    assert fit.sigma_log == pytest.approx(0.3, abs=0.01)


def test_fit_taxi_needs_samples():
    with pytest.raises(CalibrationError):
        fit_taxi_lognormal([10, 12], "A")


def test_fit_taxi_constant_sample_uses_floor():
    assert fit_taxi_lognormal([10] * 40).sigma_log > 0


def test_fit_by_terminal_filters_congested_pushes():
    recs = [{"terminal": "A", "npb": 0, "taxi_out": 10}] * 20 + [{"terminal": "A", "npb": 1, "taxi_out": 12}] * 20
    recs += [{"terminal": "A", "npb": 9, "taxi_out": 60}] * 50
    fit = fit_taxi_by_terminal(recs)["A"]
    assert fit.sample_count == 40
    assert math.exp(fit.mu_log) < 12


def test_npb_from_events():
    ev = [(0, 10), (2, 5), (6, 12), (11, 20)]
    assert npb_from_events(ev).tolist() == [0, 1, 1, 1]
