import math

import numpy as np
import pytest

from spatialrc.lti import connect_feedback
from spatialrc.scenario import (
    DisturbanceMap,
    ScenarioConfig,
    ScenarioResult,
    VariantSeries,
    VelocityProfile,
    d_p_eval,
    default_disturbance,
    generate_position,
    period_metrics,
    run_scenario,
)

TWO_PI = 2.0 * math.pi
TS = 1e-3


# --- disturbance map ---------------------------------------------------------

def test_disturbance_zero_at_origin():
    assert d_p_eval(default_disturbance(), 0.0) == pytest.approx(0.0, abs=1e-12)


def test_disturbance_quarter_period_value():
    # independent term-by-term oracle for the five-harmonic map
    amps = [1.5, 0.8, 0.6, 0.4, 0.2]
    freqs = [1, 3, 9, 18, 27]
    oracle = sum(a * math.sin(f * math.pi / 2.0) for a, f in zip(amps, freqs))
    assert oracle == pytest.approx(1.1, abs=1e-12)
    assert d_p_eval(default_disturbance(), math.pi / 2.0) == pytest.approx(
        oracle, abs=1e-12)


def test_disturbance_amplitude_bound():
    p = np.linspace(0, TWO_PI, 5000)
    assert np.max(np.abs(d_p_eval(default_disturbance(), p))) <= 3.5


def test_disturbance_exactly_periodic():
    dmap = default_disturbance()
    p = np.linspace(0, TWO_PI, 257)
    assert np.allclose(d_p_eval(dmap, p), d_p_eval(dmap, p + TWO_PI),
                       rtol=0, atol=1e-12)


def test_disturbance_length_mismatch():
    with pytest.raises(ValueError):
        DisturbanceMap([1.0, 2.0], [1.0])


# --- velocity profile / position generation ----------------------------------

def test_position_constant_velocity_anchors_buffer_length():
    profile = VelocityProfile([(10.0, 3.6593, 3.6593)])
    p, v = generate_position(profile, TS, 2000)
    # one spatial period lasts about 1717 samples at this velocity
    assert TWO_PI / (3.6593 * TS) == pytest.approx(1717.0, abs=0.1)
    assert p[1717] == pytest.approx(TWO_PI, abs=3e-4)
    assert np.all(v == 3.6593)


def test_position_zero_velocity():
    p, v = generate_position(VelocityProfile([(1.0, 0.0, 0.0)]), TS, 500)
    assert np.all(p == 0.0)
    assert np.all(v == 0.0)


def test_position_ramp_matches_closed_form():
    v0, v1, dur = 3.6593, 5.0, 1.0
    profile = VelocityProfile([(dur, v0, v1)])
    n = 1001
    p, v = generate_position(profile, TS, n)
    t = np.arange(n) * TS
    accel = (v1 - v0) / dur
    exact = v0 * t + 0.5 * accel * t * t
    assert np.max(np.abs(p - exact)) < 1e-6


def test_position_profile_holds_last_velocity():
    profile = VelocityProfile([(0.5, 1.0, 2.0)])
    _, v = generate_position(profile, TS, 1000)
    assert v[-1] == 2.0


def test_position_closed_loop_tracking_mode(plant_d, ctrl):
    profile = VelocityProfile([(10.0, 3.6593, 3.6593)])
    p, _ = generate_position(profile, TS, 3000, "closed-loop-tracking",
                             plant_d, ctrl)
    assert np.all(np.isfinite(p))
    # the loop has no integrator, so the output tracks a scaled version
    ref = 3.6593 * 2999 * TS
    assert 0.3 * ref < p[-1] < ref


def test_profile_analytic_integral():
    profile = VelocityProfile([(2.0, 1.0, 3.0), (1.0, 3.0, 3.0)])
    assert profile.position_at(2.0) == pytest.approx(4.0)
    assert profile.position_at(3.0) == pytest.approx(7.0)
    assert profile.position_at(5.0) == pytest.approx(13.0)  # hold-last


# --- period metrics -----------------------------------------------------------

def _fake_result(e, boundaries):
    return ScenarioResult(cfg=None, t=None, p=None, v=None, d=None,
                          series={"x": VariantSeries(e, None, None)},
                          boundaries=boundaries, design=None)


def test_period_metrics_zero_error():
    res = _fake_result(np.zeros(100), [0, 50, 100])
    rows = period_metrics(res)["x"]
    assert [m.norm for m in rows] == [0.0, 0.0]


def test_period_metrics_unit_error_closed_form():
    n = 64
    res = _fake_result(np.ones(n), [0, n])
    rows = period_metrics(res)["x"]
    assert rows[0].norm == pytest.approx(1.0 / math.sqrt(n), rel=1e-12)
    assert (rows[0].start, rows[0].end) == (0, n)


def test_period_metrics_requires_complete_period():
    with pytest.raises(ValueError, match="period"):
        period_metrics(_fake_result(np.ones(10), [0]))


# --- full scenario ------------------------------------------------------------

def test_scenario_no_disturbance_no_error():
    cfg = ScenarioConfig(
        variant="both",
        disturbance=DisturbanceMap([0.0], [1.0]),
        profile=VelocityProfile([(10.0, 3.6593, 3.6593)]),
        duration=4.0,
    )
    res = run_scenario(cfg)
    for series in res.series.values():
        assert np.all(series.e == 0.0)
        assert np.all(series.f == 0.0)


def test_scenario_steady_state_error_is_periodic(default_run):
    e = default_run.series["none"].e
    b = default_run.boundaries
    p2, p3 = e[b[1]:b[2]], e[b[2]:b[3]]
    n = min(p2.size, p3.size)
    resid = np.linalg.norm(p2[:n] - p3[:n]) / np.linalg.norm(p2[:n])
    assert resid < 0.01


def test_scenario_error_equals_process_sensitivity_of_disturbance(
        default_run, plant_d, ctrl):
    # the collocated-disturbance loop: with RC off, e == PS applied to -d
    _, ps, _ = connect_feedback(plant_d, ctrl)
    e_pred = ps.copy().run(-default_run.d)
    assert np.max(np.abs(e_pred - default_run.series["none"].e)) < 1e-8


def test_scenario_variants_share_streams_first_period(default_run):
    b1 = default_run.boundaries[1]
    e_none = default_run.series["none"].e[:b1]
    assert np.array_equal(default_run.series["traditional"].e[:b1], e_none)
    assert np.array_equal(default_run.series["spatial"].e[:b1], e_none)


def test_scenario_velocity_change_contrast(default_run):
    mt = {m.period: m.norm for m in default_run.metrics["traditional"]}
    ms = {m.period: m.norm for m in default_run.metrics["spatial"]}
    assert mt[5] > mt[3]            # time-domain buffer no longer matches
    assert ms[5] < ms[4] < ms[3]    # position-domain model keeps converging
    assert all(ms[j] <= ms[3] for j in mt if j >= 4)


def test_scenario_traditional_monotone_while_velocity_constant(default_run):
    mt = {m.period: m.norm for m in default_run.metrics["traditional"]}
    assert mt[3] <= mt[2]


def test_scenario_baseline_metric_constant_at_constant_velocity(default_run):
    mn = {m.period: m.norm for m in default_run.metrics["none"]}
    assert abs(mn[2] - mn[3]) / mn[3] < 0.05


def test_scenario_velocity_estimate_source():
    cfg = ScenarioConfig(
        variant="spatial",
        velocity_source="estimate",
        profile=VelocityProfile([(10.0, 3.6593, 3.6593)]),
        duration=6.9,
    )
    res = run_scenario(cfg)
    ms = [m.norm for m in res.metrics["spatial"]]
    assert ms[2] < ms[0] / 10.0


def test_scenario_config_validation():
    cfg = ScenarioConfig(inertia=-1.0)
    with pytest.raises(ValueError, match="inertia"):
        cfg.validate()
    cfg = ScenarioConfig(variant="bogus")
    with pytest.raises(ValueError, match="variant"):
        cfg.validate()
    cfg = ScenarioConfig(duration=0.5)  # less than two spatial periods
    with pytest.raises(ValueError, match="periods"):
        cfg.validate()


def test_scenario_boundaries_strictly_increasing(default_run):
    b = np.array(default_run.boundaries)
    assert np.all(np.diff(b) > 0)
    # periods are counted by position, not time
    for j in range(1, len(b)):
        assert default_run.p[b[j]] >= j * default_run.cfg.p_per
        assert default_run.p[b[j] - 1] < j * default_run.cfg.p_per
