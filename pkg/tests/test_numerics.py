import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from sclc_margin.numerics import (
    DIVERGENCE_THRESHOLD,
    DelayLine,
    DwellUnstable,
    EnergyAccumulator,
    TimeSeries,
    apply_delay,
    integrate,
    l2_norm,
    sine_dwell_batch,
    sine_dwell_gain,
)


def test_integrate_sample_count_and_grid():
    ts = integrate(lambda t, x: -x, [1.0], 0.1, 1.05)
    assert len(ts) == 11
    assert np.allclose(ts.t, 0.1 * np.arange(11))


def test_integrate_decay_matches_exponential():
    ts = integrate(lambda t, x: -x, [1.0], 1e-2, 2.0)
    assert abs(ts.final[0] - math.exp(-2.0)) < 1e-9


def test_integrate_fourth_order_convergence():
    f = lambda t, x: np.array([x[1], -x[0]])  # noqa: E731
    errs = []
    for dt in (0.1, 0.05):
        ts = integrate(f, [1.0, 0.0], dt, 2.0)
        errs.append(abs(ts.final[0] - math.cos(2.0)))
    order = math.log2(errs[0] / errs[1])
    assert 3.7 < order < 4.3


def test_integrate_passes_time_to_rhs():
    ts = integrate(lambda t, x: np.array([math.cos(t)]), [0.0], 1e-3, 1.0)
    assert abs(ts.final[0] - math.sin(1.0)) < 1e-10


def test_integrate_divergence_is_an_outcome():
    ts = integrate(lambda t, x: x * x, [1.0], 1e-3, 5.0)
    assert ts.diverged
    assert 0.9 < ts.blowup_time <= 1.01
    assert np.all(np.abs(ts.samples) <= DIVERGENCE_THRESHOLD)


def test_integrate_detects_nan():
    ts = integrate(lambda t, x: np.array([np.nan]), [1.0], 0.1, 1.0)
    assert ts.diverged and len(ts) == 1


def test_integrate_rejects_bad_steps():
    with pytest.raises(ValueError):
        integrate(lambda t, x: x, [1.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        integrate(lambda t, x: x, [1.0], 1.0, 0.5)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_integrate_linear_systems_match_expm(entries, x0):
    A = np.array(entries).reshape(2, 2)
    ts = integrate(lambda t, x: A @ x, x0, 1e-3, 0.5)
    exact = scipy.linalg.expm(0.5 * A) @ np.array(x0)
    assert np.allclose(ts.final, exact, rtol=1e-7, atol=1e-8)


def test_delay_line_zero_history_then_shift():
    dt = 0.1
    line = DelayLine([0.3], dt)
    outs = []
    for k in range(8):
        line.push(k * dt, [float(k + 1)])
        outs.append(line.read(k * dt)[0])
    assert outs[:3] == [0.0, 0.0, 0.0]
    assert np.allclose(outs[3:], [1, 2, 3, 4, 5])


def test_delay_line_interpolates_between_samples():
    dt = 0.1
    line = DelayLine([0.25], dt)
    for k in range(10):
        line.push(k * dt, [k * dt])
    # ramp delayed by 0.25 read at t = 0.9 + 0.05
    assert abs(line.read(0.95)[0] - 0.70) < 1e-12


def test_delay_line_per_channel():
    dt = 0.01
    line = DelayLine([0.0, 0.05], dt)
    for k in range(20):
        line.push(k * dt, [k, -k])
    assert np.allclose(line.read(19 * dt), [19, -14])


def test_apply_delay_zero_is_exact_passthrough():
    line = DelayLine([0.0], 1e-3)
    for k in range(5):
        assert apply_delay(line, [0.1 * k + 1e-17], k * 1e-3)[0] == 0.1 * k + 1e-17


def test_delay_line_rejects_negative():
    with pytest.raises(ValueError):
        DelayLine([-0.1], 1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 40), st.lists(st.floats(-10, 10), min_size=60, max_size=60))
def test_delay_line_integer_delay_is_exact(steps, values):
    dt = 0.01
    line = DelayLine([steps * dt], dt)
    for k, v in enumerate(values):
        line.push(k * dt, [v])
        expected = values[k - steps] if k >= steps else 0.0
        assert line.read(k * dt)[0] == pytest.approx(expected, abs=1e-9)


def test_delay_line_phase_matches_omega_tau():
    tau, omega, dt = 0.2, 2.0, 1e-3

    def process(u: TimeSeries) -> TimeSeries:
        line = DelayLine([tau], dt)
        out = np.empty_like(u.samples)
        for k, row in enumerate(u.samples):
            out[k] = apply_delay(line, row, k * dt)
        return TimeSeries(dt, out)

    g = sine_dwell_gain(process, omega, 1.0, settle_periods=2, measure_periods=4, dt=dt)[0]
    assert abs(abs(g) - 1.0) < 1e-3
    assert abs(math.degrees(-np.angle(g)) - math.degrees(omega * tau)) < 0.5


def test_timeseries_csv_round_trip(tmp_path):
    ts = TimeSeries(0.5, np.array([[1.0, 2.0], [3.0, 4.5], [1e-9, -2.0]]), names=("a", "b"))
    p = tmp_path / "ts.csv"
    ts.to_csv(p)
    back = TimeSeries.from_csv(p)
    assert back.names == ("a", "b")
    assert np.allclose(back.samples, ts.samples) and back.dt == 0.5
    assert p.read_text().splitlines()[0] == "t,a,b"


def test_timeseries_validation():
    with pytest.raises(ValueError):
        TimeSeries(0.0, [1.0])
    with pytest.raises(ValueError):
        TimeSeries(1.0, [[1.0, 2.0]], names=("a",))


def test_l2_norm_of_exponential():
    dt = 1e-3
    t = dt * np.arange(20001)
    ts = TimeSeries(dt, np.exp(-t))
    assert abs(l2_norm(ts) - math.sqrt(0.5)) < 1e-6


def test_energy_accumulator_tracks_total_and_tail():
    acc = EnergyAccumulator(0.1, 0.2)
    for v in (1.0, 1.0, 2.0, 2.0):
        acc.add([v])
    assert acc.total == pytest.approx(0.1 * (1 + 2.5 + 4))
    assert acc.tail == pytest.approx(0.1 * (2.5 + 4))


def _first_order(u: TimeSeries) -> TimeSeries:
    uu = u.samples[:, 0]

    def inp(t):
        s = t / u.dt
        k = min(int(s), len(uu) - 2)
        return uu[k] + (s - k) * (uu[k + 1] - uu[k])

    return integrate(lambda t, x: -x + inp(t), [0.0], u.dt, u.t[-1])


def test_sine_dwell_first_order_lag():
    for w in (0.5, 2.0):
        g = sine_dwell_gain(_first_order, w, 1.0, settle_periods=4, measure_periods=3, dt=1e-2)[0]
        assert abs(g - 1 / (1j * w + 1)) < 2e-3


def test_sine_dwell_rejects_coarse_step():
    with pytest.raises(ValueError):
        sine_dwell_gain(_first_order, 100.0, 1.0, dt=0.01)


def test_sine_dwell_reports_instability():
    def unstable(u):
        return integrate(lambda t, x: x * x + 1.0, [0.0], u.dt, u.t[-1])

    with pytest.raises(DwellUnstable):
        sine_dwell_gain(unstable, 1.0, 1.0, dt=1e-2)


def test_sine_dwell_batch_matches_known_lag():
    omegas = np.array([0.3, 1.0, 3.0])

    def rhs(t, x, q):
        return -2.0 * x + q

    g, valid = sine_dwell_batch(rhs, 1, omegas, [0, 0, 0], 1, lambda x: x, 0.1, 20, 3, 200)
    assert valid.all()
    assert np.allclose(g[:, 0], 1 / (1j * omegas + 2), rtol=1e-4)


def test_sine_dwell_batch_flags_divergent_rows():
    def rhs(t, x, q):
        return np.where(np.arange(2)[:, None] == 1, x * x + 1.0, -x + q)

    g, valid = sine_dwell_batch(rhs, 1, [1.0, 1.0], [0, 0], 1, lambda x: x, 1.0, 3, 2, 64)
    assert valid.tolist() == [True, False]
    assert np.isnan(g[1, 0])
