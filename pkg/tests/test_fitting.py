import math

import numpy as np
import pytest

from ratchetchaos.fitting import (
    LINEAR,
    MODELS,
    NO_REVIVAL,
    POWER_OFFSET,
    SHIFTED_POWER,
    TANH_ONSET,
    FitRejected,
    depletion_onset_time,
    fit_power_offset,
    fit_shifted_power,
    get_model,
    init_tanh_onset,
    linear_fit,
    nonlinear_fit,
    onset_window_end,
    r_squared,
    revival_time,
    running_max,
)
from ratchetchaos.meanfield import TimeSeries

# interior points and parameter draws where every model is smooth
DRAWS = {
    "linear": (lambda r: r.uniform(-3, 3, 2), lambda r: r.uniform(-5, 5)),
    "tanh_onset": (lambda r: np.array([r.uniform(0.1, 1), r.uniform(0.05, 0.5), r.uniform(-60, -10), r.uniform(0, 1)]),
                   lambda r: r.uniform(0, 80)),
    "power_offset": (lambda r: np.array([r.uniform(0.5, 5), r.uniform(0.1, 1.5), r.uniform(-2, 2)]),
                     lambda r: r.uniform(1, 40)),
    "shifted_power": (lambda r: np.array([r.uniform(0.5, 5), r.uniform(-0.5, 3), r.uniform(0.1, 1.5)]),
                      lambda r: r.uniform(1, 40)),
}


def test_linear_fit_examples():
    f = linear_fit([0, 1, 2], [1, 3, 5])
    np.testing.assert_allclose(f.params, [2, 1])
    assert f.r2 == pytest.approx(1.0)
    np.testing.assert_allclose(f.std_errs, 0.0, atol=1e-12)
    assert f["slope"] == pytest.approx(2.0)


def test_linear_fit_degenerate_x():
    with pytest.raises(ValueError):
        linear_fit([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        linear_fit([1, 2], [1, 2])


def test_linear_fit_scale_equivariance():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 10, 30)
    y = 1.5 * x - 2 + rng.normal(0, 0.3, 30)
    a = linear_fit(x, y)
    b = linear_fit(x, -3.0 * y)
    np.testing.assert_allclose(b.params, -3.0 * a.params)
    assert b.r2 == pytest.approx(a.r2)


def test_linear_fit_error_matches_textbook():
    rng = np.random.default_rng(1)
    x = np.arange(20.0)
    y = 0.5 * x + rng.normal(0, 1, 20)
    f = linear_fit(x, y)
    V = np.vander(x, 2)
    coef, res, *_ = np.linalg.lstsq(V, y, rcond=None)
    cov = np.linalg.inv(V.T @ V) * res[0] / 18
    np.testing.assert_allclose(f.params, coef)
    np.testing.assert_allclose(f.std_errs, np.sqrt(np.diag(cov)))


def test_r_squared_constant_data():
    assert r_squared(np.ones(4), np.ones(4)) == 0.0


@pytest.mark.parametrize("name", sorted(MODELS))
def test_jacobian_matches_finite_differences(name):
    model = get_model(name)
    draw_p, draw_x = DRAWS[name]
    rng = np.random.default_rng(2)
    for _ in range(100):
        p = draw_p(rng)
        x = np.array([draw_x(rng)])
        J = model.jacobian(p, x)[0]
        for k in range(model.arity):
            h = 1e-6 * max(1.0, abs(p[k]))
            up, dn = p.copy(), p.copy()
            up[k] += h
            dn[k] -= h
            fd = (model(up, x)[0] - model(dn, x)[0]) / (2 * h)
            assert J[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_tanh_round_trip():
    t = np.linspace(0, 100, 400)
    truth = np.array([0.3, 0.12, -50.0, 0.32])
    y = TANH_ONSET(truth, t)
    f = nonlinear_fit(TANH_ONSET, t, y, init_tanh_onset(t, y))
    assert f.converged
    np.testing.assert_allclose(f.params, truth, rtol=1e-6)


def test_power_offset_exact_recovery():
    N = np.arange(2.0, 42.0, 2.0)
    T = 3.0 * N**0.3 + 1.5
    f = fit_power_offset(N, T)
    assert f.converged
    np.testing.assert_allclose(f.params, [3.0, 0.3, 1.5], atol=1e-6)


def test_shifted_power_exact_recovery():
    N = np.arange(2.0, 42.0, 2.0)
    C = 7.0 * (N + 1.3) ** 0.5
    f = fit_shifted_power(N, C)
    assert f.converged
    np.testing.assert_allclose(f.params, [7.0, 1.3, 0.5], atol=1e-6)


def test_fit_idempotence():
    rng = np.random.default_rng(3)
    N = np.arange(2.0, 42.0, 2.0)
    T = 3.0 * N**0.3 + 1.5 + rng.normal(0, 0.05, N.size)
    a = fit_power_offset(N, T)
    b = nonlinear_fit(POWER_OFFSET, N, T, a.params)
    np.testing.assert_allclose(b.params, a.params, rtol=1e-8)


def test_monotone_residual():
    rng = np.random.default_rng(4)
    N = np.arange(2.0, 42.0, 2.0)
    C = 5.0 * (N + 0.5) ** 0.4 + rng.normal(0, 0.1, N.size)
    costs = []
    for it in range(1, 12):
        f = nonlinear_fit(SHIFTED_POWER, N, C, [1.0, 0.0, 1.0], max_iter=it)
        costs.append(f.residual_norm)
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_fit_result_serialisation():
    f = linear_fit([0, 1, 2, 3], [0, 1, 2, 3.5])
    d = f.to_dict()
    assert set(d) == {"model", "params", "std_errs", "r2", "converged"}
    assert set(d["params"]) == {"slope", "intercept"}
    assert f.err("slope") == pytest.approx(d["std_errs"]["slope"])


def test_nonlinear_fit_argument_checks():
    x = np.arange(1.0, 10.0)
    with pytest.raises(ValueError):
        nonlinear_fit(POWER_OFFSET, x, x, [1.0, 1.0])
    with pytest.raises(ValueError):
        nonlinear_fit(SHIFTED_POWER, x, x, [1.0, -5.0, 1.0])
    with pytest.raises(ValueError):
        nonlinear_fit("nope", x, x, [1.0])
    with pytest.raises(ValueError):
        nonlinear_fit(LINEAR, x, x, [1.0, 0.0], max_iter=0)


def _tanh_series(turn, n=1000, dt=0.1, noise=0.0):
    t = np.arange(n) * dt
    y = 0.3 * np.tanh(0.15 * (t - turn)) + 0.3
    if noise:
        y = y + np.random.default_rng(5).normal(0, noise, n)
    return TimeSeries(dt, y, "depletion")


def test_onset_recovers_turning_point():
    on = depletion_onset_time(_tanh_series(50.0), window_end=None)
    assert on.time == pytest.approx(50.0, rel=0.01)
    noisy = depletion_onset_time(_tanh_series(50.0, noise=0.01), window_end=None)
    assert noisy.time == pytest.approx(50.0, rel=0.01)


def test_onset_with_time_unit_and_auto_window():
    s = _tanh_series(50.0)
    on = depletion_onset_time(s, time_unit=10.0)
    assert on.time == pytest.approx(50.0, rel=0.01)
    assert on.window_end <= s.times[-1]


def test_onset_rejects_decreasing_series():
    s = TimeSeries(0.1, np.linspace(1.0, 0.0, 500))
    with pytest.raises(FitRejected):
        depletion_onset_time(s)


def test_onset_rejects_poor_fit():
    t = np.arange(2000) * 0.1
    y = 0.3 + 0.3 * np.sin(0.05 * t) * np.cos(1.3 * t)
    with pytest.raises(FitRejected):
        depletion_onset_time(TimeSeries(0.1, y), window_end=None)


def test_onset_window_end():
    t = np.linspace(0, 100, 1001)
    y = np.minimum(t / 10.0, 1.0)
    # 80% of the early maximum is reached at t = 8
    assert onset_window_end(t, y, margin=0.0) == pytest.approx(16.0)
    assert onset_window_end(t, -y) == 100.0


def test_revival_square_pulse():
    t = np.arange(0, 200, 0.5)
    f = np.full(t.size, 0.2)
    f[:4] = 1.0
    f[(t >= 100) & (t <= 110)] = 0.9
    r = revival_time(TimeSeries(0.5, f))
    assert r.found and r.decayed
    assert r.time == pytest.approx(105.0)
    assert (r.start, r.stop) == (100.0, 110.0)


def test_revival_never_decayed():
    r = revival_time(TimeSeries(1.0, np.ones(100)))
    assert not r.found and not r.decayed and math.isnan(r.time)


def test_revival_decayed_without_return():
    f = np.concatenate([[1.0, 0.8], np.full(100, 0.3)])
    r = revival_time(TimeSeries(1.0, f))
    assert r.decayed and not r.found
    assert math.isnan(r.time) and math.isnan(NO_REVIVAL)


def test_revival_envelope_merges_fast_oscillation():
    t = np.arange(0, 300, 0.1)
    env = np.where((t > 100) & (t < 120), 0.95, 0.3)
    env[:5] = 1.0
    f = env * (0.5 + 0.5 * np.cos(3.0 * t) ** 2)
    raw = revival_time(TimeSeries(0.1, f))
    merged = revival_time(TimeSeries(0.1, f), envelope_window=2.0)
    assert merged.found
    assert merged.time == pytest.approx(110.0, abs=1.0)
    # without the envelope the first oscillation spike ends the revival early
    assert raw.stop - raw.start < merged.stop - merged.start


def test_revival_rejects_out_of_range():
    with pytest.raises(ValueError):
        revival_time(TimeSeries(1.0, np.array([1.0, 1.2, 0.5])))


def test_running_max():
    x = np.array([0.0, 3.0, 1.0, 0.0, 0.0, 2.0])
    np.testing.assert_array_equal(running_max(x, 3), [3, 3, 3, 1, 2, 2])
    np.testing.assert_array_equal(running_max(x, 1), x)
