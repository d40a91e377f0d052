import math

import mpmath
import numpy as np
import pytest

from afclab.echo import (
    AFCWindow,
    TimeTrace,
    afc_efficiency_analytic,
    comb_profile,
    echo_metrics,
    gaussian_pulse,
    matched_grid,
    mean_photons_from_click,
    propagate,
    schedule_multiwindow,
    simulate_echo,
    simulate_storage,
    storage_time,
    transfer_function,
    with_etalon_leakage,
)
from afclab.errors import AliasingError, DomainError, GatingError, MatchingError, ResolutionError, SaturationError
from afclab.medium import Grid, SpectralProfile


def eta_oracle(d, F, d0):
    mpmath.mp.dps = 30
    d, F, d0 = mpmath.mpf(d), mpmath.mpf(F), mpmath.mpf(d0)
    return float((d / F) ** 2 * mpmath.exp(-d / F) * mpmath.sinc(mpmath.pi / F) ** 2 * mpmath.exp(-d0))


def test_analytic_efficiency_values():
    assert afc_efficiency_analytic(3.3, 3, 1.3) == pytest.approx(0.075, abs=1e-3)
    assert afc_efficiency_analytic(0.0, 3, 1.3) == 0.0
    assert afc_efficiency_analytic(3.3, 3, 0.0) == pytest.approx(0.2755, abs=1e-4)
    for args in [(3.3, 3, 1.3), (3.3, 3, 0.0), (1.0, 2.0, 0.5), (5.0, 5.0, 1.5)]:
        assert afc_efficiency_analytic(*args) == pytest.approx(eta_oracle(*args), rel=1e-13)


def test_analytic_efficiency_domain():
    with pytest.raises(DomainError):
        afc_efficiency_analytic(3.3, 0.9, 1.3)
    with pytest.raises(DomainError):
        afc_efficiency_analytic(-1.0, 3, 0.0)


def test_storage_time():
    assert storage_time(2e6) == pytest.approx(0.5e-6, rel=1e-15)
    assert storage_time(1e6) == pytest.approx(1.0e-6, rel=1e-15)
    assert storage_time(4e6) == pytest.approx(0.25e-6, rel=1e-15)
    for a in (0.5, 3.0, 7.0):
        assert storage_time(a * 2e6) == pytest.approx(storage_time(2e6) / a, rel=1e-15)


def test_window_validation():
    with pytest.raises(DomainError):
        AFCWindow(0.0, 1e6, 2e6)
    with pytest.raises(DomainError):
        AFCWindow(0.0, 8e6, 2e6, finesse=0.5)
    w = AFCWindow(0.0, 8e6, 2e6, 3, 3.3, 1.3)
    assert w.storage_time == pytest.approx(0.5e-6)
    assert w.n_teeth == 4


def test_comb_profile_shape():
    grid = Grid.centered(span=12e6, step=1e3)
    w = AFCWindow(0.0, 8e6, 2e6, 3, 3.3, 1.3)
    p = comb_profile(w, grid)
    assert w.tooth_width == pytest.approx(0.6667e6, rel=1e-4)
    assert p.values.max() == pytest.approx(3.3 + 1.3)
    assert p.values.min() == pytest.approx(1.3)
    # one tooth: count samples above the floor around the first center
    c = w.tooth_centers[0]
    sel = p.mask(c - 1e6 + 1, c + 1e6 - 1)
    width = np.count_nonzero(p.values[sel] > 1.3 + 1e-9) * grid.step
    assert width == pytest.approx(w.tooth_width, abs=2 * grid.step)
    teeth = np.count_nonzero(np.diff((p.values > 2.0).astype(int)) == 1)
    assert teeth == 4


def test_comb_profile_unit_finesse_is_flat():
    grid = Grid.centered(span=12e6, step=1e3)
    w = AFCWindow(0.0, 8e6, 2e6, 1.0, 3.3, 0.0)
    p = comb_profile(w, grid)
    inside = p.mask(-4e6 + 2e3, 4e6 - 2e3)
    np.testing.assert_allclose(p.values[inside], 3.3)


def test_comb_profile_resolution():
    with pytest.raises(ResolutionError):
        comb_profile(AFCWindow(0.0, 8e6, 2e6, 3.0), Grid.centered(span=12e6, step=0.5e6))


def test_transfer_function_empty_medium():
    p = SpectralProfile(-1e6, 1e3, np.zeros(2001))
    r = transfer_function(p)
    np.testing.assert_allclose(r.values, 1.0, atol=1e-15)


def test_lorentzian_dispersion():
    gamma, d = 1e6, 1.0
    grid = Grid.centered(span=400e6, step=20e3)
    f = grid.detuning
    od = d * gamma**2 / (f**2 + gamma**2)
    r = transfer_function(SpectralProfile(grid.start, grid.step, od))
    # closed-form field response of a Lorentz oscillator: -(d/2) * gamma / (gamma + i f)
    expected = (d / 2) * gamma * f / (f**2 + gamma**2)
    core = np.abs(f) < 20 * gamma
    err = np.abs(r.phase[core] - expected[core]).max()
    assert err < 0.01 * np.abs(expected).max()
    np.testing.assert_allclose(r.amplitude, np.exp(-od / 2), rtol=1e-12)


def test_causal_impulse_response_smooth_line():
    grid = Grid.centered(span=400e6, step=20e3)
    f = grid.detuning
    od = 3.0 * np.exp(-4 * math.log(2) * (f / 20e6) ** 2)
    t, h = transfer_function(SpectralProfile(grid.start, grid.step, od)).impulse_response()
    peak = np.abs(h).max()
    assert np.abs(h[t < 0]).max() < 1e-8 * peak


def test_comb_impulse_response_peaks():
    grid, dt, n = matched_grid(2e6, 80e6)
    w = AFCWindow(0.5 * grid.step, 40e6, 2e6, 3, 3.3, 0.0)
    t, h = transfer_function(comb_profile(w, grid)).impulse_response()
    a = np.abs(h)
    for k in (1, 2, 3):
        sel = (t > (k - 0.3) / 2e6) & (t < (k + 0.3) / 2e6)
        # the comb's mean absorption advances the echoes slightly (fast light)
        assert t[sel][np.argmax(a[sel])] == pytest.approx(k / 2e6, abs=0.03 / 2e6)


def test_propagate_unity_and_passivity():
    grid = Grid.centered(span=100e6, step=50e3)
    trace = gaussian_pulse(-10e-6, 1 / 100e6, 2000, 0.0, 0.2e-6)
    unity = transfer_function(SpectralProfile(grid.start, grid.step, np.zeros(grid.count)))
    out = propagate(trace, unity)
    np.testing.assert_allclose(out.samples, trace.samples, rtol=0, atol=1e-10 * np.abs(trace.samples).max())
    rng = np.random.default_rng(0)
    for _ in range(5):
        od = rng.uniform(0, 5, grid.count)
        out = propagate(trace, transfer_function(SpectralProfile(grid.start, grid.step, od)))
        assert out.energy <= trace.energy * (1 + 1e-12)


def test_propagate_aliasing():
    grid = Grid.centered(span=10e6, step=50e3)
    trace = gaussian_pulse(-10e-6, 1 / 100e6, 2000, 0.0, 0.01e-6)
    r = transfer_function(SpectralProfile(grid.start, grid.step, np.zeros(grid.count)))
    with pytest.raises(AliasingError):
        propagate(trace, r)


@pytest.mark.parametrize("delta", [2e6, 1e6])
def test_echo_time(delta):
    run = simulate_echo(AFCWindow(0.0, 20 * delta, delta, 3, 3.3, 1.3))
    dt = run.output.dt
    assert run.metrics.echo_peak_time == pytest.approx(1 / delta, abs=dt)


def test_echo_matches_closed_form_at_reference_point():
    run = simulate_echo(AFCWindow(0.0, 40e6, 2e6, 3, 3.3, 1.3))
    assert run.metrics.efficiency == pytest.approx(afc_efficiency_analytic(3.3, 3, 1.3), rel=0.15)


def test_half_time_echo_with_alternating_teeth():
    w = AFCWindow(0.0, 40e6, 2e6, 3, 3.3, 0.0)
    tau = w.storage_time
    plain = simulate_echo(w)
    alt = simulate_echo(w, alternate_depth=1.0)

    def at_half(run):
        t = run.output.times
        sel = np.abs(t - tau / 2) < 0.1 * tau
        return run.output.intensity[sel].max()

    assert at_half(alt) > 1e-3
    assert at_half(alt) > 1e4 * at_half(plain)


def test_slow_light_delay_with_absorbing_background():
    w = AFCWindow(0.0, 20e6, 2e6, 3, 3.3, 0.0)
    run = simulate_echo(w, base_od=6.0, pulse_fwhm=0.15e-6)
    assert run.metrics.leakage_group_delay > 0
    # phase-slope estimate: spectrally weighted group delay of the tooth-averaged medium
    prof = run.profile
    box = max(int(round(w.delta / prof.detuning_step)), 1)
    smooth = np.convolve(prof.values, np.ones(box) / box, mode="same")
    resp = transfer_function(prof.with_values(smooth))
    X = np.abs(np.fft.fftshift(np.fft.fft(run.input.samples))) ** 2
    weight = X * resp.amplitude**2
    estimate = float(np.sum(weight * resp.group_delay()) / np.sum(weight))
    assert run.metrics.leakage_group_delay == pytest.approx(estimate, rel=0.10)


def test_echo_metrics_trivial_cases():
    trace = gaussian_pulse(-2e-6, 1e-9, 4000, 0.0, 0.1e-6)
    m = echo_metrics(trace, trace, 0.0, 1e-6)
    assert m.efficiency == pytest.approx(1.0, abs=1e-9)
    assert m.leakage_group_delay == pytest.approx(0.0, abs=1e-15)
    zero = TimeTrace(trace.t_start, trace.dt, np.zeros(len(trace)))
    assert echo_metrics(zero, trace, 1e-6, 0.2e-6).efficiency == 0.0
    with pytest.raises(GatingError):
        echo_metrics(trace, trace, 10e-6, 0.2e-6)


def test_schedule_orders():
    w2a = AFCWindow(-6e6, 8e6, 2e6)
    w2b = AFCWindow(6e6, 8e6, 2e6)
    w1 = AFCWindow(-6e6, 8e6, 1e6)
    fifo = schedule_multiwindow([{"time_bin": 0.0, "center": -6e6}, {"time_bin": 0.25e-6, "center": 6e6}], [w2a, w2b])
    assert fifo.order == "FIFO"
    assert [e["expected_echo_time"] for e in fifo] == pytest.approx([0.5e-6, 0.75e-6])
    filo = schedule_multiwindow([{"time_bin": 0.0, "center": -6e6}, {"time_bin": 0.25e-6, "center": 6e6}], [w1, w2b])
    assert filo.order == "FILO"
    assert [e["expected_echo_time"] for e in filo] == pytest.approx([1.0e-6, 0.75e-6])
    freq = schedule_multiwindow([{"time_bin": 0.0, "center": -6e6}, {"time_bin": 0.0, "center": 6e6}], [w1, w2b])
    assert freq.order == "frequency-dependent"
    assert freq[0]["expected_echo_time"] != freq[1]["expected_echo_time"]
    with pytest.raises(MatchingError):
        schedule_multiwindow([{"time_bin": 0.0, "center": 20e6}], [w1, w2b])
    with pytest.raises(MatchingError):
        schedule_multiwindow([{"time_bin": 0.0, "center": -6e6}], [w1, w2a])


@pytest.mark.parametrize("slow_delta,order", [(2e6, "FIFO"), (1e6, "FILO")])
def test_simulated_storage_follows_schedule(slow_delta, order):
    windows = [AFCWindow(-10e6, 16e6, slow_delta, 3, 3.3, 0.0), AFCWindow(10e6, 16e6, 2e6, 3, 3.3, 0.0)]
    inputs = [{"time_bin": 0.0, "center": -10e6}, {"time_bin": 0.25e-6, "center": 10e6}]
    _, out, _, sched = simulate_storage(windows, inputs, pulse_fwhm=0.1e-6)
    assert sched.order == order
    found = []
    for e in sched:
        sel = np.abs(out.times - e["expected_echo_time"]) < 0.1e-6
        found.append(out.times[sel][np.argmax(out.intensity[sel])])
        assert found[-1] == pytest.approx(e["expected_echo_time"], abs=2 * out.dt)
    assert (found[0] < found[1]) == (order == "FIFO")


def test_etalon_leakage_amplitude():
    trace = gaussian_pulse(-1e-6, 1e-9, 2000, 0.0, 0.1e-6)
    leaky = with_etalon_leakage(trace, 0.0)
    assert np.abs(leaky.samples).max() == pytest.approx(1 + math.sqrt(0.009))


def test_mean_photons():
    assert mean_photons_from_click(0.0) == 0.0
    assert mean_photons_from_click(1 - math.exp(-1)) == pytest.approx(1.0, rel=1e-12)
    assert mean_photons_from_click(0.5) == pytest.approx(math.log(2), rel=1e-12)
    p = np.linspace(0, 0.99, 200)
    mu = np.array([mean_photons_from_click(x) for x in p])
    assert np.all(np.diff(mu) > 0)
    assert np.all(np.diff(mu, 2) > 0)
    with pytest.raises(SaturationError):
        mean_photons_from_click(1.0)


def test_trace_serialization_round_trip():
    trace = gaussian_pulse(-1e-6, 1e-9, 50, 0.0, 0.1e-6, detuning=3e6)
    for back in (TimeTrace.from_csv(trace.to_csv()), TimeTrace.from_json(trace.to_json())):
        assert back.t_start == trace.t_start and back.dt == trace.dt
        np.testing.assert_array_equal(back.samples, trace.samples)
