import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shallowloc.tfr import (
    GaussianWindow,
    WarpMap,
    hz_to_rad,
    invert_masked_stft,
    spectrogram,
    unwarp,
    warp,
    warp_curve_points,
    warped_curve,
)
from shallowloc.waveguide import (
    TimeSeries,
    WaveguideParams,
    group_delays,
    rigid_cutoff,
    synthesize_signal,
)

FS = 400.0


def bandlimited_noise(n, fs, f_hi, seed, envelope=True, centre=None, width=None):
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(n))
    spec[np.fft.rfftfreq(n, 1 / fs) > f_hi] = 0
    x = np.fft.irfft(spec, n)
    if envelope:
        t = np.arange(n) / fs
        centre = t.mean() if centre is None else centre
        width = 0.15 * np.ptp(t) if width is None else width
        x *= np.exp(-0.5 * ((t - centre) / width) ** 2)
    return TimeSeries(x, fs)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def rigid_like(dt=0.0):
    # very dense bottom: the water column behaves as if it sat on a rigid floor
    return WaveguideParams(1e4, 1500.0, 1600.0, 1000.0, 1e9, 100.0, dt=dt)


# -- window ----------------------------------------------------------------------

@given(st.floats(0.5, 60.0))
def test_window_energy_matches_closed_form(sigma):
    fs = 10 * sigma / 0.1  # sigma * dt = 0.01
    w = GaussianWindow(sigma)
    t = np.arange(-w.half_samples(fs), w.half_samples(fs) + 1) / fs
    assert np.sum(w(t) ** 2) / fs == pytest.approx(w.energy, rel=1e-6)


def test_window_rejects_nonpositive():
    with pytest.raises(ValueError):
        GaussianWindow(0.0)


# -- spectrogram -----------------------------------------------------------------

def test_pure_tone_profile():
    w0, sigma = hz_to_rad(40.0), hz_to_rad(2.0)
    t = np.arange(int(8 * FS)) / FS
    ts = TimeSeries(np.cos(w0 * t), FS)
    om = w0 + np.linspace(-2, 2, 41) * sigma
    S = spectrogram(ts, sigma, time_grid=[4.0], freq_grid=om)
    prof = S.power[0] / S.power[0].max()
    assert om[np.argmax(prof)] == pytest.approx(w0)
    # the sampled window stops at 4/sigma, which perturbs the profile at the e^-8 level
    np.testing.assert_allclose(prof, np.exp(-((om - w0) / sigma) ** 2), atol=1e-3)


def test_zero_signal_zero_power():
    S = spectrogram(TimeSeries(np.zeros(2048), FS), hz_to_rad(5.0), hop=16)
    assert np.all(S.power == 0)


def test_window_longer_than_record_rejected():
    with pytest.raises(ValueError, match="exceeds record"):
        spectrogram(TimeSeries(np.zeros(100), FS), hz_to_rad(1.0))


def test_single_mode_ridge_follows_group_delay(scene, single_modes):
    sigma = hz_to_rad(5.0)
    f = np.arange(20.0, 90.0, 0.5)
    S = spectrogram(single_modes[0], sigma, freq_grid=hz_to_rad(f))
    ridge = S.times[np.argmax(S.power, axis=0)]
    truth = group_delays(scene, hz_to_rad(f), 1) - scene.dt
    assert np.max(np.abs(ridge - truth)) < 1 / sigma


def test_fast_column_path_matches_frame_sum(single_modes):
    u = single_modes[0]
    om = hz_to_rad([22.0, 47.5])
    dense = spectrogram(u, hz_to_rad(5.0), freq_grid=om)
    frames = spectrogram(u, hz_to_rad(5.0), time_grid=u.times[::50], freq_grid=om)
    np.testing.assert_allclose(dense.stft[::50], frames.stft, atol=1e-9 * np.abs(frames.stft).max())


def test_shift_moves_ridges_exactly():
    x = bandlimited_noise(2048, FS, 60.0, 1)
    pad = 256
    a = TimeSeries(np.concatenate([x.samples, np.zeros(2 * pad)]), FS)
    b = TimeSeries(np.concatenate([np.zeros(pad), x.samples, np.zeros(pad)]), FS)
    Sa = spectrogram(a, hz_to_rad(10.0))
    Sb = spectrogram(b, hz_to_rad(10.0))
    inner = slice(200, 2048)
    np.testing.assert_allclose(Sb.power[pad:][inner], Sa.power[inner],
                               atol=1e-10 * Sa.power.max())


# -- masked inversion ----------------------------------------------------------------

def test_full_mask_round_trip():
    x = bandlimited_noise(4096, FS, 80.0, 2, envelope=False)
    S = spectrogram(x, hz_to_rad(5.0), hop=4)
    y = invert_masked_stft(S, np.ones(S.shape, dtype=bool))
    assert rel_l2(y.samples, x.samples) < 1e-3


def test_zero_mask_gives_zero():
    x = bandlimited_noise(2048, FS, 80.0, 3)
    S = spectrogram(x, hz_to_rad(5.0), hop=8)
    assert np.all(invert_masked_stft(S, np.zeros(S.shape, dtype=bool)).samples == 0)


def test_mask_isolates_one_of_two_tones():
    t = np.arange(int(8 * FS)) / FS
    a, b = np.cos(hz_to_rad(10.0) * t), np.cos(hz_to_rad(40.0) * t + 0.3)
    S = spectrogram(TimeSeries(a + b, FS), hz_to_rad(3.0), hop=4)
    y = invert_masked_stft(S, np.broadcast_to(S.freqs < hz_to_rad(25.0), S.shape))
    leak = np.sum((y.samples - a) ** 2) / np.sum(b ** 2)
    assert 10 * np.log10(leak) < -30


def test_mask_shape_checked():
    S = spectrogram(bandlimited_noise(1024, FS, 50.0, 4), hz_to_rad(10.0), hop=8)
    with pytest.raises(ValueError):
        invert_masked_stft(S, np.ones((2, 2)))


# -- warping ---------------------------------------------------------------------

def test_warp_round_trip_on_record(record):
    wmap = WarpMap(4.0)
    back = unwarp(warp(record, wmap), wmap, t_start=record.t_start, n_samples=len(record))
    assert rel_l2(back.samples, record.samples) < 0.01


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 4.0))
def test_warp_round_trip_bandlimited(seed, t0):
    n = int(10.24 * FS)
    # energy after t0: nothing before psi(0) = t0 survives a warp
    x = bandlimited_noise(n, FS, 40.0, seed, centre=6.5, width=0.8)
    wmap = WarpMap(t0)
    back = unwarp(warp(x, wmap), wmap, t_start=0.0, n_samples=n)
    assert rel_l2(back.samples, x.samples) < 0.01


def test_warp_preserves_energy(record):
    w = warp(record, WarpMap(4.0))
    assert w.energy() == pytest.approx(record.energy(), rel=0.01)


def test_unwarp_then_warp_identity():
    wmap = WarpMap(3.0)
    x = bandlimited_noise(int(6 * FS), FS, 30.0, 5)
    y = warp(unwarp(x, wmap), wmap, duration=x.duration - 1 / FS)
    keep = slice(int(0.5 * FS), None)  # stay clear of the compression right after t0
    assert rel_l2(y.samples[keep], x.samples[keep]) < 0.01


def test_warp_support_checked(record):
    short = TimeSeries(record.samples[:400], FS)
    with pytest.raises(ValueError, match="missing"):
        warp(short, WarpMap(4.0), duration=5.0)


def test_zero_signal_unwarps_to_zero():
    assert np.all(unwarp(TimeSeries(np.zeros(1024), FS), WarpMap(1.0)).samples == 0)


@pytest.mark.parametrize("n", [1, 2])
def test_rigid_mode_warps_to_constant_frequency(n):
    p = rigid_like()
    u = synthesize_signal(p, 100.0, 10.24, FS, modes=[n])
    w = warp(u, WarpMap(p.r / p.c_w))
    S = spectrogram(w, hz_to_rad(0.5), hop=20)
    target = rigid_cutoff(p.c_w, p.D, n)
    bin_width = S.freqs[1] - S.freqs[0]
    energy = S.power.sum(axis=1)
    live = S.times[energy > 0.05 * energy.max()]
    # frames whose window lies inside the tone's support
    margin = 2.0 / S.sigma
    frames = (S.times > live[0] + margin) & (S.times < live[-1] - margin)
    assert frames.sum() > 10
    ridge = S.freqs[np.argmax(S.power[frames], axis=1)]
    assert np.all(np.abs(ridge - target) <= bin_width)


def test_constant_tone_unwarps_to_hyperbolic_chirp():
    t0, w_tilde = 6.0, hz_to_rad(5.0)
    t = np.arange(int(8 * FS)) / FS
    tone = TimeSeries(np.cos(w_tilde * t), FS)
    chirp = unwarp(tone, WarpMap(t0))
    S = spectrogram(chirp, hz_to_rad(1.0), hop=20)
    sel = (S.times > 7.5) & (S.times < 9.5)
    ridge = S.freqs[np.argmax(S.power[sel], axis=1)]
    tau = S.times[sel]
    expect = tau * w_tilde / np.sqrt(tau ** 2 - t0 ** 2)
    assert np.max(np.abs(ridge - expect)) <= 2 * (S.freqs[1] - S.freqs[0])


def test_warped_curve_tends_to_identity():
    wmap = WarpMap(2.0)
    f = warped_curve(lambda t: 10.0 + 0.1 * t, wmap)
    assert f(1e5) == pytest.approx(10.0 + 0.1 * 1e5, rel=1e-6)


def test_rigid_curve_warps_to_constant():
    r, c_w, D, n = 1e4, 1500.0, 100.0, 2
    wc = rigid_cutoff(c_w, D, n)
    t0 = r / c_w
    # rigid instantaneous frequency law, inverse of t = r w / (c_w^2 k)
    law = lambda t: wc * t / np.sqrt(t ** 2 - t0 ** 2)
    f = warped_curve(law, WarpMap(t0))
    np.testing.assert_allclose(f(np.array([0.5, 1.0, 3.0, 7.0])), wc, rtol=1e-12)


def test_warp_curve_points_drops_early_arrivals():
    tw, ww = warp_curve_points([1.0, 5.0], [10.0, 10.0], WarpMap(2.0))
    assert np.isnan(tw[0]) and np.isnan(ww[0])
    assert tw[1] == pytest.approx(np.sqrt(21.0))
