import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shallowloc.curves import (
    DEFAULT_SIGMA_FLOOR,
    DispersionCurveSet,
    ExtractionConfig,
    ModeCurve,
    default_sigma,
    extract_curves,
    extract_max,
    extract_mean,
    sigma_lim,
    sigma_opt_max,
    sigma_opt_mean,
    significant_support,
)
from shallowloc.tfr import GaussianWindow, Spectrogram, hz_to_rad, spectrogram
from shallowloc.waveguide import TimeSeries, group_delays

FS = 400.0


def window_raster(centre=5.0, sigma=10.0, t_max=10.0, n_freqs=5):
    """Spectrogram whose every column is h(t - centre)^2."""
    t = np.arange(0.0, t_max + 0.5 / FS, 1 / FS)
    col = GaussianWindow(sigma)(t - centre).astype(complex)
    stft = np.repeat(col[:, None], n_freqs, axis=1)
    freqs = hz_to_rad(np.arange(1, n_freqs + 1) * 10.0)
    return Spectrogram(t, freqs, stft, sigma, FS, 0.0, t.size)


def gaussian_moment(centre, sigma, t_w):
    # S ~ exp(-sigma^2 (t - c)^2) times exp(-t^2 / (2 t_w^2)): product of Gaussians
    v = 1.0 / (2 * sigma ** 2)
    return centre * t_w ** 2 / (t_w ** 2 + v)


# -- estimators on closed-form rasters ------------------------------------------

def test_max_of_shifted_window_is_exact():
    c = extract_max(window_raster(5.0 + 0.3 / FS))
    np.testing.assert_allclose(c.t_app, 5.0 + 0.3 / FS, atol=1e-9)
    assert c.valid.all()


def test_max_threshold_masks_column():
    S = window_raster()
    c = extract_max(S, threshold=2 * S.power.max())
    assert not c.valid.any()
    assert np.isnan(c.t_app).all()


def test_frequency_off_grid_rejected():
    with pytest.raises(ValueError):
        extract_max(window_raster(), freq_grid=[hz_to_rad(15.0)])


def test_mean_with_flat_weight_is_exact():
    c = extract_mean(window_raster(5.0), t_w=1e6)
    np.testing.assert_allclose(c.t_app, 5.0, atol=1e-9)


def test_mean_bias_follows_gaussian_moment():
    sigma = 2.0
    S = window_raster(5.0, sigma=sigma, t_max=20.0)
    bias = {}
    for t_w in (10.0, 5.0):
        est = extract_mean(S, t_w=t_w).t_app[0]
        assert est == pytest.approx(gaussian_moment(5.0, sigma, t_w), rel=1e-9)
        bias[t_w] = 5.0 - est
    # the bias scales as 1/t_w^2: halving t_w quadruples it
    assert bias[5.0] / bias[10.0] == pytest.approx(4.0, rel=0.01)


def test_mean_recentring_removes_bias():
    c = extract_mean(window_raster(5.0, sigma=2.0, t_max=20.0), t_w=5.0, recentre=True)
    np.testing.assert_allclose(c.t_app, 5.0, atol=1e-6)


def test_mean_zero_column_invalid():
    S = window_raster()
    stft = S.stft.copy()
    stft[:, 2] = 0
    S0 = Spectrogram(S.times, S.freqs, stft, S.sigma, FS, 0.0, S.times.size)
    c = extract_mean(S0, t_w=3.0)
    assert list(c.valid) == [True, True, False, True, True]


# -- support ---------------------------------------------------------------------

def test_support_limits():
    pw = np.array([0.0, 1.0, 3.0, 10.0, 2.0])
    assert list(significant_support(pw, 1e-12, pw.max())) == [False, True, True, True, True]
    assert significant_support(pw, 1 - 1e-12, pw.max()).sum() <= 1


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=40), st.floats(0.01, 0.98),
       st.floats(0.001, 0.01))
def test_support_shrinks_with_threshold(pw, p, dp):
    pw = np.array(pw)
    g = pw.max() if pw.max() > 0 else 1.0
    hi = significant_support(pw, p + dp, g)
    lo = significant_support(pw, p, g)
    assert np.all(lo | ~hi)


def test_support_rejects_bad_threshold():
    with pytest.raises(ValueError):
        significant_support([1.0], 1.0, 1.0)


# -- window width rules ------------------------------------------------------------

def test_sigma_lim_at_zero_frequency():
    assert sigma_lim(30.0, 0.0).sigma == pytest.approx(10.0)


def test_sigma_lim_clamped_at_zero_crossing():
    c = sigma_lim(30.0, 40.0)
    assert c.clamped and c.sigma == DEFAULT_SIGMA_FLOOR


def test_sigma_opt_max_defaults_to_lim():
    assert sigma_opt_max(30.0, 10.0, 0.0, 1e-3).branch == "lim"
    assert sigma_opt_max(30.0, 10.0, 0.5, 1e-3).branch == "lim"


def test_sigma_opt_max_zero_noise_candidate_floored():
    c = sigma_opt_max(30.0, 10.0, 0.0, 1e-3, probe=lambda s: s)
    assert c.branch == "lim"


def test_sigma_opt_max_curvature_scaling():
    pick_noise = lambda s: -s  # favour the wider candidate
    a = sigma_opt_max(30.0, 200.0, 10.0, 1e-6, probe=pick_noise)
    b = sigma_opt_max(30.0, 200.0, 10.0, 32e-6, probe=pick_noise)
    assert a.branch == b.branch == "noise"
    assert b.sigma / a.sigma == pytest.approx(0.25, rel=1e-12)


def test_sigma_opt_max_validates():
    with pytest.raises(ValueError):
        sigma_opt_max(30.0, 10.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        sigma_opt_max(30.0, 10.0, 1.0, 0.0)


def test_sigma_opt_mean_zero_noise_floored():
    c = sigma_opt_mean(0.0, 0.1)
    assert c.clamped and c.sigma == DEFAULT_SIGMA_FLOOR


def test_sigma_opt_mean_noise_scaling():
    a = sigma_opt_mean(0.1, 0.1)
    b = sigma_opt_mean(3.2, 0.1)
    assert b.sigma / a.sigma == pytest.approx(4.0, rel=1e-12)


def test_default_sigma_is_five_percent():
    assert default_sigma(100.0) == pytest.approx(hz_to_rad(5.0))


# -- containers ------------------------------------------------------------------

def test_curve_validity_must_match_values():
    om = np.array([1.0, 2.0])
    with pytest.raises(ValueError):
        ModeCurve(1, om, np.array([1.0, np.nan]), np.array([True, True]), np.ones(2))


def test_curve_set_operations():
    om = hz_to_rad(np.array([10.0, 20.0, 30.0]))
    c = ModeCurve(1, om, np.array([5.0, np.nan, 6.0]), np.array([True, False, True]), np.ones(3))
    s = DispersionCurveSet({1: c})
    assert s.n_valid == 2 and s.max_time == 6.0
    assert s.restricted_band(15.0, 40.0).n_valid == 1
    np.testing.assert_allclose(s.shifted(0.5)[1].t_app[[0, 2]], [5.5, 6.5])
    empty = s.restricted_band(100.0, 200.0)
    with pytest.raises(ValueError):
        empty.max_time


# -- fixture ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def fixture_curves(single_modes):
    out = {}
    for method in ("maximum", "mean"):
        out[method] = extract_curves(single_modes, 100.0, ExtractionConfig(method=method,
                                                                           per_mode_max=True))
    return out


@pytest.mark.parametrize("n", [1, 3])
def test_fixture_ridge_tracks_group_delay(scene, fixture_curves, n):
    c = fixture_curves["maximum"][n]
    err = np.abs(c.t_app - (group_delays(scene, c.omega, n) - scene.dt))[c.valid]
    assert c.n_valid > 20
    assert np.median(err) < 2 / FS
    assert err.max() < 1 / default_sigma(100.0)


@pytest.mark.parametrize("n", [1, 3])
def test_methods_agree_without_noise(fixture_curves, n):
    a, b = fixture_curves["maximum"][n], fixture_curves["mean"][n]
    both = a.valid & b.valid
    d = np.abs(a.t_app - b.t_app)[both]
    assert both.sum() > 20
    assert np.median(d) < 2 / FS
    assert d.max() < 1 / default_sigma(100.0)


def test_global_threshold_drops_weak_modes(single_modes):
    total = sum(m.samples for m in single_modes)
    ref = spectrogram(TimeSeries(total, FS), default_sigma(100.0)).power.max()
    low = extract_curves(single_modes, 100.0, ExtractionConfig(p=0.05), reference_max=ref)
    high = extract_curves(single_modes, 100.0, ExtractionConfig(p=0.8), reference_max=ref)
    for n in low:
        assert np.all(low[n].valid | ~high[n].valid)
    assert high.n_valid < low.n_valid
    assert high[1].n_valid > 0


def test_short_component_rejected():
    with pytest.raises(ValueError, match="too short"):
        extract_curves([TimeSeries(np.zeros(40), FS)], 100.0)
