"""
Dispersion-curve extraction from modal spectrograms.

Two estimators of the arrival time of a mode at each frequency are offered:
the ridge maximum (argmax over time, refined to sub-sample precision) and a
weighted first moment over time.  Points whose ridge power falls below a
threshold are flagged invalid and carry NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .tfr import MIN_RECORD_SUPPORT, spectrogram

__all__ = [
    "ModeCurve",
    "DispersionCurveSet",
    "ExtractionConfig",
    "SigmaChoice",
    "DEFAULT_SIGMA_FLOOR",
    "MEAN_SIGMA_CONSTANT",
    "extract_max",
    "extract_mean",
    "significant_support",
    "sigma_lim",
    "sigma_opt_max",
    "sigma_opt_mean",
    "default_sigma",
    "extract_curves",
]

#: Smallest window width (rad/s) handed out by the width rules when no record
#: length is known; a 10 s record allows 6/10 rad/s.
DEFAULT_SIGMA_FLOOR = 0.6

#: Prefactor of the mean-method width rule, fitted on the reference Pekeris scene at
#: noise level 0.1 as the median over the five probe frequencies of mode 1
#: (see ``demos/noise_study.py``).
MEAN_SIGMA_CONSTANT = 5.8


@dataclass(frozen=True)
class ModeCurve:
    """Arrival-time estimates of one mode.

    ``t_app`` is finite exactly where ``valid`` is True.
    """

    n: int
    omega: np.ndarray
    t_app: np.ndarray
    valid: np.ndarray
    ridge_power: np.ndarray

    def __post_init__(self):
        shapes = {a.shape for a in (self.omega, self.t_app, self.valid, self.ridge_power)}
        if len(shapes) != 1:
            raise ValueError("curve arrays must share one shape")
        if np.any(np.isfinite(self.t_app) != self.valid):
            raise ValueError("estimates must be finite exactly on the valid mask")

    @property
    def freq_hz(self):
        return self.omega / (2 * np.pi)

    @property
    def n_valid(self):
        return int(np.count_nonzero(self.valid))

    def restricted(self, valid):
        """Copy with the validity mask narrowed to ``valid & self.valid``."""
        keep = self.valid & np.asarray(valid, dtype=bool)
        return ModeCurve(self.n, self.omega, np.where(keep, self.t_app, np.nan), keep,
                         self.ridge_power)

    def shifted(self, dt):
        return ModeCurve(self.n, self.omega, self.t_app + dt, self.valid, self.ridge_power)


@dataclass(frozen=True)
class DispersionCurveSet:
    """Curves of several modes, keyed by mode number."""

    curves: dict
    threshold: float = 0.0
    meta: dict = field(default_factory=dict)

    def __getitem__(self, n):
        return self.curves[n]

    def __iter__(self):
        return iter(sorted(self.curves))

    def __len__(self):
        return len(self.curves)

    @property
    def n_valid(self):
        return sum(c.n_valid for c in self.curves.values())

    @property
    def max_time(self):
        vals = [np.nanmax(c.t_app) for c in self.curves.values() if c.n_valid]
        if not vals:
            raise ValueError("curve set has no valid point")
        return float(max(vals))

    def restricted_band(self, lo_hz, hi_hz):
        out = {}
        for n, c in self.curves.items():
            f = c.freq_hz
            out[n] = c.restricted((f >= lo_hz) & (f <= hi_hz))
        return DispersionCurveSet(out, self.threshold, dict(self.meta))

    def shifted(self, dt):
        return DispersionCurveSet({n: c.shifted(dt) for n, c in self.curves.items()},
                                  self.threshold, dict(self.meta))


@dataclass(frozen=True)
class ExtractionConfig:
    """How curves are read off the modal spectrograms.

    ``sigma`` is in rad/s; ``None`` means ``5 * f_max / 100`` Hz.  ``t_w``
    and ``recentre`` apply to the mean method only; ``t_w`` defaults to half
    the record length.
    """

    method: str = "maximum"
    sigma: float | None = None
    p: float = 0.4
    t_w: float | None = None
    per_mode_max: bool = False
    recentre: bool = True

    def __post_init__(self):
        if self.method not in ("maximum", "mean"):
            raise ValueError(f"unknown extraction method {self.method!r}")
        if not 0 < self.p < 1:
            raise ValueError("threshold p must lie in (0, 1)")
        if self.t_w is not None and not self.t_w > 0:
            raise ValueError("weight width must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")


def _columns(spec, freq_grid):
    if freq_grid is None:
        return np.arange(spec.freqs.size)
    f = np.atleast_1d(np.asarray(freq_grid, dtype=float))
    idx = np.searchsorted(spec.freqs, f)
    idx = np.clip(idx, 0, spec.freqs.size - 1)
    alt = np.clip(idx - 1, 0, spec.freqs.size - 1)
    idx = np.where(np.abs(spec.freqs[alt] - f) < np.abs(spec.freqs[idx] - f), alt, idx)
    step = np.min(np.diff(spec.freqs)) if spec.freqs.size > 1 else 1.0
    if np.any(np.abs(spec.freqs[idx] - f) > 1e-6 * step):
        raise ValueError("requested frequencies are not on the spectrogram grid")
    return idx


def extract_max(spec, freq_grid=None, threshold=0.0, n=0):
    """Ridge-maximum arrival times.

    The grid argmax of each column is refined by fitting a parabola to the
    logarithm of the three samples around it, which is exact for a Gaussian
    ridge.  Columns whose peak power does not exceed ``threshold`` are invalid.

    Parameters
    ----------
    spec : Spectrogram
    freq_grid : array_like, optional
        Angular frequencies to keep; each must be a spectrogram bin.
    threshold : float
        Absolute power threshold.
    n : int
        Mode number stored on the result.

    Returns
    -------
    ModeCurve
    """
    cols = _columns(spec, freq_grid)
    P = spec.power[:, cols]
    times = spec.times
    k = np.argmax(P, axis=0)
    peak = P[k, np.arange(P.shape[1])]
    t_app = times[k].astype(float)
    inner = (k > 0) & (k < times.size - 1)
    j = np.nonzero(inner)[0]
    if j.size:
        kk = k[j]
        y = P[np.stack([kk - 1, kk, kk + 1]), j]
        tiny = np.finfo(float).tiny
        ly = np.log(np.maximum(y, tiny))
        use_log = np.all(y > 0, axis=0)
        y = np.where(use_log, ly, y)
        den = y[0] - 2 * y[1] + y[2]
        ok = den < 0
        frac = np.zeros(j.size)
        frac[ok] = 0.5 * (y[0, ok] - y[2, ok]) / den[ok]
        frac = np.clip(frac, -0.5, 0.5)
        # uniform time axis assumed locally
        step = 0.5 * (times[kk + 1] - times[kk - 1])
        t_app[j] = times[kk] + frac * step
    valid = (peak > threshold) & (peak > 0)
    t_app = np.where(valid, t_app, np.nan)
    return ModeCurve(n, spec.freqs[cols].copy(), t_app, valid, peak)


def extract_mean(spec, freq_grid=None, t_w=None, threshold=0.0, centre=0.0, n=0,
                 recentre=False, max_iter=100):
    """First-moment arrival times with a Gaussian weight in time.

    ``t_app = sum(t phi(t) S) / sum(phi(t) S)`` per column with
    ``phi(t) = exp(-(t - centre)^2 / (2 t_w^2))``.  ``t_w`` defaults to half
    the spectrogram's time span.  With ``recentre`` the weight is moved onto
    each column's own estimate until it stops moving, which removes the pull
    of a flat noise floor towards ``centre``.  Validity uses the power at the
    estimate.
    """
    times = spec.times
    if t_w is None:
        t_w = 0.5 * (times[-1] - times[0]) if times.size > 1 else 1.0
    if not t_w > 0:
        raise ValueError("weight width must be positive")
    cols = _columns(spec, freq_grid)
    P = spec.power[:, cols]
    c = np.full(cols.size, float(centre))
    ok = np.ones(cols.size, dtype=bool)
    tol = 1e-9 * max(1.0, float(np.abs(times).max()))
    for _ in range(max_iter if recentre else 1):
        phi = np.exp(-0.5 * ((times[:, None] - c[None, :]) / t_w) ** 2)
        wP = phi * P
        den = wP.sum(axis=0)
        ok = den > 0
        new = np.where(ok, (times[:, None] * wP).sum(axis=0) / np.where(ok, den, 1.0), np.nan)
        done = not recentre or np.all(np.abs(new[ok] - c[ok]) < tol)
        c = np.where(ok, new, c)
        if done:
            break
    t_app = np.where(ok, c, np.nan)
    ridge = np.zeros(cols.size)
    for i in np.nonzero(ok)[0]:
        ridge[i] = np.interp(t_app[i], times, P[:, i])
    valid = ok & (ridge > threshold)
    t_app = np.where(valid, t_app, np.nan)
    return ModeCurve(n, spec.freqs[cols].copy(), t_app, valid, ridge)


def significant_support(ridge_power, p, global_max):
    """Frequencies whose ridge power exceeds ``p * global_max``."""
    if not 0 < p < 1:
        raise ValueError("threshold p must lie in (0, 1)")
    return np.asarray(ridge_power) > p * global_max


# ---------------------------------------------------------------------------
# window-width rules
# ---------------------------------------------------------------------------

class SigmaChoice(NamedTuple):
    sigma: float
    clamped: bool
    branch: str


def sigma_lim(omega_c, omega, sigma_floor=DEFAULT_SIGMA_FLOOR):
    """Largest width keeping the ridge clear of the cutoff, floored."""
    raw = omega_c / 3.0 - omega / 4.0
    if raw < sigma_floor:
        return SigmaChoice(float(sigma_floor), True, "lim")
    return SigmaChoice(float(raw), False, "lim")


def sigma_opt_max(omega_c, omega, noise_level, phase_curvature, amplitude_ratio=1.0,
                  probe=None, sigma_floor=DEFAULT_SIGMA_FLOOR):
    """Width for the maximum method.

    Candidates are :func:`sigma_lim` and the noise-balancing width
    ``(3 * 2**(-11/4) * noise / curvature)**(2/5)``, where ``noise`` is
    ``noise_level`` scaled by ``amplitude_ratio = |A(omega)| / max|A|``.
    With ``probe`` (a callable returning the extraction error for a width)
    the better candidate wins; otherwise the cutoff rule is used.  A
    noise-balancing width below the floor is not a candidate.
    """
    if noise_level < 0:
        raise ValueError("noise level must be non-negative")
    if not phase_curvature > 0:
        raise ValueError("phase curvature must be positive")
    lim = sigma_lim(omega_c, omega, sigma_floor)
    raw = (3.0 * 2.0 ** (-11 / 4) * noise_level * amplitude_ratio / phase_curvature) ** 0.4
    if probe is None or raw < sigma_floor:
        return lim
    noise = SigmaChoice(float(raw), False, "noise")
    return min((lim, noise), key=lambda c: probe(c.sigma))


def sigma_opt_mean(noise_level, amplitude_ratio, constant=MEAN_SIGMA_CONSTANT,
                   sigma_floor=DEFAULT_SIGMA_FLOOR):
    """Width for the mean method: ``constant * ratio**(-4/5) * noise**(2/5)``.

    ``amplitude_ratio`` is ``max|A'| / |A(omega)|`` (seconds).
    """
    if not amplitude_ratio > 0:
        raise ValueError("amplitude ratio must be positive")
    if noise_level < 0:
        raise ValueError("noise level must be non-negative")
    raw = constant * amplitude_ratio ** -0.8 * noise_level ** 0.4
    if raw < sigma_floor:
        return SigmaChoice(float(sigma_floor), True, "mean")
    return SigmaChoice(float(raw), False, "mean")


def default_sigma(f_max):
    """Production width: 5 % of the maximum frequency, in rad/s."""
    return 2 * np.pi * 0.05 * f_max


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _energy_centroid(ts):
    e = ts.samples ** 2
    tot = e.sum()
    if tot <= 0:
        return 0.5 * (ts.t_start + ts.t_end)
    return float((ts.times * e).sum() / tot)


def extract_curves(components, f_max, config=ExtractionConfig(), reference_max=None,
                   modes=None):
    """Curves of every modal component.

    Parameters
    ----------
    components : sequence of TimeSeries
        ``components[i]`` is mode ``modes[i]`` (default ``i + 1``).
    f_max : float
        Upper analysis frequency in Hz; the zero bin is never used.
    config : ExtractionConfig
    reference_max : float, optional
        ``max(S)`` entering the threshold; usually the peak of the full
        record's spectrogram at the same width.  Defaults to the peak over all
        component spectrograms.

    Returns
    -------
    DispersionCurveSet
    """
    sigma = config.sigma or default_sigma(f_max)
    modes = list(range(1, len(components) + 1)) if modes is None else list(modes)
    specs = []
    for c in components:
        if MIN_RECORD_SUPPORT / sigma > c.duration:
            raise ValueError(f"component of {c.duration:.3g} s too short for sigma={sigma:.3g}")
        specs.append(spectrogram(c, sigma))
    if reference_max is None:
        reference_max = max((float(s.power.max()) for s in specs), default=0.0)
    curves = {}
    for n, comp, spec in zip(modes, components, specs):
        band = spec.band(f_max)
        grid = spec.freqs[band][1:]
        peak = reference_max if not config.per_mode_max else float(spec.power.max())
        thr = config.p * peak
        if config.method == "maximum":
            cur = extract_max(spec, grid, thr, n)
        else:
            t_w = config.t_w or 0.5 * comp.duration
            cur = extract_mean(spec, grid, t_w, thr, _energy_centroid(comp), n,
                               recentre=config.recentre)
        if peak <= 0:
            cur = cur.restricted(np.zeros(cur.omega.size, dtype=bool))
        curves[n] = cur
    meta = {"method": config.method, "sigma": sigma, "p": config.p,
            "reference_max": reference_max}
    return DispersionCurveSet(curves, config.p, meta)
