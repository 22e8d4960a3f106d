"""
Gaussian-window short-time Fourier transform and time warping.

Conventions follow the continuous definitions

    STFT(t, w) = int u(tau) h(tau - t) exp(-i w tau) dtau,
    h(t) = sigma/sqrt(2 pi) exp(-sigma^2 t^2 / 2),

with ``sigma`` and all frequencies in rad/s.  The phase is referenced to
absolute time, so a masked STFT can be inverted frame by frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .waveguide import TimeSeries

__all__ = [
    "GaussianWindow",
    "Spectrogram",
    "WarpMap",
    "hz_to_rad",
    "spectrogram",
    "invert_masked_stft",
    "sinc_interpolate",
    "warp",
    "unwarp",
    "warped_curve",
    "warp_curve_points",
    "next_pow2",
]

# half-width of the sampled window, in units of 1/sigma
WINDOW_HALF_SUPPORT = 4.0
# record must be at least this many 1/sigma long
MIN_RECORD_SUPPORT = 6.0

INTERP_TAPS = 16
INTERP_BETA = 8.0
MAX_UNWARP_RATE = 20.0


def hz_to_rad(f):
    return 2 * np.pi * np.asarray(f, dtype=float)


def next_pow2(n):
    return 1 << int(np.ceil(np.log2(max(int(n), 1))))


@dataclass(frozen=True)
class GaussianWindow:
    """Gaussian analysis window of width ``sigma`` (rad/s); time width ``1/sigma``."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("window width must be positive")

    @classmethod
    def from_hz(cls, sigma_hz):
        return cls(2 * np.pi * sigma_hz)

    @property
    def time_width(self):
        return 1.0 / self.sigma

    @property
    def energy(self):
        """int h(t)^2 dt."""
        return self.sigma / (2 * np.sqrt(np.pi))

    def __call__(self, t):
        s = self.sigma
        return s / np.sqrt(2 * np.pi) * np.exp(-0.5 * (s * np.asarray(t)) ** 2)

    def spectrum(self, omega):
        return np.exp(-np.asarray(omega) ** 2 / (2 * self.sigma ** 2))

    def half_samples(self, sample_rate):
        return int(np.ceil(WINDOW_HALF_SUPPORT / self.sigma * sample_rate))


@dataclass(frozen=True)
class Spectrogram:
    """STFT on a (time x frequency) raster.

    ``power`` is always ``|stft|**2``.  Frame geometry of the analysed record
    is kept so that masked versions of ``stft`` can be inverted; this is only
    possible when the frequency axis is a full FFT grid (``nfft`` set).
    """

    times: np.ndarray
    freqs: np.ndarray
    stft: np.ndarray
    sigma: float
    sample_rate: float
    t_start: float
    n_samples: int
    nfft: int | None = None
    frame_starts: np.ndarray | None = field(default=None, repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    power: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.stft.shape != (self.times.size, self.freqs.size):
            raise ValueError("stft shape must be (len(times), len(freqs))")
        object.__setattr__(self, "power", np.abs(self.stft) ** 2)

    @property
    def shape(self):
        return self.stft.shape

    @property
    def freqs_hz(self):
        return self.freqs / (2 * np.pi)

    def band(self, f_max_hz):
        """Index slice of frequencies up to ``f_max_hz``."""
        stop = int(np.searchsorted(self.freqs, 2 * np.pi * f_max_hz, side="right"))
        return slice(0, stop)


def _frame_geometry(ts, window, times):
    half = window.half_samples(ts.sample_rate)
    width = 2 * half + 1
    centre = np.rint((times - ts.t_start) * ts.sample_rate).astype(int)
    starts = centre - half
    idx = starts[:, None] + np.arange(width)[None, :]
    tau = ts.t_start + idx / ts.sample_rate
    weights = window(tau - times[:, None])
    return starts, idx, weights


def _gather(x, idx):
    n = x.size
    inside = (idx >= 0) & (idx < n)
    return np.where(inside, x[np.clip(idx, 0, n - 1)], 0.0)


def spectrogram(ts, sigma, time_grid=None, freq_grid=None, hop=1, nfft=None):
    """Spectrogram of ``ts`` with a Gaussian window of width ``sigma`` rad/s.

    Parameters
    ----------
    ts : TimeSeries
    sigma : float or GaussianWindow
    time_grid : array_like, optional
        Frame centres in seconds.  Defaults to every ``hop``-th sample time.
    freq_grid : array_like, optional
        Angular frequencies at which the STFT is evaluated exactly (direct
        sum).  Defaults to the ``rfft`` bins of ``nfft`` points, which is the
        only layout :func:`invert_masked_stft` accepts.
    hop : int
        Frame step in samples when ``time_grid`` is not given.
    nfft : int, optional
        FFT size; by default the next power of two at least four times the
        window length.

    Returns
    -------
    Spectrogram
    """
    window = sigma if isinstance(sigma, GaussianWindow) else GaussianWindow(float(sigma))
    if MIN_RECORD_SUPPORT / window.sigma > ts.duration:
        raise ValueError(
            f"window support {MIN_RECORD_SUPPORT / window.sigma:.3g} s exceeds record "
            f"length {ts.duration:.3g} s; increase sigma"
        )
    if time_grid is None and freq_grid is not None and int(hop) <= 1:
        return _dense_columns(ts, window, np.asarray(freq_grid, dtype=float))
    if time_grid is None:
        times = ts.times[::max(int(hop), 1)]
    else:
        times = np.asarray(time_grid, dtype=float)
    starts, idx, weights = _frame_geometry(ts, window, times)
    seg = _gather(ts.samples, idx) * weights
    fs = ts.sample_rate
    tau0 = ts.t_start + starts / fs
    if freq_grid is None:
        width = idx.shape[1]
        nfft = nfft or next_pow2(4 * width)
        if nfft < width:
            raise ValueError("nfft shorter than the window")
        freqs = 2 * np.pi * np.fft.rfftfreq(nfft, 1.0 / fs)
        X = np.fft.rfft(seg, n=nfft, axis=1) / fs
        X *= np.exp(-1j * np.outer(tau0, freqs))
        return Spectrogram(times, freqs, X, window.sigma, fs, ts.t_start, len(ts), nfft,
                           starts, weights)
    freqs = np.asarray(freq_grid, dtype=float)
    if np.any(np.abs(freqs) > np.pi * fs * (1 + 1e-12)):
        raise ValueError("frequency grid beyond Nyquist")
    lag = np.arange(idx.shape[1]) / fs
    E = np.exp(-1j * np.outer(lag, freqs))
    X = (seg @ E) / fs
    X *= np.exp(-1j * np.outer(tau0, freqs))
    return Spectrogram(times, freqs, X, window.sigma, fs, ts.t_start, len(ts), None,
                       starts, weights)


def _dense_columns(ts, window, freqs):
    """STFT at every sample time for a few frequencies, by FFT convolution."""
    fs = ts.sample_rate
    if np.any(np.abs(freqs) > np.pi * fs * (1 + 1e-12)):
        raise ValueError("frequency grid beyond Nyquist")
    half = window.half_samples(fs)
    g = window(np.arange(-half, half + 1) / fs)
    tau = ts.times
    X = np.empty((len(ts), freqs.size), dtype=complex)
    for j, w in enumerate(freqs):
        X[:, j] = fftconvolve(ts.samples * np.exp(-1j * w * tau), g, mode="same") / fs
    return Spectrogram(tau, freqs, X, window.sigma, fs, ts.t_start, len(ts))


def invert_masked_stft(spec, mask):
    """Least-squares signal whose STFT best matches ``spec.stft * mask``.

    Each masked frame is inverse transformed, re-windowed and overlap-added,
    then divided by the summed squared window.  The analysis phase is kept.
    """
    mask = np.asarray(mask)
    if mask.shape != spec.shape:
        raise ValueError(f"mask shape {mask.shape} does not match spectrogram {spec.shape}")
    if spec.nfft is None:
        raise ValueError("spectrogram was evaluated on a custom frequency grid; "
                         "inversion needs the FFT grid")
    n = spec.n_samples
    if not np.any(mask):
        return TimeSeries(np.zeros(n), spec.sample_rate, spec.t_start)
    fs = spec.sample_rate
    tau0 = spec.t_start + spec.frame_starts / fs
    Y = spec.stft * mask * np.exp(1j * np.outer(tau0, spec.freqs)) * fs
    width = spec.weights.shape[1]
    seg = np.fft.irfft(Y, n=spec.nfft, axis=1)[:, :width]
    idx = (spec.frame_starts[:, None] + np.arange(width)[None, :]).ravel()
    keep = (idx >= 0) & (idx < n)
    w = spec.weights.ravel()
    num = np.bincount(idx[keep], weights=(seg.ravel() * w)[keep], minlength=n)
    den = np.bincount(idx[keep], weights=(w * w)[keep], minlength=n)
    covered = den > 1e-10 * den.max()
    out = np.zeros(n)
    out[covered] = num[covered] / den[covered]
    return TimeSeries(out, fs, spec.t_start)


# ---------------------------------------------------------------------------
# warping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WarpMap:
    """Time change psi(t) = sqrt(t^2 + t0^2) and its inverse sqrt(t^2 - t0^2)."""

    t0: float

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("warp parameter t0 must be positive")

    def forward(self, t):
        t = np.asarray(t, dtype=float)
        return np.sqrt(t * t + self.t0 ** 2)

    def inverse(self, t):
        t = np.asarray(t, dtype=float)
        return np.sqrt(np.maximum((t - self.t0) * (t + self.t0), 0.0))

    def forward_rate(self, t):
        """psi'(t)."""
        t = np.asarray(t, dtype=float)
        return t / self.forward(t)

    def inverse_rate(self, t):
        """(psi^{-1})'(t), infinite at t0."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return t / self.inverse(t)


def _kaiser_sinc(x, beta):
    half = INTERP_TAPS / 2
    w = np.i0(beta * np.sqrt(np.clip(1 - (x / half) ** 2, 0.0, 1.0))) / np.i0(beta)
    return np.sinc(x) * np.where(np.abs(x) <= half, w, 0.0)


def sinc_interpolate(x, sample_rate, t_start, times, beta=INTERP_BETA):
    """Band-limited interpolation of uniform samples at arbitrary times.

    Kaiser-windowed sinc with ``INTERP_TAPS`` taps; samples outside the
    record count as zero.
    """
    pos = (np.asarray(times, dtype=float) - t_start) * sample_rate
    base = np.floor(pos).astype(int)
    offsets = np.arange(-INTERP_TAPS // 2 + 1, INTERP_TAPS // 2 + 1)
    idx = base[:, None] + offsets[None, :]
    kern = _kaiser_sinc(pos[:, None] - idx, beta)
    return np.sum(_gather(np.asarray(x, dtype=float), idx) * kern, axis=1)


def warp(ts, wmap, duration=None):
    """Warped signal ``sqrt(psi'(t)) u(psi(t))`` sampled from ``t = 0``.

    The output keeps the input sample rate and, by default, covers every
    ``t`` with ``psi(t)`` inside the record.

    Raises
    ------
    ValueError
        If the requested support maps outside the record; the message names
        the missing interval.
    """
    fs = ts.sample_rate
    if duration is None:
        duration = float(wmap.inverse(ts.t_end))
    n_out = int(np.floor(duration * fs)) + 1
    t = np.arange(n_out) / fs
    src = wmap.forward(t)
    lo, hi = float(src[0]), float(src[-1])
    if lo < ts.t_start - 0.5 / fs or hi > ts.t_end + 0.5 / fs:
        missing = (min(lo, ts.t_start), ts.t_start) if lo < ts.t_start else (ts.t_end, hi)
        raise ValueError(
            f"warp needs record times [{lo:.6g}, {hi:.6g}] s but the record covers "
            f"[{ts.t_start:.6g}, {ts.t_end:.6g}] s; missing {missing}"
        )
    vals = sinc_interpolate(ts.samples, fs, ts.t_start, src)
    return TimeSeries(np.sqrt(wmap.forward_rate(t)) * vals, fs, 0.0)


def unwarp(ts, wmap, t_start=None, n_samples=None, max_rate=MAX_UNWARP_RATE):
    """Inverse of :func:`warp`: ``sqrt((psi^-1)'(t)) w(psi^-1(t))`` for ``t > t0``.

    Parameters
    ----------
    ts : TimeSeries
        Warped signal, time origin at 0.
    t_start, n_samples : optional
        Output record grid; by default it starts at 0 and covers
        ``psi`` of the warped support.
    max_rate : float
        Samples where ``(psi^-1)'`` exceeds this are set to zero.  Right after
        ``t0`` the inverse map compresses time without bound, so anything the
        warped signal holds near ``t = 0`` would come back as an aliased spike.
    """
    fs = ts.sample_rate
    if ts.t_start < -0.5 / fs:
        raise ValueError("warped signals live on t >= 0")
    if t_start is None:
        t_start = 0.0
    if n_samples is None:
        n_samples = int(np.floor((float(wmap.forward(ts.t_end)) - t_start) * fs)) + 1
    tau = t_start + np.arange(n_samples) / fs
    out = np.zeros(n_samples)
    live = tau > wmap.t0
    rate = np.zeros(n_samples)
    rate[live] = wmap.inverse_rate(tau[live])
    live &= rate <= max_rate
    if not np.any(live):
        return TimeSeries(out, fs, t_start)
    src = wmap.inverse(tau[live])
    vals = sinc_interpolate(ts.samples, fs, ts.t_start, src)
    out[live] = np.sqrt(rate[live]) * vals
    return TimeSeries(out, fs, t_start)


def warped_curve(curve, wmap):
    """Warp an instantaneous-frequency law ``t -> omega_n(t)``.

    Returns the callable ``t -> psi'(t) * omega_n(psi(t))``.
    """
    def warped(t):
        return wmap.forward_rate(t) * curve(wmap.forward(t))
    return warped


def warp_curve_points(t, omega, wmap):
    """Map sampled curve points ``(t_n(omega), omega)`` into the warped plane.

    Points arriving before ``t0`` have no image and come back as NaN.
    """
    t = np.asarray(t, dtype=float)
    omega = np.asarray(omega, dtype=float)
    ok = t > wmap.t0
    tw = np.where(ok, wmap.inverse(np.where(ok, t, wmap.t0)), np.nan)
    return tw, np.where(ok, wmap.forward_rate(tw) * omega, np.nan)
