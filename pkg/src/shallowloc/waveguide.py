"""
Pekeris waveguide forward model.

Two fluid layers: a water column of depth ``D`` (sound speed ``c_w``, density
``rho_w``) with a pressure-release surface, over a semi-infinite bottom
(``c_b > c_w``, ``rho_b``).  Trapped mode ``n`` has horizontal wavenumber
``k_n(omega)`` solving

    tan(D * sqrt(omega**2/c_w**2 - k**2))
        = -(rho_b/rho_w) * sqrt((omega**2/c_w**2 - k**2) / (k**2 - omega**2/c_b**2))

and modal travel time ``t_n(omega) = r * dk_n/domega``.

The solver works on the vertical wavenumber in the water,
``g = sqrt(omega**2/c_w**2 - k**2)``.  On the branch of mode ``n`` the
relation is equivalent to

    g*D - arctan(g_b / (M*g)) - (n - 1/2)*pi = 0,   M = rho_b/rho_w,

which is strictly increasing in ``g`` and bracketed by
``(n - 1/2)*pi/D < g < min(n*pi/D, g_max)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "WaveguideParams",
    "ModeTable",
    "TimeSeries",
    "NoiseModel",
    "ModeEvanescentError",
    "RootBracketError",
    "pekeris_scene",
    "PRESETS",
    "cutoff_frequency",
    "cutoff_frequencies",
    "mode_count",
    "solve_wavenumber",
    "wavenumbers",
    "group_delay",
    "group_delays",
    "dispersion_residual",
    "mode_table",
    "mode_amplitude",
    "source_spectrum",
    "modal_spectrum",
    "synthesize_signal",
    "add_noise",
    "rigid_cutoff",
    "rigid_wavenumber",
    "rigid_group_delay",
]

# grid points closer than this (relative) to a cutoff are flagged invalid
CUTOFF_GUARD = 0.005

_BISECTION_STEPS = 60
_POLISH_STEPS = 3


class ModeEvanescentError(ValueError):
    """Raised when a mode is asked for at or below its cutoff frequency."""

    def __init__(self, n, omega, omega_c):
        self.n = n
        self.omega = omega
        self.omega_c = omega_c
        super().__init__(
            f"mode {n} evanescent at omega={omega:.6g} rad/s "
            f"(cutoff {omega_c:.6g} rad/s)"
        )


class RootBracketError(RuntimeError):
    """Raised when the dispersion relation has no sign change in the bracket."""

    def __init__(self, n, omega, bracket):
        self.n = n
        self.omega = omega
        self.bracket = bracket
        super().__init__(
            f"could not bracket mode {n} at omega={omega:.6g} rad/s; "
            f"scanned vertical wavenumber interval {bracket}"
        )


@dataclass(frozen=True)
class WaveguideParams:
    """Pekeris scene: geometry, medium and emission offset.

    Units are SI: metres, m/s, kg/m^3, seconds.  ``dt`` is the offset between
    the emission time and the record time origin, so a mode arrives at record
    time ``t_n(omega) - dt``.
    """

    r: float
    c_w: float
    c_b: float
    rho_w: float
    rho_b: float
    D: float
    dt: float = 0.0
    z_s: float | None = None
    z_r: float | None = None

    def __post_init__(self):
        # depths default to mid-column
        if self.z_s is None:
            object.__setattr__(self, "z_s", 0.5 * self.D)
        if self.z_r is None:
            object.__setattr__(self, "z_r", 0.5 * self.D)
        vals = [self.r, self.c_w, self.c_b, self.rho_w, self.rho_b, self.D, self.dt,
                self.z_s, self.z_r]
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("waveguide parameters must be finite")
        if self.r <= 0 or self.D <= 0:
            raise ValueError("range and depth must be positive")
        if not (0 < self.z_s < self.D and 0 < self.z_r < self.D):
            raise ValueError("source and receiver must lie strictly inside the water column")
        if not (self.c_b > self.c_w > 0):
            raise ValueError(
                f"trapped modes need c_b > c_w > 0 (got c_w={self.c_w}, c_b={self.c_b})"
            )
        if self.rho_w <= 0 or self.rho_b <= 0:
            raise ValueError("densities must be positive")

    @property
    def density_ratio(self):
        return self.rho_b / self.rho_w

    @property
    def slowness_gap(self):
        """sqrt(1/c_w^2 - 1/c_b^2), the vertical slowness available to trapped modes."""
        return np.sqrt((1.0 / self.c_w - 1.0 / self.c_b) * (1.0 / self.c_w + 1.0 / self.c_b))

    def with_values(self, **changes):
        return replace(self, **changes)

    def as_vector(self):
        return np.array([self.r, self.c_w, self.c_b, self.rho_w, self.rho_b, self.D, self.dt])


@dataclass(frozen=True)
class ModeTable:
    """Sampled wavenumber and travel time of one mode on a frequency grid.

    ``omega`` is the full grid; ``k`` and ``t`` are NaN where ``valid`` is False
    (below cutoff or within the cutoff guard band).
    """

    n: int
    omega_c: float
    omega: np.ndarray
    k: np.ndarray
    t: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real signal; sample ``j`` sits at ``t_start + j/sample_rate``."""

    samples: np.ndarray
    sample_rate: float
    t_start: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def dt(self):
        return 1.0 / self.sample_rate

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def times(self):
        return self.t_start + np.arange(self.samples.size) / self.sample_rate

    @property
    def t_end(self):
        """Time of the last sample."""
        return self.t_start + (self.samples.size - 1) / self.sample_rate

    def with_samples(self, samples):
        return TimeSeries(samples, self.sample_rate, self.t_start)

    def energy(self):
        return float(np.sum(self.samples ** 2) / self.sample_rate)


@dataclass(frozen=True)
class NoiseModel:
    """Stationary Gaussian noise, Cov(W(t), W(t')) = delta^2 exp(-(t-t')^2 / (2 t_corr^2))."""

    delta: float
    t_corr: float
    seed: int | None = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("noise amplitude must be non-negative")
        if not self.t_corr > 0:
            raise ValueError("correlation time must be positive")


def pekeris_scene(**overrides):
    """Synthetic Pekeris scene: r=10 km, D=100 m, c_w=1500, c_b=1600, rho_w=1000, rho_b=1500."""
    base = dict(r=10_000.0, c_w=1500.0, c_b=1600.0, rho_w=1000.0, rho_b=1500.0, D=100.0,
                dt=0.0)
    base.update(overrides)
    return WaveguideParams(**base)


# Prior scenes for the two field recordings.  c_b is unknown there, so the
# presets carry a placeholder of 1.1 c_w (the default inversion start).
PRESETS = {
    "pekeris": dict(params=dict(r=10_000.0, c_w=1500.0, c_b=1600.0, rho_w=1000.0,
                                rho_b=1500.0, D=100.0), f_max=100.0),
    "whale": dict(params=dict(r=8_800.0, c_w=1450.0, c_b=1595.0, rho_w=1000.0,
                              rho_b=1600.0, D=51.0), f_max=204.0),
    "css": dict(params=dict(r=4_800.0, c_w=1464.5, c_b=1610.95, rho_w=1000.0,
                            rho_b=1600.0, D=69.5), f_max=488.0, band_hz=(100.0, 300.0)),
}


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

def cutoff_frequency(params, n):
    """Cutoff angular frequency of mode ``n`` (array-valued ``n`` allowed)."""
    return (np.asarray(n) - 0.5) * np.pi / (params.D * params.slowness_gap)


def cutoff_frequencies(params, f_max):
    """Cutoff angular frequencies of all modes starting below ``f_max``.

    Parameters
    ----------
    params : WaveguideParams
    f_max : float
        Upper frequency in Hz.

    Returns
    -------
    list of (int, float)
        ``(n, omega_c)`` pairs in increasing order, each satisfying
        ``D * omega_c * sqrt(1/c_w^2 - 1/c_b^2) = (2n - 1) pi / 2``.
    """
    if f_max <= 0:
        raise ValueError("f_max must be positive")
    if params.c_b <= params.c_w:
        raise ValueError("no trapped-mode cutoffs when c_b <= c_w")
    omega_max = 2 * np.pi * f_max
    out = []
    n = 1
    while True:
        wc = float(cutoff_frequency(params, n))
        if not wc < omega_max:
            break
        out.append((n, wc))
        n += 1
    return out


def mode_count(params, omega):
    """Number of trapped modes at angular frequency ``omega``."""
    x = omega * params.D * params.slowness_gap / np.pi + 0.5
    return np.maximum(np.ceil(x) - 1, 0).astype(int)


# ---------------------------------------------------------------------------
# dispersion relation
# ---------------------------------------------------------------------------

def _branch_function(g, g_max, n, D, M):
    gb = np.sqrt(np.maximum((g_max - g) * (g_max + g), 0.0))
    return g * D - np.arctan2(gb, M * g) - (n - 0.5) * np.pi, gb


def _vertical_wavenumber(params, omega, n):
    """Vectorised root of the mode-n branch function.  NaN where evanescent."""
    omega = np.asarray(omega, dtype=float)
    D, M = params.D, params.density_ratio
    g_max = omega * params.slowness_gap
    propagating = omega > cutoff_frequency(params, n)
    lo = np.full(omega.shape, (n - 0.5) * np.pi / D)
    hi = np.minimum(g_max, n * np.pi / D)
    lo = np.where(propagating, lo, np.nan)
    hi = np.where(propagating, hi, np.nan)
    gm = np.where(propagating, g_max, np.nan)
    with np.errstate(invalid="ignore"):
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            f, _gb = _branch_function(mid, gm, n, D, M)
            pos = f > 0
            hi = np.where(pos, mid, hi)
            lo = np.where(pos, lo, mid)
        g = 0.5 * (lo + hi)
        # Newton polish, kept inside the final bracket
        for _ in range(_POLISH_STEPS):
            f, gb = _branch_function(g, gm, n, D, M)
            denom = gb * (M * M * g * g + gb * gb)
            safe = denom > 0
            fp = D + np.where(safe, M * gm * gm / np.where(safe, denom, 1.0), np.inf)
            step = g - f / fp
            inside = (step >= lo - 1e-15 * hi) & (step <= hi + 1e-15 * hi)
            g = np.where(inside & np.isfinite(step), step, g)
    return g


def wavenumbers(params, omega, n):
    """Horizontal wavenumber of mode ``n`` on an array of angular frequencies.

    Evanescent points come back as NaN rather than raising.
    """
    omega = np.asarray(omega, dtype=float)
    g = _vertical_wavenumber(params, omega, n)
    kw = omega / params.c_w
    return np.sqrt((kw - g) * (kw + g))


def solve_wavenumber(params, omega, n):
    """Horizontal wavenumber ``k_n(omega)`` in rad/m.

    The root lies in ``(omega/c_b, omega/c_w)``; modes are counted from the
    largest ``k`` down, so ``n=1`` is the fundamental.

    Raises
    ------
    ModeEvanescentError
        If ``omega`` is at or below the mode cutoff.
    RootBracketError
        If the branch function shows no sign change on the bracket.
    """
    if n < 1:
        raise ValueError("mode index starts at 1")
    wc = float(cutoff_frequency(params, n))
    if not omega > wc:
        raise ModeEvanescentError(n, omega, wc)
    D, M = params.D, params.density_ratio
    g_max = omega * params.slowness_gap
    lo, hi = (n - 0.5) * np.pi / D, min(g_max, n * np.pi / D)
    f_lo, _ = _branch_function(lo, g_max, n, D, M)
    f_hi, _ = _branch_function(hi, g_max, n, D, M)
    if not (f_lo <= 0 <= f_hi):
        raise RootBracketError(n, omega, (lo, hi))
    return float(wavenumbers(params, np.array([omega]), n)[0])


def dispersion_residual(params, omega, k):
    """Relative residual of the dispersion relation at ``(omega, k)``.

    The relation is evaluated in its pole-free form
    ``sin(g D) g_b + M g cos(g D)`` and divided by the sum of the magnitudes
    of its two terms, so 0 means an exact root.
    """
    omega = np.asarray(omega, dtype=float)
    k = np.asarray(k, dtype=float)
    g = np.sqrt(np.maximum(omega ** 2 / params.c_w ** 2 - k ** 2, 0.0))
    gb = np.sqrt(np.maximum(k ** 2 - omega ** 2 / params.c_b ** 2, 0.0))
    a = np.sin(g * params.D) * gb
    b = params.density_ratio * g * np.cos(g * params.D)
    return np.abs(a + b) / (np.abs(a) + np.abs(b))


def _dk_domega(params, omega, k, g):
    # implicit differentiation of G(k, w) = g D - arctan(g_b/(M g)) - (n-1/2) pi,
    # both partials multiplied by g_b to stay finite at cutoff
    M, D = params.density_ratio, params.D
    gb = np.sqrt(np.maximum(k ** 2 - (omega / params.c_b) ** 2, 0.0))
    den = M * M * g * g + gb * gb
    G_g = D + M * gb / den
    G_gb = -M * g / den
    num = G_g * omega * gb / (params.c_w ** 2 * g) - G_gb * omega / params.c_b ** 2
    dnm = -G_g * k * gb / g + G_gb * k
    return -num / dnm


def group_delays(params, omega, n):
    """Vectorised ``t_n(omega) = r dk_n/domega``; NaN where evanescent."""
    omega = np.asarray(omega, dtype=float)
    g = _vertical_wavenumber(params, omega, n)
    kw = omega / params.c_w
    k = np.sqrt((kw - g) * (kw + g))
    return params.r * _dk_domega(params, omega, k, g)


def group_delay(params, omega, n):
    """Modal travel time ``t_n(omega)`` in seconds (emission at time zero).

    Computed by implicit differentiation of the dispersion relation.  Raises
    the same errors as :func:`solve_wavenumber`.
    """
    solve_wavenumber(params, omega, n)
    return float(group_delays(params, np.array([omega]), n)[0])


def mode_table(params, f_grid, f_max):
    """Wavenumbers and travel times of every mode propagating below ``f_max``.

    Parameters
    ----------
    f_grid : array_like
        Frequencies in Hz.
    f_max : float
        Modes whose cutoff exceeds this are not tabulated.

    Returns
    -------
    list of ModeTable
    """
    f_grid = np.asarray(f_grid, dtype=float)
    if f_grid.size and np.any(f_grid <= 0):
        raise ValueError("frequency grid must be positive")
    omega = 2 * np.pi * f_grid
    tables = []
    for n, wc in cutoff_frequencies(params, f_max):
        if omega.size == 0:
            tables.append(ModeTable(n, wc, omega, omega.copy(), omega.copy(),
                                    np.zeros(0, dtype=bool)))
            continue
        valid = omega > wc * (1 + CUTOFF_GUARD)
        k = np.where(valid, wavenumbers(params, omega, n), np.nan)
        t = np.where(valid, group_delays(params, omega, n), np.nan)
        tables.append(ModeTable(n, wc, omega, k, t, valid))
    if omega.size == 0:
        return []
    return tables


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def _mode_shape_factor(params, omega, n):
    """psi_n(z_s) psi_n(z_r) / rho_w with the normalisation int psi^2/rho dz = 1."""
    g = _vertical_wavenumber(params, omega, n)
    gb = np.sqrt(np.maximum((omega * params.slowness_gap) ** 2 - g * g, 0.0))
    D = params.D
    with np.errstate(divide="ignore", invalid="ignore"):
        norm2 = ((D - np.sin(2 * g * D) / (2 * g)) / params.rho_w
                 + np.sin(g * D) ** 2 / (params.rho_b * gb))
        amp2 = np.where(gb > 0, 2.0 / norm2, 0.0)
    shape = amp2 * np.sin(g * params.z_s) * np.sin(g * params.z_r) / params.rho_w
    return np.nan_to_num(shape), g


def mode_amplitude(params, omega, n):
    """Complex modal amplitude without the source spectrum.

    Far-field normal-mode term ``e^{i pi/4} psi_n(z_s) psi_n(z_r) /
    (rho_w sqrt(8 pi k_n r))``; zero where the mode is evanescent.
    """
    omega = np.asarray(omega, dtype=float)
    shape, g = _mode_shape_factor(params, omega, n)
    kw = omega / params.c_w
    k = np.sqrt(np.maximum((kw - g) * (kw + g), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        a = shape * np.exp(1j * np.pi / 4) / np.sqrt(8 * np.pi * k * params.r)
    return np.where(np.isfinite(a), a, 0.0), k


def source_spectrum(f, f_max, taper=0.1):
    """Flat source spectrum on (0, f_max) with raised-cosine edges.

    ``taper`` is the fraction of the band used by each edge ramp; 0 gives a
    hard box.
    """
    f = np.abs(np.asarray(f, dtype=float))
    if taper <= 0:
        return ((f > 0) & (f < f_max)).astype(float)
    w = taper * f_max
    s = np.ones_like(f)
    lo = f < w
    s[lo] = 0.5 - 0.5 * np.cos(np.pi * f[lo] / w)
    hi = f > f_max - w
    s[hi] = 0.5 + 0.5 * np.cos(np.pi * (f[hi] - (f_max - w)) / w)
    s[f >= f_max] = 0.0
    return s


def modal_spectrum(params, omega, n, f_max, taper=0.1):
    """Fourier transform of mode ``n`` at the receiver, ``A_n e^{-i k_n r}``,
    including the emission offset ``dt`` and the source spectrum."""
    a, k = mode_amplitude(params, omega, n)
    q = source_spectrum(np.asarray(omega) / (2 * np.pi), f_max, taper)
    phase = np.exp(-1j * k * params.r + 1j * np.asarray(omega) * params.dt)
    return np.where(k > 0, q * a * phase, 0.0)


def synthesize_signal(params, f_max, duration, sample_rate, modes=None, t_start=0.0,
                      taper=0.1):
    """Synthetic pressure record at the receiver.

    The spectrum ``sum_n A_n(omega) exp(-i k_n r)`` is built on the FFT grid of
    the record, band-limited to ``f_max`` and inverse transformed.

    Parameters
    ----------
    params : WaveguideParams
    f_max : float
        Source bandwidth in Hz.
    duration : float
        Record length in seconds.
    sample_rate : float
        Hz; must be at least ``2 * f_max``.
    modes : iterable of int, optional
        Restrict the sum to these mode indices (all propagating modes by default).
    t_start : float
        Record time of the first sample.
    taper : float
        Edge taper fraction of the source spectrum.
    """
    if sample_rate < 2 * f_max:
        raise ValueError(
            f"sample_rate {sample_rate} Hz aliases a {f_max} Hz band (need >= {2 * f_max})"
        )
    n_samples = int(round(duration * sample_rate))
    if n_samples < 2:
        raise ValueError("duration too short")
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    omega = 2 * np.pi * freqs
    spec = np.zeros(freqs.size, dtype=complex)
    available = [n for n, _ in cutoff_frequencies(params, f_max)]
    wanted = available if modes is None else [n for n in modes if n in available]
    band = (freqs > 0) & (freqs < f_max)
    for n in wanted:
        spec[band] += modal_spectrum(params, omega[band], n, f_max, taper)
    # continuous FT -> samples: u(t_j) = (1/2pi) int u_hat e^{i w t_j} dw
    spec *= np.exp(1j * omega * t_start)
    x = np.fft.irfft(spec, n=n_samples) * sample_rate
    return TimeSeries(x, sample_rate, t_start)


def add_noise(ts, noise):
    """Add stationary Gaussian noise with a Gaussian covariance kernel.

    White noise is shaped in the frequency domain by the square root of the
    circulant embedding of the covariance, so the result has exactly the
    requested (circular) covariance and is reproducible from ``noise.seed``.
    """
    if noise.t_corr < 2.0 / ts.sample_rate:
        raise ValueError("correlation time not resolved at this sample rate")
    if noise.delta == 0:
        return ts
    n = len(ts)
    lag = np.minimum(np.arange(n), n - np.arange(n)) / ts.sample_rate
    cov = noise.delta ** 2 * np.exp(-lag ** 2 / (2 * noise.t_corr ** 2))
    eig = np.maximum(np.fft.rfft(cov).real, 0.0)
    rng = np.random.default_rng(noise.seed)
    white = rng.standard_normal(n)
    w = np.fft.irfft(np.sqrt(eig) * np.fft.rfft(white), n=n)
    return ts.with_samples(ts.samples + w)


# ---------------------------------------------------------------------------
# perfectly reflecting (rigid) bottom closed forms
# ---------------------------------------------------------------------------

def rigid_cutoff(c_w, D, n):
    """Cutoff angular frequency with a rigid bottom, (2n-1) pi c_w / (2D)."""
    return (2 * np.asarray(n) - 1) * np.pi * c_w / (2 * D)


def rigid_wavenumber(c_w, D, omega, n):
    return np.sqrt(np.asarray(omega) ** 2 / c_w ** 2 - ((2 * n - 1) * np.pi / (2 * D)) ** 2)


def rigid_group_delay(r, c_w, D, omega, n):
    return r * np.asarray(omega) / (c_w ** 2 * rigid_wavenumber(c_w, D, omega, n))
