"""
Monte-Carlo studies of curve extraction under additive correlated noise.

For a single clean mode, noise of level ``delta * sqrt(T_delta) / |A(omega)|``
is added at each probe frequency and the arrival time is re-estimated with
both methods over a grid of window widths.  Errors are mean absolute
deviations from the model travel time.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curves import extract_max, extract_mean
from .tfr import spectrogram
from .waveguide import (
    CUTOFF_GUARD,
    NoiseModel,
    add_noise,
    cutoff_frequency,
    group_delays,
    modal_spectrum,
    synthesize_signal,
)

__all__ = [
    "NoiseStudyConfig",
    "NoiseStudyResult",
    "noise_delta",
    "amplitude_derivative_sup",
    "phase_curvature_sup",
    "run_noise_study",
]

METHODS = ("maximum", "mean")


@dataclass(frozen=True)
class NoiseStudyConfig:
    """Settings of the noise sweep.

    ``t_w`` is the mean-method weight width; the weight is re-centred on each
    estimate.  ``sigmas_hz`` is the window-width search grid.
    """

    mode: int = 1
    probes_hz: tuple = (14.5, 16.5, 18.5, 20.5, 22.0)
    levels: tuple = (0.01, 0.1, 0.5)
    trials: int = 50
    sigmas_hz: tuple = tuple(np.geomspace(0.25, 12.0, 20))
    t_corr: float = 0.01
    t_w: float = 0.25
    seed: int = 0


@dataclass
class NoiseStudyResult:
    """Errors indexed ``[level, probe, sigma]`` per method (seconds)."""

    config: NoiseStudyConfig
    errors: dict
    sigmas: np.ndarray
    meta: dict = field(default_factory=dict)

    def optimal(self, method):
        """(sigma_opt [level, probe], error at sigma_opt [level, probe])."""
        e = self.errors[method]
        i = np.argmin(e, axis=2)
        return self.sigmas[i], np.take_along_axis(e, i[..., None], axis=2)[..., 0]

    def global_optimal(self, method):
        """Per level: width minimising the worst error over the probes, and that error."""
        g = self.errors[method].max(axis=1)
        i = np.argmin(g, axis=1)
        return self.sigmas[i], g[np.arange(g.shape[0]), i]

    def exponents(self, method):
        """Slope of log(error at sigma_opt) against log(level), per probe."""
        _, e = self.optimal(method)
        x = np.log(np.asarray(self.config.levels))
        return np.array([np.polyfit(x, np.log(e[:, j]), 1)[0] for j in range(e.shape[1])])

    def crossover(self):
        """Per probe: (mean beats max at the lowest level, max beats mean at the highest)."""
        _, emax = self.optimal("maximum")
        _, emean = self.optimal("mean")
        return emean[0] < emax[0], emax[-1] < emean[-1]

    def max_sigma_spread(self):
        """Relative spread ``max/min - 1`` of the global max-method optimal width."""
        s, _ = self.global_optimal("maximum")
        return float(s.max() / s.min() - 1.0)

    def rows(self):
        """Flat table rows for export."""
        out = []
        for m in METHODS:
            s_opt, e_opt = self.optimal(m)
            for a, lev in enumerate(self.config.levels):
                for j, f in enumerate(self.config.probes_hz):
                    out.append({"method": m, "level": lev, "freq_hz": f,
                                "sigma_opt_hz": s_opt[a, j] / (2 * np.pi),
                                "error_s": e_opt[a, j]})
        return out


def noise_delta(level, amplitude, t_corr):
    """Noise standard deviation giving ``level = delta sqrt(t_corr) / amplitude``."""
    return level * amplitude / np.sqrt(t_corr)


def amplitude_derivative_sup(params, n, f_max, n_grid=2000):
    """Largest ``|d|A_n|/d omega|`` over the propagating band (seconds times amplitude)."""
    wc = cutoff_frequency(params, n)
    om = np.linspace(wc * (1 + CUTOFF_GUARD), 2 * np.pi * f_max, n_grid)
    a = np.abs(modal_spectrum(params, om, n, f_max))
    return float(np.max(np.abs(np.gradient(a, om))))


def phase_curvature_sup(params, n, f_max, n_grid=2000):
    """Largest ``|d t_n / d omega|`` above ``4/3`` of the cutoff."""
    wc = cutoff_frequency(params, n)
    om = np.linspace(4.0 * wc / 3.0, 2 * np.pi * f_max, n_grid)
    t = group_delays(params, om, n)
    return float(np.nanmax(np.abs(np.gradient(t, om))))


def _cell_errors(clean, w, t_true, noise_sd, sigmas, config, j):
    """Summed absolute errors of both methods at one (level, probe) cell."""
    out = np.zeros((2, sigmas.size))
    for s in range(config.trials):
        seed = config.seed + 1000 * s + j
        x = add_noise(clean, NoiseModel(noise_sd, config.t_corr, seed))
        e = x.samples ** 2
        centre = float((x.times * e).sum() / e.sum())
        for i, sg in enumerate(sigmas):
            S = spectrogram(x, sg, freq_grid=[w])
            out[0, i] += abs(extract_max(S).t_app[0] - t_true)
            tm = extract_mean(S, t_w=config.t_w, centre=centre, recentre=True).t_app[0]
            out[1, i] += abs(tm - t_true)
    return out / config.trials


def run_noise_study(params, f_max, duration, sample_rate, config=NoiseStudyConfig(),
                    workers=None):
    """Extraction errors of both methods over noise levels and window widths.

    Trial ``s`` at probe ``j`` uses noise seed ``config.seed + 1000 * s + j``,
    shared by every level and width so the curves vary smoothly.  With
    ``workers > 1`` the (level, probe) cells run in separate processes; the
    result does not depend on the worker count.
    """
    n = config.mode
    clean = synthesize_signal(params, f_max, duration, sample_rate, modes=[n])
    om = 2 * np.pi * np.asarray(config.probes_hz, dtype=float)
    amp = np.abs(modal_spectrum(params, om, n, f_max))
    if np.any(amp <= 0):
        raise ValueError("a probe frequency carries no energy for this mode")
    t_true = group_delays(params, om, n) - params.dt
    sigmas = 2 * np.pi * np.asarray(config.sigmas_hz, dtype=float)
    cells = [(a, j) for a in range(len(config.levels)) for j in range(om.size)]
    args = [(clean, om[j], t_true[j], noise_delta(config.levels[a], amp[j], config.t_corr),
             sigmas, config, j) for a, j in cells]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_cell_errors, *zip(*args)))
    else:
        results = [_cell_errors(*a) for a in args]
    shape = (len(config.levels), om.size, sigmas.size)
    err = {m: np.zeros(shape) for m in METHODS}
    for (a, j), r in zip(cells, results):
        err["maximum"][a, j] = r[0]
        err["mean"][a, j] = r[1]
    meta = {"amplitudes": amp, "t_true": t_true}
    return NoiseStudyResult(config, err, sigmas, meta)
