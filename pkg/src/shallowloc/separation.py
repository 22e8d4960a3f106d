"""
Automated modal separation by warping and watershed segmentation.

For each mode ``n = N, ..., 2`` the residual record is warped with
``psi(t) = sqrt(t^2 + t0^2)`` over a grid of ``t0``.  The warped spectrogram
is cut into drainage basins around its local maxima, the basins are walked by
descending frequency and numbered (a rise in peak amplitude starts a new,
lower mode), and ``t0`` is chosen to maximise the amplitude gap between the
last basin of mode ``n`` and the first basin of the next mode.  The basins of
mode ``n`` at that ``t0`` form a mask; the masked STFT is inverted, unwarped
and peeled off the residual.  Whatever is left is mode 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from skimage.measure import label as _label
from skimage.morphology import local_maxima
from skimage.segmentation import watershed as _sk_watershed

from .tfr import (
    MAX_UNWARP_RATE,
    WarpMap,
    invert_masked_stft,
    spectrogram,
    unwarp,
    warp,
)
from .waveguide import TimeSeries

__all__ = [
    "Maximum",
    "BasinLabeling",
    "ModeAssignment",
    "EnergyRectangle",
    "SeparationConfig",
    "SeparationStep",
    "SeparationResult",
    "SeparationError",
    "watershed",
    "assign_modes",
    "quality_factor",
    "default_t0_grid",
    "warped_analysis",
    "mode_mask",
    "separate_modes",
    "energy_rectangle",
    "separability_check",
    "separable_for_some_sigma",
]

log = logging.getLogger(__name__)


class SeparationError(RuntimeError):
    """Raised when a mode cannot be isolated."""

    def __init__(self, n, message):
        self.n = n
        super().__init__(f"mode {n}: {message}")


class Maximum(NamedTuple):
    """Local maximum of a basin: raster indices, power and basin id."""

    row: int
    col: int
    amplitude: float
    basin: int
    time: float = np.nan
    freq: float = np.nan


@dataclass(frozen=True)
class BasinLabeling:
    """Watershed partition of a power raster.

    ``labels`` is 0 below the floor, otherwise the basin id.  ``maxima`` has
    one entry per basin, sorted by descending frequency (ties: earlier time).
    """

    labels: np.ndarray
    maxima: list

    @property
    def n_basins(self):
        return len(self.maxima)

    @property
    def amplitudes(self):
        return np.array([m.amplitude for m in self.maxima])


@dataclass(frozen=True)
class ModeAssignment:
    """Mode number of each basin, in the order of ``BasinLabeling.maxima``."""

    modes: list
    basins: list

    def groups(self):
        out = {}
        for m, b in zip(self.modes, self.basins):
            out.setdefault(m, []).append(b)
        return out

    def positions(self, n):
        return [i for i, m in enumerate(self.modes) if m == n]


def watershed(power, floor=0.001, median_size=3, times=None, freqs=None):
    """Drainage basins of a power raster around its local maxima.

    Pixels below ``floor * max`` are left unlabelled.  The rest is flooded on
    the negated (median-filtered) image from markers at every regional maximum,
    with 8-connectivity.

    Parameters
    ----------
    power : ndarray, shape (n_times, n_freqs)
    floor : float
        Fraction of the peak below which pixels are ignored.
    median_size : int
        Size of the median prefilter; 0 or 1 disables it.
    times, freqs : array_like, optional
        Axis values copied into the reported maxima.

    Returns
    -------
    BasinLabeling
    """
    P = np.asarray(power, dtype=float)
    if np.any(P < 0):
        raise ValueError("power must be non-negative")
    if not 0 <= floor < 1:
        raise ValueError("floor must lie in [0, 1)")
    if P.size == 0 or P.max() <= 0:
        return BasinLabeling(np.zeros(P.shape, dtype=int), [])
    topo = ndimage.median_filter(P, size=median_size) if median_size and median_size > 1 else P
    peak = topo.max()
    if peak <= 0:
        return BasinLabeling(np.zeros(P.shape, dtype=int), [])
    above = topo >= floor * peak if floor > 0 else topo > 0
    markers = _label(local_maxima(topo, connectivity=2) & above, connectivity=2)
    labels = _sk_watershed(-topo, markers, mask=above, connectivity=2)
    maxima = []
    flat = markers.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, markers.max() + 2))
    for b in range(1, markers.max() + 1):
        pix = order[bounds[b - 1]:bounds[b]]
        # brightest marker pixel, first in row-major order on ties
        best = pix[np.argmax(topo.ravel()[pix])]
        i, j = divmod(int(best), P.shape[1])
        maxima.append(Maximum(
            i, j, float(topo[i, j]), b,
            float(times[i]) if times is not None else np.nan,
            float(freqs[j]) if freqs is not None else np.nan,
        ))
    maxima.sort(key=lambda m: (-m.col, m.row))
    return BasinLabeling(labels, maxima)


def assign_modes(labeling, n_remaining):
    """Number basins walking down in frequency.

    The first basin gets ``n_remaining``; each following basin keeps the
    current mode if its peak is lower than the previous one and otherwise
    starts the next lower mode.

    ``labeling`` may also be a plain sequence of amplitudes already sorted by
    descending frequency.
    """
    if isinstance(labeling, BasinLabeling):
        amps = labeling.amplitudes
        basins = [m.basin for m in labeling.maxima]
    else:
        amps = np.asarray(labeling, dtype=float)
        basins = list(range(1, amps.size + 1))
    if amps.size == 0:
        return ModeAssignment([], [])
    modes = [int(n_remaining)]
    for prev, cur in zip(amps[:-1], amps[1:]):
        modes.append(modes[-1] if cur < prev else modes[-1] - 1)
    return ModeAssignment(modes, basins)


def quality_factor(labeling, assignment, n, strict=True):
    """Amplitude gap separating mode ``n`` from the next mode.

    With basins ``I..J`` belonging to mode ``n`` (descending-frequency order),
    returns ``S_{J+1} - S_J``, or 0 when ``strict`` and the mode owns a single
    basin.  A mode with no following basin scores 0.
    """
    amps = labeling.amplitudes if isinstance(labeling, BasinLabeling) else np.asarray(labeling)
    pos = assignment.positions(n)
    if not pos:
        raise ValueError(f"quality factor undefined: mode {n} owns no basin")
    first, last = pos[0], pos[-1]
    if strict and first == last:
        return 0.0
    if last + 1 >= len(amps):
        return 0.0
    return float(amps[last + 1] - amps[last])


# ---------------------------------------------------------------------------
# Algorithm driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeparationConfig:
    """Tuning of the separation loop.

    ``warped_sigma`` (rad/s) overrides the automatic choice, which is the
    smallest width whose ``6/sigma`` window fits ``window_fits`` times into
    the warped record.  ``hop_factor`` sets the frame step to
    ``hop_factor/sigma``.  ``f_max`` bounds the band handed to the watershed.
    """

    f_max: float = 100.0
    floor: float = 0.001
    median_size: int = 3
    warped_sigma: float | None = None
    window_fits: float = 4.0
    hop_factor: float = 0.25
    n_t0: int = 200
    energy_quantiles: tuple = (1e-3, 0.999)
    max_unwarp_rate: float = MAX_UNWARP_RATE


class SeparationStep(NamedTuple):
    mode: int
    t0: float
    quality: float
    n_basins: int
    fallback: bool
    sigma: float


@dataclass(frozen=True)
class SeparationResult:
    """Components ``u_1 .. u_N`` (index 0 is mode 1) and the per-mode log."""

    components: list
    steps: list = field(default_factory=list)
    masks: dict = field(default_factory=dict, repr=False)

    def component(self, n):
        return self.components[n - 1]


def default_t0_grid(u, n_points=200, quantiles=(1e-3, 0.999)):
    """Uniform ``t0`` grid spanning the energetic part of the record."""
    e = np.cumsum(u.samples ** 2)
    if e[-1] <= 0:
        raise ValueError("cannot build a t0 grid for an all-zero record")
    e /= e[-1]
    times = u.times
    lo = times[min(np.searchsorted(e, quantiles[0]), len(times) - 1)]
    hi = times[min(np.searchsorted(e, quantiles[1]), len(times) - 1)]
    lo = max(lo, 1.0 / u.sample_rate)
    if hi <= lo:
        hi = lo + 1.0 / u.sample_rate
    return np.linspace(lo, hi, int(n_points))


class _WarpedView(NamedTuple):
    t0: float
    spec: object
    band: slice
    labeling: BasinLabeling


def warped_analysis(u, t0, config=SeparationConfig()):
    """Warp ``u`` at ``t0``, take its spectrogram and run the watershed."""
    wmap = WarpMap(t0)
    w = warp(u, wmap)
    sigma = config.warped_sigma or 6.0 * config.window_fits / w.duration
    hop = max(1, int(config.hop_factor / sigma * u.sample_rate))
    spec = spectrogram(w, sigma, hop=hop)
    band = spec.band(config.f_max)
    lab = watershed(spec.power[:, band], config.floor, config.median_size,
                    spec.times, spec.freqs[band])
    return _WarpedView(t0, spec, band, lab)


def mode_mask(view, assignment, n):
    """Boolean mask over the full STFT raster selecting the basins of mode ``n``."""
    mask = np.zeros(view.spec.shape, dtype=bool)
    ids = [b for m, b in zip(assignment.modes, assignment.basins) if m == n]
    mask[:, view.band] = np.isin(view.labeling.labels, ids)
    return mask


def _score(u, grid, n, config):
    strict = np.zeros(len(grid))
    loose = np.zeros(len(grid))
    any_basin = False
    for i, t0 in enumerate(grid):
        view = warped_analysis(u, t0, config)
        if view.labeling.n_basins == 0:
            continue
        any_basin = True
        a = assign_modes(view.labeling, n)
        strict[i] = quality_factor(view.labeling, a, n, strict=True)
        loose[i] = quality_factor(view.labeling, a, n, strict=False)
    return strict, loose, any_basin


def separate_modes(u, n_modes, t0_grid=None, config=SeparationConfig()):
    """Split a record into ``n_modes`` modal components.

    Parameters
    ----------
    u : TimeSeries
    n_modes : int
        Number of propagating modes ``N``.
    t0_grid : array_like, optional
        Candidate warp parameters (record time, seconds).  Defaults to
        :func:`default_t0_grid` on ``u``.
    config : SeparationConfig

    Returns
    -------
    SeparationResult
        ``components[n-1]`` is mode ``n``; the components sum to ``u``.

    Raises
    ------
    SeparationError
        If no basin is found for some mode at any ``t0``.
    """
    if n_modes < 1:
        raise ValueError("need at least one mode")
    if not np.all(np.isfinite(u.samples)):
        raise ValueError("record contains non-finite samples")
    if n_modes == 1:
        return SeparationResult([u], [])
    grid = default_t0_grid(u, config.n_t0, config.energy_quantiles) if t0_grid is None \
        else np.asarray(t0_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or grid.max() > u.t_end:
        raise ValueError("t0 grid must be positive and inside the record")
    residual = u
    comps = {}
    steps = []
    masks = {}
    for n in range(n_modes, 1, -1):
        strict, loose, any_basin = _score(residual, grid, n, config)
        if not any_basin:
            raise SeparationError(n, "no drainage basin at any t0")
        fallback = not np.any(strict > 0)
        q = loose if fallback else strict
        best = int(np.argmax(q))
        view = warped_analysis(residual, grid[best], config)
        a = assign_modes(view.labeling, n)
        mask = mode_mask(view, a, n)
        warped_n = invert_masked_stft(view.spec, mask)
        un = unwarp(warped_n, WarpMap(grid[best]), t_start=residual.t_start,
                    n_samples=len(residual), max_rate=config.max_unwarp_rate)
        comps[n] = un
        masks[n] = mask
        residual = residual.with_samples(residual.samples - un.samples)
        step = SeparationStep(n, float(grid[best]), float(q[best]),
                              len(a.positions(n)), fallback, float(view.spec.sigma))
        steps.append(step)
        log.info("mode %d: t0=%.4f s Q=%.3g basins=%d%s", n, step.t0, step.quality,
                 step.n_basins, " (gap-only fallback)" if fallback else "")
    comps[1] = residual
    return SeparationResult([comps[n] for n in range(1, n_modes + 1)], steps, masks)


# ---------------------------------------------------------------------------
# separability of curve portions
# ---------------------------------------------------------------------------

class EnergyRectangle(NamedTuple):
    """Time-frequency box holding most of a curve portion's energy."""

    n: int
    omegas: tuple
    times: tuple
    sigma: float
    t_lo: float
    t_hi: float
    w_lo: float
    w_hi: float

    def intersects(self, other):
        return (self.t_lo < other.t_hi and other.t_lo < self.t_hi
                and self.w_lo < other.w_hi and other.w_lo < self.w_hi)


def energy_rectangle(table, portion, sigma):
    """Energy rectangle of the part of ``table`` between ``portion = (w1, w3)``.

    ``w2`` is where the travel time peaks inside the portion.
    """
    w1, w3 = portion
    sel = table.valid & (table.omega >= w1) & (table.omega <= w3)
    if not np.any(sel):
        raise ValueError(f"portion {portion} outside the band of mode {table.n}")
    om, tt = table.omega[sel], table.t[sel]
    k = int(np.argmax(tt))
    T1, T2, T3 = float(tt[0]), float(tt[k]), float(tt[-1])
    W1, W2, W3 = float(om[0]), float(om[k]), float(om[-1])
    return EnergyRectangle(table.n, (W1, W2, W3), (T1, T2, T3), sigma,
                           min(T1, T3) - 1.0 / sigma, T2 + 1.0 / sigma,
                           W1 - sigma, W3 + sigma)


def separability_check(tables, portions, sigma):
    """Pairwise separation of curve portions at window width ``sigma``.

    Returns a symmetric boolean matrix; entry ``(i, j)`` is True when the
    energy rectangles of modes ``i`` and ``j`` do not intersect.  The diagonal
    is False.
    """
    rects = [energy_rectangle(t, p, sigma) for t, p in zip(tables, portions)]
    m = len(rects)
    out = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = not rects[i].intersects(rects[j])
    return out


def separable_for_some_sigma(tables, portions, sigmas):
    """True where some ``sigma`` in ``sigmas`` separates the pair."""
    acc = None
    for s in sigmas:
        cur = separability_check(tables, portions, s)
        acc = cur if acc is None else acc | cur
    return acc
