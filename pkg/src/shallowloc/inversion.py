"""
Geoacoustic inversion by matching replica travel times to measured curves.

The misfit integrates squared arrival-time residuals over the valid part of
each measured curve.  A quadratic pull towards prior values of the depth,
densities and water sound speed is added with a weight equal to the misfit at
the starting point, and the sum is minimised with a bounded Nelder-Mead
search restarted from jittered simplices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .waveguide import (
    CUTOFF_GUARD,
    WaveguideParams,
    cutoff_frequency,
    group_delays,
    pekeris_scene,
)

__all__ = [
    "PARAM_NAMES",
    "PRIOR_WEIGHTS",
    "Priors",
    "Bounds",
    "InversionResult",
    "replica_curves",
    "misfit_J",
    "penalty",
    "penalized_J",
    "calibrate_alpha",
    "default_start",
    "recover_parameters",
]

log = logging.getLogger(__name__)

PARAM_NAMES = ("r", "c_w", "c_b", "rho_w", "rho_b", "D", "dt")

#: Weights of the squared relative prior deviations.
PRIOR_WEIGHTS = {"D": 1.0, "rho_b": 1.0, "rho_w": 10.0, "c_w": 10.0}


@dataclass(frozen=True)
class Priors:
    """Prior means of the penalised parameters."""

    c_w: float = 1500.0
    rho_w: float = 1000.0
    rho_b: float = 1500.0
    D: float = 100.0

    def __post_init__(self):
        for k in ("c_w", "rho_w", "rho_b", "D"):
            if not getattr(self, k) > 0:
                raise ValueError(f"prior {k} must be positive")

    @classmethod
    def from_params(cls, p):
        return cls(p.c_w, p.rho_w, p.rho_b, p.D)


@dataclass(frozen=True)
class Bounds:
    """Box constraints; ``c_b > c_w`` is enforced inside the objective."""

    r: tuple = (100.0, 100_000.0)
    c_w: tuple = (1400.0, 1600.0)
    c_b: tuple = (1400.0, 2200.0)
    rho_w: tuple = (900.0, 1100.0)
    rho_b: tuple = (1100.0, 2200.0)
    D: tuple = (5.0, 500.0)
    dt: tuple = (None, None)

    def as_list(self):
        return [getattr(self, k) for k in PARAM_NAMES]


@dataclass(frozen=True)
class InversionResult:
    params: WaveguideParams
    J: float
    J_tilde: float
    alpha: float
    iterations: int
    evaluations: int
    converged: bool
    start: WaveguideParams
    start_J_tilde: float
    prior_deviation: dict
    trace: list = field(default_factory=list, repr=False)

    def relative_errors(self, truth):
        """Relative error per parameter against ``truth`` (absolute for dt if truth is 0)."""
        out = {}
        for k in PARAM_NAMES:
            ref = getattr(truth, k)
            val = getattr(self.params, k)
            out[k] = abs(val - ref) / abs(ref) if ref != 0 else abs(val - ref)
        return out

    def to_dict(self, truth=None):
        d = {
            "params": {k: getattr(self.params, k) for k in PARAM_NAMES},
            "start": {k: getattr(self.start, k) for k in PARAM_NAMES},
            "J": self.J, "J_tilde": self.J_tilde, "alpha": self.alpha,
            "start_J_tilde": self.start_J_tilde,
            "iterations": self.iterations, "evaluations": self.evaluations,
            "converged": self.converged,
            "prior_deviation": self.prior_deviation,
            "trace": [{"J": a, "J_tilde": b} for a, b in self.trace],
        }
        if truth is not None:
            d["truth"] = {k: getattr(truth, k) for k in PARAM_NAMES}
            d["relative_error"] = self.relative_errors(truth)
            d["dt_error_s"] = abs(self.params.dt - truth.dt)
        return d


def replica_curves(params, supports):
    """Model travel times on the measured frequencies.

    Parameters
    ----------
    params : WaveguideParams
    supports : dict
        Mode number -> angular frequencies.

    Returns
    -------
    dict
        Mode number -> (travel times, propagating mask).  Times are NaN where
        the mode is evanescent or within the cutoff guard.
    """
    out = {}
    for n, om in supports.items():
        om = np.asarray(om, dtype=float)
        t = group_delays(params, om, n)
        wc = cutoff_frequency(params, n)
        ok = np.isfinite(t) & (om > wc * (1 + CUTOFF_GUARD))
        out[n] = (np.where(ok, t, np.nan), ok)
    return out


def _runs(mask):
    """(start, stop) index pairs of contiguous True runs."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    d = np.diff(m.astype(np.int8))
    return list(zip(np.nonzero(d == 1)[0], np.nonzero(d == -1)[0]))


def _trapezoid_runs(x, y, mask):
    total = 0.0
    for a, b in _runs(mask):
        if b - a > 1:
            total += np.trapezoid(y[a:b], x[a:b])
    return total


def misfit_J(params, measured):
    """Integrated squared arrival-time residual ``t_model - dt - t_measured``.

    Each mode contributes a trapezoid integral over every contiguous run of
    valid frequencies.  Frequencies where the model mode does not propagate
    use a residual of twice the largest measured time.
    """
    if measured.n_valid == 0:
        raise ValueError("measured curves have no valid point")
    penalty_res = 2.0 * measured.max_time
    supports = {n: measured[n].omega[measured[n].valid] for n in measured}
    reps = replica_curves(params, supports)
    J = 0.0
    for n in measured:
        c = measured[n]
        v = c.valid
        t, ok = reps[n]
        res = np.full(v.size, 0.0)
        r = np.where(ok, t - params.dt - c.t_app[v], penalty_res)
        res[v] = r * r
        J += _trapezoid_runs(c.omega, res, v)
    return float(J)


def penalty(params, priors):
    """Weighted squared relative deviations from the priors."""
    return float(sum(w * ((getattr(params, k) - getattr(priors, k)) / getattr(priors, k)) ** 2
                     for k, w in PRIOR_WEIGHTS.items()))


def penalized_J(params, measured, priors, alpha):
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return misfit_J(params, measured) + alpha * penalty(params, priors)


def _data_scale(measured):
    """Integral of the squared measured times, a natural unit for J."""
    total = 0.0
    for n in measured:
        c = measured[n]
        total += _trapezoid_runs(c.omega, np.where(c.valid, c.t_app, 0.0) ** 2, c.valid)
    return total


def calibrate_alpha(start, measured):
    """Penalty weight: the misfit at the starting point."""
    return misfit_J(start, measured)


def default_start(measured, priors, r0=None, c_b0=None, dt0=0.0, base=None):
    """Start point: priors plus a range scaled from the latest arrival."""
    r0 = measured.max_time * priors.c_w if r0 is None else r0
    c_b0 = 1.1 * priors.c_w if c_b0 is None else c_b0
    base = base or pekeris_scene()
    return base.with_values(r=r0, c_w=priors.c_w, c_b=c_b0, rho_w=priors.rho_w,
                            rho_b=priors.rho_b, D=priors.D, dt=dt0)


# relative simplex steps per parameter; dt in seconds
_STEPS = np.array([0.05, 0.01, 0.03, 0.02, 0.05, 0.05, 0.05])


class _Objective:
    def __init__(self, measured, priors, alpha, base, bounds, scale):
        self.measured = measured
        self.priors = priors
        self.alpha = alpha
        self.base = base
        self.bounds = bounds
        self.scale = scale
        self.n_eval = 0
        self.best = (np.inf, None, np.inf)
        self.worst = None

    def params(self, x):
        v = dict(zip(PARAM_NAMES, x * self.scale))
        return self.base.with_values(**v)

    def __call__(self, x):
        self.n_eval += 1
        v = x * self.scale
        r, c_w, c_b = v[0], v[1], v[2]
        if c_b <= c_w * (1 + 1e-6):
            # keep the simplex out of the non-guided region with a graded wall
            return self.worst * (1.0 + (c_w - c_b) / c_w + 1e-3)
        try:
            p = self.params(x)
        except ValueError:
            return self.worst * 2.0
        J = misfit_J(p, self.measured)
        Jt = J + self.alpha * penalty(p, self.priors)
        if Jt < self.best[0]:
            self.best = (Jt, x.copy(), J)
        return Jt


def recover_parameters(measured, priors=Priors(), start=None, bounds=Bounds(),
                       restarts=3, seed=0, maxiter=4000, xatol=1e-7, fatol_rel=1e-12,
                       alpha=None, base=None):
    """Minimise the penalised misfit.

    Parameters
    ----------
    measured : DispersionCurveSet
        Arrival times on the record clock.
    priors : Priors
    start : WaveguideParams, optional
        Defaults to :func:`default_start`.
    bounds : Bounds
    restarts : int
        Extra Nelder-Mead runs from jittered simplices around the incumbent.
    seed : int
        Seed of the jitter.
    alpha : float, optional
        Penalty weight; defaults to the misfit at ``start``.
    base : WaveguideParams, optional
        Supplies source and receiver depths.

    Returns
    -------
    InversionResult
    """
    start = start or default_start(measured, priors, base=base)
    base = base or start
    if alpha is None:
        alpha = calibrate_alpha(start, measured)
    scale = np.array([abs(getattr(start, k)) or 1.0 for k in PARAM_NAMES])
    scale[-1] = 1.0
    x0 = np.array([getattr(start, k) for k in PARAM_NAMES]) / scale
    nb = []
    for (lo, hi), s in zip(bounds.as_list(), scale):
        nb.append((None if lo is None else lo / s, None if hi is None else hi / s))
    obj = _Objective(measured, priors, alpha, base, bounds, scale)
    f0 = penalized_J(start, measured, priors, alpha)
    # a start that already fits exactly gives no relative scale; use the data's
    f_ref = f0 if f0 > 0 else _data_scale(measured)
    fatol = fatol_rel * f_ref
    obj.worst = max(f0, fatol, 1e-30) * 1e3
    trace = []

    def record(xk):
        p = obj.params(xk)
        J = misfit_J(p, measured)
        trace.append((J, J + alpha * penalty(p, priors)))

    rng = np.random.default_rng(seed)
    x = x0.copy()
    total_it = 0
    converged = False
    for attempt in range(restarts + 1):
        steps = _STEPS.copy()
        if attempt:
            steps *= rng.uniform(0.3, 1.0, size=steps.size) * rng.choice([-1, 1], size=steps.size)
        simplex = np.vstack([x] + [x + np.eye(7)[i] * steps[i] for i in range(7)])
        for i, (lo, hi) in enumerate(nb):
            simplex[:, i] = np.clip(simplex[:, i], -np.inf if lo is None else lo,
                                    np.inf if hi is None else hi)
        fbest = obj.best[0] if np.isfinite(obj.best[0]) else f0
        res = minimize(obj, x, method="Nelder-Mead", bounds=nb, callback=record,
                       options={"initial_simplex": simplex, "maxiter": maxiter,
                                "xatol": xatol, "fatol": fatol, "adaptive": True})
        total_it += res.nit
        x = obj.best[1] if obj.best[1] is not None else res.x
        improved = fbest - obj.best[0]
        log.info("restart %d: J~=%.4g after %d iterations", attempt, obj.best[0], res.nit)
        converged = res.success
        if attempt and improved <= fatol:
            break
    best_f, best_x, best_J = obj.best
    if best_x is None or best_f > f0:
        best_x, best_f, best_J = x0, f0, misfit_J(start, measured)
    p = obj.params(best_x)
    dev = {k: (getattr(p, k) - getattr(priors, k)) / getattr(priors, k) for k in PRIOR_WEIGHTS}
    return InversionResult(p, float(best_J), float(best_f), float(alpha), total_it,
                           obj.n_eval, bool(converged), start, float(f0), dev, trace)
