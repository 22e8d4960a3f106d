"""
Configuration, stage orchestration and artifact emission.

A run goes record -> modal components -> dispersion curves -> parameters.
Each stage has an in-memory function and a file-level command; the full run
passes every intermediate through the same serialisation boundary as the
staged commands, so chaining the commands reproduces it exactly.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import skimage

from . import io as sio
from .curves import DispersionCurveSet, ExtractionConfig, ModeCurve, extract_curves
from .inversion import Bounds, Priors, default_start, recover_parameters
from .separation import SeparationConfig, separate_modes
from .studies import NoiseStudyConfig, run_noise_study
from .tfr import hz_to_rad, spectrogram
from .waveguide import (
    PRESETS,
    NoiseModel,
    TimeSeries,
    WaveguideParams,
    add_noise,
    cutoff_frequencies,
    group_delays,
    mode_amplitude,
    synthesize_signal,
)

__all__ = [
    "ConfigError",
    "PipelineConfig",
    "RunManifest",
    "PipelineResult",
    "load_config",
    "stage_seeds",
    "synth_record",
    "truth_curves",
    "separate_stage",
    "curves_stage",
    "invert_stage",
    "run_pipeline",
    "cmd_synth",
    "cmd_separate",
    "cmd_curves",
    "cmd_invert",
    "cmd_run",
    "cmd_bench",
]

log = logging.getLogger(__name__)

#: Emission-time offset of the synthetic fixture: the record starts 1 s after
#: the source fires.
FIXTURE_DT = 1.0
DISPLAY_SIGMA_HZ = 20.0


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


_SCENE_KEYS = ("r", "c_w", "c_b", "rho_w", "rho_b", "D", "dt", "z_s", "z_r")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on.

    Scene values left as ``None`` come from the preset.  ``prior_*`` default
    to the preset values; ``r0``, ``c_b0`` and ``dt0`` default to the
    inversion's own start rule.
    """

    preset: str = "pekeris"
    r: float | None = None
    c_w: float | None = None
    c_b: float | None = None
    rho_w: float | None = None
    rho_b: float | None = None
    D: float | None = None
    dt: float | None = FIXTURE_DT
    z_s: float | None = None
    z_r: float | None = None
    input: str | None = None
    f_max: float | None = None
    duration: float = 10.24
    sample_rate: float | None = None
    n_modes: int = 4
    noise_delta: float = 0.0
    noise_t_corr: float = 0.01
    seed: int = 0
    n_t0: int = 200
    t0_min: float | None = None
    t0_max: float | None = None
    floor: float = 0.001
    method: str = "maximum"
    sigma_hz: float | None = None
    p: float = 0.4
    t_w: float | None = None
    per_mode_max: bool = False
    mean_curves: bool = False
    band_lo_hz: float | None = None
    band_hi_hz: float | None = None
    prior_c_w: float | None = None
    prior_rho_w: float | None = None
    prior_rho_b: float | None = None
    prior_D: float | None = None
    r0: float | None = None
    c_b0: float | None = None
    dt0: float = 0.0
    restarts: int = 3
    bench_levels: tuple = (0.01, 0.1, 0.5)
    bench_trials: int = 50
    bench_p: tuple = (0.2, 0.4, 0.6, 0.8)
    workers: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.n_modes < 1:
            raise ConfigError("n_modes must be at least 1")
        if not 0 < self.p < 1:
            raise ConfigError("threshold p must lie in (0, 1)")
        if self.method not in ("maximum", "mean"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.noise_delta < 0 or self.noise_t_corr <= 0:
            raise ConfigError("noise needs delta >= 0 and a positive correlation time")
        if not 0 <= self.floor < 1:
            raise ConfigError("watershed floor must lie in [0, 1)")
        if self.n_t0 < 1 or self.restarts < 0 or self.workers < 1:
            raise ConfigError("n_t0 and workers must be positive, restarts non-negative")
        if self.sigma_hz is not None and self.sigma_hz <= 0:
            raise ConfigError("sigma_hz must be positive")
        if self.input is not None and not Path(self.input).is_file():
            raise ConfigError(f"input file {self.input} does not exist")
        try:
            self.scene()
        except ValueError as exc:
            raise ConfigError(f"invalid scene: {exc}") from exc

    # -- derived values ------------------------------------------------------
    @property
    def f_max_hz(self):
        return self.f_max if self.f_max is not None else PRESETS[self.preset]["f_max"]

    @property
    def rate(self):
        return self.sample_rate if self.sample_rate is not None else 4 * self.f_max_hz

    @property
    def band(self):
        lo, hi = self.band_lo_hz, self.band_hi_hz
        if lo is None and hi is None:
            return PRESETS[self.preset].get("band_hz")
        return (lo or 0.0, hi or np.inf)

    def scene(self):
        vals = dict(PRESETS[self.preset]["params"])
        for k in _SCENE_KEYS:
            v = getattr(self, k)
            if v is not None:
                vals[k] = v
        return WaveguideParams(**vals)

    def priors(self):
        s = self.scene()
        return Priors(self.prior_c_w or s.c_w, self.prior_rho_w or s.rho_w,
                      self.prior_rho_b or s.rho_b, self.prior_D or s.D)

    def separation_config(self):
        return SeparationConfig(f_max=self.f_max_hz, floor=self.floor, n_t0=self.n_t0)

    def extraction_config(self, method=None, p=None):
        sigma = hz_to_rad(self.sigma_hz) if self.sigma_hz else None
        return ExtractionConfig(method or self.method, sigma, p or self.p, self.t_w,
                                self.per_mode_max)

    # -- serialisation -------------------------------------------------------
    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_ini(self, path):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {k: _format(v) for k, v in self.to_dict().items() if v is not None}
        with open(path, "w") as fh:
            cp.write(fh)


def _format(v):
    if isinstance(v, (list, tuple)):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name, text):
    f = _FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown configuration key {name!r}")
    default = f.default
    text = text.strip()
    if text.lower() in ("", "none"):
        return None
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.split(","))
        if name in ("preset", "input", "method"):
            return text
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def load_config(path=None, overrides=None):
    """Build a config from an INI file (any section names) plus ``key=value`` overrides.

    Later entries win: file sections in order, then overrides.
    """
    values = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} does not exist")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for sec in cp.sections():
            for k, v in cp[sec].items():
                values[k] = _parse_value(k, v)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        values[k.strip()] = _parse_value(k.strip(), v)
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def stage_seeds(seed):
    """Independent integer seeds for the noise draw and the optimizer jitter."""
    ss = np.random.SeedSequence(seed)
    noise, opt = ss.spawn(2)
    return int(noise.generate_state(1)[0]), int(opt.generate_state(1)[0])


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    config: dict
    timings: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command, config):
        from . import __version__
        versions = {"shallowloc": __version__, "python": platform.python_version(),
                    "numpy": np.__version__, "scipy": scipy.__version__,
                    "scikit-image": skimage.__version__}
        return cls(command, config.config_hash(), config.to_dict(), versions=versions)

    def add(self, path):
        self.artifacts.append(str(Path(path).name))
        return path

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        sio.write_json(path, dataclasses.asdict(self))
        return path


class _Timer:
    def __init__(self, manifest, name):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.manifest.timings[self.name] = time.perf_counter() - self.t


# ---------------------------------------------------------------------------
# in-memory stages
# ---------------------------------------------------------------------------

def synth_record(config):
    """Synthetic record of the configured scene, noise included."""
    scene = config.scene()
    u = synthesize_signal(scene, config.f_max_hz, config.duration, config.rate)
    if config.noise_delta > 0:
        noise_seed, _ = stage_seeds(config.seed)
        u = add_noise(u, NoiseModel(config.noise_delta, config.noise_t_corr, noise_seed))
    return u


def load_record(config):
    """The configured input WAV at ``4 f_max``, or the synthetic record."""
    if config.input is not None:
        return sio.read_wav(config.input, target_rate=config.rate)
    return synth_record(config)


def truth_curves(config, freqs_hz=None):
    """Model arrival times (record clock) of every mode on a frequency grid."""
    scene = config.scene()
    f_max = config.f_max_hz
    if freqs_hz is None:
        freqs_hz = np.arange(1, int(4 * f_max)) * 0.25
        freqs_hz = freqs_hz[freqs_hz < f_max]
    om = 2 * np.pi * np.asarray(freqs_hz, dtype=float)
    curves = {}
    for n, _ in cutoff_frequencies(scene, f_max):
        t = group_delays(scene, om, n) - scene.dt
        a, _ = mode_amplitude(scene, om, n)
        valid = np.isfinite(t)
        curves[n] = ModeCurve(n, om, np.where(valid, t, np.nan), valid, np.abs(a) ** 2)
    return DispersionCurveSet(curves)


def separate_stage(config, u):
    grid = None
    if config.t0_min is not None or config.t0_max is not None:
        lo = config.t0_min if config.t0_min is not None else 1.0 / u.sample_rate
        hi = config.t0_max if config.t0_max is not None else u.t_end
        grid = np.linspace(lo, hi, config.n_t0)
    return separate_modes(u, config.n_modes, grid, config.separation_config())


def curves_stage(config, components, method=None, p=None):
    """Curves of the components; the threshold is relative to their sum's peak."""
    ecfg = config.extraction_config(method, p)
    sigma = ecfg.sigma or 2 * np.pi * 0.05 * config.f_max_hz
    total = components[0].with_samples(np.sum([c.samples for c in components], axis=0))
    ref = float(spectrogram(total, sigma).power.max())
    curves = extract_curves(components, config.f_max_hz, ecfg, reference_max=ref)
    if config.band is not None:
        curves = curves.restricted_band(*config.band)
    return curves


def invert_stage(config, curves):
    priors = config.priors()
    scene = config.scene()
    _, opt_seed = stage_seeds(config.seed)
    start = default_start(curves, priors, config.r0, config.c_b0, config.dt0, base=scene)
    return recover_parameters(curves, priors, start, Bounds(), config.restarts, opt_seed,
                              base=scene)


@dataclass
class PipelineResult:
    record: TimeSeries
    separation: object
    curves: DispersionCurveSet
    inversion: object

    def result_dict(self, config):
        truth = config.scene() if config.input is None else None
        return self.inversion.to_dict(truth)


def _components_roundtrip(components):
    # WAV files hold float64 samples and no start time
    return [TimeSeries(np.array(c.samples, dtype=np.float64), float(int(round(c.sample_rate))))
            for c in components]


def run_pipeline(config, u=None):
    """All stages in memory, through the same boundaries as the file commands."""
    u = load_record(config) if u is None else u
    sep = separate_stage(config, u)
    comps = _components_roundtrip(sep.components)
    curves = sio.curves_roundtrip(curves_stage(config, comps))
    inv = invert_stage(config, curves)
    return PipelineResult(u, sep, curves, inv)


# ---------------------------------------------------------------------------
# file-level commands
# ---------------------------------------------------------------------------

def _out(out_dir):
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _display_raster(path, u):
    spec = spectrogram(u, hz_to_rad(DISPLAY_SIGMA_HZ), hop=max(1, int(u.sample_rate // 100)))
    sio.write_raster(path, spec.times, spec.freqs_hz, spec.power)


def cmd_synth(config, out_dir):
    """Write ``signal.wav``, ``truth_curves.csv`` and ``spectrogram.bin``."""
    out = _out(out_dir)
    m = RunManifest.start("synth", config)
    with _Timer(m, "synth"):
        u = synth_record(config)
    sio.write_wav(m.add(out / "signal.wav"), u)
    sio.write_curves_csv(m.add(out / "truth_curves.csv"), truth_curves(config))
    _display_raster(m.add(out / "spectrogram.bin"), u)
    config.to_ini(m.add(out / "config.ini"))
    m.write(out)
    return m


def _read_components(paths, rate):
    comps = [sio.read_wav(p) for p in paths]
    if any(c.sample_rate != rate for c in comps):
        raise ConfigError("component files must share the analysis sample rate")
    return comps


def cmd_separate(config, input_path, out_dir):
    """Write ``mode_<n>.wav`` per mode and ``separation.jsonl``."""
    if not Path(input_path).is_file():
        raise ConfigError(f"input file {input_path} does not exist")
    out = _out(out_dir)
    m = RunManifest.start("separate", config)
    u = sio.read_wav(input_path, target_rate=config.rate)
    with _Timer(m, "separate"):
        sep = separate_stage(config, u)
    for n, c in enumerate(sep.components, start=1):
        sio.write_wav(m.add(out / f"mode_{n}.wav"), c)
    with open(m.add(out / "separation.jsonl"), "w") as fh:
        for s in sep.steps:
            fh.write(json.dumps({"mode": s.mode, "t0": s.t0, "quality": s.quality,
                                 "n_basins": s.n_basins, "fallback": s.fallback,
                                 "sigma": s.sigma}) + "\n")
    config.to_ini(m.add(out / "config.ini"))
    m.write(out)
    return m


def cmd_curves(config, component_paths, out_dir):
    """Write ``curves.csv`` (and ``curves_mean.csv`` with ``mean_curves``)."""
    for p in component_paths:
        if not Path(p).is_file():
            raise ConfigError(f"component file {p} does not exist")
    out = _out(out_dir)
    m = RunManifest.start("curves", config)
    comps = _read_components(component_paths, config.rate)
    with _Timer(m, "curves"):
        curves = curves_stage(config, comps)
    sio.write_curves_csv(m.add(out / "curves.csv"), curves)
    if config.mean_curves:
        other = "mean" if config.method == "maximum" else "maximum"
        sio.write_curves_csv(m.add(out / f"curves_{other}.csv"),
                             curves_stage(config, comps, method=other))
    config.to_ini(m.add(out / "config.ini"))
    m.write(out)
    return m


def cmd_invert(config, curves_path, out_dir):
    """Write ``result.json``."""
    if not Path(curves_path).is_file():
        raise ConfigError(f"curves file {curves_path} does not exist")
    out = _out(out_dir)
    m = RunManifest.start("invert", config)
    curves = sio.read_curves_csv(curves_path)
    if curves.n_valid == 0:
        raise ValueError("curves file holds no valid point")
    with _Timer(m, "invert"):
        inv = invert_stage(config, curves)
    truth = config.scene() if config.input is None else None
    sio.write_json(m.add(out / "result.json"), inv.to_dict(truth))
    config.to_ini(m.add(out / "config.ini"))
    m.write(out)
    return m


def cmd_run(config, out_dir):
    """Full pipeline; writes every intermediate artifact and ``result.json``."""
    out = _out(out_dir)
    m = RunManifest.start("run", config)
    with _Timer(m, "load"):
        u = load_record(config)
    if config.input is None:
        sio.write_wav(m.add(out / "signal.wav"), u)
    with _Timer(m, "separate"):
        sep = separate_stage(config, u)
    comps = _components_roundtrip(sep.components)
    for n, c in enumerate(comps, start=1):
        sio.write_wav(m.add(out / f"mode_{n}.wav"), c)
    with _Timer(m, "curves"):
        curves = sio.curves_roundtrip(curves_stage(config, comps))
    sio.write_curves_csv(m.add(out / "curves.csv"), curves)
    with _Timer(m, "invert"):
        inv = invert_stage(config, curves)
    truth = config.scene() if config.input is None else None
    sio.write_json(m.add(out / "result.json"), inv.to_dict(truth))
    config.to_ini(m.add(out / "config.ini"))
    m.write(out)
    return m


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def threshold_sweep(config, thresholds=None, u=None):
    """Inversion errors against the truth for several thresholds ``p``.

    The record is separated once; curves and inversion are redone per ``p``.
    """
    thresholds = config.bench_p if thresholds is None else thresholds
    u = synth_record(config) if u is None else u
    sep = separate_stage(config, u)
    comps = _components_roundtrip(sep.components)
    truth = config.scene()
    rows = []
    for p in thresholds:
        curves = sio.curves_roundtrip(curves_stage(config, comps, p=p))
        if curves.n_valid == 0:
            rows.append({"p": p, "n_valid": 0})
            continue
        inv = invert_stage(config, curves)
        err = inv.relative_errors(truth)
        row = {"p": p, "n_valid": curves.n_valid,
               "modes": ",".join(str(n) for n in curves if curves[n].n_valid)}
        row.update({f"rel_{k}": v for k, v in err.items()})
        row["abs_dt_s"] = abs(inv.params.dt - truth.dt)
        row["rel_dt_record"] = row["abs_dt_s"] / u.duration
        rows.append(row)
    return rows


def _write_rows(path, rows):
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join("" if r.get(k) is None else str(r.get(k)) for k in keys) + "\n")


def cmd_bench(config, out_dir):
    """Threshold sweep and noise sweep; CSV tables plus ``bench.md``."""
    out = _out(out_dir)
    m = RunManifest.start("bench", config)
    with _Timer(m, "threshold_sweep"):
        prow = threshold_sweep(config)
    _write_rows(m.add(out / "bench_threshold.csv"), prow)
    ncfg = NoiseStudyConfig(levels=tuple(config.bench_levels), trials=config.bench_trials,
                            seed=config.seed)
    with _Timer(m, "noise_sweep"):
        ns = run_noise_study(config.scene(), config.f_max_hz, config.duration, config.rate, ncfg,
                             workers=config.workers)
    _write_rows(m.add(out / "bench_noise.csv"), ns.rows())
    lines = ["# Benchmark", "", "## Relative parameter errors against the threshold p", "",
             "| p | modes | r | c_w | c_b | rho_w | rho_b | D | dt (s) |",
             "|---|---|---|---|---|---|---|---|---|"]
    for r in prow:
        if not r.get("n_valid"):
            lines.append(f"| {r['p']} | none | | | | | | | |")
            continue
        lines.append("| {p} | {modes} | ".format(**r) + " | ".join(
            f"{100 * r['rel_' + k]:.2f}%" for k in ("r", "c_w", "c_b", "rho_w", "rho_b", "D"))
            + f" | {r['abs_dt_s']:.3f} |")
    low, high = ns.crossover()
    lines += ["", "## Extraction error under noise (mode 1)", "",
              f"- mean-method error exponent per probe: "
              f"{', '.join(f'{x:.2f}' for x in ns.exponents('mean'))}",
              f"- mean better at the lowest level at {int(np.sum(low))} of {low.size} probes",
              f"- maximum better at the highest level at {int(np.sum(high))} of {high.size} probes",
              f"- spread of the maximum-method optimal width across levels: "
              f"{100 * ns.max_sigma_spread():.0f}%", ""]
    (out / "bench.md").write_text("\n".join(lines))
    m.add(out / "bench.md")
    config.to_ini(m.add(out / "config.ini"))
    m.write(out)
    return m
