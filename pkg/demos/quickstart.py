"""Synthesise a record, split it into modes, read off the curves, invert.

Run with ``python3 demos/quickstart.py``; takes about a minute.
"""

import numpy as np

from shallowloc.pipeline import PipelineConfig, run_pipeline

config = PipelineConfig()  # the four-mode Pekeris scene, 1 s emission offset
truth = config.scene()
print(f"scene: r={truth.r:.0f} m, D={truth.D:.0f} m, c_w={truth.c_w:.0f} m/s, "
      f"c_b={truth.c_b:.0f} m/s, offset {truth.dt:.1f} s")

res = run_pipeline(config)
u = res.record
print(f"record: {len(u)} samples at {u.sample_rate:.0f} Hz ({u.duration:.2f} s)")

print("\nseparation, deepest mode first:")
for s in res.separation.steps:
    print(f"  mode {s.mode}: warp origin t0={s.t0:.3f} s, quality {s.quality:.3g}, "
          f"{s.n_basins} basins assigned to it")

print("\ncurves kept above the threshold:")
for n in res.curves:
    c = res.curves[n]
    if c.n_valid:
        f = c.freq_hz[c.valid]
        print(f"  mode {n}: {c.n_valid} points, {f.min():.1f}-{f.max():.1f} Hz")

inv = res.inversion
print(f"\ninversion: {inv.iterations} iterations, J={inv.J:.3g}, alpha={inv.alpha:.3g}")
for k, e in inv.relative_errors(truth).items():
    print(f"  {k:6s} {getattr(inv.params, k):12.4f}   rel. error {100 * e:.3f}%")
print(f"  offset error {1e3 * abs(inv.params.dt - truth.dt):.1f} ms "
      f"({100 * abs(inv.params.dt - truth.dt) / u.duration:.2f}% of the record)")
assert np.isfinite(inv.J)
