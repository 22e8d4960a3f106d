"""Inversion accuracy as the significance threshold p varies.

A low threshold keeps weak, badly estimated curve portions; a high one
leaves few points.  The record is separated once and the curves and the
inversion are redone for each p.
"""

from shallowloc.pipeline import PipelineConfig, threshold_sweep

rows = threshold_sweep(PipelineConfig())
keys = ("r", "c_w", "c_b", "rho_w", "rho_b", "D")
print("   p  modes    " + "".join(f"{k:>9s}" for k in keys) + "   dt (ms)")
for row in rows:
    if not row.get("n_valid"):
        print(f"{row['p']:4.1f}  no point above the threshold")
        continue
    errs = "".join(f"{100 * row['rel_' + k]:8.3f}%" for k in keys)
    print(f"{row['p']:4.1f}  {row['modes']:8s} {errs}   {1e3 * row['abs_dt_s']:6.1f}")
