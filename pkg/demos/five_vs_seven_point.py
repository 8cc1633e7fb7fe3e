"""
Five-point versus seven-point accuracy
======================================

A small version of the synthetic experiment: points fill a box in front of the
first camera, the second camera sees the box turned by 10 degrees about its
center, and both minimal solvers estimate the motion from noisy projections.

The full run (N=1000 per cell, sigma from 0 to 1 px) is::

    calibpose bench --out stats.csv
"""
import numpy as np

from calibpose.bench import CONFIGS, Grid, run_experiment

grid = Grid(sigmas=(0.0, 0.5, 1.0), trials=200, seed=0)
summaries, results = run_experiment(grid)

print("%-12s %-14s %5s %12s %12s %7s" % ("solver", "config", "sigma", "R_err med", "T_err med", "failed"))
for s in summaries:
    print("%-12s %-14s %5.1f %12.3e %12.3e %7d" % (s.solver, s.config, s.sigma_px,
                                                 np.degrees(s.r_err_med), np.degrees(s.t_err_med),
                                                 s.n_failed))
print("(errors in degrees)")

# The 7-point solver ignores that the cameras are calibrated.  As the box flattens,
# its estimate degrades sharply while the 5-point solver barely notices.
med = {(s.solver, s.config, s.sigma_px): s.r_err_med for s in summaries}
for config in CONFIGS:
    ratio = med["seven_point", config, 1.0] / med["five_point", config, 1.0]
    print("%-14s 7pt/5pt median rotation error at 1 px: %.2f" % (config, ratio))
