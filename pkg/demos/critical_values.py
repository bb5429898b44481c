"""
Critical values from the Kac-Rice bound
=======================================

How the simultaneous critical value grows with the roughness of the
process, and what a fairness partition does to it.
"""

# %%
import numpy as np

from fnmiss import Grid, critical_constant, critical_fair, equal_partition, roughness
from fnmiss.simulation import MaternParams, matern_cov, sample_gaussian

for kappa in (0.0, 1.0, 3.0, 10.0, 30.0):
    print(f"kappa = {kappa:5.1f}  ->  u = {critical_constant(kappa, 0.05):.4f}")

# %%
# A Matern(3/2) process with range 0.1 has roughness 1/0.1 = 10 everywhere.
grid = Grid.equidistant(200)
C = matern_cov(grid, MaternParams(phi=0.1))
prof = roughness(C, grid)
print(f"estimated kappa: {prof.kappa:.3f}")

# %%
# Check the global band by simulation. The bound is conservative, so the
# exceedance rate should sit a little under 5%.
paths = sample_gaussian(C, 20_000, np.random.default_rng(0))
u = critical_fair(prof, 0.05)
print(f"sup-exceedance rate: {np.mean(np.any(np.abs(paths) > u, axis=1)):.4f}")

# %%
# Four equal intervals: each gets 1/4 of the error budget and the first one
# also pays for starting outside the band.
u4 = critical_fair(prof, 0.05, equal_partition(4))
for a, b in equal_partition(4):
    inside = (grid.points >= a) & (grid.points <= b)
    hits = np.mean(np.any(np.abs(paths[:, inside]) > u4[inside], axis=1))
    print(f"[{a:.2f}, {b:.2f}]  u = {u4[inside][0]:.4f}  exceedance {hits:.4f}")
