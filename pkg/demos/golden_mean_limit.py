"""Ghost circles along the Fibonacci convergents of the golden mean.

For each convergent F_{n-1}/F_n a circle of ordered configurations is built
from minima, mountain-pass saddles and the heteroclinic orbits joining them.
The time-one maps T restricted to the x_0 coordinate settle down as the
period grows; the printed deltas are sup |T_n - T_{n-1}| on a 32-point grid.

Writes golden_t_maps.csv (xi, then one column per convergent) for plotting.
"""

import csv
import math
import sys
import time

import numpy as np

from aubrykit.ghost import ghost_circle_limit
from aubrykit.lattice import convergent_lattices
from aubrykit.potentials import TrigSeries, fk_potential

count = int(sys.argv[1]) if len(sys.argv) > 1 else 6
omega = (math.sqrt(5) - 1) / 2
lats = convergent_lattices(omega, count)
grid = np.linspace(0, 1, 33)[:-1]

t0 = time.perf_counter()
report, samples = ghost_circle_limit(fk_potential(TrigSeries.standard(0.5)), omega, lats, grid)
print(f"{time.perf_counter() - t0:.1f}s")

for stage, lat in zip(report["stages"], lats):
    print(f"  omega = {stage['omega'][0]:>5}  period {lat.size:3d}  {stage['status']}")
for n, d in enumerate(report["deltas"], 1):
    print(f"  delta {n}: {d:.3e}")
print(report["statement"])

with open("golden_t_maps.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["xi"] + [s["omega"][0] for s in report["stages"]])
    for i, x in enumerate(grid):
        w.writerow([f"{x:.6f}"] + ["" if row is None else f"{row[i]:.12f}" for row in samples["T_by_stage"]])
