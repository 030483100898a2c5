"""One-site Frenkel-Kontorova chain, end to end.

With p = 1, q = 0 every configuration is a constant c, the action is just
V(c) = cos(2 pi c) / (8 pi^2), and everything below can be checked by hand.
"""

import math

import numpy as np

from aubrykit.aubry_mather import detect_gaps, gap_solution, gap_summability_check, orbit_closure
from aubrykit.ghost import assemble_ghost_circle
from aubrykit.lattice import PeriodLattice
from aubrykit.minimizers import find_critical_points, minimize_action
from aubrykit.potentials import TrigSeries, fk_potential

pot = fk_potential(TrigSeries.standard(1.0))
lat = PeriodLattice([[1]], [0])

gm = minimize_action(pot, lat)
print(f"ground state x = {gm.x0:.12f}, W = {gm.W:.12f} (expected {-1 / (8 * math.pi**2):.12f})")

for c in find_critical_points(pot, lat):
    print(f"critical point x = {c.x0:+.6f}  index {c.index}  eigenvalues {np.round(c.eigenvalues, 6)}")

# between consecutive minima 0.5 and 1.5 the circle is the straight family of constants
circle = assemble_ghost_circle(pot, lat)
print("circle at xi = 0.8:", circle.evaluate(0.8).values, " T(0.8) =", round(circle.t_map(0.8), 6))

gap = detect_gaps(orbit_closure(gm, lat, pot))[0]
print(f"gap [{gap.y_minus.x0}, {gap.y_plus.x0}], l1 sum {gap_summability_check(gap)[0]}")

sol = gap_solution(pot, circle, gap)
print(f"gap solution x = {sol.point.x0:.10f}, renormalised action {sol.W_gap:.10f} "
      f"(1/4pi^2 = {1 / (4 * math.pi**2):.10f}), {sol.kind}")
