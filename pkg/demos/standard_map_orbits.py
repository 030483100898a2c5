"""Periodic standard-map orbits from stationary chains, and the oscillation test.

Each stationary configuration of the p = 3, q = -1 chain is a period-3 orbit of
the map (x, y) -> (x + y + 2V'(x), y + 2V'(x)). The trace of the monodromy
tells the minimiser (hyperbolic) from the mountain-pass saddle (elliptic).
"""

import math

import numpy as np

from aubrykit.lattice import PeriodLattice
from aubrykit.minimizers import find_critical_points
from aubrykit.potentials import TrigSeries, fk_potential
from aubrykit.twist import invariant_curve_verdict, iterate, jacobian, orbit_from_configuration

V = TrigSeries.standard(0.9)
for c in find_critical_points(fk_potential(V), PeriodLattice([[3]], [-1])):
    orb = orbit_from_configuration(c.config, V)
    M = np.eye(2)
    for x in c.config.values:
        M = jacobian(V, x, 0.0) @ M
    xs, _ = iterate(V, *orb.points[0], 300)
    ref = np.array([c.config.value_at(i) for i in range(301)])
    err = np.abs(xs - ref)
    first = int(np.argmax(err > 1e-7)) if np.any(err > 1e-7) else None
    print(f"index {c.index}: trace {np.trace(M):+.4f}, step residual {orb.max_residual:.1e}, "
          f"300-step drift {err.max():.1e}" + (f" (leaves 1e-7 at step {first})" if first else ""))

for k in (1.0, 8 * math.pi**2, 100.0):
    r = invariant_curve_verdict(TrigSeries.standard(k))
    print(f"k = {k:7.3f}: osc V = {r['oscillation']:.4f} -> {r['verdict']}")
