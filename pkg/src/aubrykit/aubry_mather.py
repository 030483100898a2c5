"""Aubry-Mather sets at rational rotation vectors, gaps and gap solutions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize

from .flow import newton_polish
from .lattice import LL, Configuration, PeriodLattice, compare, shift
from .minimizers import CriticalPoint, critical_point, minimize_action, verify_global_minimizer
from .potentials import (FrenkelKontorova, LocalPotential, OnsiteSum, TrigSeries, fk_potential,
                         periodic_action, stationarity_defect)


class AubryViolation(RuntimeError):
    """Translates of a supposed minimizer cross."""


class GapSolutionError(RuntimeError):
    pass


@dataclass
class AubryMatherSet:
    generator: CriticalPoint
    elements: list  # Configurations in [x, x + 1), ordered
    levels: list  # Fractions in [0, 1)
    lattice: PeriodLattice
    potential: LocalPotential | None = None

    def __len__(self):
        return len(self.elements)


@dataclass
class Gap:
    y_minus: Configuration
    y_plus: Configuration
    widths: np.ndarray = field(init=False)
    width: float = field(init=False)

    def __post_init__(self):
        self.widths = self.y_plus.values - self.y_minus.values
        self.width = float(np.min(self.widths))

    def to_dict(self):
        return {"y_minus": self.y_minus.to_dict(), "y_plus": self.y_plus.to_dict(), "width": self.width,
                "widths": self.widths.tolist()}


def orbit_closure(x: CriticalPoint, lattice: PeriodLattice | None = None, pot: LocalPotential | None = None,
                  verify: bool = False) -> AubryMatherSet:
    """Translates tau_{k,l} x with level in [0, 1), deduplicated and checked for strict order."""
    lattice = lattice or x.lattice
    if verify and pot is not None and not verify_global_minimizer(pot, x).verdict:
        raise AubryViolation("generator failed the global-minimizer check")
    elems, levels = [], []
    for c in lattice.shift_classes:
        y = shift(x.config, c.k, c.l)
        if any(np.max(np.abs(y.values - e.values)) < 1e-10 for e in elems):
            continue
        elems.append(y)
        levels.append(c.level)
    order = sorted(range(len(elems)), key=lambda i: levels[i])
    elems = [elems[i] for i in order]
    levels = [levels[i] for i in order]
    ring = elems + [elems[0] + 1]
    for a, b in zip(ring, ring[1:]):
        if len(elems) > 1 or b is not ring[0]:
            if compare(a, b) != LL:
                raise AubryViolation(f"translates not strictly ordered: {compare(a, b)}")
    return AubryMatherSet(x, elems, levels, lattice, pot)


def consecutive_pairs(M: AubryMatherSet):
    """All neighbouring elements, including the wrap to generator + 1, as Gap objects."""
    ring = M.elements + [M.elements[0] + 1]
    return [Gap(a, b) for a, b in zip(ring, ring[1:])]


def pinned_minimizer(pot: LocalPotential, lattice: PeriodLattice, xi: float, start=None) -> Configuration:
    """Minimise W_{p,q} with the origin site held at xi."""
    act = periodic_action(pot, lattice)
    o = lattice.origin_index
    free = np.array([j for j in range(lattice.size) if j != o], dtype=int)
    if start is None:
        from .lattice import linear_configuration

        start = linear_configuration(lattice, xi).values
    base = np.array(start, dtype=float)
    base[o] = xi
    if free.size == 0:
        return Configuration(lattice, base)

    def fun(u):
        v = base.copy()
        v[free] = u
        W, g = act.value(v), act.gradient(v)
        return W, g[free]

    res = minimize(fun, base[free], jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-16, "maxiter": 5000})
    v = base.copy()
    v[free] = res.x
    return Configuration(lattice, v)


def _is_continuum(pot, gap: Gap, W_min: float, probes=(0.25, 0.5, 0.75), tol=1e-10):
    lat = gap.y_minus.lattice
    act = periodic_action(pot, lat)
    a, b = gap.y_minus.x0, gap.y_plus.x0
    for s in probes:
        start = (1 - s) * gap.y_minus.values + s * gap.y_plus.values
        y = pinned_minimizer(pot, lat, a + s * (b - a), start)
        if float(np.linalg.norm(act.gradient(y.values))) > 1e-8 or act.value(y.values) - W_min > tol:
            return False
    return True


def detect_gaps(M: AubryMatherSet, gap_tol: float = 1e-6, probe: bool = True):
    """Consecutive pairs wider than gap_tol that are not bridged by a minimiser continuum."""
    out = []
    for g in consecutive_pairs(M):
        if g.width <= gap_tol:
            continue
        if probe and M.potential is not None and _is_continuum(M.potential, g, M.generator.W):
            continue
        out.append(g)
    return out


def h_omega_representatives(lattice: PeriodLattice):
    """Positions in B_p of one representative per class of Z^d / H_omega."""
    seen, reps = set(), []
    for j, row in enumerate(lattice.domain.tolist()):
        frac = sum((w * int(i) for w, i in zip(lattice.omega, row)), Fraction(0)) % 1
        if frac not in seen:
            seen.add(frac)
            reps.append(j)
    return np.array(reps, dtype=int)


def gap_summability_check(gap: Gap, lattice: PeriodLattice | None = None, tol: float = 1e-9):
    lattice = lattice or gap.y_minus.lattice
    reps = h_omega_representatives(lattice)
    total = float(np.sum(np.abs(gap.widths[reps])))
    return total, bool(total <= 1 + tol)


def renormalized_action(pot: LocalPotential, gap: Gap, y: Configuration, tol: float = 1e-9) -> float:
    """Sum over Z^d/H_omega representatives of S_j(y) - S_j(y_minus)."""
    if np.any(y.values < gap.y_minus.values - tol) or np.any(y.values > gap.y_plus.values + tol):
        raise ValueError("configuration lies outside the order interval of the gap")
    lat = gap.y_minus.lattice
    act = periodic_action(pot, lat)
    reps = h_omega_representatives(lat)
    return float(np.sum(act.site_values(y.values)[reps] - act.site_values(gap.y_minus.values)[reps]))


@dataclass
class GapSolution:
    kind: str  # "non-minimizing" or "foliated"
    point: CriticalPoint | None
    W_gap: float
    max_defect: float
    samples: int
    details: dict = field(default_factory=dict)


def gap_solution(pot: LocalPotential, circle, gap: Gap, pos_tol: float = 1e-8, tol: float = 1e-8,
                 samples: int = 64, on_circle_tol: float = 1e-6) -> GapSolution:
    """Maximise the renormalised action over the circle segment between the gap endpoints."""
    lat = gap.y_minus.lattice
    act = periodic_action(pot, lat)
    for end in (gap.y_minus, gap.y_plus):
        d = float(np.max(np.abs(circle.evaluate(end.x0).values - end.values)))
        if d > on_circle_tol:
            raise GapSolutionError(f"gap endpoint not on the circle (distance {d:.2e})")
    a, b = gap.y_minus.x0, gap.y_plus.x0
    xs = list(np.linspace(a, b, max(samples, 64)))
    xs += [c.x0 + m for c in getattr(circle, "skeleton", []) for m in range(math.floor(a) - 1, math.ceil(b) + 1)
           if a < c.x0 + m < b]
    xs = sorted(set(xs))
    ys = [circle.evaluate(x) for x in xs]
    Wg = np.array([renormalized_action(pot, gap, y, tol=1e-7) for y in ys])
    defects = np.array([stationarity_defect(pot, y) for y in ys])
    i = int(np.argmax(Wg))
    if Wg[i] > pos_tol:
        v, gn = newton_polish(act, ys[i].values, tol * 1e-2)
        cfg = Configuration(lat, v)
        cp = critical_point(pot, cfg)
        if gn > tol:
            raise GapSolutionError(f"maximiser failed stationarity polish (|grad W| = {gn:.2e})")
        w = renormalized_action(pot, gap, cfg, tol=1e-7)
        minimizing = verify_global_minimizer(pot, cp).verdict
        if minimizing or not w > pos_tol:
            raise GapSolutionError("polished maximiser is minimizing or has W_gap <= pos_tol")
        return GapSolution("non-minimizing", cp, w, float(cp.grad_norm**2), len(xs),
                           {"xi": xs[i], "global_minimizer": minimizing})
    if float(np.max(defects)) <= tol * tol:
        return GapSolution("foliated", None, float(Wg.max()), float(defects.max()), len(xs))
    raise GapSolutionError("segment neither carries positive renormalised action nor is stationary")


def oscillation_gap_criterion(pot_base: LocalPotential, V: TrigSeries, lattice: PeriodLattice,
                              gap_tol: float = 1e-3, samples: int = 256, seed: int = 0):
    """Large onsite oscillation forces gaps; verdict plus a detect_gaps cross-check."""
    d = pot_base.d
    osc = V.oscillation() if not V.is_zero else 0.0
    fk_family = isinstance(pot_base, FrenkelKontorova) and pot_base.V.is_zero
    if fk_family:
        pot = fk_potential(V, d)
        bound = 2.0 * d
        bound_kind = "FK: osc V > 2d"
    else:
        pot = OnsiteSum(pot_base, V)
        bound = _sampled_bound(pot_base, lattice, samples, seed)
        bound_kind = "sampled (2r+1)^d * osc S_j"
    fires = osc > bound
    report = {
        "oscillation": osc,
        "bound": bound,
        "bound_kind": bound_kind,
        "verdict": "no connected minimizer family" if fires else "criterion silent",
        "gaps_forced": bool(fires),
        "standard_form_threshold": "k > 8*pi^2",
        "literature_bound": "63/64",
    }
    gm = minimize_action(pot, lattice, multistart=4, seed=seed)
    M = orbit_closure(gm, lattice, pot)
    gaps = detect_gaps(M, gap_tol)
    report["gaps_detected"] = len(gaps)
    report["max_width"] = max((g.width for g in gaps), default=0.0)
    if not gaps:
        from .ghost import FamilyCircle

        pair = consecutive_pairs(M)[0]
        sol = gap_solution(pot, FamilyCircle(pot, lattice), pair)
        report["foliation_verdict"] = sol.kind
    return report


def _sampled_bound(pot, lattice, samples, seed):
    from .lattice import linear_configuration

    rng = np.random.default_rng(seed)
    act = periodic_action(pot, lattice)
    vals = []
    for _ in range(samples):
        x = linear_configuration(lattice, rng.uniform()).values + rng.uniform(-0.5, 0.5, lattice.size)
        vals.append(act.site_values(x))
    vals = np.array(vals)
    N = float(vals.max() - vals.min())
    return (2 * pot.r + 1) ** pot.d * N


def gap_report(gap: Gap, pot: LocalPotential | None = None, solution: GapSolution | None = None):
    total, _ = gap_summability_check(gap)
    out = gap.to_dict()
    out["l1_sum"] = total
    if solution is not None:
        if solution.kind == "non-minimizing":
            out["solution"] = {"config": solution.point.config.to_dict(), "W_gap": solution.W_gap,
                               "index": solution.point.index}
        else:
            out["foliation_verdict"] = solution.kind
    return out


def save_gap_report(reports, path):
    with open(path, "w") as fh:
        json.dump(reports, fh, indent=1)
