"""Built-in invariant suites on FK scenarios, run by `aubrykit verify`."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .aubry_mather import (detect_gaps, gap_solution, gap_summability_check, orbit_closure,
                           oscillation_gap_criterion)
from .flow import comparison_check, lyapunov_check, parabolic_harnack_check
from .ghost import assemble_ghost_circle, ghost_circle_limit
from .lattice import Configuration, PeriodLattice, convergent_lattices, is_birkhoff, linear_configuration
from .minimizers import (find_critical_points, minimize_action, refined_action_density,
                         translates_strictly_ordered)
from .parallel import pmap
from .potentials import TrigSeries, fk_potential, is_morse, morse_approximation, periodic_action
from .twist import iterate, jacobian, orbit_from_configuration


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    total: int = 0
    notes: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self):
        return self.total > 0 and self.passed == self.total

    def check(self, cond, note=None):
        self.total += 1
        if cond:
            self.passed += 1
        elif note:
            self.notes.append(note)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "total": self.total, "ok": self.ok,
                "notes": self.notes, "seconds": self.seconds}


def fk(k, d=1):
    return fk_potential(TrigSeries.standard(k), d)


def ordered_pairs(lattice, count, seed, birkhoff=False):
    """Seeded x < y pairs near the linear family."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        x = linear_configuration(lattice, rng.uniform()).values + rng.uniform(-0.1, 0.1, lattice.size)
        inc = rng.uniform(0.0, 0.2, lattice.size)
        inc[rng.integers(lattice.size)] = 0.0 if rng.uniform() < 0.3 else inc[0]
        if not np.any(inc > 0):
            continue
        X, Y = Configuration(lattice, x), Configuration(lattice, x + inc)
        if birkhoff and not (is_birkhoff(X) and is_birkhoff(Y)):
            continue
        out.append((X, Y))
    return out


def suite_scalar_pipeline(quick=False):
    r = SuiteResult("scalar FK pipeline")
    f = fk(1.0)
    lat = PeriodLattice([[1]], [0])
    gm = minimize_action(f, lat)
    r.check(abs(gm.x0 - 0.5) < 1e-8 and abs(gm.W + 1 / (8 * math.pi**2)) < 1e-10, f"minimizer {gm.x0} W {gm.W}")
    crit = find_critical_points(f, lat)
    sad = [c for c in crit if c.index == 1]
    r.check(len(sad) == 1 and abs(sad[0].x0) < 1e-8, "saddle at 0")
    circle = assemble_ghost_circle(f, lat)
    r.check(all(abs(circle.evaluate(x).x0 - x) < 1e-12 for x in np.linspace(0, 2, 9)), "constant family")
    gaps = detect_gaps(orbit_closure(gm, lat, f))
    r.check(len(gaps) == 1 and abs(gap_summability_check(gaps[0])[0] - 1.0) < 1e-8, "gap sum")
    sol = gap_solution(f, circle, gaps[0])
    r.check(sol.kind == "non-minimizing" and abs(sol.point.x0 - 1.0) < 1e-8
            and abs(sol.W_gap - 1 / (4 * math.pi**2)) < 1e-8, "gap solution")
    return r


def suite_degeneracy(quick=False):
    r = SuiteResult("degeneracy handling")
    f = fk(0.0)
    lat = PeriodLattice([[2]], [-1])
    for xi in (0.0, 0.3, 0.7):
        lam = np.linalg.eigvalsh(periodic_action(f, lat).hessian(linear_configuration(lat, xi).values))
        r.check(np.allclose(lam, [0.0, 2.0], atol=1e-10), f"eigenvalues {lam}")
    crit = find_critical_points(f, lat)
    r.check(not is_morse(f, lat, crit), "V=0 should not be Morse")
    g = morse_approximation(f, lat, 100, eps=1e-3)
    r.check(is_morse(g, lat, find_critical_points(g, lat)), "perturbed action should be Morse")
    return r


def suite_comparison(quick=False, seed=0):
    r = SuiteResult("comparison principle")
    f = fk(0.5)
    lat = PeriodLattice([[2]], [-1])
    pairs = ordered_pairs(lat, 20 if quick else 100, seed)

    def run(pair):
        return [comparison_check(f, pair[0], pair[1], t).margin for t in (0.1, 1.0, 5.0)]

    for margins in pmap(run, pairs):
        for m in margins:
            r.check(m > 0, f"margin {m}")
    return r


def suite_harnack(quick=False, seed=1):
    r = SuiteResult("parabolic Harnack")
    f = fk(0.5)
    lat = PeriodLattice([[2]], [-1])
    pairs = ordered_pairs(lat, 20 if quick else 100, seed, birkhoff=True)
    ik = [((0,), (0,)), ((0,), (1,)), ((1,), (0,)), ((0,), (2,)), ((1,), (-1,))]

    def run(pair):
        return [parabolic_harnack_check(f, pair[0], pair[1], 1.0, i, k) for i, k in ik]

    for res in pmap(run, pairs):
        for h in res:
            r.check(h.verdict, f"lhs {h.lhs} < rhs {h.rhs}")
    return r


def suite_energy(quick=False, seed=2):
    r = SuiteResult("energy identity")
    rng = np.random.default_rng(seed)
    f = fk(0.5)
    lat = PeriodLattice([[3]], [-1])
    for _ in range(5 if quick else 20):
        x = Configuration(lat, rng.uniform(-1, 1, lat.size))
        err = lyapunov_check(f, x, float(rng.uniform(0.5, 5.0)))
        r.check(err <= 1e-6, f"energy defect {err}")
    return r


def _fd_errors(pot, lattice, x, h=1e-5):
    act = periodic_action(pot, lattice)
    g, H = act.gradient(x), act.hessian(x)
    n = len(x)
    gfd, Hfd = np.empty(n), np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        gfd[j] = (act.value(x + e) - act.value(x - e)) / (2 * h)
        Hfd[:, j] = (act.gradient(x + e) - act.gradient(x - e)) / (2 * h)
    eg = np.max(np.abs(g - gfd)) / max(1.0, np.max(np.abs(g)))
    eH = np.max(np.abs(H - Hfd)) / max(1.0, np.max(np.abs(H)))
    return eg, eH


def suite_derivatives(quick=False, seed=3):
    r = SuiteResult("gradient/Hessian")
    rng = np.random.default_rng(seed)
    lat1 = PeriodLattice([[3]], [-1])
    lat2 = PeriodLattice([[2, 0], [0, 2]], [-1, 0])
    pots = [(fk(1.0), lat1), (fk(0.7, 2), lat2), (morse_approximation(fk(0.0), lat1, 10, eps=1e-2), lat1)]
    for j in range(10 if quick else 50):
        pot, lat = pots[j % len(pots)]
        eg, eH = _fd_errors(pot, lat, rng.uniform(-1, 1, lat.size))
        r.check(eg <= 1e-6 and eH <= 1e-6, f"fd mismatch {eg:.2e} {eH:.2e}")
    return r


def suite_aubry(quick=False):
    r = SuiteResult("Aubry ordering")
    f = fk(1.0)
    for p, q in ((1, 0), (2, -1), (3, -1)):
        lat = PeriodLattice([[p]], [q])
        gm = minimize_action(f, lat)
        r.check(translates_strictly_ordered(gm.config), f"translates cross at {p},{q}")
        dens = gm.W / lat.size
        for n in (2, 3):
            dn = refined_action_density(f, gm, n)
            r.check(abs(dn - dens) <= 1e-8, f"density {dn} vs {dens}")
    return r


def suite_twist(quick=False):
    r = SuiteResult("twist map")
    V = TrigSeries.standard(0.9)
    f = fk_potential(V)
    lat = PeriodLattice([[3]], [-1])
    crit = find_critical_points(f, lat)
    elliptic = [c for c in crit if c.index == 1]
    r.check(bool(elliptic), "no index-1 stationary configuration")
    for c in elliptic[:1]:
        orb = orbit_from_configuration(c.config, V)
        r.check(orb.max_residual <= 1e-9, f"step residual {orb.max_residual}")
        xs, _ = iterate(V, orb.points[0, 0], orb.points[0, 1], 300)
        per = np.array([c.config.value_at(i) for i in range(301)])
        r.check(np.max(np.abs(((xs - per + 0.5) % 1.0) - 0.5)) <= 1e-7, "300 iterations drift")
    rng = np.random.default_rng(4)
    for _ in range(5):
        J = jacobian(V, *rng.uniform(-1, 1, 2))
        r.check(abs(np.linalg.det(J) - 1) <= 1e-12, "det J != 1")
    return r


def suite_oscillation(quick=False):
    r = SuiteResult("oscillation criterion")
    base = fk(0.0)
    V = TrigSeries.standard(10 * math.pi**2)  # osc = 2.5
    for p, q in ((1, 0), (2, -1)):
        rep = oscillation_gap_criterion(base, V, PeriodLattice([[p]], [q]))
        r.check(rep["gaps_forced"] and rep["max_width"] > 1e-3, f"no gap at {p},{q}")
    rep = oscillation_gap_criterion(base, TrigSeries.standard(0.0), PeriodLattice([[2]], [-1]))
    r.check(rep.get("foliation_verdict") == "foliated", "V=0 not foliated")
    r.check(rep["standard_form_threshold"] == "k > 8*pi^2" and rep["literature_bound"] == "63/64",
            "threshold metadata")
    return r


def suite_ghost_limit(quick=False):
    r = SuiteResult("ghost-circle limit")
    omega = (math.sqrt(5) - 1) / 2
    lats = convergent_lattices(omega, 4 if quick else 6)
    grid = np.linspace(0.0, 1.0, 33)[:-1]
    rep, _ = ghost_circle_limit(fk(0.5), omega, lats, grid)
    d = rep["deltas"]
    r.check(all(x is not None for x in d), "a stage failed")
    if all(x is not None for x in d):
        r.check(all(b <= a for a, b in zip(d[1:], d[2:])), f"deltas not non-increasing {d}")
        r.check(d[-1] < 1e-2, f"final delta {d[-1]}")
    return r


SUITES = [suite_scalar_pipeline, suite_degeneracy, suite_comparison, suite_harnack, suite_energy,
          suite_derivatives, suite_aubry, suite_twist, suite_oscillation, suite_ghost_limit]


def run_all(quick=False, only=None):
    results = []
    for fn in SUITES:
        if only and fn.__name__ not in only:
            continue
        t = time.perf_counter()
        try:
            res = fn(quick=quick)
        except Exception as exc:  # a crashing suite counts as one failed check
            res = SuiteResult(fn.__name__)
            res.check(False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t
        results.append(res)
    return results
