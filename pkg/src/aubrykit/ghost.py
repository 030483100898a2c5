"""Periodic ghost circles: skeleton, mountain-pass saddles, heteroclinics, T-map."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .flow import FlowError, FlowParams, newton_polish
from .lattice import LL, Configuration, PeriodLattice, compare, compare_values, is_birkhoff
from .minimizers import CriticalPoint, critical_point, find_critical_points, minimize_action
from .potentials import LocalPotential, is_morse, morse_approximation, periodic_action


class GhostCircleError(RuntimeError):
    pass


class NotMorseError(GhostCircleError):
    pass


class CatalogIncompleteError(GhostCircleError):
    pass


@dataclass(frozen=True)
class GhostParams:
    flow: FlowParams = FlowParams()
    eps_rel: float = 1e-6
    bisection_steps: int = 60
    early_polish: float = 1e-6  # try Newton once a boundary trajectory gets this close
    grid_per_dof: int = 4
    max_seeds: int = 1024
    seed: int = 0
    het_method: str = "Radau"
    het_rtol: float = 1e-8
    het_atol: float = 1e-11
    end_tol: float = 1e-9
    subdivide: int = 4
    velocity_floor: float = 1e-14
    classify_time: float = 1e4


# ---------------------------------------------------------------- skeleton

def _translates(cp: CriticalPoint):
    """Translates of cp with x_0 in [0, 1), one per shift class, deduplicated."""
    out = []
    for c in cp.lattice.shift_classes:
        t = cp.shifted(c.k, c.l)
        m = -math.floor(t.x0 + 1e-13)
        t = t.shifted([0] * cp.lattice.d, m)
        if not any(np.max(np.abs(t.config.values - o.config.values)) < 1e-9 for o in out):
            out.append(t)
    return out


def _ordered_cycle(points, eta=1e-12):
    """Consecutive entries strictly ordered, including the wrap to first + 1."""
    pts = sorted(points, key=lambda c: c.x0)
    for a, b in zip(pts, pts[1:] + [pts[0]]):
        vb = b.config.values + (1.0 if b is pts[0] else 0.0)
        if compare_values(a.config.values, vb, eta) != LL:
            return False
    return True


def index0_skeleton(criticals, lattice: PeriodLattice):
    """Index-0 critical points closed under shifts, sorted by x_0 in one period [0, 1)."""
    if any(c.degenerate for c in criticals):
        raise NotMorseError("degenerate critical point in catalog; apply morse_approximation first")
    mins = [c for c in criticals if c.index == 0 and is_birkhoff(c.config)]
    mins.sort(key=lambda c: c.W)
    skel: list[CriticalPoint] = []
    for cp in mins:
        trial = skel + _translates(cp)
        if _ordered_cycle(trial):
            skel = trial
    if not skel:
        raise GhostCircleError("no Birkhoff index-0 point in catalog")
    skel.sort(key=lambda c: c.x0)
    return skel


# ---------------------------------------------------------------- saddles

def _classify(act, v0, lo, hi, params: GhostParams, dense=False):
    """Basin label 'lo'/'hi' from sign-definite velocity, or None if undecided."""
    fl = params.velocity_floor

    def up(t, y):
        return float(np.min(-act.gradient(y))) - fl

    def down(t, y):
        return float(np.min(act.gradient(y))) - fl

    def near_lo(t, y):
        return float(np.max(np.abs(y - lo))) - 1e-7

    def near_hi(t, y):
        return float(np.max(np.abs(y - hi))) - 1e-7

    evs = [up, down, near_lo, near_hi]
    for e in evs:
        e.terminal = True
    up.direction = down.direction = 1
    near_lo.direction = near_hi.direction = -1
    fp = params.flow
    sol = solve_ivp(lambda t, y: -act.gradient(y), (0.0, params.classify_time), v0, method=fp.method,
                    rtol=fp.rtol, atol=fp.atol, events=evs, dense_output=dense)
    if sol.status < 0:
        raise FlowError(sol.message)
    v = sol.y[:, -1]
    g = act.gradient(v)
    label = None
    if sol.status == 1:
        hit = [i for i, te in enumerate(sol.t_events) if len(te)]
        label = "hi" if hit[0] in (0, 3) else "lo"
    elif np.all(-g > fl):
        label = "hi"
    elif np.all(g > fl):
        label = "lo"
    return label, sol, v


def mountain_pass_saddle(pot: LocalPotential, x_lo: CriticalPoint, x_hi: CriticalPoint,
                         params: GhostParams = GhostParams()) -> CriticalPoint:
    """Index-1 saddle between consecutive index-0 points via basin-boundary bisection."""
    lat = x_lo.lattice
    if compare(x_lo.config, x_hi.config) != LL:
        raise ValueError("need x_lo << x_hi")
    act = periodic_action(pot, lat)
    lo, hi = x_lo.config.values, x_hi.config.values

    def point(s):
        return (1 - s) * lo + s * hi

    coarse = np.linspace(0, 1, 9)
    labels = [_classify(act, point(s), lo, hi, params)[0] for s in coarse]
    labels[0], labels[-1] = "lo", "hi"
    known = [(s, lab) for s, lab in zip(coarse, labels) if lab is not None]
    switches = sum(1 for a, b in zip(known, known[1:]) if a[1] != b[1])
    if switches != 1:
        raise CatalogIncompleteError(f"segment crosses {switches} basin boundaries: {labels}")
    j = next(i for i in range(len(known) - 1) if known[i][1] != known[i + 1][1])
    s_lo, s_hi = known[j][0], known[j + 1][0]
    best, best_g = None, math.inf
    for _ in range(params.bisection_steps):
        mid = 0.5 * (s_lo + s_hi)
        if mid in (s_lo, s_hi):
            break
        lab, sol, _ = _classify(act, point(mid), lo, hi, params, dense=True)
        y, gy = _closest_approach(act, sol)
        if gy < best_g:
            best, best_g = y, gy
            if gy < params.early_polish:
                z = _try_saddle(pot, act, best, x_lo, x_hi, params)
                if z is not None:
                    return z
        if lab is None:
            break
        if lab == "lo":
            s_lo = mid
        else:
            s_hi = mid
    if best is None:
        best = point(0.5 * (s_lo + s_hi))
    v, gn = newton_polish(act, best, params.flow.grad_tol)
    if gn > 1e-8:
        raise GhostCircleError(f"saddle polish failed (|grad W| = {gn:.3e})")
    z = critical_point(pot, Configuration(lat, v))
    _check_saddle(z, x_lo, x_hi)
    return z


def _closest_approach(act, sol):
    """Point of smallest |grad W| along a dense trajectory."""
    ts = np.concatenate([sol.t, np.linspace(sol.t[0], sol.t[-1], 400)])
    Y = sol.sol(np.sort(ts)).T
    G = np.linalg.norm(act.gradient(Y), axis=-1)
    i = int(np.argmin(G))
    return Y[i], float(G[i])


def _try_saddle(pot, act, v0, x_lo, x_hi, params):
    v, gn = newton_polish(act, v0, params.flow.grad_tol)
    if gn > 1e-8:
        return None
    z = critical_point(pot, Configuration(x_lo.lattice, v))
    try:
        _check_saddle(z, x_lo, x_hi)
    except GhostCircleError:
        return None
    return z


def unstable_direction(z: CriticalPoint):
    """(lambda_max, e_max): growth rate and positive unstable eigenvector with max entry 1."""
    lam = -float(z.eigenvalues[0])
    e = z.eigenvectors[:, 0].copy()
    if e.sum() < 0:
        e = -e
    return lam, e / np.max(e)


def _check_saddle(z, x_lo, x_hi):
    if z.index != 1:
        raise GhostCircleError(f"saddle has index {z.index}, expected 1")
    _, e = unstable_direction(z)
    if np.min(e) <= 0:
        raise GhostCircleError("unstable eigenvector is not strictly positive")
    if compare(x_lo.config, z.config) != LL or compare(z.config, x_hi.config) != LL:
        raise GhostCircleError("saddle is not strictly between its neighbours")
    if not z.W > max(x_lo.W, x_hi.W):
        raise GhostCircleError("mountain-pass level not above the minima")


# ---------------------------------------------------------------- heteroclinics

@dataclass
class Heteroclinic:
    saddle: CriticalPoint
    target: CriticalPoint
    direction: int
    times: np.ndarray
    states: np.ndarray
    eps: float
    lam: float
    e_max: np.ndarray

    def coordinate(self, k):
        """Values at lattice index k along the samples (saddle first, target last)."""
        lat = self.saddle.lattice
        pos, off = lat.locate(np.reshape(np.asarray(k, dtype=np.int64), (1, lat.d)))
        return self.states[:, pos[0]] - off[0]

    def at_time(self, t):
        if t <= self.times[0]:
            return self.saddle.config.values + self.direction * self.eps * math.exp(self.lam * t) * self.e_max
        if t >= self.times[-1]:
            return self.states[-1]
        j = int(np.searchsorted(self.times, t)) - 1
        a = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return (1 - a) * self.states[j] + a * self.states[j + 1]

    def to_dict(self):
        return {"saddle": self.saddle.config.to_dict(), "target": self.target.config.to_dict(),
                "direction": self.direction, "eps": self.eps, "lambda_max": self.lam,
                "e_max": self.e_max.tolist(), "times": self.times.tolist(),
                "states": self.states.tolist()}


def _sample(sol, sub, direction, target, keep_end=True):
    t = sol.t
    fine = [t[:1]]
    for a, b in zip(t[:-1], t[1:]):
        fine.append(a + (b - a) * np.arange(1, sub + 1) / sub)
    ts = np.concatenate(fine)
    Y = sol.sol(ts).T
    Y[0] = sol.y[:, 0]
    keep_t, keep_y = [ts[0]], [Y[0]]
    for tt, y in zip(ts[1:], Y[1:]):
        d = direction * (y - keep_y[-1])
        if np.all(d > 0):
            keep_t.append(tt)
            keep_y.append(y)
    return np.array(keep_t), np.array(keep_y)


def heteroclinics_from_saddle(pot: LocalPotential, z: CriticalPoint, eps: float | None = None,
                              params: GhostParams = GhostParams(), neighbours=None):
    """Down and up heteroclinic orbits leaving z along -/+ e_max."""
    if z.index != 1:
        raise GhostCircleError("heteroclinics need an index-1 saddle")
    lam, e = unstable_direction(z)
    if np.min(e) <= 0:
        raise GhostCircleError("unstable eigenvector not strictly positive")
    lat = z.lattice
    act = periodic_action(pot, lat)
    if eps is None:
        if neighbours is None:
            scale = 1.0
        else:
            lo, hi = neighbours
            scale = min(np.min(z.config.values - lo.config.values), np.min(hi.config.values - z.config.values))
        eps = params.eps_rel * scale
    out = []
    for direction in (-1, 1):
        target = None if neighbours is None else neighbours[0 if direction < 0 else 1]
        v0 = z.config.values + direction * eps * e
        mu = float(target.eigenvalues[0]) if target is not None else lam
        t_end = max(params.flow.max_time, 100.0 / lam + 100.0 / max(mu, 1e-300))

        def reached(t, y, tv=None if target is None else target.config.values):
            if tv is None:
                return float(np.linalg.norm(act.gradient(y))) - params.flow.grad_tol
            return float(np.max(np.abs(y - tv))) - params.end_tol

        reached.terminal, reached.direction = True, -1
        sol = solve_ivp(lambda t, y: -act.gradient(y), (0.0, t_end), v0, method=params.het_method,
                        jac=lambda t, y: -act.hessian(y), rtol=params.het_rtol, atol=params.het_atol,
                        dense_output=True, events=[reached])
        if sol.status < 0:
            raise FlowError(f"heteroclinic integration failed: {sol.message}")
        vend, gn = newton_polish(act, sol.y[:, -1], params.flow.grad_tol)
        end = critical_point(pot, Configuration(lat, vend))
        if end.index != 0 or gn > 1e-8:
            raise CatalogIncompleteError(f"heteroclinic ends at index {end.index} point (|g|={gn:.2e})")
        if target is not None and np.max(np.abs(vend - target.config.values)) > 1e-6:
            raise CatalogIncompleteError("heteroclinic ends at an unexpected minimum")
        ts, Y = _sample(sol, params.subdivide, direction, end)
        out.append(Heteroclinic(z, target or end, direction, ts, Y, float(eps), lam, e))
    return out[0], out[1]


# ---------------------------------------------------------------- circle

@dataclass
class Segment:
    """Image tau_{k,l} of a heteroclinic; covers x_0 between the saddle and the target."""
    het: Heteroclinic
    k: tuple
    l: int

    def __post_init__(self):
        self.coords = self.het.coordinate(self.k) + self.l
        lat = self.het.saddle.lattice
        pos, _ = lat.locate(np.reshape(np.asarray(self.k, dtype=np.int64), (1, lat.d)))
        self.e_c = float(self.het.e_max[pos[0]])
        self.z_c = self.het.saddle.config.value_at(self.k) + self.l
        self.end_c = self.het.target.config.value_at(self.k) + self.l
        self.lo_c, self.hi_c = sorted((self.z_c, self.end_c))

    def _shift(self, vals):
        lat = self.het.saddle.lattice
        pos, off = lat.locate(lat.domain + np.asarray(self.k, dtype=np.int64))
        return vals[pos] - off + self.l

    def time_of(self, xi):
        """Flow time along the base orbit at which the coordinate equals xi."""
        h, c = self.het, self.coords
        s = h.direction
        if s * (xi - c[0]) <= 0:
            r = (xi - self.z_c) / (s * h.eps * self.e_c)
            return math.log(r) / h.lam if r > 0 else -math.inf
        if s * (xi - c[-1]) >= 0:
            return float(h.times[-1])
        cc = c if s > 0 else -c
        x = xi if s > 0 else -xi
        return float(np.interp(x, cc, h.times))

    def values(self, xi):
        h, c = self.het, self.coords
        s = h.direction
        if s * (xi - c[0]) <= 0:
            t = self.time_of(xi)
            base = h.saddle.config.values if t == -math.inf else h.at_time(t)
        elif s * (xi - c[-1]) >= 0:
            span = self.end_c - c[-1]
            a = 1.0 if span == 0 else min(1.0, (xi - c[-1]) / span)
            base = (1 - a) * h.states[-1] + a * h.target.config.values
        else:
            cc = c if s > 0 else -c
            x = xi if s > 0 else -xi
            j = int(np.searchsorted(cc, x)) - 1
            j = min(max(j, 0), len(cc) - 2)
            a = (x - cc[j]) / (cc[j + 1] - cc[j])
            base = (1 - a) * h.states[j] + a * h.states[j + 1]
        return self._shift(base)

    def back_step(self, xi, dt=1.0):
        t = self.time_of(xi)
        if t == -math.inf:
            return self._shift(self.het.saddle.config.values)
        return self._shift(self.het.at_time(t - dt))


@dataclass
class GhostCircle:
    lattice: PeriodLattice
    skeleton: list  # alternating minima / saddles in one period, sorted by x_0
    segments: list  # one per skeleton interval, same order
    potential: LocalPotential | None = None
    heteroclinics: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def base(self):
        return self.skeleton[0].x0

    @property
    def breakpoints(self):
        return [c.x0 for c in self.skeleton]

    def _locate(self, xi):
        m = math.floor(xi - self.base)
        xr = xi - m
        bp = self.breakpoints
        j = bisect.bisect_right(bp, xr) - 1
        return m, xr, j

    def evaluate(self, xi: float) -> Configuration:
        m, xr, j = self._locate(xi)
        if xr == self.breakpoints[j]:
            vals = self.skeleton[j].config.values
        else:
            vals = self.segments[j].values(xr)
        return Configuration(self.lattice, vals + m)

    def t_map(self, xi: float, k=0) -> float:
        """(Psi_{-1} of the circle point above xi) at lattice index k."""
        m, xr, j = self._locate(xi)
        if xr == self.breakpoints[j]:
            vals = self.skeleton[j].config.values
        else:
            vals = self.segments[j].back_step(xr)
        k = np.reshape(np.asarray(k, dtype=np.int64), (self.lattice.d,))
        return Configuration(self.lattice, vals + m).value_at(k)

    def critical_points(self):
        return list(self.skeleton)

    def to_dict(self, grid=None):
        grid = np.linspace(self.base, self.base + 1, 65)[:-1] if grid is None else grid
        return {
            "lattice": self.lattice.to_dict(),
            "skeleton": [{"config": c.config.to_dict(), "W": c.W, "index": c.index} for c in self.skeleton],
            "heteroclinics": [h.to_dict() for h in self.heteroclinics],
            "segments": [{"heteroclinic": self.heteroclinics.index(s.het), "k": list(s.k), "l": s.l}
                         for s in self.segments],
            "parametrization": {"xi": list(map(float, grid)),
                                "values": [self.evaluate(x).values.tolist() for x in grid]},
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, obj, pot: LocalPotential):
        lat = PeriodLattice.from_dict(obj["lattice"])
        skel = [critical_point(pot, Configuration.from_dict(s["config"])) for s in obj["skeleton"]]
        hets = []
        for h in obj["heteroclinics"]:
            z = critical_point(pot, Configuration.from_dict(h["saddle"]))
            tg = critical_point(pot, Configuration.from_dict(h["target"]))
            hets.append(Heteroclinic(z, tg, int(h["direction"]), np.array(h["times"]), np.array(h["states"]),
                                     float(h["eps"]), float(h["lambda_max"]), np.array(h["e_max"])))
        segs = [Segment(hets[s["heteroclinic"]], tuple(s["k"]), int(s["l"])) for s in obj["segments"]]
        return cls(lat, skel, segs, pot, hets, obj.get("info", {}))


def _match_shift(a_src, b_src, a_dst, b_dst, tol=1e-8):
    """(k, l) with tau_{k,l} a_src = a_dst and tau_{k,l} b_src = b_dst, or None."""
    lat = a_src.lattice
    for c in lat.shift_classes:
        da = a_dst.config.values - a_src.shifted(c.k, c.l).config.values
        m = round(float(da[0]))
        if np.max(np.abs(da - m)) > tol:
            continue
        db = b_dst.config.values - b_src.shifted(c.k, c.l).config.values
        if np.max(np.abs(db - m)) <= tol:
            return c.k, c.l + m
    return None


def assemble_ghost_circle(pot: LocalPotential, lattice: PeriodLattice, params: GhostParams = GhostParams(),
                          criticals=None, check_minimizer: bool = True) -> GhostCircle:
    """Catalog -> skeleton -> saddles -> heteroclinics -> parametrisation by x_0."""
    if criticals is None:
        criticals = find_critical_points(pot, lattice, params.grid_per_dof, seed=params.seed,
                                         max_seeds=params.max_seeds)
    if not criticals:
        raise GhostCircleError("no critical points found")
    if not is_morse(pot, lattice, criticals):
        raise NotMorseError("action is not Morse on this lattice; apply morse_approximation first")
    mins = index0_skeleton(criticals, lattice)
    N = len(mins)
    computed = []  # (lo, hi, down, up)
    skeleton, segments, hets = [], [], []
    for i in range(N):
        lo = mins[i]
        hi = mins[(i + 1) % N]
        if i + 1 == N:
            hi = hi.shifted([0] * lattice.d, 1)
        seg = None
        for (clo, chi, down, up) in computed:
            kl = _match_shift(clo, chi, lo, hi)
            if kl is not None:
                k, l = kl
                z = down.saddle.shifted(k, l)
                seg = (z, Segment(down, k, l), Segment(up, k, l))
                break
        if seg is None:
            z = mountain_pass_saddle(pot, lo, hi, params)
            down, up = heteroclinics_from_saddle(pot, z, params=params, neighbours=(lo, hi))
            computed.append((lo, hi, down, up))
            hets += [down, up]
            zero = tuple([0] * lattice.d)
            seg = (z, Segment(down, zero, 0), Segment(up, zero, 0))
        z, sdown, sup = seg
        skeleton += [lo, z]
        segments += [sdown, sup]
    circle = GhostCircle(lattice, skeleton, segments, pot, hets,
                         {"minima": N, "saddles_computed": len(computed)})
    if check_minimizer:
        gm = minimize_action(pot, lattice, multistart=4, seed=params.seed)
        on = circle.evaluate(gm.x0)
        dist = float(np.max(np.abs(on.values - gm.config.values)))
        circle.info["global_minimizer_distance"] = dist
        if dist > 1e-6:
            raise GhostCircleError(f"global minimizer not on circle (distance {dist:.2e})")
    return circle


def t_map(circle: GhostCircle, xi: float, k=0) -> float:
    return circle.t_map(xi, k)


def export_t_map_csv(circle: GhostCircle, grid, path, k=0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "T"])
        for xi in grid:
            w.writerow([f"{xi:.17g}", f"{circle.t_map(xi, k):.17g}"])


def save_circle(circle: GhostCircle, path):
    with open(path, "w") as fh:
        json.dump(circle.to_dict(), fh)


# ---------------------------------------------------------------- limit diagnostic

def ghost_circle_limit(pot: LocalPotential, omega_target, convergents, sample_grid, tol: float = 1e-2,
                       k=0, params: GhostParams = GhostParams(), morse_strength: float = 1e3,
                       morse_eps: float = 1e-6):
    """Assemble one circle per convergent, compare T-maps on the grid (Cauchy diagnostic)."""
    grid = np.asarray(sample_grid, dtype=float)
    stages, curves, last = [], [], None
    for j, lat in enumerate(convergents):
        stage = {"lattice": lat.to_dict(), "omega": [str(w) for w in lat.omega], "status": "ok"}
        try:
            crit = find_critical_points(pot, lat, params.grid_per_dof, seed=params.seed,
                                        max_seeds=params.max_seeds)
            use = pot
            if not crit or not is_morse(pot, lat, crit):
                use = morse_approximation(pot, lat, morse_strength * (j + 1), seed=params.seed + j,
                                          eps=morse_eps / (j + 1))
                crit = None
                stage["morse_perturbation"] = use.params.get("morse")
            circle = assemble_ghost_circle(use, lat, params, criticals=crit)
            T = np.array([circle.t_map(x, k) for x in grid])
            curves.append(T)
            stage["minima"] = circle.info["minima"]
            last = circle
        except Exception as exc:  # reported per convergent
            stage["status"] = f"failed: {type(exc).__name__}: {exc}"
            curves.append(None)
        stages.append(stage)
    deltas = []
    for a, b in zip(curves, curves[1:]):
        deltas.append(None if a is None or b is None else float(np.max(np.abs(a - b))))
    finite = [d for d in deltas if d is not None]
    achieved = finite[-1] if finite else None
    report = {
        "omega_target": [float(w) for w in np.atleast_1d(omega_target)],
        "component": np.atleast_1d(k).tolist(),
        "stages": stages,
        "deltas": deltas,
        "achieved_delta": achieved,
        "within_tol": bool(achieved is not None and achieved < tol),
        "statement": (f"successive T-map sup-difference {achieved:.3e} on {len(grid)} grid points"
                      if achieved is not None else "no successive pair assembled"),
    }
    samples = None
    if last is not None:
        samples = {"xi": grid.tolist(), "T": curves[-1].tolist() if curves[-1] is not None else None,
                   "values": [last.evaluate(x).values.tolist() for x in grid],
                   "T_by_stage": [None if c is None else c.tolist() for c in curves]}
    return report, samples


class FamilyCircle:
    """Circle of pinned minimisers for degenerate (continuum) cases such as V = 0."""

    def __init__(self, pot: LocalPotential, lattice: PeriodLattice, tol: float = 1e-8):
        self.potential, self.lattice, self.tol = pot, lattice, tol
        self._act = periodic_action(pot, lattice)
        self.skeleton = []

    def evaluate(self, xi: float) -> Configuration:
        from .aubry_mather import pinned_minimizer

        return pinned_minimizer(self.potential, self.lattice, xi)

    def t_map(self, xi: float, k=0) -> float:
        cfg = self.evaluate(xi)
        g = self._act.gradient(cfg.values)
        if float(np.linalg.norm(g)) > self.tol:
            raise GhostCircleError("family member is not stationary; T-map undefined here")
        return cfg.value_at(np.reshape(np.asarray(k), (self.lattice.d,)))
