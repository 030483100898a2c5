"""Minimizers and critical points of W_{p,q}."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, root

from .flow import newton_polish
from .lattice import CROSS, EQ, GG, LL, Configuration, PeriodLattice, compare, linear_configuration, shift
from .potentials import LocalPotential, periodic_action

DEGENERATE_TOL = 1e-8


class SearchError(RuntimeError):
    pass


@dataclass
class CriticalPoint:
    config: Configuration
    W: float
    grad_norm: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    index: int
    degenerate: bool

    @property
    def x0(self):
        return self.config.x0

    @property
    def lattice(self):
        return self.config.lattice

    def shifted(self, k, l=0):
        """Translate tau_{k,l}; eigenvectors are permuted accordingly."""
        lat = self.config.lattice
        cfg = shift(self.config, k, l)
        pos, _ = lat.locate(lat.domain + np.reshape(np.asarray(k, dtype=np.int64), (lat.d,)))
        return CriticalPoint(cfg, self.W, self.grad_norm, self.eigenvalues, self.eigenvectors[pos, :],
                             self.index, self.degenerate)

    def to_dict(self):
        return {"config": self.config.to_dict(), "W": self.W, "grad_norm": self.grad_norm,
                "eigenvalues": self.eigenvalues.tolist(), "index": self.index,
                "degenerate": self.degenerate}


def critical_point(pot: LocalPotential, config: Configuration, tol: float = DEGENERATE_TOL) -> CriticalPoint:
    act = periodic_action(pot, config.lattice)
    W, g, H = act.all(config.values)
    lam, U = np.linalg.eigh(H)
    return CriticalPoint(config, float(W), float(np.linalg.norm(g)), lam, U,
                         int(np.sum(lam < -tol)), bool(np.min(np.abs(lam)) <= tol))


def normalize_vertical(config: Configuration) -> Configuration:
    """Translate by an integer so that x_0 lies in [0, 1)."""
    return config + (-math.floor(config.x0 + 1e-13))


def _local_min(act, v0, gtol=1e-11):
    res = minimize(act.value, v0, jac=act.gradient, method="L-BFGS-B",
                   options={"gtol": gtol, "ftol": 1e-15, "maxiter": 5000, "maxcor": 20})
    return res.x


def minimize_action(pot: LocalPotential, lattice: PeriodLattice, multistart: int = 8, seed: int = 0,
                    perturbation: float = 0.2, grad_tol: float = 1e-10) -> CriticalPoint:
    """Lowest-action polished critical point over linear and perturbed starts."""
    if multistart < 1:
        raise ValueError("multistart must be >= 1")
    act = periodic_action(pot, lattice)
    rng = np.random.default_rng(seed)
    starts = []
    for j in range(multistart):
        lin = linear_configuration(lattice, j / multistart).values
        starts.append(lin)
        starts.append(lin + rng.uniform(-perturbation, perturbation, lattice.size))
    cands = []
    for v0 in starts:
        v = _local_min(act, v0)
        for _ in range(5):
            v, gn = newton_polish(act, v, 0.0)
            cp = critical_point(pot, Configuration(lattice, v))
            if cp.index == 0 or cp.degenerate:
                break
            # stuck at a saddle: leave along the most negative direction
            v = _local_min(act, v + 1e-2 * cp.eigenvectors[:, 0])
        if cp.grad_norm <= max(grad_tol, 1e-8) and (cp.index == 0 or cp.degenerate):
            cands.append(cp)
    if not cands:
        raise SearchError("no start converged to a local minimum")
    best = min(cands, key=lambda c: (round(c.W, 11), normalize_vertical(c.config).x0))
    return critical_point(pot, normalize_vertical(best.config))


def same_class(x: Configuration, y: Configuration, tol: float) -> bool:
    """y = tau_{k,l} x for some shift class and integer l."""
    for c in x.lattice.shift_classes:
        d = y.values - shift(x, c.k, c.l).values
        m = np.round(d[0])
        if np.max(np.abs(d - m)) <= tol:
            return True
    return False


def _seeds(lattice, grid_per_dof, max_seeds, rng):
    n = lattice.size
    base = linear_configuration(lattice, 0.0).values
    if grid_per_dof**n <= max_seeds:
        g = np.arange(grid_per_dof) / grid_per_dof
        mesh = np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)
        return base + mesh
    # too many tensor points: walk the linear family and perturb within the Birkhoff band
    m = max(4 * grid_per_dof, 8)
    xi = (np.arange(m) + 0.5) / (m * n)
    lin = base[None, :] + xi[:, None]
    pert = lin[rng.integers(0, m, 2 * m)] + rng.uniform(-0.25, 0.25, (2 * m, n))
    return np.vstack([lin, pert])


def find_critical_points(pot: LocalPotential, lattice: PeriodLattice, grid_per_dof: int = 4,
                         grad_tol: float = 1e-10, dedupe_tol: float = 1e-6, max_seeds: int = 4096,
                         seed: int = 0):
    """Newton from seeds; deduplicated modulo shift classes and x -> x+1; sorted by x_0."""
    if grid_per_dof < 2:
        raise ValueError("grid_per_dof must be >= 2")
    act = periodic_action(pot, lattice)
    rng = np.random.default_rng(seed)
    found: list[CriticalPoint] = []
    tols: list[float] = []
    for v0 in _seeds(lattice, grid_per_dof, max_seeds, rng):
        g0 = act.gradient(v0)
        if np.linalg.norm(g0) <= grad_tol:
            v = v0
        else:
            sol = root(act.gradient, v0, jac=act.hessian, method="hybr", options={"xtol": 1e-13})
            v = sol.x
        # polish to roundoff: soft directions pin the position only to |grad| / |lambda_min|
        v, gn = newton_polish(act, v, 0.0)
        if gn > grad_tol or not np.all(np.isfinite(v)):
            continue
        cfg = normalize_vertical(Configuration(lattice, v))
        cp = critical_point(pot, cfg)
        tol = min(max(dedupe_tol, 10 * gn / max(np.min(np.abs(cp.eigenvalues)), 1e-300)), 1e-3)
        if any(same_class(f.config, cfg, max(tol, t)) for f, t in zip(found, tols)):
            continue
        found.append(cp)
        tols.append(tol)
    # canonical representative: the translate with the smallest x_0 in [0, 1)
    out = []
    for cp in found:
        reps = [normalize_vertical(shift(cp.config, c.k, c.l)) for c in lattice.shift_classes]
        best = min(reps, key=lambda r: r.x0)
        out.append(critical_point(pot, best))
    out.sort(key=lambda c: c.x0)
    return out


@dataclass
class GlobalCheck:
    verdict: bool
    worst_margin: float
    details: dict


def lift(config: Configuration, lattice_n: PeriodLattice) -> Configuration:
    """View x in X_{p,q} as an element of X_{np,nq}."""
    return Configuration(lattice_n, config.values_at(lattice_n.domain))


def interior_sites(lattice: PeriodLattice, r: int):
    """Positions of B_p whose r-ball lies inside B_p."""
    dom = {tuple(row) for row in lattice.domain.tolist()}
    offs = [o for o in np.ndindex(*([2 * r + 1] * lattice.d))]
    offs = [np.array(o) - r for o in offs if sum(abs(np.array(o) - r)) <= r]
    return [j for j, row in enumerate(lattice.domain) if all(tuple(row + o) in dom for o in offs)]


def verify_global_minimizer(pot: LocalPotential, x: CriticalPoint, n: int = 3, trials: int = 20,
                            seed: int = 0, tol: float = 1e-9, amplitude: float = 0.5) -> GlobalCheck:
    """Falsification test: compact perturbations, re-minimisation in X_{np,nq}, Aubry ordering."""
    rng = np.random.default_rng(seed)
    lat = x.config.lattice
    latn = lat.refine(n)
    actn = periodic_action(pot, latn)
    xn = lift(x.config, latn).values
    Wn = float(actn.value(xn))
    details = {"W_n": Wn, "n_d_W": n**lat.d * x.W}
    worst = math.inf

    inner = interior_sites(latn, pot.r)
    ok_a = True
    for _ in range(trials if inner else 0):
        y = xn.copy()
        scale = amplitude * 10.0 ** (-rng.integers(0, 3))
        y[inner] += rng.uniform(-scale, scale, len(inner))
        m = float(actn.value(y)) - Wn
        worst = min(worst, m)
        ok_a &= m >= -tol
    details["perturbation"] = {"passed": ok_a, "sites": len(inner)}

    ok_b = True
    best = math.inf
    for _ in range(max(1, trials // 4)):
        y = _local_min(actn, xn + rng.uniform(-amplitude, amplitude, latn.size))
        m = float(actn.value(y)) - Wn
        best = min(best, m)
        ok_b &= m >= -tol
    worst = min(worst, best)
    details["reminimization"] = {"passed": ok_b, "best_margin": best}

    ok_c = True
    for c in lat.shift_classes:
        rel = compare(x.config, shift(x.config, c.k, c.l), 1e-10)
        if c.level == 0:
            ok_c &= rel == EQ
        else:
            ok_c &= rel in (LL, GG)
    details["aubry"] = {"passed": ok_c}
    return GlobalCheck(bool(ok_a and ok_b and ok_c), float(worst), details)


def minmax_combine(x: Configuration, y: Configuration, pot: LocalPotential | None = None):
    """(min{x,y}, max{x,y}) and W(x)+W(y)-W(min)-W(max) when a potential is given."""
    if x.lattice != y.lattice:
        raise ValueError("configurations live on different lattices")
    m = Configuration(x.lattice, np.minimum(x.values, y.values))
    M = Configuration(x.lattice, np.maximum(x.values, y.values))
    report = None
    if pot is not None:
        act = periodic_action(pot, x.lattice)
        report = float(act.value(x.values) + act.value(y.values) - act.value(m.values) - act.value(M.values))
    return m, M, report


def translates_strictly_ordered(config: Configuration, tol: float = 1e-10) -> bool:
    """Aubry property: distinct translates never cross (and differ strictly)."""
    for c in config.lattice.shift_classes:
        rel = compare(config, shift(config, c.k, c.l), tol)
        if rel == CROSS or (c.level != 0 and rel not in (LL, GG)):
            return False
    return True


def refined_action_density(pot: LocalPotential, x: CriticalPoint, n: int, seed: int = 0,
                           trials: int = 4, perturbation: float = 0.05):
    """Minimum of W_{np,nq}/|B_{np}| reached from perturbations of the lifted minimizer."""
    latn = x.config.lattice.refine(n)
    actn = periodic_action(pot, latn)
    xn = lift(x.config, latn).values
    rng = np.random.default_rng(seed)
    best = float(actn.value(xn))
    for _ in range(trials):
        v = _local_min(actn, xn + rng.uniform(-perturbation, perturbation, latn.size))
        v, _ = newton_polish(actn, v)
        best = min(best, float(actn.value(v)))
    return best / latn.size


def save_catalog(points, path):
    with open(path, "w") as fh:
        json.dump([p.to_dict() for p in points], fh, indent=1)


def load_catalog(pot: LocalPotential, path):
    with open(path) as fh:
        data = json.load(fh)
    return [critical_point(pot, Configuration.from_dict(d["config"])) for d in data]
