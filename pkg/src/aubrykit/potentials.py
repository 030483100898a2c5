"""Local potentials S_j, the periodic action W_{p,q} and Morse perturbations."""

from __future__ import annotations

import importlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Configuration, PeriodLattice

FD_STEP = 1e-5
TWO_PI = 2 * math.pi


class TrigSeries:
    """1-periodic V(xi) = sum_m a_m cos(2 pi m xi) + b_m sin(2 pi m xi)."""

    def __init__(self, harmonics=()):
        h = [(int(m), float(a), float(b)) for m, a, b in harmonics]
        self.harmonics = tuple(t for t in h if t[0] > 0 and (t[1] != 0.0 or t[2] != 0.0))
        self._m = np.array([t[0] for t in self.harmonics], dtype=float)
        self._a = np.array([t[1] for t in self.harmonics])
        self._b = np.array([t[2] for t in self.harmonics])

    @classmethod
    def standard(cls, k: float):
        """V = (k / 8 pi^2) cos(2 pi xi)."""
        return cls([(1, k / (8 * math.pi**2), 0.0)])

    @property
    def is_zero(self):
        return not self.harmonics

    def _terms(self, xi, order):
        xi = np.asarray(xi)
        if self.is_zero:
            return np.zeros_like(xi, dtype=np.result_type(xi, float))
        w = TWO_PI * self._m
        ph = np.multiply.outer(xi, w)
        c, s = np.cos(ph), np.sin(ph)
        # d^n/dxi^n of cos/sin cycles with period 4
        a, b = self._a * w**order, self._b * w**order
        r = order % 4
        if r == 0:
            t = a * c + b * s
        elif r == 1:
            t = -a * s + b * c
        elif r == 2:
            t = -a * c - b * s
        else:
            t = a * s - b * c
        return t.sum(axis=-1)

    def __call__(self, xi):
        return self._terms(xi, 0)

    def d1(self, xi):
        return self._terms(xi, 1)

    def d2(self, xi):
        return self._terms(xi, 2)

    def oscillation(self, samples: int = 4096):
        """max V - min V, by a dense scan refined with a bounded scalar search."""
        if self.is_zero:
            return 0.0
        from scipy.optimize import minimize_scalar

        grid = np.arange(samples) / samples
        vals = self(grid)
        h = 1.0 / samples

        def refine(i, sign):
            res = minimize_scalar(lambda t: sign * float(self(t)), bounds=(grid[i] - h, grid[i] + h),
                                  method="bounded", options={"xatol": 1e-13})
            return sign * res.fun

        vmax = max(vals.max(), -refine(int(np.argmax(vals)), -1.0))
        vmin = min(vals.min(), refine(int(np.argmin(vals)), 1.0))
        return float(vmax - vmin)

    def to_list(self):
        return [list(t) for t in self.harmonics]

    def __repr__(self):
        return f"TrigSeries({list(self.harmonics)})"


def window_offsets(d: int, r: int):
    """Offsets o with ||o||_1 <= r, origin first then lexicographic."""
    box = itertools.product(range(-r, r + 1), repeat=d)
    offs = [o for o in box if sum(map(abs, o)) <= r]
    offs.sort(key=lambda o: (o != (0,) * d, o))
    return np.array(offs, dtype=np.int64).reshape(-1, d)


class LocalPotential:
    """Shift-invariant family S_j(x) = S_0(tau_{j,0} x) of finite range.

    Subclasses implement `window_value` on arrays of shape (..., w) holding
    x_{j+o} for the offsets in `self.offsets`; derivatives fall back to
    central differences.
    """

    name = "custom"

    def __init__(self, d: int, r: int, offsets=None, params=None):
        self.d = int(d)
        self.r = int(r)
        self.offsets = window_offsets(d, r) if offsets is None else np.asarray(offsets, dtype=np.int64)
        self.params = dict(params or {})

    @property
    def width(self):
        return len(self.offsets)

    def window_value(self, X):
        raise NotImplementedError

    def window_grad(self, X):
        X = np.asarray(X, dtype=float)
        g = np.empty_like(X)
        for a in range(X.shape[-1]):
            e = np.zeros(X.shape[-1])
            e[a] = FD_STEP
            g[..., a] = (self.window_value(X + e) - self.window_value(X - e)) / (2 * FD_STEP)
        return g

    def window_hess(self, X):
        X = np.asarray(X, dtype=float)
        w = X.shape[-1]
        H = np.empty(X.shape + (w,))
        for a in range(w):
            e = np.zeros(w)
            e[a] = FD_STEP
            H[..., a, :] = (self.window_grad(X + e) - self.window_grad(X - e)) / (2 * FD_STEP)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def describe(self):
        return {"name": self.name, "d": self.d, "r": self.r, **self.params}


class CallablePotential(LocalPotential):
    """User-supplied window function; derivatives optional."""

    def __init__(self, func, d, r, grad=None, hess=None, offsets=None, params=None):
        super().__init__(d, r, offsets, params)
        self._f, self._g, self._h = func, grad, hess

    def window_value(self, X):
        return self._f(np.asarray(X, dtype=float))

    def window_grad(self, X):
        return self._g(np.asarray(X, dtype=float)) if self._g else super().window_grad(X)

    def window_hess(self, X):
        return self._h(np.asarray(X, dtype=float)) if self._h else super().window_hess(X)


class FrenkelKontorova(LocalPotential):
    """S_j = V(x_j) + (1/8d) sum_{||k-j||=1} (x_k - x_j)^2."""

    name = "frenkel_kontorova"

    def __init__(self, V: TrigSeries, d: int = 1):
        super().__init__(d, 1)
        self.V = V
        self.c = 1.0 / (8 * d)
        self.params = {"V": V.to_list()}

    def window_value(self, X):
        X = np.asarray(X, dtype=float)
        x0 = X[..., 0]
        return self.V(x0) + self.c * np.sum((X[..., 1:] - x0[..., None]) ** 2, axis=-1)

    def window_grad(self, X):
        X = np.asarray(X, dtype=float)
        x0 = X[..., 0]
        diff = X[..., 1:] - x0[..., None]
        g = np.empty_like(X)
        g[..., 1:] = 2 * self.c * diff
        g[..., 0] = self.V.d1(x0) - 2 * self.c * diff.sum(axis=-1)
        return g

    def window_hess(self, X):
        X = np.asarray(X, dtype=float)
        w = X.shape[-1]
        base = np.zeros((w, w))
        base[0, 1:] = base[1:, 0] = -2 * self.c
        base[np.arange(1, w), np.arange(1, w)] = 2 * self.c
        base[0, 0] = 2 * self.c * (w - 1)
        H = np.broadcast_to(base, X.shape + (w,)).copy()
        H[..., 0, 0] += self.V.d2(X[..., 0])
        return H


def fk_potential(V, d: int = 1) -> FrenkelKontorova:
    if not isinstance(V, TrigSeries):
        V = TrigSeries(V)
    return FrenkelKontorova(V, d)


class OnsiteSum(LocalPotential):
    """S_0 + g(x_0) for an onsite trig series g."""

    def __init__(self, base: LocalPotential, g: TrigSeries):
        super().__init__(base.d, base.r, base.offsets, base.params)
        self.base, self.g = base, g
        self.name = base.name + "+onsite"

    def window_value(self, X):
        return self.base.window_value(X) + self.g(np.asarray(X)[..., 0])

    def window_grad(self, X):
        G = np.array(self.base.window_grad(X))
        G[..., 0] += self.g.d1(np.asarray(X)[..., 0])
        return G

    def window_hess(self, X):
        H = np.array(self.base.window_hess(X))
        H[..., 0, 0] += self.g.d2(np.asarray(X)[..., 0])
        return H


def _f(u):
    return u * np.arctan(u)


def _f1(u):
    return np.arctan(u) + u / (1 + u * u)


def _f2(u):
    return 2.0 / (1 + u * u) ** 2


class MorsePerturbed(LocalPotential):
    """S_j + (1/n) sum_{i<k in j+B_p} f(x_k - x_i) + g(x_j), f(u) = u arctan u."""

    def __init__(self, base: LocalPotential, lattice: PeriodLattice, n: float, g: TrigSeries, meta=None):
        dom = [tuple(int(v) for v in row) for row in lattice.domain]
        base_offs = [tuple(int(v) for v in row) for row in base.offsets]
        offs = list(base_offs) + [o for o in dom if o not in base_offs]
        r = max(base.r, max(sum(map(abs, o)) for o in dom))
        super().__init__(base.d, r, np.array(offs, dtype=np.int64).reshape(-1, base.d))
        self.base, self.n, self.g = base, float(n), g
        self.name = base.name + "+morse"
        self.params = {**base.params, "morse": dict(meta or {}, n=float(n), g=g.to_list())}
        self._nb = len(base_offs)
        idx = [offs.index(o) for o in dom]
        pairs = [(idx[a], idx[b]) for a in range(len(idx)) for b in range(a + 1, len(idx))]
        self._pi = np.array([p[0] for p in pairs], dtype=np.int64)
        self._pk = np.array([p[1] for p in pairs], dtype=np.int64)
        # pair -> window slot incidence, so gradient scatter is a single matmul
        self._inc = np.zeros((len(pairs), len(offs)))
        self._inc[np.arange(len(pairs)), self._pk] += 1.0
        self._inc[np.arange(len(pairs)), self._pi] -= 1.0

    def window_value(self, X):
        X = np.asarray(X, dtype=float)
        u = X[..., self._pk] - X[..., self._pi]
        return (self.base.window_value(X[..., : self._nb]) + _f(u).sum(axis=-1) / self.n
                + self.g(X[..., 0]))

    def window_grad(self, X):
        X = np.asarray(X, dtype=float)
        G = np.zeros_like(X)
        G[..., : self._nb] = self.base.window_grad(X[..., : self._nb])
        G[..., 0] += self.g.d1(X[..., 0])
        if len(self._pi):
            G += (_f1(X[..., self._pk] - X[..., self._pi]) / self.n) @ self._inc
        return G

    def window_hess(self, X):
        X = np.asarray(X, dtype=float)
        w = X.shape[-1]
        H = np.zeros(X.shape + (w,))
        H[..., : self._nb, : self._nb] = self.base.window_hess(X[..., : self._nb])
        H[..., 0, 0] += self.g.d2(X[..., 0])
        if len(self._pi):
            t = np.moveaxis(_f2(X[..., self._pk] - X[..., self._pi]) / self.n, -1, 0)
            Hm = np.moveaxis(np.moveaxis(H, -1, 0), -1, 0)  # (w, w, ...)
            np.add.at(Hm, (self._pk, self._pk), t)
            np.add.at(Hm, (self._pi, self._pi), t)
            np.add.at(Hm, (self._pi, self._pk), -t)
            np.add.at(Hm, (self._pk, self._pi), -t)
        return H


class PeriodicAction:
    """W_{p,q} = sum_{j in B_p} S_j with folded derivatives, on raw value vectors."""

    def __init__(self, pot: LocalPotential, lattice: PeriodLattice):
        if pot.d != lattice.d:
            raise ValueError(f"potential dimension {pot.d} != lattice dimension {lattice.d}")
        self.pot, self.lattice = pot, lattice
        idx = lattice.domain[:, None, :] + pot.offsets[None, :, :]
        self.pos, self.off = lattice.locate(idx)  # (n, w)
        self.n = lattice.size
        w = pot.width
        self._rows = np.broadcast_to(self.pos[:, :, None], (self.n, w, w)).ravel()
        self._cols = np.broadcast_to(self.pos[:, None, :], (self.n, w, w)).ravel()
        # fold matrix: window slot -> domain site
        self._fold = np.zeros((self.n * w, self.n))
        self._fold[np.arange(self.n * w), self.pos.ravel()] = 1.0

    def windows(self, v):
        v = np.asarray(v, dtype=float)
        return v[..., self.pos] - self.off

    def value(self, v):
        return self.pot.window_value(self.windows(v)).sum(axis=-1)

    def site_values(self, v):
        """S_j for j in B_p."""
        return self.pot.window_value(self.windows(v))

    def gradient(self, v):
        G = self.pot.window_grad(self.windows(v))
        return G.reshape(G.shape[:-2] + (-1,)) @ self._fold

    def hessian(self, v):
        Hw = self.pot.window_hess(self.windows(v))
        H = np.zeros((self.n, self.n))
        np.add.at(H, (self._rows, self._cols), Hw.ravel())
        return 0.5 * (H + H.T)

    def unfolded_diagonal(self, v):
        """sum_j d^2 S_j / dx_i^2 on the infinite lattice, per site of B_p (batched)."""
        Hw = self.pot.window_hess(self.windows(v))
        diag = np.diagonal(Hw, axis1=-2, axis2=-1)
        return diag.reshape(diag.shape[:-2] + (-1,)) @ self._fold

    def all(self, v):
        return self.value(v), self.gradient(v), self.hessian(v)


_ACTION_CACHE: dict = {}


def periodic_action(pot: LocalPotential, lattice: PeriodLattice) -> PeriodicAction:
    key = (id(pot), lattice)
    act = _ACTION_CACHE.get(key)
    if act is None or act.pot is not pot:
        if len(_ACTION_CACHE) > 256:
            _ACTION_CACHE.clear()
        act = _ACTION_CACHE[key] = PeriodicAction(pot, lattice)
    return act


def action_derivatives(pot: LocalPotential, config: Configuration):
    """(W, gradient over B_p, Hessian) of the periodic action."""
    act = periodic_action(pot, config.lattice)
    return act.all(config.values)


def action_value(pot: LocalPotential, config: Configuration) -> float:
    return float(periodic_action(pot, config.lattice).value(config.values))


def stationarity_defect(pot: LocalPotential, config: Configuration) -> float:
    g = periodic_action(pot, config.lattice).gradient(config.values)
    return float(g @ g)


@dataclass
class ConditionCheck:
    passed: bool
    value: float | None = None
    witness: object = None
    note: str = ""


@dataclass
class ConditionReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, key):
        return self.checks[key]


def verify_conditions(pot: LocalPotential, sample_budget: int = 256, box=(-2.0, 2.0), seed: int = 0,
                      tol: float = 1e-10) -> ConditionReport:
    """Sampled report on conditions A-E for the window function S_0."""
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = box
    w = pot.width
    X = rng.uniform(lo, hi, size=(sample_budget, w))
    rep = ConditionReport()
    norms = np.abs(pot.offsets).sum(axis=1)
    rep.checks["A"] = ConditionCheck(bool(norms.max() <= pot.r), float(pot.r), note="finite range")

    S = pot.window_value(X)
    dS = np.abs(pot.window_value(X + 1.0) - S)
    i = int(np.argmax(dS))
    rep.checks["B"] = ConditionCheck(bool(dS[i] <= tol * max(1.0, np.abs(S).max())), float(dS[i]), X[i])

    nn = np.flatnonzero(norms == 1)
    L = hi - lo
    worst, wit = np.inf, None
    for a in nn:
        for sgn in (1.0, -1.0):
            Y = X.copy()
            Y[:, a] = Y[:, 0]
            s0 = pot.window_value(Y)
            Y[:, a] = Y[:, 0] + sgn * L
            growth = pot.window_value(Y) - s0
            j = int(np.argmin(growth))
            if growth[j] < worst:
                worst, wit = float(growth[j]), (int(a), sgn, X[j])
    rep.checks["C"] = ConditionCheck(bool(worst > 0), worst, wit, note="sampled growth on box")

    H = pot.window_hess(X)
    off = H.copy()
    off[:, np.arange(w), np.arange(w)] = -np.inf
    mx = off.max(axis=(1, 2))
    i = int(np.argmax(mx))
    lam = -H[:, 0, nn].max(axis=1) if len(nn) else np.array([0.0])
    j = int(np.argmin(lam))
    ok_d = bool(mx[i] <= tol and lam[j] > 0)
    rep.checks["D"] = ConditionCheck(ok_d, float(lam[j]), X[i] if mx[i] > tol else X[j],
                                     note=f"max mixed partial {mx[i]:.3e}")
    cmax = float(np.abs(H).max())
    rep.checks["E"] = ConditionCheck(bool(np.isfinite(cmax)), cmax)
    return rep


class MorseApproximationError(RuntimeError):
    def __init__(self, msg, eigenvalue):
        super().__init__(msg)
        self.eigenvalue = eigenvalue


def random_trig_polynomial(rng, degree: int, amplitude: float) -> TrigSeries:
    """Random 1-periodic trig polynomial with sum |coeffs| = amplitude (so |g| <= amplitude)."""
    a = rng.standard_normal(degree)
    b = rng.standard_normal(degree)
    scale = amplitude / (np.abs(a).sum() + np.abs(b).sum())
    return TrigSeries([(m + 1, a[m] * scale, b[m] * scale) for m in range(degree)])


def morse_approximation(pot: LocalPotential, lattice: PeriodLattice, n: float, seed: int = 0,
                        eps: float = 1e-3, degree: int | None = None, retries: int = 8,
                        verify: bool = True, tol: float = 1e-8, grid_per_dof: int = 4):
    """Monotonised + randomly perturbed potential whose action is Morse on `lattice`.

    Each retry draws a new onsite perturbation; with verify=False the first
    draw is returned unchecked.
    """
    if n < 1 or eps <= 0:
        raise ValueError("need n >= 1 and eps > 0")
    from .minimizers import find_critical_points

    degree = degree or 2 * lattice.size
    last = 0.0
    for attempt in range(retries):
        rng = np.random.default_rng([seed, attempt])
        g = random_trig_polynomial(rng, degree, eps)
        cand = MorsePerturbed(pot, lattice, n, g, meta={"seed": seed, "attempt": attempt,
                                                       "epsilon": eps, "degree": degree})
        if not verify:
            return cand
        if not verify_conditions(cand, 64, seed=seed).passed:
            continue
        crit = find_critical_points(cand, lattice, grid_per_dof=grid_per_dof, seed=seed)
        if not crit:
            continue
        if is_morse(cand, lattice, crit, tol):
            return cand
        last = min(float(np.min(np.abs(c.eigenvalues))) for c in crit)
    raise MorseApproximationError(f"no Morse perturbation in {retries} draws", last)


def is_morse(pot: LocalPotential, lattice: PeriodLattice, criticals, tol: float = 1e-8,
             grad_tol: float = 1e-8) -> bool:
    """True iff every Hessian eigenvalue at every critical point exceeds tol in modulus."""
    if not criticals:
        raise ValueError("empty critical-point list: search for critical points first")
    act = periodic_action(pot, lattice)
    for c in criticals:
        cfg = getattr(c, "config", c)
        g = act.gradient(cfg.values)
        if float(g @ g) > grad_tol**2:
            raise ValueError(f"configuration is not stationary (defect {float(g @ g):.3e})")
        ev = np.linalg.eigvalsh(act.hessian(cfg.values))
        if np.min(np.abs(ev)) <= tol:
            return False
    return True


# -- potential spec files

@dataclass
class PotentialSpec:
    kind: str = "frenkel_kontorova"
    d: int = 1
    V: list = field(default_factory=list)
    callable: str | None = None
    r: int = 1
    morse: dict | None = None


_SPEC_KEYS = {"kind", "d", "V", "callable", "r", "morse"}
_MORSE_KEYS = {"n", "epsilon", "seed", "degree"}


def _load_toml(text):
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def parse_potential_spec(obj) -> PotentialSpec:
    """Validate a mapping (e.g. parsed TOML) into a PotentialSpec."""
    if isinstance(obj, str):
        obj = _load_toml(obj)
    unknown = set(obj) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown potential keys: {sorted(unknown)}")
    kind = obj.get("kind", "frenkel_kontorova")
    if kind not in ("frenkel_kontorova", "custom"):
        raise ValueError(f"unknown potential kind {kind!r}")
    V = [tuple(h) for h in obj.get("V", [])]
    for h in V:
        if len(h) != 3:
            raise ValueError("V entries must be (harmonic, cos_coeff, sin_coeff)")
    morse = obj.get("morse")
    if morse is not None:
        bad = set(morse) - _MORSE_KEYS
        if bad:
            raise ValueError(f"unknown morse keys: {sorted(bad)}")
    if kind == "custom" and not obj.get("callable"):
        raise ValueError("custom potentials need callable = 'module:function'")
    return PotentialSpec(kind, int(obj.get("d", 1)), V, obj.get("callable"), int(obj.get("r", 1)), morse)


def build_potential(spec: PotentialSpec, lattice: PeriodLattice | None = None) -> LocalPotential:
    if spec.kind == "frenkel_kontorova":
        pot = fk_potential(TrigSeries(spec.V), spec.d)
    else:
        mod, _, fn = spec.callable.partition(":")
        func = getattr(importlib.import_module(mod), fn)
        pot = CallablePotential(func, spec.d, spec.r)
        if spec.V:
            pot = OnsiteSum(pot, TrigSeries(spec.V))
    if spec.morse:
        if lattice is None:
            raise ValueError("morse block requires a lattice")
        m = spec.morse
        pot = morse_approximation(pot, lattice, m.get("n", 100), m.get("seed", 0), m.get("epsilon", 1e-3),
                                  m.get("degree"))
    return pot
