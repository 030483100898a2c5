"""Period lattices, periodic configurations, shifts and ordering."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

EQ_TOL = 1e-12

# ordering verdicts, read as "x REL y"
LL, LT, EQ, GT, GG, CROSS = "<<", "<", "=", ">", ">>", "crossing"


def _int_det(m):
    """Exact determinant of a small integer matrix (fraction elimination)."""
    a = [[Fraction(int(v)) for v in row] for row in m]
    n = len(a)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if a[r][c] != 0), None)
        if piv is None:
            return 0
        if piv != c:
            a[c], a[piv] = a[piv], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            for cc in range(c, n):
                a[r][cc] -= f * a[c][cc]
    return int(det)


def _adjugate(m):
    n = len(m)
    if n == 1:
        return [[1]]
    adj = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(m) if k != i]
            adj[j][i] = (-1) ** (i + j) * _int_det(minor)
    return adj


class PeriodLattice:
    """Integer period matrix p (columns are periods) with vertical shifts q.

    Configurations in X_{p,q} satisfy x_{i + p m} = x_i - <q, m>.
    """

    def __init__(self, p, q):
        p = np.atleast_2d(np.asarray(p, dtype=np.int64))
        q = np.atleast_1d(np.asarray(q, dtype=np.int64))
        if p.shape[0] != p.shape[1] or q.shape != (p.shape[0],):
            raise ValueError(f"incompatible shapes p{p.shape} q{q.shape}")
        self.d = p.shape[0]
        self.p = p
        self.q = q
        plist = p.tolist()
        det = _int_det(plist)
        if det == 0:
            raise ValueError("period matrix is singular")
        self.det = det
        sgn = 1 if det > 0 else -1
        # p^{-1} = adjn / ndet with ndet > 0
        self._adjn = np.array(_adjugate(plist), dtype=np.int64) * sgn
        self.size = abs(det)
        self.p.setflags(write=False)
        self.q.setflags(write=False)

    # -- identity
    def key(self):
        return (tuple(self.p.ravel().tolist()), tuple(self.q.tolist()))

    def __eq__(self, other):
        return isinstance(other, PeriodLattice) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"PeriodLattice(p={self.p.tolist()}, q={self.q.tolist()})"

    @cached_property
    def omega(self):
        """Exact rotation vector -p^{-T} q as a tuple of Fractions."""
        # p^{-T} = (adjn / n)^T
        n = self.size
        adjT = self._adjn.T
        return tuple(Fraction(-int(adjT[i] @ self.q), n) for i in range(self.d))

    @cached_property
    def omega_float(self):
        return np.array([float(w) for w in self.omega])

    @cached_property
    def domain(self):
        """B_p = p([0,1)^d) ∩ Z^d, lexicographically sorted, as an (n, d) int array."""
        corners = [self.p @ np.array(c) for c in itertools.product((0, 1), repeat=self.d)]
        lo = np.min(corners, axis=0)
        hi = np.max(corners, axis=0)
        axes = [np.arange(lo[k], hi[k] + 1) for k in range(self.d)]
        grid = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, self.d)
        num = grid @ self._adjn.T
        ok = np.all((num >= 0) & (num < self.size), axis=1)
        dom = grid[ok]
        assert len(dom) == self.size
        dom.setflags(write=False)
        return dom

    @cached_property
    def _lookup(self):
        dom = self.domain
        lo = dom.min(axis=0)
        ext = dom.max(axis=0) - lo + 1
        table = -np.ones(tuple(ext), dtype=np.int64)
        table[tuple((dom - lo).T)] = np.arange(len(dom))
        return lo, table

    @cached_property
    def origin_index(self):
        return int(self.locate(np.zeros((1, self.d), dtype=np.int64))[0][0])

    def locate(self, idx):
        """Canonical decomposition of indices i = k + p m.

        Returns (positions in domain, vertical offsets <q, m>) so that
        x_i = values[pos] - offset.
        """
        idx = np.asarray(idx, dtype=np.int64)
        shape = idx.shape[:-1]
        flat = idx.reshape(-1, self.d)
        m = np.floor_divide(flat @ self._adjn.T, self.size)
        k = flat - m @ self.p.T
        lo, table = self._lookup
        pos = table[tuple((k - lo).T)]
        off = m @ self.q
        return pos.reshape(shape), off.reshape(shape)

    def level(self, k, l):
        return sum(w * int(ki) for w, ki in zip(self.omega, np.atleast_1d(k))) + int(l)

    @cached_property
    def shift_classes(self):
        return enumerate_shift_classes(self)

    @cached_property
    def is_principal(self):
        levels = [c.level for c in self.shift_classes]
        return len(set(levels)) == len(levels)

    def refine(self, n: int):
        """Lattice (n p, n q); X_{p,q} embeds in it."""
        return PeriodLattice(self.p * n, self.q * n)

    def to_dict(self):
        return {"d": self.d, "p": self.p.ravel().tolist(), "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, obj):
        d = int(obj["d"])
        return cls(np.array(obj["p"], dtype=np.int64).reshape(d, d), obj["q"])

    @classmethod
    def from_rotation(cls, omega):
        """Smallest d=1 lattice with rotation number omega (a Fraction or float)."""
        w = Fraction(omega).limit_denominator(10**9)
        return cls([[w.denominator]], [-w.numerator])


def convergents(x, count: int):
    """First `count` continued-fraction convergents of x (d = 1).

    The integer-part convergent a_0/1 is skipped; golden mean gives 1/1, 1/2, 2/3, 3/5, ...
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    frac = Fraction(x).limit_denominator(10**12)
    h0, h1, k0, k1 = 0, 1, 1, 0
    out, first = [], True
    while len(out) < count:
        a = math.floor(frac)
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        if not first:
            out.append(Fraction(h1, k1))
        first = False
        rest = frac - a
        if rest == 0:
            break
        frac = 1 / rest
    return out


def convergent_lattices(x, count: int):
    return [PeriodLattice.from_rotation(c) for c in convergents(x, count)]


def fundamental_domain(lattice: PeriodLattice):
    """Ordered list of indices (tuples) of B_p."""
    return [tuple(int(v) for v in row) for row in lattice.domain]


def rotation_vector(lattice: PeriodLattice):
    return lattice.omega


@dataclass(frozen=True)
class ShiftClass:
    k: tuple
    l: int
    level: Fraction


def enumerate_shift_classes(lattice: PeriodLattice):
    """One representative per k in B_p, with l chosen so the level lies in [0, 1)."""
    out = []
    for k in fundamental_domain(lattice):
        lev = sum(w * ki for w, ki in zip(lattice.omega, k))
        l = -math.floor(lev)
        out.append(ShiftClass(k, l, lev + l))
    out.sort(key=lambda c: (c.level, c.k))
    return out


class Configuration:
    """Element of X_{p,q}: values on B_p plus the lattice."""

    __slots__ = ("lattice", "values")

    def __init__(self, lattice: PeriodLattice, values):
        v = np.array(values, dtype=float).ravel()
        if v.shape != (lattice.size,):
            raise ValueError(f"expected {lattice.size} values, got {v.shape[0]}")
        v.setflags(write=False)
        self.lattice = lattice
        self.values = v

    def __repr__(self):
        return f"Configuration({self.lattice!r}, {self.values.tolist()})"

    @property
    def x0(self) -> float:
        return float(self.values[self.lattice.origin_index])

    def value_at(self, i) -> float:
        pos, off = self.lattice.locate(np.reshape(np.asarray(i, dtype=np.int64), (1, -1)))
        return float(self.values[pos[0]] - off[0])

    def values_at(self, idx):
        pos, off = self.lattice.locate(idx)
        return self.values[pos] - off

    def shift(self, k, l=0):
        return shift(self, k, l)

    def with_values(self, values):
        return Configuration(self.lattice, values)

    def __add__(self, c):
        return Configuration(self.lattice, self.values + c)

    def to_dict(self):
        out = self.lattice.to_dict()
        out["values"] = self.values.tolist()
        return out

    @classmethod
    def from_dict(cls, obj):
        return cls(PeriodLattice.from_dict(obj), obj["values"])


def linear_configuration(lattice: PeriodLattice, xi: float) -> Configuration:
    """x^{omega, xi}_i = xi + <omega, i>."""
    return Configuration(lattice, xi + lattice.domain @ lattice.omega_float)


def value_at(config: Configuration, i) -> float:
    return config.value_at(i)


def shift(config: Configuration, k, l=0) -> Configuration:
    """(tau_{k,l} x)_i = x_{i+k} + l on B_p."""
    lat = config.lattice
    k = np.reshape(np.asarray(k, dtype=np.int64), (lat.d,))
    return Configuration(lat, config.values_at(lat.domain + k) + l)


def shift_values(lattice: PeriodLattice, values, k, l=0):
    """Array version of shift; values may carry a leading batch axis."""
    k = np.reshape(np.asarray(k, dtype=np.int64), (lattice.d,))
    pos, off = lattice.locate(lattice.domain + k)
    return np.asarray(values)[..., pos] - off + l


def compare_values(a, b, eta=EQ_TOL):
    diff = np.asarray(b) - np.asarray(a)
    if np.all(np.abs(diff) <= eta):
        return EQ
    if np.all(diff > eta):
        return LL
    if np.all(diff < -eta):
        return GG
    if np.all(diff >= -eta):
        return LT
    if np.all(diff <= eta):
        return GT
    return CROSS


def compare(x: Configuration, y: Configuration, eta: float = EQ_TOL) -> str:
    """Ordering relation of x relative to y."""
    if x.lattice != y.lattice:
        raise ValueError("configurations live on different lattices")
    return compare_values(x.values, y.values, eta)


@dataclass
class BirkhoffReport:
    birkhoff: bool
    witness: tuple | None
    deviation: float
    reason: str = ""

    def __bool__(self):
        return self.birkhoff


def _box(d, radius):
    return np.array(list(itertools.product(range(-radius, radius + 1), repeat=d)), dtype=np.int64)


def birkhoff_deviation(config: Configuration, radius: int = 2) -> float:
    """max |x_i - x_0 - <omega, i>| over the box [-radius, radius]^d."""
    lat = config.lattice
    box = _box(lat.d, radius)
    return float(np.max(np.abs(config.values_at(box) - config.x0 - box @ lat.omega_float)))


def is_birkhoff(config: Configuration, shift_radius: int = 1, eta: float = EQ_TOL) -> BirkhoffReport:
    """Finite Birkhoff test: tau_{k,l} x never crosses x for ||k|| <= R."""
    if shift_radius < 1:
        raise ValueError("shift_radius must be >= 1")
    lat = config.lattice
    dev = birkhoff_deviation(config, radius=max(2, shift_radius))
    wmax = float(np.max(np.abs(lat.omega_float)))
    lmax = int(math.floor(shift_radius * (1 + wmax))) + 1
    ks = [k for k in _box(lat.d, shift_radius) if np.abs(k).sum() <= shift_radius]
    ks.sort(key=lambda k: (int(np.abs(k).sum()), tuple(-k)))
    ls = sorted(range(-lmax, lmax + 1), key=lambda l: (abs(l), -l))
    for k in ks:
        for l in ls:
            rel = compare(config, shift(config, k, l), eta)
            if rel == CROSS:
                return BirkhoffReport(False, (tuple(int(v) for v in k), l), dev, "crossing translate")
            lev = lat.level(k, l)
            # ordering must follow the sign of the level
            if (lev > 0 and rel in (GT, GG)) or (lev < 0 and rel in (LT, LL)):
                return BirkhoffReport(False, (tuple(int(v) for v in k), l), dev, "order contradicts level")
    if dev > 1 + 1e-9:
        return BirkhoffReport(False, None, dev, "deviation from linear exceeds 1")
    return BirkhoffReport(True, None, dev)


def is_maximally_periodic(config: Configuration, tol: float = 1e-9) -> bool:
    for c in config.lattice.shift_classes:
        if c.level == 0 and np.max(np.abs(shift(config, c.k, c.l).values - config.values)) > tol:
            return False
    return True


def sphere_count(d: int, n: int) -> int:
    """Number of points of Z^d with l1-norm exactly n."""
    if n == 0:
        return 1
    return sum(2**k * math.comb(d, k) * math.comb(n - 1, k - 1) for k in range(1, min(d, n) + 1))


def weighted_norm_difference(x: Configuration, y: Configuration, truncation_radius: int):
    """Truncated sum_{||i|| <= R} |x_i - y_i| 2^{-||i||} and a bound on the rest.

    x - y is p-periodic, so every omitted term is at most max_{B_p}|x - y| 2^{-||i||}.
    """
    if x.lattice != y.lattice:
        raise ValueError("configurations live on different lattices")
    d, R = x.lattice.d, truncation_radius
    box = _box(d, R)
    norms = np.abs(box).sum(axis=1)
    box, norms = box[norms <= R], norms[norms <= R]
    diff = np.abs(x.values_at(box) - y.values_at(box))
    total = float(np.sum(diff * 2.0 ** (-norms)))
    dmax = float(np.max(np.abs(x.values - y.values)))
    tail, n = 0.0, R + 1
    while True:
        term = sphere_count(d, n) * 2.0 ** (-n)
        tail += term
        if term < 1e-18 * max(tail, 1e-300):
            break
        n += 1
    return total, dmax * tail
