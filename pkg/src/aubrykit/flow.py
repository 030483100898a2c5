"""Gradient flow dx/dt = -grad W_{p,q}(x) and its qualitative checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .lattice import LL, LT, Configuration, compare, is_birkhoff
from .potentials import LocalPotential, periodic_action


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowParams:
    method: str = "RK45"  # Dormand-Prince 4(5); "Radau" for slow saddle manifolds
    rtol: float = 1e-9
    atol: float = 1e-9
    max_step: float = math.inf
    max_time: float = 1e4
    grad_tol: float = 1e-10

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class FlowResult:
    endpoint: Configuration
    t: float
    trace: np.ndarray  # rows (t, W, |grad W|^2)
    converged: bool = False
    states: np.ndarray | None = None
    sol: object = None
    extra: dict = field(default_factory=dict)


def _rhs(act):
    return lambda t, v: -act.gradient(v)


def _jac(act, params):
    if params.method in ("Radau", "BDF", "LSODA"):
        return lambda t, v: -act.hessian(v)
    return None


def _solve(act, v0, t_end, params, dense=False, events=None):
    kw = dict(method=params.method, rtol=params.rtol, atol=params.atol, max_step=params.max_step,
              dense_output=dense, events=events)
    jac = _jac(act, params)
    if jac is not None:
        kw["jac"] = jac
    sol = solve_ivp(_rhs(act), (0.0, float(t_end)), np.asarray(v0, dtype=float), **kw)
    if sol.status < 0:
        raise FlowError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")
    return sol


def _trace(act, ts, ys):
    W = act.value(ys.T)
    G = act.gradient(ys.T)
    return np.column_stack([ts, W, np.sum(G * G, axis=-1)])


def flow(pot: LocalPotential, x: Configuration, t: float, params: FlowParams = FlowParams(),
         dense: bool = False) -> FlowResult:
    """Approximate Psi_t(x) for t >= 0."""
    if t < 0:
        raise ValueError("backward flow is not available; use the ghost-circle T-map")
    act = periodic_action(pot, x.lattice)
    if t == 0:
        tr = _trace(act, np.array([0.0]), x.values[:, None])
        return FlowResult(x, 0.0, tr, states=x.values[None, :].copy())
    sol = _solve(act, x.values, t, params, dense=dense)
    end = Configuration(x.lattice, sol.y[:, -1])
    return FlowResult(end, float(sol.t[-1]), _trace(act, sol.t, sol.y), states=sol.y.T.copy(),
                      sol=sol.sol if dense else None)


def newton_polish(act, v, tol: float = 1e-10, maxiter: int = 50, shift: float = 1e-10):
    """Newton on grad W with a Tikhonov-regularised step; never increases |grad W|."""
    v = np.array(v, dtype=float)
    g = act.gradient(v)
    gn = float(np.linalg.norm(g))
    for _ in range(maxiter):
        if gn <= tol:
            break
        lam, U = np.linalg.eigh(act.hessian(v))
        c = U.T @ g
        step = -U @ (c * lam / (lam * lam + shift * shift))
        a, improved = 1.0, False
        for _ in range(30):
            vn = v + a * step
            gnew = act.gradient(vn)
            nn = float(np.linalg.norm(gnew))
            if nn < gn:
                v, g, gn, improved = vn, gnew, nn, True
                break
            a *= 0.5
        if not improved:
            break
    return v, gn


def flow_to_equilibrium(pot: LocalPotential, x: Configuration, grad_tol: float | None = None,
                        params: FlowParams = FlowParams(), switch_tol: float = 1e-6):
    """Flow until |grad W| <= switch_tol, then Newton-polish to grad_tol.

    Returns (FlowResult, CriticalPoint or None).
    """
    from .minimizers import critical_point

    grad_tol = params.grad_tol if grad_tol is None else grad_tol
    if grad_tol <= 0:
        raise ValueError("grad_tol must be positive")
    act = periodic_action(pot, x.lattice)
    v, t_total = np.array(x.values, dtype=float), 0.0
    traces, states = [], []
    thresh = max(grad_tol, switch_tol)
    gn = float(np.linalg.norm(act.gradient(v)))
    while True:
        if gn > thresh and t_total < params.max_time:
            ev = lambda t, y: float(np.linalg.norm(act.gradient(y))) - thresh  # noqa: E731
            ev.terminal, ev.direction = True, -1
            sol = _solve(act, v, params.max_time - t_total, params, events=[ev])
            traces.append(_trace(act, sol.t + t_total, sol.y))
            states.append(sol.y.T)
            v, t_total = sol.y[:, -1], t_total + float(sol.t[-1])
        vp, gp = newton_polish(act, v, grad_tol)
        # accept the polish only if it stays close (no jump to another basin)
        if gp <= grad_tol and np.max(np.abs(vp - v)) <= 1e-3:
            v, gn = vp, gp
            break
        gn = float(np.linalg.norm(act.gradient(v)))
        if t_total >= params.max_time or thresh <= grad_tol:
            break
        thresh = max(grad_tol, thresh * 1e-2)
    end = Configuration(x.lattice, v)
    tr = np.vstack(traces) if traces else _trace(act, np.array([0.0]), v[:, None])
    st = np.vstack(states) if states else v[None, :]
    converged = gn <= grad_tol
    res = FlowResult(end, t_total, tr, converged, st)
    return res, (critical_point(pot, end) if converged else None)


def _pair_flow(pot, x, y, t, params, dense=False):
    act = periodic_action(pot, x.lattice)
    n = act.n

    def rhs(s, z):
        return -act.gradient(z.reshape(2, n)).ravel()

    kw = dict(method=params.method, rtol=params.rtol, atol=params.atol, max_step=params.max_step,
              dense_output=dense)
    sol = solve_ivp(rhs, (0.0, float(t)), np.concatenate([x.values, y.values]), **kw)
    if sol.status < 0:
        raise FlowError(sol.message)
    return sol


@dataclass
class ComparisonResult:
    verdict: bool
    margin: float
    x_t: Configuration
    y_t: Configuration


def comparison_check(pot: LocalPotential, x: Configuration, y: Configuration, t: float,
                     params: FlowParams = FlowParams()) -> ComparisonResult:
    """Strict order after time t: min_i (Psi_t y - Psi_t x)_i > 0."""
    rel = compare(x, y)
    if rel not in (LT, LL):
        raise ValueError(f"comparison_check needs x < y, got x {rel} y")
    n = x.lattice.size
    sol = _pair_flow(pot, x, y, t, params)
    xt, yt = sol.y[:n, -1], sol.y[n:, -1]
    margin = float(np.min(yt - xt))
    return ComparisonResult(margin > 0, margin, Configuration(x.lattice, xt), Configuration(x.lattice, yt))


def segment_constants(pot, lattice, Z):
    """Empirical (lambda, M, C) over a batch of configurations Z (..., n).

    lambda: min over j in B_p and unit offsets e of -d_{j,j+e} S_j,
    M: max of the unfolded diagonal sum_j d_ii S_j,
    C: max |d_ik S_j|.
    """
    act = periodic_action(pot, lattice)
    Hw = pot.window_hess(act.windows(Z))
    nn = np.flatnonzero(np.abs(pot.offsets).sum(axis=1) == 1)
    lam = float(np.min(-Hw[..., 0, nn]))
    M = float(np.max(act.unfolded_diagonal(Z)))
    C = float(np.max(np.abs(Hw)))
    return lam, M, C


@dataclass
class HarnackResult:
    lhs: float
    rhs: float
    L: float
    lam: float
    M: float
    verdict: bool


def parabolic_harnack_check(pot: LocalPotential, x: Configuration, y: Configuration, t: float, i, k,
                            params: FlowParams = FlowParams(), safety: float = 0.9,
                            grid: int = 16) -> HarnackResult:
    """(Psi_t y - Psi_t x)_i >= L (y_k - x_k) with L = safety e^{-Mt} (lam t/N)^N."""
    if t <= 0:
        raise ValueError("t must be positive")
    if compare(x, y) not in (LT, LL):
        raise ValueError("need x < y")
    if not (is_birkhoff(x) and is_birkhoff(y)):
        raise ValueError("both configurations must be Birkhoff")
    lat = x.lattice
    n = lat.size
    sol = _pair_flow(pot, x, y, t, params, dense=True)
    s = np.linspace(0.0, t, grid)
    tau = np.linspace(0.0, 1.0, grid)
    XY = sol.sol(s).T  # (grid, 2n)
    Xs, Ys = XY[:, :n], XY[:, n:]
    Z = tau[None, :, None] * Xs[:, None, :] + (1 - tau[None, :, None]) * Ys[:, None, :]
    lam, M, _ = segment_constants(pot, lat, Z.reshape(-1, n))
    N = int(np.abs(np.subtract(np.atleast_1d(i), np.atleast_1d(k))).sum())
    L = safety * math.exp(-M * t) * ((lam * t / N) ** N if N > 0 else 1.0)
    xt, yt = Configuration(lat, sol.y[:n, -1]), Configuration(lat, sol.y[n:, -1])
    lhs = yt.value_at(i) - xt.value_at(i)
    rhs = L * (y.value_at(k) - x.value_at(k))
    return HarnackResult(lhs, rhs, L, lam, M, bool(lhs >= rhs))


def elliptic_harnack_check(pot: LocalPotential, x: Configuration, y: Configuration, i, k, grid: int = 16):
    """Stationary x < y: (y_k - x_k) <= delta (y_i - x_i), delta = ((2r)^d C/(2 d lam))^N."""
    lat = x.lattice
    tau = np.linspace(0.0, 1.0, grid)
    Z = tau[:, None] * x.values + (1 - tau[:, None]) * y.values
    lam, _, C = segment_constants(pot, lat, Z)
    N = int(np.abs(np.subtract(np.atleast_1d(i), np.atleast_1d(k))).sum())
    delta = ((2 * pot.r) ** pot.d * C / (2 * pot.d * lam)) ** N
    lhs = y.value_at(k) - x.value_at(k)
    rhs = delta * (y.value_at(i) - x.value_at(i))
    return {"lhs": lhs, "rhs": rhs, "delta": delta, "verdict": bool(lhs <= rhs)}


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def lyapunov_check(pot: LocalPotential, x: Configuration, t: float, params: FlowParams = FlowParams()):
    """|W(Psi_t x) - W(x) + int_0^t |grad W|^2 ds| using the dense output."""
    if t <= 0:
        raise ValueError("t must be positive")
    act = periodic_action(pot, x.lattice)
    g0 = act.gradient(x.values)
    if not np.any(g0):
        return 0.0
    sol = _solve(act, x.values, t, params, dense=True)
    ts = sol.t
    a, b = ts[:-1], ts[1:]
    nodes = (0.5 * (b - a))[:, None] * _GL_X[None, :] + (0.5 * (a + b))[:, None]
    Y = sol.sol(nodes.ravel()).T
    G = act.gradient(Y)
    f = np.sum(G * G, axis=-1).reshape(nodes.shape)
    integral = float(np.sum(0.5 * (b - a) * (f @ _GL_W)))
    return abs(float(act.value(sol.y[:, -1]) - act.value(x.values)) + integral)


def write_trace_csv(result: FlowResult, path):
    """CSV columns t, W, grad_norm_sq, values..."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = result.endpoint.lattice.size
        w.writerow(["t", "W", "grad_norm_sq"] + [f"x{j}" for j in range(n)])
        states = result.states if result.states is not None else np.empty((0, n))
        for row, st in zip(result.trace, states):
            w.writerow([f"{v:.17g}" for v in row] + [f"{v:.17g}" for v in st])


def with_method(params: FlowParams, **kw) -> FlowParams:
    return replace(params, **kw)
