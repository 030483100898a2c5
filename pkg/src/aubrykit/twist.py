"""Standard map and its correspondence with stationary 1-d configurations.

Generating function S(x, X) = (x - X)^2 / 2 + 2 V(x); the lift is
X = x + y + 2 V'(x), Y = y + 2 V'(x).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration
from .potentials import TrigSeries

FK_THRESHOLD = 8 * math.pi**2
PERCIVAL_BOUND = "63/64"


def standard_map_step(V: TrigSeries, x, y):
    kick = 2 * V.d1(x)
    return x + y + kick, y + kick


def iterate(V: TrigSeries, x, y, steps: int):
    xs, ys = np.empty(steps + 1), np.empty(steps + 1)
    xs[0], ys[0] = x, y
    for n in range(steps):
        x, y = standard_map_step(V, x, y)
        xs[n + 1], ys[n + 1] = x, y
    return xs, ys


def jacobian(V: TrigSeries, x: float, y: float, h: float = 1e-20):
    """Jacobian of one step by complex-step differentiation."""
    J = np.empty((2, 2))
    for col, (dx, dy) in enumerate(((1j * h, 0), (0, 1j * h))):
        X, Y = standard_map_step(V, x + dx, y + dy)
        J[:, col] = [np.imag(X) / h, np.imag(Y) / h]
    return J


@dataclass
class TwistOrbit:
    points: np.ndarray  # (m, 2) lifted (x, y)
    V: TrigSeries
    residuals: np.ndarray

    @property
    def max_residual(self):
        return float(self.residuals.max()) if len(self.residuals) else 0.0


def _sequence(config, extra: int = 1):
    if isinstance(config, Configuration):
        if config.lattice.d != 1:
            raise ValueError("twist-map correspondence needs d = 1")
        n = config.lattice.size
        return np.array([config.value_at(i) for i in range(n + 1 + extra)])
    return np.asarray(config, dtype=float)


def orbit_from_configuration(config, V: TrigSeries) -> TwistOrbit:
    """y_i = (x_{i+1} - x_i) - 2 V'(x_i); residual of each lifted step."""
    xs = _sequence(config)
    ys = np.diff(xs) - 2 * V.d1(xs[:-1])
    pts = np.column_stack([xs[:-1], ys])
    X, Y = standard_map_step(V, pts[:-1, 0], pts[:-1, 1])
    res = np.maximum(np.abs(X - pts[1:, 0]), np.abs(Y - pts[1:, 1]))
    return TwistOrbit(pts, V, res)


def stationarity_residual_1d(xs, V: TrigSeries) -> float:
    """max_i |(x_i - x_{i-1}) - (x_{i+1} - x_i) + 2 V'(x_i)| over interior i."""
    xs = _sequence(xs)
    mid = xs[1:-1]
    r = (mid - xs[:-2]) - (xs[2:] - mid) + 2 * V.d1(mid)
    return float(np.max(np.abs(r))) if len(r) else 0.0


def invariant_curve_verdict(V: TrigSeries, d: int = 1):
    """Non-existence of rotational invariant curves when osc V > 2."""
    osc = V.oscillation()
    fires = osc > 2 * d
    return {
        "oscillation": osc,
        "threshold": 2 * d,
        "verdict": "no rotational invariant curves" if fires else "criterion silent",
        "no_invariant_curves": bool(fires),
        "standard_form_threshold": "k > 8*pi^2",
        "standard_form_threshold_value": FK_THRESHOLD,
        "literature_bound": PERCIVAL_BOUND,
        "literature_bound_note": "computer-assisted bound k > 63/64 (reported, not asserted)",
    }


def write_orbit_csv(xs, ys, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "x_lift", "x_mod1", "y"])
        for i, (x, y) in enumerate(zip(xs, ys)):
            w.writerow([i, f"{x:.17g}", f"{x % 1.0:.17g}", f"{y:.17g}"])
