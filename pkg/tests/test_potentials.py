import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aubrykit.lattice import Configuration, PeriodLattice, linear_configuration, shift
from aubrykit.minimizers import find_critical_points, minmax_combine
from aubrykit.potentials import (CallablePotential, MorseApproximationError, MorsePerturbed, TrigSeries, action_derivatives,
                                 action_value, build_potential, is_morse, morse_approximation,
                                 parse_potential_spec, periodic_action, stationarity_defect,
                                 verify_conditions)
from aubrykit.suites import _fd_errors
from conftest import fk, lat1


def test_fk_site_values():
    f0 = fk(0.0)
    for w in (0.0, 0.5, 1 / 3):
        lat = lat1(3, -1) if w else lat1(1, 0)
        x = linear_configuration(lat, 0.0) if w == 1 / 3 else None
        if x is not None:
            assert periodic_action(f0, lat).site_values(x.values)[0] == pytest.approx(w * w / 4)
    f1 = fk(1.0)
    assert f1.window_value(np.zeros(3)) == pytest.approx(1 / (8 * math.pi**2))


def test_fk_mixed_partials():
    for d in (1, 2):
        H = fk(0.7, d).window_hess(np.random.default_rng(0).uniform(-1, 1, 2 * d + 1))
        assert np.allclose(H[0, 1:], -1 / (4 * d))


def test_conditions_fk(oracle):
    for k in (0.5, 1.0, 2.0):
        rep = verify_conditions(fk(k), sample_budget=512)
        assert rep.passed
        assert rep["D"].value == 0.25
        assert rep["E"].value <= oracle["fk_Cemp"][str(k)] + 1e-12
        assert rep["E"].value >= oracle["fk_Cemp"][str(k)] - 2e-2


def test_conditions_flipped_sign_fails():
    def S(X):
        return 0.25 * ((X[..., 1] - X[..., 0]) * (X[..., 2] - X[..., 0]))

    rep = verify_conditions(CallablePotential(S, 1, 1))
    assert not rep["D"].passed and rep["D"].witness is not None


def test_zero_potential_p2_action(oracle):
    lat = lat1(2, -1)
    W, g, H = action_derivatives(fk(0.0), Configuration(lat, [0, 0.5]))
    assert W == pytest.approx(1 / 8) and str(oracle["W_zero_p2"]) == "1/8"
    assert np.allclose(g, 0)
    assert np.allclose(H, oracle["H_zero_p2"])
    assert np.allclose(np.linalg.eigvalsh(H), [0, 2], atol=1e-12)


def test_stationarity_defect_examples(oracle):
    assert stationarity_defect(fk(0.0), linear_configuration(lat1(3, -1), 0.4)) == pytest.approx(0, abs=1e-28)
    d = stationarity_defect(fk(1.0), Configuration(lat1(1, 0), [0.25]))
    assert d == pytest.approx(oracle["fk1_defect_025"], rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for pot, lat in ((fk(1.3), lat1(3, -1)), (fk(0.4, 2), PeriodLattice([[2, 1], [0, 2]], [-1, 0]))):
        eg, eH = _fd_errors(pot, lat, rng.uniform(-1, 1, lat.size))
        assert eg < 1e-6 and eH < 1e-6


def test_morse_perturbed_derivatives():
    lat = lat1(3, -1)
    pot = morse_approximation(fk(0.0), lat, 5, eps=1e-2, verify=False)
    eg, eH = _fd_errors(pot, lat, np.random.default_rng(1).uniform(-1, 1, 3))
    assert eg < 1e-6 and eH < 1e-6


@settings(max_examples=30)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.integers(-3, 3), st.integers(-3, 3))
def test_action_shift_invariance(vals, k, l):
    x = Configuration(lat1(3, -1), vals)
    f = fk(0.8)
    assert action_value(f, shift(x, k, l)) == pytest.approx(action_value(f, x), abs=1e-12)


def test_refinement_scaling():
    rng = np.random.default_rng(2)
    lat = lat1(2, -1)
    f = fk(1.0)
    for n in (2, 3):
        latn = lat.refine(n)
        for _ in range(3):
            x = Configuration(lat, rng.uniform(-1, 1, 2))
            xn = Configuration(latn, x.values_at(latn.domain))
            assert action_value(f, xn) == pytest.approx(n * action_value(f, x), rel=1e-12)


@settings(max_examples=40)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_minmax_inequality(v):
    lat = lat1(3, -1)
    x, y = Configuration(lat, v[:3]), Configuration(lat, v[3:])
    _, _, rep = minmax_combine(x, y, fk(1.5))
    assert rep >= -1e-12


@settings(max_examples=20)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_hessian_sign_pattern(v):
    H = periodic_action(fk(1.0), lat1(3, -1)).hessian(np.array(v))
    off = H - np.diag(np.diag(H))
    assert np.all(off <= 1e-15)
    assert np.allclose(H, H.T)


def test_arctan_mixed_derivative_bound():
    lat = lat1(3, -1)
    n = 7.0
    pot = morse_approximation(fk(0.0), lat, n, eps=1e-9, verify=False)
    X = np.random.default_rng(3).uniform(-1, 1, (50, pot.width))
    H = pot.window_hess(X)
    offs = [int(o[0]) for o in pot.offsets]
    for i in range(len(offs)):
        for k in range(i + 1, len(offs)):
            if offs[i] not in (0, 1, 2) or offs[k] not in (0, 1, 2):
                continue
            u = X[:, k] - X[:, i]
            fk_part = -0.25 if {offs[i], offs[k]} == {0, 1} else 0.0
            assert np.all(H[:, i, k] - fk_part <= -(2 / n) / (1 + u**2) ** 2 + 1e-12)


def test_morse_approximation_converges_to_base():
    lat = lat1(2, -1)
    X = np.random.default_rng(4).uniform(-1, 1, (20, 5))
    prev = math.inf
    for n, eps in ((10, 1e-2), (100, 1e-3), (1000, 1e-4)):
        pot = morse_approximation(fk(1.0), lat, n, eps=eps, verify=False)
        Xw = np.zeros((20, pot.width))
        Xw[:, :3] = X[:, :3]
        idx = {tuple(o): j for j, o in enumerate(pot.offsets)}
        for j, o in enumerate(pot.offsets):
            Xw[:, j] = X[:, (o[0] + 1) % 5]
        g = pot.window_grad(Xw)
        gb = fk(1.0).window_grad(Xw[:, [idx[(0,)], idx[(-1,)], idx[(1,)]]])
        err = np.max(np.abs(g[:, [idx[(0,)], idx[(-1,)], idx[(1,)]]] - gb))
        assert err < prev
        prev = err
    assert prev < 1e-2


def test_is_morse_examples():
    lat = lat1(2, -1)
    f0 = fk(0.0)
    assert not is_morse(f0, lat, [Configuration(lat, [0, 0.5])])
    lat_s = lat1(1, 0)
    f1 = fk(1.0)
    assert is_morse(f1, lat_s, [Configuration(lat_s, [0.0]), Configuration(lat_s, [0.5])])
    with pytest.raises(ValueError):
        is_morse(f1, lat_s, [])
    with pytest.raises(ValueError):
        is_morse(f1, lat_s, [Configuration(lat_s, [0.25])])


def test_morse_approximation_zero_potential():
    lat = lat1(2, -1)
    pot = morse_approximation(fk(0.0), lat, 100, eps=1e-3, seed=0)
    crit = find_critical_points(pot, lat)
    assert crit and is_morse(pot, lat, crit)
    assert min(np.min(np.abs(c.eigenvalues)) for c in crit) > 1e-8
    assert verify_conditions(pot).passed


def test_morse_approximation_retry_budget():
    lat = lat1(2, -1)
    with pytest.raises(MorseApproximationError) as info:
        morse_approximation(fk(0.0), lat, 100, eps=1e-30, retries=1)
    assert info.value.eigenvalue is not None


def test_potential_spec_parsing():
    spec = parse_potential_spec('kind = "frenkel_kontorova"\nV = [[1, 0.01, 0.0]]\n')
    pot = build_potential(spec)
    assert pot.V(0.0) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        parse_potential_spec({"kind": "frenkel_kontorova", "colour": 1})
    with pytest.raises(ValueError):
        parse_potential_spec({"kind": "frenkel_kontorova", "morse": {"n": 10, "bogus": 1}})
    spec = parse_potential_spec({"V": [], "morse": {"n": 100, "epsilon": 1e-3, "seed": 0}})
    pot = build_potential(spec, lat1(2, -1))
    assert isinstance(pot, MorsePerturbed) and pot.params["morse"]["n"] == 100


def test_trig_series_oscillation():
    assert TrigSeries.standard(10 * math.pi**2).oscillation() == pytest.approx(2.5, rel=1e-12)
    assert TrigSeries.standard(0.0).oscillation() == 0.0
    V = TrigSeries([(1, 0.3, 0.0), (2, 0.0, 0.2)])
    xs = np.linspace(0, 1, 200001)
    assert V.oscillation() == pytest.approx(np.ptp(V(xs)), abs=1e-9)
