import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aubrykit.flow import (FlowParams, comparison_check, elliptic_harnack_check, flow, flow_to_equilibrium,
                           lyapunov_check, parabolic_harnack_check, write_trace_csv)
from aubrykit.lattice import LL, Configuration, compare, is_birkhoff, linear_configuration, shift
from aubrykit.minimizers import minimize_action
from aubrykit.suites import ordered_pairs
from conftest import fk, lat1


def test_params_validation():
    with pytest.raises(ValueError):
        FlowParams(rtol=0)


def test_linear_stationary_under_zero_potential():
    x = linear_configuration(lat1(3, -1), 0.2)
    assert np.allclose(flow(fk(0.0), x, 7.0).endpoint.values, x.values, atol=1e-12)


def test_scalar_flow_closed_form(oracle):
    x = Configuration(lat1(1, 0), [0.25])
    assert flow(fk(1.0), x, 5.0).endpoint.x0 == pytest.approx(oracle["fk1_flow_025_t5"], abs=1e-7)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        flow(fk(1.0), Configuration(lat1(1, 0), [0.25]), -1.0)


def test_equivariance():
    lat = lat1(3, -1)
    rng = np.random.default_rng(0)
    f = fk(0.8)
    x = Configuration(lat, rng.uniform(-0.5, 0.5, 3))
    fx = flow(f, x, 2.0, FlowParams(rtol=1e-11, atol=1e-12)).endpoint
    for c in lat.shift_classes:
        lhs = flow(f, shift(x, c.k, c.l), 2.0, FlowParams(rtol=1e-11, atol=1e-12)).endpoint
        assert np.max(np.abs(lhs.values - shift(fx, c.k, c.l).values)) < 1e-8


def test_flow_to_equilibrium_examples():
    f = fk(1.0)
    lat = lat1(1, 0)
    res, cp = flow_to_equilibrium(f, Configuration(lat, [0.25]))
    assert res.converged and cp.x0 == pytest.approx(0.5, abs=1e-10) and cp.index == 0
    res, cp = flow_to_equilibrium(f, Configuration(lat, [0.0]))
    assert res.converged and cp.x0 == 0.0 and res.t == 0.0
    lat2 = lat1(2, -1)
    res, cp = flow_to_equilibrium(fk(0.0), Configuration(lat2, [0.1, 0.9]))
    assert res.converged and cp.grad_norm <= 1e-10
    assert cp.config.values[1] - cp.config.values[0] == pytest.approx(0.5, abs=1e-9)


def test_action_trace_nonincreasing():
    rng = np.random.default_rng(1)
    res = flow(fk(1.0), Configuration(lat1(3, -1), rng.uniform(-1, 1, 3)), 10.0)
    assert np.all(np.diff(res.trace[:, 1]) <= 1e-12)


def test_comparison_examples():
    lat = lat1(2, -1)
    x = Configuration(lat, [0.1, 0.7])
    r = comparison_check(fk(0.0), x, x + 1, 3.0)
    assert r.margin == pytest.approx(1.0, abs=1e-9)
    y = Configuration(lat, [0.1, 0.8])
    r = comparison_check(fk(0.5), x, y, 0.5)
    assert r.verdict and compare(r.x_t, r.y_t) == LL
    with pytest.raises(ValueError):
        comparison_check(fk(0.5), x, x, 1.0)


def test_comparison_property_suite():
    f = fk(0.5)
    for x, y in ordered_pairs(lat1(2, -1), 30, seed=11):
        for t in (0.1, 1.0, 5.0):
            assert comparison_check(f, x, y, t).margin > 0


def test_order_interval_forward_invariant():
    f = fk(1.0)
    lat = lat1(1, 0)
    lo, hi = Configuration(lat, [0.5]), Configuration(lat, [1.5])
    for s in (0.6, 1.2, 1.45):
        res, _ = flow_to_equilibrium(f, Configuration(lat, [s]))
        assert 0.5 - 1e-9 <= res.endpoint.x0 <= 1.5 + 1e-9
        assert np.all(res.states[:, 0] >= lo.x0 - 1e-9) and np.all(res.states[:, 0] <= hi.x0 + 1e-9)


def test_parabolic_harnack():
    f = fk(0.5)
    lat = lat1(2, -1)
    for x, y in ordered_pairs(lat, 10, seed=12, birkhoff=True):
        h = parabolic_harnack_check(f, x, y, 1.0, (0,), (1,))
        assert h.verdict and h.lam == pytest.approx(0.25)
        h0 = parabolic_harnack_check(f, x, y, 1.0, (1,), (1,))
        assert h0.verdict
    with pytest.raises(ValueError):
        parabolic_harnack_check(f, x, x, 1.0, (0,), (0,))
    with pytest.raises(ValueError):
        bad = Configuration(lat, [0.0, 10.0])
        parabolic_harnack_check(f, bad, bad + 1, 1.0, (0,), (0,))


def test_elliptic_harnack_on_translates():
    f = fk(1.0)
    lat = lat1(3, -1)
    gm = minimize_action(f, lat)
    x = gm.config
    y = shift(x, 1, 0)
    assert is_birkhoff(x)
    for i, k in (((0,), (1,)), ((0,), (2,)), ((1,), (0,))):
        assert elliptic_harnack_check(f, x, y, i, k)["verdict"]


def test_lyapunov_examples():
    f = fk(1.0)
    lat = lat1(1, 0)
    assert lyapunov_check(f, Configuration(lat, [0.5]), 1.0) <= 1e-30
    assert lyapunov_check(fk(0.0), linear_configuration(lat1(2, -1), 0.3), 1.0) <= 1e-30
    assert lyapunov_check(f, Configuration(lat, [0.25]), 3.0) <= 1e-6


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_energy_identity_property(seed):
    rng = np.random.default_rng(seed)
    x = Configuration(lat1(3, -1), rng.uniform(-1, 1, 3))
    assert lyapunov_check(fk(0.5), x, float(rng.uniform(0.5, 5))) <= 1e-6


def test_trace_csv(tmp_path):
    res = flow(fk(1.0), Configuration(lat1(2, -1), [0.1, 0.7]), 1.0)
    path = tmp_path / "trace.csv"
    write_trace_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,W,grad_norm_sq,x0,x1" and len(lines) == len(res.trace) + 1
