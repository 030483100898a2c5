import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aubrykit.aubry_mather import (AubryViolation, Gap, GapSolutionError, consecutive_pairs, detect_gaps,
                                   gap_report, gap_solution, gap_summability_check, h_omega_representatives,
                                   orbit_closure, oscillation_gap_criterion, renormalized_action)
from aubrykit.flow import FlowParams, flow
from aubrykit.ghost import FamilyCircle, assemble_ghost_circle
from aubrykit.lattice import LL, Configuration, compare, is_birkhoff, linear_configuration
from aubrykit.minimizers import critical_point, minimize_action, verify_global_minimizer
from aubrykit.potentials import TrigSeries, morse_approximation
from conftest import fk, lat1


@pytest.fixture(scope="module")
def scalar():
    f, lat = fk(1.0), lat1(1, 0)
    M = orbit_closure(minimize_action(f, lat), lat, f)
    return f, lat, M, detect_gaps(M)


@pytest.fixture(scope="module")
def p2():
    f, lat = fk(1.0), lat1(2, -1)
    M = orbit_closure(minimize_action(f, lat), lat, f)
    return f, lat, M, detect_gaps(M), assemble_ghost_circle(f, lat)


def test_scalar_closure_single_element(scalar):
    _, _, M, _ = scalar
    assert len(M) == 1 and M.elements[0].values == pytest.approx([0.5])


def test_p2_closure_levels(p2):
    _, _, M, _, _ = p2
    assert [str(v) for v in M.levels] == ["0", "1/2"]
    assert compare(M.elements[0], M.elements[1]) == LL


def test_zero_potential_closure_is_linear():
    f, lat = fk(0.0), lat1(2, -1)
    M = orbit_closure(critical_point(f, linear_configuration(lat, 0.0)), lat, f)
    assert len(M) == 2
    for y in M.elements:
        assert np.allclose(y.values, linear_configuration(lat, y.x0).values, atol=1e-14)
    assert sorted(e.x0 % 1 for e in M.elements) == pytest.approx([0.0, 0.5])


def test_crossing_translates_rejected():
    lat = lat1(2, -1)
    bad = critical_point(fk(1.0), Configuration(lat, [0.0, 1.2]))
    with pytest.raises(AubryViolation):
        orbit_closure(bad, lat)


def test_elements_ordered_and_birkhoff(p2):
    f, _, M, _, _ = p2
    ring = M.elements + [M.elements[0] + 1]
    assert all(compare(a, b) == LL for a, b in zip(ring, ring[1:]))
    assert all(is_birkhoff(e) for e in M.elements)
    assert verify_global_minimizer(f, critical_point(f, M.elements[1])).verdict


def test_scalar_gap(scalar):
    _, _, _, gaps = scalar
    assert len(gaps) == 1
    g = gaps[0]
    assert g.y_minus.values == pytest.approx([0.5]) and g.y_plus.values == pytest.approx([1.5])
    assert g.width == pytest.approx(1.0)


def test_p2_gaps(p2):
    _, _, M, gaps, _ = p2
    assert len(gaps) == 2 and all(g.width > 0.4 for g in gaps)
    for g in gaps:
        s, ok = gap_summability_check(g)
        assert ok and s == pytest.approx(1.0, abs=1e-8)


def test_zero_potential_has_no_gaps():
    f, lat = fk(0.0), lat1(2, -1)
    M = orbit_closure(critical_point(f, linear_configuration(lat, 0.0)), lat, f)
    assert detect_gaps(M) == []
    assert len(detect_gaps(M, probe=False)) == 2


def test_h_omega_representatives():
    assert list(h_omega_representatives(lat1(1, 0))) == [0]
    assert list(h_omega_representatives(lat1(2, -1))) == [0, 1]
    assert len(h_omega_representatives(lat1(4, -2))) == 2


def test_summability_examples(scalar):
    _, lat, _, gaps = scalar
    assert gap_summability_check(gaps[0]) == (pytest.approx(1.0), True)
    y = Configuration(lat1(2, -1), [0.2, 0.7])
    assert gap_summability_check(Gap(y, y)) == (0.0, True)


def test_renormalized_action_scalar(scalar, oracle):
    f, lat, _, gaps = scalar
    g = gaps[0]
    assert renormalized_action(f, g, g.y_minus) == 0.0
    assert renormalized_action(f, g, g.y_plus) == pytest.approx(0.0, abs=1e-15)
    assert renormalized_action(f, g, Configuration(lat, [1.0])) == pytest.approx(oracle["fk1_gap_W"], rel=1e-12)
    assert oracle["fk1_gap_W"] == pytest.approx(1 / (4 * math.pi**2))
    with pytest.raises(ValueError):
        renormalized_action(f, g, Configuration(lat, [1.7]))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 1.5))
def test_renormalized_action_nonnegative_scalar(c):
    f, lat = fk(1.0), lat1(1, 0)
    g = Gap(Configuration(lat, [0.5]), Configuration(lat, [1.5]))
    assert renormalized_action(f, g, Configuration(lat, [c])) >= -1e-15


def test_renormalized_action_nonnegative_on_circle(p2):
    f, _, _, gaps, circle = p2
    for g in gaps:
        for xi in np.linspace(g.y_minus.x0, g.y_plus.x0, 33):
            assert renormalized_action(f, g, circle.evaluate(xi), tol=1e-7) >= -1e-12


def test_lyapunov_along_segment(p2):
    f, _, _, gaps, circle = p2
    g = gaps[0]
    for xi in np.linspace(g.y_minus.x0, g.y_plus.x0, 7)[1:-1]:
        y = circle.evaluate(xi)
        vals = [renormalized_action(f, g, y)]
        for t in (0.5, 1.0, 2.0, 4.0):
            yt = flow(f, y, t, FlowParams(rtol=1e-11, atol=1e-12)).endpoint
            vals.append(renormalized_action(f, g, yt, tol=1e-7))
        assert all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))


def test_scalar_gap_solution(scalar):
    f, lat, _, gaps = scalar
    circle = assemble_ghost_circle(f, lat)
    sol = gap_solution(f, circle, gaps[0])
    assert sol.kind == "non-minimizing"
    assert sol.point.x0 == pytest.approx(1.0, abs=1e-10)
    assert sol.W_gap == pytest.approx(1 / (4 * math.pi**2), rel=1e-10)
    assert sol.max_defect <= 1e-16 and sol.samples >= 64


def test_p2_gap_solution(p2):
    f, _, _, gaps, circle = p2
    for g in gaps:
        sol = gap_solution(f, circle, g)
        assert sol.kind == "non-minimizing" and sol.W_gap > 1e-8 and sol.point.index == 1
        assert sol.max_defect <= 1e-16
        assert not verify_global_minimizer(f, sol.point).verdict
        assert np.all(sol.point.config.values > g.y_minus.values)
        assert np.all(sol.point.config.values < g.y_plus.values)
        rep = json.loads(json.dumps(gap_report(g, f, sol)))
        assert rep["solution"]["index"] == 1 and rep["l1_sum"] == pytest.approx(1.0, abs=1e-8)


def test_zero_potential_foliated():
    f, lat = fk(0.0), lat1(2, -1)
    M = orbit_closure(critical_point(f, linear_configuration(lat, 0.0)), lat, f)
    sol = gap_solution(f, FamilyCircle(f, lat), consecutive_pairs(M)[0])
    assert sol.kind == "foliated" and sol.point is None and sol.max_defect <= 1e-16
    assert "foliation_verdict" in gap_report(consecutive_pairs(M)[0], f, sol)


def test_gap_endpoints_must_lie_on_circle(p2):
    f, _, _, gaps, circle = p2
    g = gaps[0]
    off = Gap(g.y_minus.with_values(g.y_minus.values + [0.0, -0.01]), g.y_plus)
    with pytest.raises(GapSolutionError):
        gap_solution(f, circle, off)


def test_oscillation_criterion_fires():
    V = TrigSeries.standard(10 * math.pi**2)
    for p, q in ((1, 0), (2, -1)):
        rep = oscillation_gap_criterion(fk(0.0), V, lat1(p, q))
        assert rep["oscillation"] == pytest.approx(2.5) and rep["bound"] == 2.0
        assert rep["gaps_forced"] and rep["gaps_detected"] > 0 and rep["max_width"] > 1e-3
        assert rep["standard_form_threshold"] == "k > 8*pi^2"


def test_oscillation_criterion_silent_for_zero():
    rep = oscillation_gap_criterion(fk(0.0), TrigSeries.standard(0.0), lat1(2, -1))
    assert not rep["gaps_forced"] and rep["verdict"] == "criterion silent"
    assert rep["foliation_verdict"] == "foliated"


def test_oscillation_criterion_general_base():
    base = morse_approximation(fk(0.0), lat1(2, -1), 10, eps=1e-2)
    rep = oscillation_gap_criterion(base, TrigSeries.standard(1.0), lat1(2, -1), samples=32)
    assert rep["bound_kind"].startswith("sampled") and rep["bound"] > 0
    assert rep["gaps_forced"] == (rep["oscillation"] > rep["bound"])
