import json
import math

import numpy as np
import pytest

from aubrykit.flow import FlowParams, flow, parabolic_harnack_check, segment_constants
from aubrykit.ghost import (GhostCircle, NotMorseError, assemble_ghost_circle, export_t_map_csv,
                            ghost_circle_limit, heteroclinics_from_saddle, index0_skeleton,
                            mountain_pass_saddle, t_map, unstable_direction)
from aubrykit.lattice import LL, Configuration, compare, shift
from aubrykit.minimizers import critical_point, find_critical_points
from aubrykit.potentials import TrigSeries, fk_potential, morse_approximation, stationarity_defect
from conftest import fk, lat1


@pytest.fixture(scope="module")
def scalar_circle():
    return assemble_ghost_circle(fk(1.0), lat1(1, 0))


@pytest.fixture(scope="module")
def p2_circle():
    return assemble_ghost_circle(fk(1.0), lat1(2, -1))


@pytest.fixture(scope="module")
def p3_circle():
    return assemble_ghost_circle(fk(0.5), lat1(3, -2))


def test_scalar_skeleton():
    lat = lat1(1, 0)
    sk = index0_skeleton(find_critical_points(fk(1.0), lat), lat)
    assert [round(c.x0, 10) for c in sk] == [0.5]


def test_p2_skeleton_ordered():
    lat = lat1(2, -1)
    sk = index0_skeleton(find_critical_points(fk(1.0), lat), lat)
    assert len(sk) == 2
    ring = [c.config for c in sk] + [sk[0].config + 1]
    assert all(compare(a, b) == LL for a, b in zip(ring, ring[1:]))


def test_skeleton_rejects_degenerate():
    lat = lat1(2, -1)
    with pytest.raises(NotMorseError):
        index0_skeleton(find_critical_points(fk(0.0), lat), lat)


def test_scalar_mountain_pass():
    lat = lat1(1, 0)
    f = fk(1.0)
    lo, hi = critical_point(f, Configuration(lat, [0.5])), critical_point(f, Configuration(lat, [1.5]))
    z = mountain_pass_saddle(f, lo, hi)
    assert z.x0 == pytest.approx(1.0, abs=1e-10)
    assert z.index == 1 and z.eigenvalues[0] == pytest.approx(-0.5)


def test_symmetric_double_well_saddle():
    f = fk_potential(TrigSeries([(2, 0.02, 0.0)]))
    lat = lat1(1, 0)
    lo, hi = critical_point(f, Configuration(lat, [0.25])), critical_point(f, Configuration(lat, [0.75]))
    assert mountain_pass_saddle(f, lo, hi).x0 == pytest.approx(0.5, abs=1e-10)


def test_mountain_pass_level_morse_zero_potential():
    lat = lat1(2, -1)
    pot = morse_approximation(fk(0.0), lat, 100, eps=1e-3)
    sk = index0_skeleton(find_critical_points(pot, lat), lat)
    lo, hi = sk[0], sk[1]
    z = mountain_pass_saddle(pot, lo, hi)
    assert z.W > max(lo.W, hi.W)
    lam, e = unstable_direction(z)
    assert lam > 0 and np.all(e > 0) and np.max(e) == 1.0


def test_scalar_heteroclinics():
    lat = lat1(1, 0)
    f = fk(1.0)
    z = critical_point(f, Configuration(lat, [1.0]))
    down, up = heteroclinics_from_saddle(f, z)
    assert down.target.x0 == pytest.approx(0.5, abs=1e-8)
    assert up.target.x0 == pytest.approx(1.5, abs=1e-8)
    assert np.all(np.diff(down.states[:, 0]) < 0) and np.all(np.diff(up.states[:, 0]) > 0)
    assert np.array_equal(down.e_max, [1.0])


def test_heteroclinic_samples_strictly_ordered(p3_circle):
    for h in p3_circle.heteroclinics:
        steps = np.diff(h.states, axis=0) * h.direction
        assert np.all(steps > 0)
        assert np.allclose(h.states[0], h.saddle.config.values + h.direction * h.eps * h.e_max)


def test_scalar_circle_is_constant_family(scalar_circle):
    for xi in np.linspace(0, 2, 41):
        assert np.allclose(scalar_circle.evaluate(xi).values, [xi], atol=1e-12)
    xs = [c.x0 for c in scalar_circle.skeleton]
    assert xs == pytest.approx([0.5, 1.0])


def test_projection_bijective(p2_circle):
    grid = np.linspace(0, 2, 101)[:-1]
    x0 = [p2_circle.evaluate(x).x0 for x in grid]
    assert np.allclose(x0, grid, atol=1e-12)


def test_strict_ordering(p2_circle, p3_circle):
    rng = np.random.default_rng(0)
    for circ in (p2_circle, p3_circle):
        xs = np.sort(rng.uniform(0, 2, 40))
        cfgs = [circ.evaluate(x) for x in xs]
        for a, b in zip(cfgs, cfgs[1:]):
            assert compare(a, b, eta=0.0) == LL


def test_shift_closure(p2_circle, p3_circle):
    rng = np.random.default_rng(1)
    for circ in (p2_circle, p3_circle):
        for xi in rng.uniform(0, 1, 6):
            x = circ.evaluate(xi)
            for c in circ.lattice.shift_classes:
                y = shift(x, c.k, c.l)
                assert np.max(np.abs(circ.evaluate(y.x0).values - y.values)) < 1e-6


def test_flow_closure(p2_circle, p3_circle):
    rng = np.random.default_rng(2)
    for circ in (p2_circle, p3_circle):
        for xi in rng.uniform(0, 1, 5):
            x = circ.evaluate(xi)
            for t in (0.1, 0.5, 1.0):
                y = flow(circ.potential, x, t, FlowParams(rtol=1e-11, atol=1e-12)).endpoint
                assert np.max(np.abs(circ.evaluate(y.x0).values - y.values)) < 1e-6


def test_contains_stationary_point(p3_circle):
    f = p3_circle.potential
    assert min(stationarity_defect(f, c.config) for c in p3_circle.skeleton) <= 1e-16
    assert p3_circle.info["global_minimizer_distance"] < 1e-6


def test_saddle_eigenstructure(p3_circle):
    for c in p3_circle.skeleton[1::2]:
        assert c.index == 1 and np.sum(c.eigenvalues < 0) == 1
        _, e = unstable_direction(c)
        assert np.all(e > 0)
    for lo, z, hi in zip(p3_circle.skeleton[0::2], p3_circle.skeleton[1::2], p3_circle.skeleton[2::2]):
        assert z.W > max(lo.W, hi.W)


def test_t_map_fixed_points_and_monotone(p3_circle):
    for c in p3_circle.skeleton:
        assert t_map(p3_circle, c.x0) == pytest.approx(c.x0, abs=1e-14)
    grid = np.linspace(0, 2, 201)
    T = np.array([p3_circle.t_map(x) for x in grid])
    assert np.all(np.diff(T) >= -1e-12)


def test_t_map_consistent_with_forward_flow(p3_circle):
    for xi in np.linspace(0.05, 0.95, 7):
        back = p3_circle.t_map(xi)
        y = p3_circle.evaluate(back)
        fwd = flow(p3_circle.potential, y, 1.0, FlowParams(rtol=1e-11, atol=1e-12)).endpoint
        assert fwd.x0 == pytest.approx(xi, abs=1e-6)


def test_t_map_lipschitz_bound(p3_circle):
    f = p3_circle.potential
    lat = p3_circle.lattice
    grid = np.linspace(0, 1, 101)
    Z = np.array([p3_circle.evaluate(x).values for x in grid])
    _, M, _ = segment_constants(f, lat, Z)
    Lam = 1 / (0.9 * math.exp(-M * 1.0))
    T = np.array([p3_circle.t_map(x) for x in grid])
    q = np.abs(np.diff(T)) / np.diff(grid)
    assert np.max(q) <= Lam
    x, y = p3_circle.evaluate(0.2), p3_circle.evaluate(0.3)
    h = parabolic_harnack_check(f, x, y, 1.0, (0,), (0,))
    assert h.verdict


def test_json_round_trip(p2_circle, tmp_path):
    obj = json.loads(json.dumps(p2_circle.to_dict()))
    back = GhostCircle.from_dict(obj, p2_circle.potential)
    for xi in (0.1, 0.33, 0.5, 0.9):
        assert np.allclose(back.evaluate(xi).values, p2_circle.evaluate(xi).values, atol=1e-14)
        assert back.t_map(xi) == pytest.approx(p2_circle.t_map(xi), abs=1e-14)
    export_t_map_csv(p2_circle, np.linspace(0, 1, 5), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("xi,T\n")


def test_assemble_requires_morse():
    with pytest.raises(NotMorseError):
        assemble_ghost_circle(fk(0.0), lat1(2, -1))


def test_limit_constant_sequence():
    lat = lat1(2, -1)
    rep, samples = ghost_circle_limit(fk(1.0), 0.5, [lat, lat], np.linspace(0, 1, 9))
    assert all(d is not None and d < 1e-12 for d in rep["deltas"])
    assert samples["T"] is not None


def test_limit_zero_potential_small_deltas():
    lats = [lat1(1, -1), lat1(2, -1)]
    rep, _ = ghost_circle_limit(fk(0.0), 0.6, lats, np.linspace(0, 1, 9), morse_eps=1e-3)
    assert all(s["status"] == "ok" for s in rep["stages"])
    assert all("morse_perturbation" in s for s in rep["stages"])
    assert rep["deltas"][0] < 1e-2
    assert "never" not in rep["statement"]
