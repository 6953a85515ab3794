import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdslab import compose_backward, get_system
from rdslab.errors import ConeViolation, HypothesisFailure, StepFailure
from rdslab.manifolds import (SwitchBudget, TransformSchedule, UGraph, build_u_stack, containment_residual,
                              euclid_lip, expansion_ratio, graph_difference_prime,
                              graph_transform_step, inclusion_residual, iterate_slanted_transform,
                              line_distance, local_unstable_manifold, prime_norm, sup_distance,
                              switch_axes)
from rdslab.tangent import ConnectingMap, LinearMap, build_chart_frame, euclidean_frame, orbit_frames

slopes = st.floats(-0.05, 0.05).filter(lambda x: x == 0 or abs(x) > 1e-9)
FRAME = euclidean_frame([0.5, 0.5], [1.0, 0.0], [0.0, 1.0], 1.0)


def test_ugraph_basics():
    g = UGraph.line(FRAME, 0.5, slope=0.05)
    assert g.lip == pytest.approx(0.05)
    assert g.slope_at_origin() == 0.05
    assert g.dlip == pytest.approx(0.0, abs=1e-12)
    r = g.restrict(0.25)
    assert r.radius == 0.25 and r(0.1) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        g.restrict(1.0)
    with pytest.raises(ValueError):
        UGraph(FRAME, 0.1, np.linspace(-0.1, 0.1, 5), np.zeros(5))
    np.testing.assert_allclose(g.torus_points()[64], [0.5, 0.5])


def test_prime_norm():
    u = np.linspace(-1, 1, 21)
    assert prime_norm(u, 3 * u) == pytest.approx(3.0)
    assert prime_norm(u, u ** 2) == pytest.approx(1.0)


@given(mu=st.floats(0.2, 2.0), sigma=st.floats(-0.1, 2.0), a=slopes,
       b=slopes)
def test_linear_contraction_closed_form(mu, sigma, a, b):
    M = LinearMap(np.diag([math.exp(mu), math.exp(-sigma)]))
    g1 = UGraph.line(FRAME, 0.5, slope=a)
    g2 = UGraph.from_function(FRAME, 0.5, lambda u: b * u + 0.01 * np.sin(3 * u) * u)
    t1 = graph_transform_step(FRAME, FRAME, M, g1, dst_radius=0.5)
    t2 = graph_transform_step(FRAME, FRAME, M, g2, dst_radius=0.5)
    c = graph_difference_prime(t1, t2) / graph_difference_prime(g1, g2)
    assert c <= math.exp(-sigma - mu) * (1 + 1e-9)


def test_linear_contraction_exact_for_lines():
    mu, sigma = 0.7, 0.3
    M = LinearMap(np.diag([math.exp(mu), math.exp(-sigma)]))
    g1, g2 = UGraph.line(FRAME, 0.5, 0.02), UGraph.line(FRAME, 0.5, -0.03)
    t1 = graph_transform_step(FRAME, FRAME, M, g1, dst_radius=0.5)
    t2 = graph_transform_step(FRAME, FRAME, M, g2, dst_radius=0.5)
    c = graph_difference_prime(t1, t2) / graph_difference_prime(g1, g2)
    assert abs(c - math.exp(-sigma - mu)) < 1e-10
    assert inclusion_residual(g1, M, t1) < 1e-15
    assert expansion_ratio(g1, M) >= math.exp(mu) - 1e-12


def test_cone_violation_is_raised():
    M = LinearMap(np.array([[1.2, 0.0], [0.0, 3.0]]))
    with pytest.raises(ConeViolation):
        graph_transform_step(FRAME, FRAME, M, UGraph.line(FRAME, 0.5, 0.09), dst_radius=0.5)


def test_graph_distances():
    g1, g2 = UGraph.line(FRAME, 0.5, 0.0), UGraph.line(FRAME, 0.3, 0.0, offset=0.01)
    assert sup_distance(g1, g2) == pytest.approx(0.01)


def test_schedule_from_constants():
    s = TransformSchedule.from_constants(0.5, 0.9, 0.1, 0.1)
    assert 0.5 * math.exp(-s.m0 * 0.9 / 2) < 0.1
    assert s.slope_bound(0) == 0.5 and s.slope_bound(100) == 0.1
    assert TransformSchedule.from_constants(0.05, 0.9, 0.1, 0.1).m0 == 0
    with pytest.raises(ValueError):
        TransformSchedule(K0=0.5, m0=0, m1=0, r0=0.1, r1_bar=0.1, lam=0.9)


def test_slanted_transform_reduces_slope(path, sys_c, params_c):
    sch = TransformSchedule.from_constants(0.5, params_c.lam, params_c.r1_bar, params_c.r1_bar)
    n = sch.m0 + sch.m1 + 4
    x = compose_backward(sys_c, path, np.array([0.3, 0.7]), n)
    fr = build_chart_frame(sys_c, path.shift(-n), x, params_c)
    gs = iterate_slanted_transform(sys_c, path, x, sch, UGraph.line(fr, fr.chart_radius, 0.5), n,
                                   params_c)
    assert len(gs) == n
    for k, g in enumerate(gs, 1):
        assert abs(g.slope0) <= 0.5 * math.exp(-k * params_c.lam / 2) * (1 + 1e-6)
    assert all(g.lip <= 0.1 for g in gs[sch.m0 + sch.m1 - 1:])
    with pytest.raises(ValueError):
        iterate_slanted_transform(sys_c, path, x, sch, gs[0], 1, params_c)


def test_unstable_manifold_of_cat_is_a_line(path, sys_a, params_a):
    g = local_unstable_manifold(sys_a, path, np.array([0.3, 0.7]), 20, params=params_a)
    assert np.max(np.abs(g.g)) < 1e-10


def test_unstable_manifold_increments_shrink(path, sys_c, params_c):
    g = local_unstable_manifold(sys_c, path, np.array([0.3, 0.7]), 12, params=params_c,
                                track_convergence=True)
    inc = g.meta["increments"]
    assert len(inc) == 11
    assert inc[-1] < 1e-3 * inc[0]


def test_unstable_manifold_needs_params(path, sys_c):
    with pytest.raises(ValueError):
        local_unstable_manifold(sys_c, path, np.zeros(2), 5)


def test_step_failure_reports_step(path, sys_c, params_c):
    with pytest.raises(StepFailure) as info:
        local_unstable_manifold(sys_c, path, np.array([0.3, 0.7]), 10, radius=0.5,
                                params=params_c, frames="euclidean", regime_K=1e-6)
    assert info.value.k <= 0


def test_line_distance():
    assert line_distance([1, 0], [-1, 0]) == pytest.approx(0.0)
    assert line_distance([1, 0], [0, 1]) == pytest.approx(math.sqrt(2))


def test_switch_axes_roundtrip():
    ang = 0.01
    tgt = euclidean_frame([0.5, 0.5], [math.cos(ang), math.sin(ang)],
                          [-math.sin(ang), math.cos(ang)], 0.2)
    src = euclidean_frame([0.505, 0.5], [1.0, 0.0], [0.0, 1.0], 0.5)
    g = UGraph.line(src, 0.5, 0.02)
    h = switch_axes(g, tgt, 0.2, budget=SwitchBudget(L=2, eps1=0.05))
    # points of h map back onto g
    assert containment_residual(g, h) < 1e-12
    assert euclid_lip(g) == pytest.approx(0.02)
    assert h.lip == pytest.approx(math.tan(math.atan(0.02) - ang), rel=1e-6)


@pytest.mark.parametrize("shift,axis,which", [(0.2, 0.0, "ii.1"), (0.0, 0.5, "ii.2")])
def test_switch_axes_hypotheses(shift, axis, which):
    tgt = euclidean_frame([0.5, 0.5], [math.cos(axis), math.sin(axis)],
                          [-math.sin(axis), math.cos(axis)], 0.2)
    src = euclidean_frame([0.5 + shift, 0.5], [1.0, 0.0], [0.0, 1.0], 0.5)
    with pytest.raises(HypothesisFailure) as info:
        switch_axes(UGraph.line(src, 0.5, 0.0), tgt, 0.2, budget=SwitchBudget(L=2, eps1=0.05))
    assert info.value.which == which


def test_switch_axes_needs_extent():
    src = euclidean_frame([0.5, 0.5], [1.0, 0.0], [0.0, 1.0], 0.5)
    with pytest.raises(HypothesisFailure) as info:
        switch_axes(UGraph.line(src, 0.1, 0.0), src.with_radius(0.2), 0.2,
                    budget=SwitchBudget(L=2, eps1=0.05))
    assert info.value.which == "iii"


def test_zero_graph_is_invariant_under_diagonal_map():
    M = LinearMap(np.diag([2.0, 0.6]))
    t = graph_transform_step(FRAME, FRAME, M, UGraph.line(FRAME, 0.5, 0.0), dst_radius=0.5)
    assert np.max(np.abs(t.g)) == 0.0


@given(mu=st.floats(0.2, 2.0), sigma=st.floats(-0.1, 2.0), a=slopes)
def test_line_image_closed_form(mu, sigma, a):
    M = LinearMap(np.diag([math.exp(mu), math.exp(-sigma)]))
    t = graph_transform_step(FRAME, FRAME, M, UGraph.line(FRAME, 0.5, a), dst_radius=0.5)
    np.testing.assert_allclose(t.g, a * math.exp(-sigma - mu) * t.u, rtol=1e-12, atol=1e-15)


def test_slanted_transform_keeps_cat_unstable_line(path, sys_a, params_a):
    sch = TransformSchedule.from_constants(0.5, params_a.lam, params_a.r1_bar, params_a.r1_bar)
    n = sch.m0 + sch.m1 + 3
    x = compose_backward(sys_a, path, np.array([0.3, 0.7]), n)
    fr = build_chart_frame(sys_a, path.shift(-n), x, params_a)
    gs = iterate_slanted_transform(sys_a, path, x, sch, UGraph.line(fr, fr.chart_radius, 0.0), n,
                                   params_a)
    assert max(np.max(np.abs(g.g)) for g in gs) < 1e-12


@pytest.fixture(scope="module")
def manifold_c(path, sys_c, params_c):
    return local_unstable_manifold(sys_c, path, np.array([0.3, 0.7]), 20, params=params_c,
                                   track_convergence=True)


def test_unstable_manifold_is_tangent_to_unstable_direction(manifold_c):
    assert abs(manifold_c.value_at_origin()) < 1e-12
    assert abs(manifold_c.slope_at_origin()) < 1e-6


def test_unstable_manifold_converges_geometrically(manifold_c):
    inc = manifold_c.meta["increments"]
    inc = inc[inc > 1e-13]
    rate = np.polyfit(np.arange(len(inc)), np.log(inc), 1)[0]
    assert rate < -0.5
    assert inc[3] < 1e-3 * inc[0]


def test_graph_transform_in_nonlinear_charts(path, sys_c, params_c):
    sch = TransformSchedule.from_constants(0.05, params_c.lam, params_c.r1_bar, params_c.r1_bar)
    n = 6
    x = compose_backward(sys_c, path, np.array([0.6, 0.2]), n)
    of = orbit_frames(sys_c, path.shift(-n), x, 0, n, params_c)
    frames = of.frames()
    g = UGraph.line(frames[0], 0.5 * frames[0].chart_radius, 0.03,
                    cs_radius=frames[0].chart_radius)
    for k in range(n):
        src, dst = frames[k], frames[k + 1]
        cm = ConnectingMap(sys_c, path.shift(-n).value(k + 1), src, dst)
        t = graph_transform_step(src, dst, cm, g, regime_K=0.1, allow_shrink=True,
                                 dst_radius=dst.chart_radius)
        assert inclusion_residual(g, cm, t) <= 1e-8
        assert expansion_ratio(g, cm) >= math.exp(params_c.lam) - params_c.delta0
        g = t
    assert sch.K0 == 0.05


def test_switch_to_identical_frame_is_identity():
    g = UGraph.from_function(FRAME, 0.5, lambda u: 0.03 * u + 0.01 * np.sin(4 * u))
    h = switch_axes(g, FRAME.with_radius(0.2), 0.2, budget=SwitchBudget(L=2, eps1=0.05))
    np.testing.assert_allclose(h.g, g(h.u), atol=1e-12)


@given(beta=st.floats(-0.02, 0.02))
def test_switch_rotation_closed_form(beta):
    tgt = euclidean_frame([0.5, 0.5], [math.cos(beta), math.sin(beta)],
                          [-math.sin(beta), math.cos(beta)], 0.2)
    h = switch_axes(UGraph.line(FRAME, 0.5, 0.0), tgt, 0.2, budget=SwitchBudget(L=2, eps1=0.05))
    np.testing.assert_allclose(h.g, -math.tan(beta) * h.u, atol=1e-13)


@given(a=st.floats(-0.04, 0.04), beta=st.floats(-0.02, 0.02), dx=st.floats(-0.02, 0.02),
       dy=st.floats(-0.02, 0.02))
def test_switch_at_most_doubles_lipschitz_constant(a, beta, dx, dy):
    tgt = euclidean_frame([0.5 + dx, 0.5 + dy], [math.cos(beta), math.sin(beta)],
                          [-math.sin(beta), math.cos(beta)], 0.2)
    g = UGraph.from_function(FRAME, 0.5, lambda u: a * u + 0.01 * np.sin(5 * u))
    h = switch_axes(g, tgt, 0.2, budget=SwitchBudget(L=2, eps1=0.05))
    assert h.lip <= 2 * max(euclid_lip(g), 0.05)


def test_cat_stack_is_parallel_lines(path, sys_a, params_a):
    gen = np.random.default_rng(3)
    x_star = np.array([0.4, 0.4])
    pts = x_star + gen.uniform(-0.05, 0.05, (6, 2))
    st_ = build_u_stack(sys_a, path, pts, x_star, 0.1, 20, params_a)
    assert len(st_) == 6
    for g in st_.leaves.values():
        np.testing.assert_allclose(g.g, g(0.0), atol=1e-12)
    tr = np.array(sorted(st_.transverse().values()))
    assert np.all(np.diff(tr) > 1e-6)
    one = build_u_stack(sys_a, path, x_star[None], x_star, 0.1, 20, params_a)
    assert abs(one.leaves[0](0.0)) < 1e-12
