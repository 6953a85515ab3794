import math

import numpy as np
import pytest

from rdslab import NoiseLaw, NoisePath, get_system, lyapunov_qr, torus_distance
from rdslab.tangent import (ChartParams, ConnectingMap, LinearMap, angle_between, build_chart_frame,
                            canonical_sign, estimate_Ecs, estimate_Eu, euclidean_frame,
                            orbit_frames, projection_norm, splitting)

from conftest import LAMBDA_A, unit_points

EIG_U = np.array([1.0, (math.sqrt(5) - 1) / 2])
EIG_U /= np.linalg.norm(EIG_U)
EIG_S = np.array([-EIG_U[1], EIG_U[0]])


def test_cat_exponents(path, sys_a):
    rep = lyapunov_qr(sys_a, path, np.array([0.1, 0.2]), 10_000)
    assert abs(rep.lambda1 - LAMBDA_A) < 1e-10
    assert abs(rep.lambda2 + LAMBDA_A) < 1e-10
    assert rep.convergence_trace.shape[1] == 3


def test_translations_have_zero_exponents(path):
    rep = lyapunov_qr(get_system("T"), path, np.array([0.1, 0.2]), 1000)
    assert abs(rep.lambda1) < 1e-14 and abs(rep.lambda2) < 1e-14


def test_exponent_sum_is_mean_log_det(path, sys_c):
    rep = lyapunov_qr(sys_c, path, np.array([0.3, 0.4]), 20_000)
    assert abs(rep.lambda1 + rep.lambda2 - rep.log_det_mean) < 1e-10
    assert rep.lambda1 > 0 > rep.lambda2


def test_exponents_do_not_depend_on_start(path, sys_c):
    a = lyapunov_qr(sys_c, path, np.array([0.3, 0.4]), 100_000).lambda1
    b = lyapunov_qr(sys_c, NoisePath(99), np.array([0.9, 0.1]), 100_000).lambda1
    assert abs(a - b) < 5e-3


def test_invalid_steps(path, sys_a):
    with pytest.raises(ValueError):
        lyapunov_qr(sys_a, path, np.zeros(2), 0)


def test_cat_splitting_is_eigenbasis(path, sys_a):
    p = unit_points(0, 5)
    e_u = estimate_Eu(sys_a, path, p, 40)
    e_cs = estimate_Ecs(sys_a, path, p, 40)
    for v in e_u:
        assert angle_between(v, EIG_U) < 1e-8
    for v in e_cs:
        assert angle_between(v, EIG_S) < 1e-8
    np.testing.assert_allclose(projection_norm(e_u, e_cs), 1.0, atol=1e-12)


def test_unstable_direction_is_equivariant(path, sys_c):
    p = np.array([0.3, 0.6])
    e0 = estimate_Eu(sys_c, path, p, 60)
    q = sys_c.eval(path.value(1), p)
    e1 = estimate_Eu(sys_c, path.shift(1), q, 61)
    assert angle_between(sys_c.jacobian(path.value(1), p) @ e0, e1) < 1e-10


def test_centre_stable_direction_ignores_the_past(path, sys_c):
    p = np.array([0.3, 0.6])
    a = estimate_Ecs(sys_c, path, p, 40)
    b = estimate_Ecs(sys_c, path.splice_past(0, 1234), p, 40)
    np.testing.assert_array_equal(a, b)


def test_far_past_perturbation_effect_decays(path, sys_c):
    p = np.array([0.3, 0.6])
    ref = estimate_Eu(sys_c, path, p, 60)
    moves = [angle_between(ref, estimate_Eu(sys_c, path.splice_past(-n0, 77), p, 60))
             for n0 in (2, 6, 10)]
    assert moves[0] > moves[1] > moves[2]


def test_canonical_sign():
    v = canonical_sign(np.array([[-1.0, 0.2], [0.0, -1.0]]))
    assert v[0, 0] > 0 and v[1, 1] > 0


def test_splitting(path, sys_c):
    sp = splitting(sys_c, path, np.array([0.2, 0.8]))
    assert sp.proj_norm_u >= 1.0
    assert angle_between(sp.e_u, sp.e_cs) > 0.1


@pytest.mark.parametrize("kw", [dict(lambda0=-1.0, delta0=0.1, delta2=0.1),
                                dict(lambda0=1.0, delta0=2.0, delta2=0.1),
                                dict(lambda0=1.0, delta0=0.1, delta2=0.0),
                                dict(lambda0=1.0, delta0=0.1, delta2=0.1, K0_bar=0.2)])
def test_chart_params_validation(kw):
    with pytest.raises(ValueError):
        ChartParams(**kw)


def test_chart_params_defaults():
    cp = ChartParams.from_lambda0(1.0)
    assert cp.lam == pytest.approx(0.95)
    assert cp.r1_bar == cp.delta1
    assert cp.truncation_error > 0


def test_chart_roundtrip(path, sys_c, params_c):
    fr = build_chart_frame(sys_c, path, np.array([0.99, 0.01]), params_c)
    z = np.random.default_rng(0).uniform(-fr.chart_radius, fr.chart_radius, (50, 2))
    np.testing.assert_allclose(fr.to_chart(fr.from_chart(z)), z, atol=1e-10)
    assert fr.l_value >= 1.0
    assert fr.chart_radius == pytest.approx(params_c.delta1 / fr.l_value)


def test_size_function_is_tempered(path, sys_c, params_c):
    of = orbit_frames(sys_c, path, unit_points(1, 8), -10, 10, params_c)
    ratio = np.log(of.l[1:] / of.l[:-1])
    assert np.max(np.abs(ratio)) <= params_c.delta2 + 1e-12


def test_connecting_map_hyperbolic_in_charts(path, sys_c, params_c):
    of = orbit_frames(sys_c, path, np.array([0.4, 0.4]), 0, 1, params_c)
    src, dst = of.frames()
    cm = ConnectingMap(sys_c, path.value(1), src, dst)
    D = cm.jacobian(np.zeros(2))
    # the linear part is diagonal with expansion >= e^lam along u
    assert abs(D[0, 1]) < 1e-8 and abs(D[1, 0]) < 1e-8
    assert abs(D[0, 0]) >= math.exp(params_c.lam) * (1 - 1e-9)
    assert abs(D[1, 1]) <= math.exp(params_c.delta0) * (1 + 1e-9)
    np.testing.assert_allclose(cm(np.zeros(2)), 0.0, atol=1e-12)
    z = np.random.default_rng(2).uniform(-1e-3, 1e-3, (20, 2))
    np.testing.assert_allclose(cm.inverse(cm(z)), z, atol=1e-10)


def test_linear_map_interface():
    m = LinearMap(np.diag([2.0, 0.5]))
    z = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(m.inverse(m(z)), z)
    assert m.jacobian(z).shape == (1, 2, 2)


def test_euclidean_frame_axes():
    fr = euclidean_frame([0.5, 0.5], [1.0, 0.0], [0.0, 1.0], 0.1)
    np.testing.assert_allclose(fr.to_chart(np.array([0.6, 0.45])), [0.1, -0.05])
    assert fr.proj_norm == 1.0 and fr.kind == "euclidean"


def test_small_noise_ball_law(small_noise, sys_a):
    rep = lyapunov_qr(sys_a, small_noise, np.array([0.1, 0.2]), 1000)
    assert abs(rep.lambda1 - LAMBDA_A) < 1e-10
    assert NoiseLaw("ball", 0.05) == small_noise.law


def test_shear_preserves_area(path):
    rep = lyapunov_qr(get_system("B"), path, np.array([0.2, 0.3]), 20_000)
    assert abs(rep.lambda1 + rep.lambda2) < 1e-10


def test_centre_stable_direction_is_continuous(path, sys_c):
    p = np.array([[0.3, 0.6], [0.3 + 1e-4, 0.6 - 0.7e-4]])
    e = estimate_Ecs(sys_c, path, p, 40)
    assert angle_between(e[0], e[1]) < 1e-3


def test_cat_size_function_is_constant(path, sys_a, params_a):
    of = orbit_frames(sys_a, path, unit_points(3, 10), -5, 5, params_a)
    assert of.l.max() / of.l.min() == pytest.approx(1.0, abs=1e-9)


@pytest.fixture(scope="module")
def long_orbit(path, sys_c, params_c):
    return orbit_frames(sys_c, path, np.array([0.2, 0.7]), 0, 1000, params_c)


def test_size_function_along_long_orbit(long_orbit, params_c):
    jumps = np.abs(np.diff(np.log(long_orbit.l)))
    assert np.mean(jumps <= params_c.delta2 * (1 + 1e-12)) >= 0.99
    assert np.all(long_orbit.l >= get_system("C").c2_bound())
    # projection norm stays bounded: no collapse of the splitting
    assert long_orbit.proj.max() < 10


def test_chart_is_bi_lipschitz(path, sys_c, long_orbit):
    rng = np.random.default_rng(0)
    for k in range(0, 1000, 100):
        fr = long_orbit.frame(k)
        z1, z2 = rng.uniform(-fr.chart_radius, fr.chart_radius, (2, 300, 2))
        d = torus_distance(fr.from_chart(z1), fr.from_chart(z2))
        dz = np.max(np.abs(z1 - z2), axis=1)
        assert np.all(d <= dz * (1 + 1e-12))
        assert np.all(dz <= fr.l_value * d)


def test_chart_nonlinearity_is_small(path, sys_c, params_c, long_orbit):
    rng = np.random.default_rng(1)
    for k in range(0, 1000, 100):
        src, dst = long_orbit.frame(k), long_orbit.frame(k + 1)
        cm = ConnectingMap(sys_c, path.value(k + 1), src, dst)
        D = cm.jacobian(np.zeros(2))
        for delta in (params_c.delta1 / 2, params_c.delta1 / 4):
            r = delta / src.l_value
            z1, z2 = rng.uniform(-r, r, (2, 300, 2))
            dR = (cm(z1) - z1 @ D.T) - (cm(z2) - z2 @ D.T)
            lip = np.max(np.max(np.abs(dR), axis=1) / np.max(np.abs(z1 - z2), axis=1))
            assert lip <= delta


def test_connecting_map_jacobian_matches_differences(path, sys_c, long_orbit):
    src, dst = long_orbit.frame(10), long_orbit.frame(11)
    cm = ConnectingMap(sys_c, path.value(11), src, dst)
    h = 1e-4
    fd = np.column_stack([(cm(h * e) - cm(-h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(cm.jacobian(np.zeros(2)), fd, rtol=1e-6, atol=1e-6)
