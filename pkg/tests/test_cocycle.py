import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdslab import NoiseLaw, NoisePath, compose_backward, compose_forward, compose_pullback, get_system, torus_distance
from rdslab.cocycle import backward_orbit, forward_orbit, jacobian_forward, orbit_segment

from conftest import unit_points


@pytest.mark.parametrize("name", ["A", "C"])
@given(n=st.integers(0, 12), seed=st.integers(0, 1000))
def test_pullback_is_forward_on_shifted_path(name, n, seed):
    f, path = get_system(name), NoisePath(seed)
    p = unit_points(seed, 4)
    np.testing.assert_array_equal(compose_pullback(f, path, p, n),
                                  compose_forward(f, path.shift(-n), p, n))


@pytest.mark.parametrize("name", ["A", "B", "C"])
@given(n=st.integers(0, 10), seed=st.integers(0, 1000))
def test_backward_inverts_pullback(name, n, seed):
    f, path = get_system(name), NoisePath(seed)
    p = unit_points(seed, 4)
    q = compose_backward(f, path, compose_pullback(f, path, p, n), n)
    assert np.max(torus_distance(q, p)) < 1e-9


def test_cocycle_property(path, sys_c):
    p = unit_points(1, 3)
    two = compose_forward(sys_c, path.shift(4), compose_forward(sys_c, path, p, 4), 3)
    np.testing.assert_allclose(two, compose_forward(sys_c, path, p, 7), atol=1e-13)


def test_orbits(path, sys_c):
    p = np.array([0.2, 0.9])
    fw = forward_orbit(sys_c, path, p, 5)
    np.testing.assert_array_equal(fw[5], compose_forward(sys_c, path, p, 5))
    bw = backward_orbit(sys_c, path, p, 5)
    np.testing.assert_array_equal(bw[5], compose_backward(sys_c, path, p, 5))
    t, seg = orbit_segment(sys_c, path, p, -5, 5)
    np.testing.assert_array_equal(seg[t == 0][0], p)
    np.testing.assert_array_equal(seg[-1], fw[5])
    with pytest.raises(ValueError):
        orbit_segment(sys_c, path, p, 1, 5)
    with pytest.raises(ValueError):
        compose_forward(sys_c, path, p, -1)


def test_jacobian_of_composition(path, sys_c):
    p = np.array([0.31, 0.47])
    J = jacobian_forward(sys_c, path, p, 3)
    h = 1e-7
    cols = []
    for e in np.eye(2):
        a, b = p + h * e, p - h * e
        for w in path.values(1, 4):
            a, b = sys_c.lift(w, a), sys_c.lift(w, b)
        cols.append((a - b) / (2 * h))
    np.testing.assert_allclose(J, np.column_stack(cols), rtol=1e-5)


CAT = np.array([[2.0, 1.0], [1.0, 1.0]])


def test_zero_noise_cat_matches_matrix_powers():
    f, path = get_system("A"), NoisePath(3, NoiseLaw("zero"))
    p = unit_points(7, 20)
    np.testing.assert_allclose(torus_distance(compose_forward(f, path, p, 2), (p @ (CAT @ CAT).T) % 1), 0,
                               atol=1e-12)
    inv = np.linalg.inv(CAT)
    np.testing.assert_allclose(torus_distance(compose_backward(f, path, p, 1), (p @ inv.T) % 1), 0,
                               atol=1e-12)


@pytest.mark.parametrize("name", ["A", "B", "C", "T"])
def test_zero_steps_is_identity(name, path):
    f = get_system(name)
    p = unit_points(2, 5)
    for op in (compose_forward, compose_backward, compose_pullback):
        np.testing.assert_array_equal(op(f, path, p, 0), p)


@given(n=st.integers(0, 8), extra=st.integers(0, 8), seed=st.integers(0, 1000))
def test_pullbacks_nest(n, extra, seed):
    f, path = get_system("C"), NoisePath(seed)
    p = unit_points(seed, 3)
    m = n + extra
    inner = compose_pullback(f, path.shift(-n), p, m - n)
    np.testing.assert_array_equal(compose_pullback(f, path, inner, n), compose_pullback(f, path, p, m))


@pytest.mark.parametrize("name", ["A", "B", "C"])
def test_backward_undoes_forward(name, path):
    f = get_system(name)
    p = unit_points(4, 10)
    n = 10
    q = compose_backward(f, path.shift(n), compose_forward(f, path, p, n), n)
    assert np.max(torus_distance(q, p)) < 1e-10
