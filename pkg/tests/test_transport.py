import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdslab import (NoiseLaw, ParticleEnsemble, UlamDensity, estimate_stationary, get_system,
                    pullback_pushforward, sample_from_density, weak_distance)
from rdslab.errors import NonConvergence
from rdslab.transport import (build_transfer_operator, cell_index, fourier_bank, load_density_csv,
                              load_ensemble, save_density_csv, save_ensemble, ulam_projection,
                              uniform_ensemble, uniformity_zscore)

from conftest import unit_points


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((3, 2)), np.array([0.5, 0.5, 0.1]))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((2, 3)), np.array([0.5, 0.5]))


@given(st.integers(1, 200), st.integers(0, 2**32))
def test_subset_tracks_mass(n, seed):
    e = uniform_ensemble(n + 1, seed)
    mask = e.points[:, 0] < 0.5
    if not mask.any():
        mask[0] = True
    sub = e.subset(mask)
    assert sub.mass == pytest.approx(mask.sum() / (n + 1))
    assert sub.weights.sum() == pytest.approx(1.0)
    assert sub.integrate(np.ones(len(sub))) == pytest.approx(sub.mass)


def test_cell_index_bounds():
    idx = cell_index(np.array([[0.0, 0.999999], [0.5, 1.0]]), 4)
    np.testing.assert_array_equal(idx, [[0, 3], [2, 3]])


def test_ulam_density_checks():
    with pytest.raises(ValueError):
        UlamDensity(np.ones((2, 2)))
    u = UlamDensity.uniform(8)
    np.testing.assert_allclose(u.density, 1.0)
    assert u.at(np.array([[0.3, 0.3]]))[0] == pytest.approx(1.0)
    assert u.l1(UlamDensity.from_counts(np.eye(8))) > 0


def test_transfer_operator_is_stochastic(sys_c):
    op = build_transfer_operator(sys_c, 16, 2000)
    np.testing.assert_allclose(op.row_sums(), 1.0, atol=1e-12)


def test_full_noise_stationary_is_lebesgue(sys_c):
    d = estimate_stationary(sys_c, 16, 4000)
    assert d.l1(UlamDensity.uniform(16)) < 0.03


def test_small_noise_stationary_is_nonuniform(sys_c):
    law = NoiseLaw("ball", 0.1)
    d = estimate_stationary(sys_c, 16, 2000, law=law, tol=1e-9)
    assert d.density.max() > 1.2
    np.testing.assert_allclose(d.cells.sum(), 1.0)


def test_stationary_nonconvergence_reports_gap(sys_c):
    with pytest.raises(NonConvergence, match="spectral gap"):
        estimate_stationary(sys_c, 16, 1000, law=NoiseLaw("ball", 0.05), tol=1e-30, max_iter=3)
    with pytest.raises(ValueError):
        estimate_stationary(sys_c, 8, 1000)


def test_sampling_follows_density():
    cells = np.zeros((4, 4))
    cells[1, 2] = 0.75
    cells[3, 0] = 0.25
    ens = sample_from_density(UlamDensity(cells), 40_000, seed=3)
    proj = ulam_projection(ens, 4).cells
    assert proj[1, 2] == pytest.approx(0.75, abs=0.01)
    assert proj[3, 0] + proj[1, 2] == pytest.approx(1.0)


def test_pushforward_preserves_weights_and_is_deterministic(path, sys_c):
    e = uniform_ensemble(5000, 1)
    a = pullback_pushforward(sys_c, path, e, 7)
    b = pullback_pushforward(sys_c, path, e, 7, workers=3)
    assert a.points.tobytes() == b.points.tobytes()
    np.testing.assert_array_equal(a.weights, e.weights)
    assert pullback_pushforward(sys_c, path, e, 0) is e
    with pytest.raises(ValueError):
        pullback_pushforward(sys_c, path, e, -1)


def test_lebesgue_invariant_under_cat(path, sys_a):
    e = pullback_pushforward(sys_a, path, uniform_ensemble(200_000, 2), 20)
    assert uniformity_zscore(e, 16) < 5.0


def test_weak_distance_properties():
    a, b = uniform_ensemble(20_000, 1), uniform_ensemble(20_000, 2)
    assert weak_distance(a, a) == 0.0
    assert weak_distance(a, b) == pytest.approx(weak_distance(b, a))
    pts = np.column_stack([np.full(100, 0.25), np.linspace(0, 1, 100, endpoint=False)])
    assert weak_distance(a, ParticleEnsemble.uniform_weights(pts)) > 10 * weak_distance(a, b)
    assert len(fourier_bank()) == 32


def test_ensemble_roundtrip(tmp_path):
    pts = unit_points(4, 100)
    w = np.random.default_rng(5).random(100)
    e = ParticleEnsemble(pts, w / w.sum(), {"kind": "test"}, mass=0.3)
    save_ensemble(tmp_path / "e", e, {"depth": 3})
    f = load_ensemble(tmp_path / "e")
    np.testing.assert_array_equal(f.points, e.points)
    np.testing.assert_array_equal(f.weights, e.weights)
    assert f.mass == 0.3 and f.provenance == {"kind": "test"}


def test_density_csv_roundtrip(tmp_path):
    d = UlamDensity.from_counts(np.arange(1, 17, dtype=float).reshape(4, 4))
    save_density_csv(tmp_path / "d.csv", d)
    np.testing.assert_array_equal(load_density_csv(tmp_path / "d.csv").cells, d.cells)


@pytest.mark.parametrize("name", ["A", "B", "C"])
def test_full_noise_stationary_cells(name):
    # each row is an empirical uniform law, so cell masses fluctuate by about 1/sqrt(samples)
    samples = 4000
    d = estimate_stationary(get_system(name), 16, samples)
    assert np.max(np.abs(d.density - 1)) <= 5 / np.sqrt(samples)


def test_small_noise_stationary_matches_long_chains(sys_c):
    law = NoiseLaw("ball", 0.05)
    m = 32
    d = estimate_stationary(sys_c, m, 4000, law=law, tol=1e-10)
    # independent chains, burn-in then time averages
    gen = np.random.default_rng(0)
    x = gen.random((20_000, 2))
    counts = np.zeros(m * m)
    for k in range(700):
        x = sys_c.eval(law.transform(gen.integers(0, 2 ** 64, (len(x), 4), dtype=np.uint64)), x)
        if k >= 200:
            idx = cell_index(x, m)
            counts += np.bincount(idx[:, 0] * m + idx[:, 1], minlength=m * m)
    hist = counts.reshape(m, m) / counts.sum()
    assert np.abs(hist - d.cells).sum() <= 0.05


def test_sampled_cell_counts_within_four_sigma():
    gen = np.random.default_rng(5)
    # masses bounded away from zero so counts are close to Gaussian
    cells = 0.2 + gen.random((8, 8))
    cells /= cells.sum()
    n = 200_000
    ens = sample_from_density(UlamDensity(cells), n, seed=9)
    idx = cell_index(ens.points, 8)
    counts = np.bincount(idx[:, 0] * 8 + idx[:, 1], minlength=64).reshape(8, 8)
    sigma = np.sqrt(n * cells * (1 - cells))
    assert np.all(np.abs(counts - n * cells) <= 4 * sigma + 1e-12)


def test_point_mass_density_samples_one_cell():
    cells = np.zeros((16, 16))
    cells[3, 11] = 1.0
    pts = sample_from_density(UlamDensity(cells), 1000, seed=1).points
    assert np.all(np.floor(pts * 16).astype(int) == [3, 11])


def test_sampling_is_seed_deterministic():
    d = UlamDensity.uniform(16)
    a, b = sample_from_density(d, 500, 4), sample_from_density(d, 500, 4)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.points.tobytes() != sample_from_density(d, 500, 5).points.tobytes()


def test_independent_uniform_samples_are_close():
    assert weak_distance(uniform_ensemble(1_000_000, 1), uniform_ensemble(1_000_000, 2)) <= 3e-3


def test_weak_distance_triangle_inequality():
    es = [uniform_ensemble(5000, s) for s in range(3)]
    es.append(ParticleEnsemble.uniform_weights(unit_points(0, 5000) ** 2))
    for a in es:
        for b in es:
            for c in es:
                assert weak_distance(a, c) <= weak_distance(a, b) + weak_distance(b, c) + 1e-12


def test_pushforward_keeps_total_mass(path, sys_c):
    e = ParticleEnsemble(unit_points(1, 100), np.full(100, 0.01), mass=0.3)
    out = pullback_pushforward(sys_c, path, e, 5)
    assert out.mass == e.mass and out.weights.sum() == pytest.approx(1.0)
