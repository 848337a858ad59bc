import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geogan import autodiff as ad
from geogan import data as D
from geogan import metrics as M
from geogan.data import GridMixtureSpec, RngStream


class TestRngStream:
    def test_reproducible(self):
        a = D.sample_latent(10, 4, RngStream(5, D.STREAM_LATENT))
        b = D.sample_latent(10, 4, RngStream(5, D.STREAM_LATENT))
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = D.sample_latent(1000, 1, RngStream(5, D.STREAM_DATA))
        b = D.sample_latent(1000, 1, RngStream(5, D.STREAM_LATENT))
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a[:, 0], b[:, 0])[0, 1]) < 0.1

    def test_seeds_differ(self):
        assert not np.array_equal(D.sample_latent(5, 2, RngStream(0)), D.sample_latent(5, 2, RngStream(1)))

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            RngStream(0, algorithm="mt").generator()
        with pytest.raises(TypeError):
            D.sample_latent(3, 2, 42)


class TestGridMixture:
    def test_means(self):
        means = GridMixtureSpec().means()
        assert means.shape == (25, 2)
        for m in ([-21, -21], [0, 0], [21, 21]):
            assert np.any(np.all(means == m, axis=1))
        np.testing.assert_allclose(np.diff(np.unique(means[:, 0])), 10.5)

    def test_degenerate_std(self):
        spec = GridMixtureSpec(std=0.0)
        pts, modes = D.sample_grid_mixture(spec, 50, RngStream(0), return_modes=True)
        np.testing.assert_array_equal(pts, spec.means()[modes])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            D.sample_grid_mixture(GridMixtureSpec(), 0, RngStream(0))

    def test_per_mode_std(self):
        spec = GridMixtureSpec()
        pts, modes = D.sample_grid_mixture(spec, 100_000, RngStream(1), return_modes=True)
        resid = pts - spec.means()[modes]
        assert abs(resid.std() - 0.316) < 0.01

    def test_frequencies_and_classification(self):
        spec = GridMixtureSpec()
        pts, modes = D.sample_grid_mixture(spec, 1_000_000, RngStream(2), return_modes=True)
        freq = np.bincount(modes, minlength=25) / len(modes)
        assert np.all(np.abs(freq - 1 / 25) < 0.002)
        idx, _ = M.nearest_modes(pts, spec)
        assert np.mean(idx == modes) > 0.999999

    def test_deterministic(self):
        a = D.sample_grid_mixture(GridMixtureSpec(), 100, RngStream(9, 2))
        b = D.sample_grid_mixture(GridMixtureSpec(), 100, RngStream(9, 2))
        assert a.tobytes() == b.tobytes()


class TestLatentAndLines:
    def test_latent_moments(self):
        z = D.sample_latent(100_000, 4, RngStream(0, D.STREAM_LATENT))
        assert np.all(np.abs(z.mean(axis=0)) < 0.02)
        assert np.all(np.abs(z.var(axis=0) - 1) < 0.03)

    def test_latent_errors(self):
        with pytest.raises(ValueError):
            D.sample_latent(0, 4, RngStream(0))

    def test_lines_real(self):
        x = D.sample_parallel_lines_real(100_000, RngStream(0))
        assert np.all(x[:, 0] == 0.0)
        assert abs(x[:, 1].mean() - 0.5) < 0.01
        assert x[:, 1].min() >= 0 and x[:, 1].max() <= 1

    def test_lines_generator(self):
        np.testing.assert_array_equal(D.parallel_lines_generator(2.0, [0.5]), [[2.0, 0.5]])
        on_line = D.parallel_lines_generator(0.0, [0.1, 0.9])
        assert np.all(on_line[:, 0] == 0.0)

    def test_lines_generator_gradient(self):
        gen = D.LinesGenerator(1.5)
        out = gen(np.array([0.2, 0.7, 0.9]))
        np.testing.assert_array_equal(out.value, [[1.5, 0.2], [1.5, 0.7], [1.5, 0.9]])
        grads = ad.backward(ad.total(ad.column(out, 0)), gen.params)
        assert grads["G.theta"][0] == 3.0
        assert ad.backward(ad.total(ad.column(out, 1)), gen.params)["G.theta"][0] == 0.0

    def test_csv_dump(self, tmp_path):
        path = tmp_path / "pts.csv"
        D.write_points_csv(path, np.array([[1.0, -2.5], [0.125, 3.0]]))
        assert path.read_text() == "x,y\n1.000000,-2.500000\n0.125000,3.000000\n"


class TestFeeds:
    def test_pool_epoch_without_replacement(self):
        feed = D.GridData(0, pool_size=1000)
        batches = np.concatenate([feed.real(100) for _ in range(10)])
        keys = {tuple(r) for r in batches}
        assert len(keys) == 1000

    def test_fresh_sampling_option(self):
        feed = D.GridData(0, pool_size=10, fixed_pool=False)
        assert feed.pool is None
        assert feed.real(50).shape == (50, 2)

    def test_feed_deterministic(self):
        a, b = D.GridData(3, pool_size=2000), D.GridData(3, pool_size=2000)
        for _ in range(5):
            np.testing.assert_array_equal(a.real(500), b.real(500))
            np.testing.assert_array_equal(a.latent(500), b.latent(500))

    def test_oversized_batch(self):
        with pytest.raises(ValueError):
            D.GridData(0, pool_size=10).real(11)

    def test_lines_feed(self):
        feed = D.LinesData(0)
        assert feed.real(4).shape == (4, 2)
        z = feed.latent(1000)
        assert z.shape == (1000, 1) and z.min() >= 0 and z.max() <= 1


class TestModeCoverage:
    def test_true_mixture(self):
        spec = GridMixtureSpec()
        pts = D.sample_grid_mixture(spec, 2500, RngStream(0, D.STREAM_EVAL))
        rep = M.mode_coverage(pts, spec)
        assert rep.covered_modes == 25 and rep.hq_fraction > 0.98
        assert sum(rep.counts) <= 2500

    def test_monte_carlo_interior_mass(self):
        # 2-D isotropic normal mass within 3 std is 1 - exp(-4.5)
        pts = D.sample_grid_mixture(GridMixtureSpec(), 200_000, RngStream(1))
        assert abs(M.mode_coverage(pts).hq_fraction - (1 - np.exp(-4.5))) < 2e-3

    def test_single_point(self):
        rep = M.mode_coverage(np.tile([[0.0, 0.0]], (2500, 1)))
        assert rep.covered_modes == 1 and rep.hq_fraction == 1.0

    def test_cell_centers(self):
        rep = M.mode_coverage(np.tile([[5.25, 5.25]], (100, 1)))
        assert rep.covered_modes == 0 and rep.hq_fraction == 0.0

    def test_nonfinite_samples_are_low_quality(self):
        rep = M.mode_coverage(np.array([[np.nan, 0.0], [0.0, 0.0]]), min_count=1)
        assert rep.hq_fraction == 0.5

    def test_errors(self):
        with pytest.raises(ValueError):
            M.mode_coverage(np.zeros((3, 2)), radius_stds=0.0)
        with pytest.raises(ValueError):
            M.mode_coverage(np.zeros((0, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_permutation_invariant_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        pts = D.sample_grid_mixture(GridMixtureSpec(), 400, rng)
        perm = pts[rng.permutation(len(pts))]
        assert M.mode_coverage(pts) == M.mode_coverage(perm)
        assert M.mode_coverage(pts[:200]).covered_modes <= M.mode_coverage(pts).covered_modes


class TestScalarMetrics:
    def test_support_vectors(self):
        assert M.support_vector_fraction([0.0, 0.0], [0.0, 0.0]) == 1.0
        assert M.support_vector_fraction([2.0], [-2.0]) == 0.0
        assert M.support_vector_fraction([0.5, 3.0], [-0.5, -3.0]) == 0.5
        with pytest.raises(ValueError):
            M.support_vector_fraction([], [1.0])

    def test_zero_head_means_all_support_vectors(self):
        disc, _ = ad.build_mlp(ad.discriminator_spec(), 0, init="zeros")
        x = np.random.default_rng(0).normal(size=(20, 2))
        assert M.support_vector_fraction(disc(x).value, disc(-x).value) == 1.0

    @pytest.mark.parametrize("cost,gap", [(2.0, 0.0), (0.0, 2.0), (1.0, 1.0)])
    def test_equilibrium_gap(self, cost, gap):
        assert M.equilibrium_gap(cost) == gap

    def test_hinge_cost(self):
        assert M.hinge_cost([0.0], [0.0]) == 2.0
        assert M.hinge_cost([1.0, 3.0], [-1.0, -2.0]) == 0.0
