import numpy as np
import pytest

from labelshift.core import LabelDist
from labelshift.errors import IndexOutOfRange, InvalidAlpha, UnsupportedClass
from labelshift.simulate import (
    MixtureSpec,
    ShiftSpec,
    exact_posterior,
    generate_mixture,
    posterior_matrix,
    replication_seeds,
    resample_target,
    sample_dirichlet_dist,
    tweak_one_dist,
)


def two_class_spec(sep=1.0, var=1.0):
    return MixtureSpec(means=[[-sep], [sep]], variances=[[var], [var]],
                       source_prior=LabelDist([0.5, 0.5]))


class TestDirichlet:
    def test_concentration_limit_is_uniform(self):
        d = sample_dirichlet_dist(3, 1e6, seed=0)
        assert np.max(np.abs(d.probs - 1 / 3)) < 0.01

    def test_symmetry_and_variance_over_seeds(self):
        # Dirichlet(1, 1): mean 1/2, variance (1/k)(1-1/k)/(k*alpha+1) = 1/12
        vals = np.array([sample_dirichlet_dist(2, 1.0, seed=s).probs[0] for s in range(100_000)])
        assert abs(vals.mean() - 0.5) < 0.01
        assert abs(vals.var() - 1.0 / 12.0) < 0.005

    def test_invalid_alpha(self):
        with pytest.raises(InvalidAlpha):
            sample_dirichlet_dist(3, 0.0, seed=0)
        with pytest.raises(InvalidAlpha):
            sample_dirichlet_dist(3, -1.0, seed=0)

    def test_always_valid_dist(self):
        for s in range(200):
            d = sample_dirichlet_dist(4, 0.3, seed=s)
            assert d.probs.min() >= 0
            assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_deterministic_in_seed(self):
        a = sample_dirichlet_dist(5, 0.7, seed=123).probs
        b = sample_dirichlet_dist(5, 0.7, seed=123).probs
        assert np.array_equal(a, b)


class TestTweakOne:
    def test_reference_setting(self):
        d = tweak_one_dist(10, 0.9, 4)
        assert d.probs[3] == pytest.approx(0.9)
        others = np.delete(d.probs, 3)
        assert np.allclose(others, 0.1 / 9)

    def test_rho_one_over_k_is_uniform(self):
        d = tweak_one_dist(5, 0.2, 1)
        assert np.allclose(d.probs, 0.2)

    def test_boundary_rho_zero(self):
        d = tweak_one_dist(2, 0.0, 1)
        assert np.array_equal(d.probs, [0.0, 1.0])

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            tweak_one_dist(3, 0.5, 4)
        with pytest.raises(IndexOutOfRange):
            tweak_one_dist(3, 0.5, 0)


class TestExactPosterior:
    def test_symmetric_point(self):
        spec = two_class_spec()
        row = exact_posterior(spec, spec.source_prior, [0.0])
        assert np.allclose(row, [0.5, 0.5], atol=1e-15)

    def test_degenerate_prior(self):
        spec = two_class_spec()
        row = exact_posterior(spec, LabelDist([1.0, 0.0]), [17.3])
        assert np.array_equal(row, [1.0, 0.0])

    def test_known_log_odds(self):
        # means -1/+1, var 1, x=0.5: log-odds = 1, posterior (1/(1+e), e/(1+e))
        spec = two_class_spec()
        row = exact_posterior(spec, spec.source_prior, [0.5])
        assert row[0] == pytest.approx(1 / (1 + np.e), abs=1e-12)
        assert row[1] == pytest.approx(np.e / (1 + np.e), abs=1e-12)

    def test_matches_brute_force_density_ratio(self):
        rng = np.random.default_rng(3)
        spec = MixtureSpec(means=rng.normal(size=(4, 3)),
                           variances=rng.uniform(0.5, 2.0, size=(4, 3)),
                           source_prior=LabelDist(rng.dirichlet(np.ones(4) * 3)))
        for _ in range(50):
            x = rng.normal(scale=2.0, size=3)
            dens = np.array([
                np.prod(np.exp(-0.5 * (x - spec.means[i]) ** 2 / spec.variances[i])
                        / np.sqrt(2 * np.pi * spec.variances[i]))
                for i in range(4)
            ])
            expected = dens * spec.source_prior.probs
            expected = expected / expected.sum()
            got = exact_posterior(spec, spec.source_prior, x)
            assert np.max(np.abs(got - expected)) < 1e-12

    def test_log_space_stability_under_common_offset(self):
        # an extra feature dimension shared by all classes adds the same
        # constant to every class log-density; the posterior must not move
        # even when that constant drives linear-space densities to 0
        spec = two_class_spec()
        aug = MixtureSpec(means=[[-1.0, 0.0], [1.0, 0.0]],
                          variances=[[1.0, 1.0], [1.0, 1.0]],
                          source_prior=spec.source_prior)
        base = exact_posterior(spec, spec.source_prior, [0.3])
        for offset in (0.0, 50.0, -300.0):
            row = exact_posterior(aug, aug.source_prior, [0.3, offset])
            assert np.max(np.abs(row - base)) < 1e-12


class TestGenerateMixture:
    def test_label_frequencies_lln(self):
        spec = two_class_spec()
        _, labels, _ = generate_mixture(spec, LabelDist([0.5, 0.5]), 1000, seed=5)
        freq = np.bincount(labels - 1, minlength=2) / 1000
        assert np.max(np.abs(freq - 0.5)) < 0.05

    def test_uninformative_features_give_prior_rows(self):
        spec = MixtureSpec(means=[[0.0], [0.0]], variances=[[1.0], [1.0]],
                           source_prior=LabelDist([0.5, 0.5]))
        dist = LabelDist([0.3, 0.7])
        _, _, posts = generate_mixture(spec, dist, 100, seed=2)
        assert np.max(np.abs(posts.values - dist.probs)) < 1e-12

    def test_posteriors_match_brute_force(self):
        rng = np.random.default_rng(9)
        spec = MixtureSpec(means=rng.normal(size=(3, 2)),
                           variances=rng.uniform(0.5, 1.5, size=(3, 2)),
                           source_prior=LabelDist([0.2, 0.3, 0.5]))
        X, _, posts = generate_mixture(spec, spec.source_prior, 40, seed=4)
        for j in range(40):
            dens = np.array([
                np.prod(np.exp(-0.5 * (X[j] - spec.means[i]) ** 2 / spec.variances[i])
                        / np.sqrt(2 * np.pi * spec.variances[i]))
                for i in range(3)
            ])
            expected = dens * spec.source_prior.probs
            expected = expected / expected.sum()
            assert np.max(np.abs(posts.values[j] - expected)) < 1e-12

    def test_deterministic_in_seed(self):
        spec = two_class_spec()
        a = generate_mixture(spec, spec.source_prior, 50, seed=8)
        b = generate_mixture(spec, spec.source_prior, 50, seed=8)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2].values, b[2].values)

    def test_proportions_converge(self):
        spec = two_class_spec()
        dist = LabelDist([0.35, 0.65])
        _, labels, _ = generate_mixture(spec, dist, 100_000, seed=6)
        freq = np.bincount(labels - 1, minlength=2) / 100_000
        assert np.max(np.abs(freq - dist.probs)) < 0.01

    def test_mean_shift_changes_posteriors_only(self):
        spec = two_class_spec()
        X0, y0, p0 = generate_mixture(spec, spec.source_prior, 50, seed=3)
        X1, y1, p1 = generate_mixture(spec, spec.source_prior, 50, seed=3, mean_shift=0.2)
        assert np.array_equal(X0, X1)
        assert np.array_equal(y0, y1)
        assert np.max(np.abs(p0.values - p1.values)) > 1e-4
        expected = posterior_matrix(spec, spec.source_prior, X0, mean_shift=0.2)
        assert np.array_equal(p1.values, expected.values)


class TestResampleTarget:
    def pool(self):
        rows = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.2, 0.8]])
        labels = np.array([1, 1, 2, 2])
        return rows, labels

    def test_point_mass(self):
        rows, labels = self.pool()
        t = resample_target(rows, labels, LabelDist([1.0, 0.0]), 20, seed=1)
        assert np.all(t.hidden_labels0 == 0)

    def test_frequencies_lln(self):
        rows, labels = self.pool()
        t = resample_target(rows, labels, LabelDist([0.3, 0.7]), 10_000, seed=2)
        freq = np.bincount(t.hidden_labels0, minlength=2) / 10_000
        assert np.max(np.abs(freq - [0.3, 0.7])) < 0.02

    def test_unsupported_class(self):
        rows = np.array([[0.9, 0.1], [0.8, 0.2]])
        labels = np.array([1, 1])  # class 2 absent from the pool
        with pytest.raises(UnsupportedClass):
            resample_target(rows, labels, LabelDist([0.9, 0.1]), 10, seed=0)

    def test_rows_follow_labels(self):
        rows, labels = self.pool()
        t = resample_target(rows, labels, LabelDist([0.5, 0.5]), 200, seed=3)
        class1 = t.probs.values[t.hidden_labels0 == 0]
        assert set(map(tuple, class1)) <= {(0.9, 0.1), (0.8, 0.2)}


class TestSeeds:
    def test_replication_seeds_deterministic_and_distinct(self):
        a = replication_seeds(42, 3, 4)
        assert a == replication_seeds(42, 3, 4)
        assert a != replication_seeds(42, 4, 4)
        assert a != replication_seeds(43, 3, 4)

    def test_shift_spec_draw(self):
        s = ShiftSpec(mechanism="dirichlet", alpha=1.0, seed=5)
        d1 = s.draw(3, replication=0)
        d2 = s.draw(3, replication=0)
        assert np.array_equal(d1.probs, d2.probs)
        assert not np.array_equal(d1.probs, s.draw(3, replication=1).probs)
        t = ShiftSpec(mechanism="tweak_one", rho=0.5, tweak_index=2)
        assert t.draw(4).probs[1] == pytest.approx(0.5)
