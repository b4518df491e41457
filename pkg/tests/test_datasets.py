import pytest
import numpy as np
import pandas as pd
import numpy.testing as npt
from scipy import stats
from scipy.integrate import quad, dblquad

from krflow.calc import make_rng
from krflow.datasets import (SENTINEL, get_target, logistic_target, lognormal_target, uniform_target,
                             uniform_hole_target, mixture_target, mixture_centers, gaussian_target, hole_spec,
                             hole_region, holes_target, sample_target, logpdf_target, analytic_entropy,
                             estimate_entropy_mc, estimate_normalizer, cached_normalizer, normalized_target,
                             export_samples)


@pytest.fixture
def rng():
    return make_rng(101)


class TestOneDimensional:

    def test_logistic_density_at_loc(self):
        npt.assert_allclose(np.exp(logpdf_target(logistic_target(0., 2.), [[0.]])), 1. / 8.)

    def test_logistic_entropy(self):
        npt.assert_allclose(analytic_entropy(logistic_target(0., 2.)), 2. + np.log(2.))

    def test_logistic_gradient(self):
        dist = logistic_target(0.5, 2.)
        y = np.array([[-3.], [0.2], [4.]])
        h = 1e-6
        fd = (dist.logpdf(y + h) - dist.logpdf(y - h)) / (2 * h)
        npt.assert_allclose(dist.grad_logpdf(y)[:, 0], fd, rtol=1e-6)

    def test_lognormal_entropy(self):
        npt.assert_allclose(analytic_entropy(lognormal_target()), 0.5 * np.log(2 * np.pi) + 0.5)

    def test_lognormal_support(self):
        lp = lognormal_target().logpdf([[-1.], [0.], [1.]])
        assert lp[0] == SENTINEL and lp[1] == SENTINEL
        npt.assert_allclose(lp[2], -0.5 * np.log(2 * np.pi))

    def test_uniform(self):
        dist = uniform_target(-1., 1.)
        npt.assert_allclose(analytic_entropy(dist), np.log(2.))
        lp = dist.logpdf([[0.], [2.]])
        npt.assert_allclose(lp[0], -np.log(2.))
        assert lp[1] == SENTINEL

    def test_error_uniform_bounds(self):
        with pytest.raises(ValueError):
            uniform_target(1., 1.)

    def test_uniform_hole_samples(self, rng):
        s = sample_target(uniform_hole_target(), rng, 5000)
        a = np.abs(s[:, 0])
        assert np.all((a >= 0.5) & (a <= 1.5))
        npt.assert_allclose(np.mean(s[:, 0] > 0), 0.5, atol=0.03)

    def test_uniform_hole_density(self):
        dist = uniform_hole_target()
        lp = dist.logpdf([[0.], [1.], [-1.]])
        assert lp[0] == SENTINEL
        npt.assert_allclose(lp[1:], -np.log(2.))
        npt.assert_allclose(analytic_entropy(dist), np.log(2.))

    @pytest.mark.parametrize('dist, points', [(logistic_target(0., 2.), None),
                                              (uniform_hole_target(), [-1.5, -0.5, 0.5, 1.5])])
    def test_normalized_by_quadrature(self, dist, points):
        total, _ = quad(lambda v: np.exp(dist.logpdf([[v]])[0]), -40., 40., points=points, limit=200)
        npt.assert_allclose(total, 1., atol=1e-6)

    def test_entropy_estimate_matches_closed_form(self, rng):
        est = estimate_entropy_mc(logistic_target(), rng, 100000)
        assert abs(est.value - (2. + np.log(2.))) < 4 * est.std_err + 1e-3

    def test_sample_shape(self, rng):
        assert sample_target(lognormal_target(), rng, 12).shape == (12, 1)

    def test_error_zero_samples(self, rng):
        with pytest.raises(ValueError):
            sample_target(logistic_target(), rng, 0)


class TestMixture:

    def test_centers(self):
        c = mixture_centers()
        npt.assert_allclose(c[-1], [5., 0.], atol=1e-12)
        npt.assert_allclose(c[0], [2.5, 5 * np.sqrt(3) / 2])
        npt.assert_allclose(np.linalg.norm(c, axis=1), 5.)

    def test_density_at_center(self):
        dist = mixture_target()
        expected = np.log(np.sum(np.exp(-0.5 * np.sum((mixture_centers()[-1] - mixture_centers()) ** 2, axis=1)))
                          / (6 * 2 * np.pi))
        npt.assert_allclose(dist.logpdf([[5., 0.]]), expected)

    def test_gradient(self, rng):
        dist = mixture_target()
        y = 4 * rng.standard_normal((3, 2))
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (dist.logpdf(y + e) - dist.logpdf(y - e)) / (2 * h)
            npt.assert_allclose(dist.grad_logpdf(y)[:, j], fd, rtol=1e-5, atol=1e-8)

    def test_no_closed_form_entropy(self):
        assert analytic_entropy(mixture_target()) is None

    def test_samples_cover_modes(self, rng):
        s = mixture_target().sample(rng, 6000)
        nearest = np.argmin(np.sum((s[:, None, :] - mixture_centers()[None]) ** 2, axis=2), axis=1)
        npt.assert_allclose(np.bincount(nearest, minlength=6) / 6000, 1. / 6., atol=0.03)
        assert stats.chisquare(np.bincount(nearest, minlength=6)).pvalue > 1e-3

    def test_normalized_by_quadrature(self):
        dist = mixture_target()
        total, _ = dblquad(lambda b, a: np.exp(dist.logpdf([[a, b]])[0]), -12., 12., -12., 12., epsabs=1e-8)
        npt.assert_allclose(total, 1., atol=1e-6)

    def test_entropy_baseline(self):
        dist = normalized_target(mixture_target(), seed=4, n_entropy=20000)
        assert dist.entropy_seed == 4
        assert dist.normalizer is None
        again = normalized_target(mixture_target(), seed=4, n_entropy=20000)
        assert again.entropy_estimate == dist.entropy_estimate
        assert dist.reference_entropy() == dist.entropy_estimate.value

        def integrand(b, a):
            lp = dist.logpdf([[a, b]])[0]
            return -np.exp(lp) * lp

        exact, _ = dblquad(integrand, -12., 12., -12., 12., epsabs=1e-7)
        est = dist.entropy_estimate
        assert abs(est.value - exact) < 4 * est.std_err


class TestHoles:

    @pytest.fixture
    def spec(self):
        return hole_spec(4)

    def test_region(self, spec):
        inside = hole_region(spec, np.array([[0., 0., 0., 0.], [10., 10., 10., 10.]]))
        assert not inside[0]
        assert inside[1]

    def test_samples_avoid_holes(self, spec, rng):
        s = holes_target(4).sample(rng, 500)
        assert s.shape == (500, 4)
        assert np.all(hole_region(spec, s))

    def test_unnormalized(self):
        dist = holes_target(4)
        assert not dist.normalized
        assert analytic_entropy(dist) is None
        with pytest.raises(ValueError):
            estimate_entropy_mc(dist, make_rng(0), 10)

    def test_sentinel_inside_hole(self):
        assert holes_target(4).logpdf(np.zeros((1, 4)))[0] == SENTINEL

    def test_gradient(self, rng):
        dist = holes_target(4)
        y = dist.sample(rng, 3)
        h = 1e-6
        e = np.zeros(4)
        e[2] = h
        fd = (dist.logpdf(y + e) - dist.logpdf(y - e)) / (2 * h)
        npt.assert_allclose(dist.grad_logpdf(y)[:, 2], fd, rtol=1e-5)

    def test_zero_threshold_has_no_holes(self):
        est = estimate_normalizer(hole_spec(4, threshold=0.), make_rng(0), 10000)
        assert est.value == 0.

    def test_normalizer(self, spec):
        est = estimate_normalizer(spec, make_rng(0), 20000)
        assert est.value < 0.
        assert est.std_err > 0.
        assert est.n == 20000

    def test_error_small_normalizer_budget(self, spec):
        with pytest.raises(ValueError):
            estimate_normalizer(spec, make_rng(0), 100)

    def test_error_degenerate(self):
        with pytest.raises(ValueError):
            estimate_normalizer(hole_spec(2, threshold=1e6), make_rng(0), 10000)

    def test_error_spec(self):
        with pytest.raises(ValueError):
            hole_spec(1)
        with pytest.raises(ValueError):
            hole_spec(4, aspect=0.)
        with pytest.raises(ValueError):
            hole_spec(4, threshold=-1.)

    def test_cached_normalizer(self, spec):
        a = cached_normalizer(spec, 3, 10000)
        b = cached_normalizer(spec, 3, 10000)
        assert a is b
        assert a.seed == 3

    def test_normalized_target(self):
        dist = normalized_target(holes_target(4), seed=1, n_mc=10000, n_entropy=2000)
        assert dist.normalized
        assert dist.reference_entropy() == dist.entropy_estimate.value
        raw = holes_target(4)
        y = raw.sample(make_rng(2), 5)
        npt.assert_allclose(dist.logpdf(y), raw.logpdf(y) - dist.normalizer.ln_EIB)

    def test_normalized_target_leaves_others(self):
        dist = logistic_target()
        assert normalized_target(dist, seed=1) is dist
        assert dist.normalizer is None


class TestRegistry:

    @pytest.mark.parametrize('name', ['logistic', 'lognormal', 'uniform', 'uniform_hole', 'mixture2d', 'gaussian',
                                      'holes'])
    def test_names(self, name):
        assert get_target(name).name == name

    def test_params(self):
        assert get_target('gaussian', dims=3).dims == 3

    def test_error_unknown(self):
        with pytest.raises(ValueError, match='available targets'):
            get_target('cauchy')

    def test_error_params(self):
        with pytest.raises(ValueError):
            get_target('logistic', shape=2.)

    def test_gaussian_entropy(self):
        npt.assert_allclose(analytic_entropy(gaussian_target(2)), np.log(2 * np.pi * np.e))

    def test_shift(self):
        dist = logistic_target()
        shifted = dist.shift(5.)
        assert not shifted.normalized
        npt.assert_allclose(shifted.logpdf([[1.]]), dist.logpdf([[1.]]) + 5.)
        npt.assert_allclose(shifted.grad_logpdf([[1.]]), dist.grad_logpdf([[1.]]))


class TestExport:

    def test_csv(self, tmp_path):
        samples = np.array([[0.1, 1. / 3.], [-2., 1e-20]])
        path = str(tmp_path / 'samples.csv')
        export_samples(samples, path, comments=['config_hash: abc', 'seed: 0'])
        with open(path) as f:
            lines = f.read().splitlines()
        assert lines[:3] == ['# config_hash: abc', '# seed: 0', 'y1,y2']
        df = pd.read_csv(path, comment='#')
        npt.assert_array_equal(df.values, samples)
