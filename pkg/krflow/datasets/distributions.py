import functools
from collections import namedtuple

import numpy as np
import pandas as pd
from scipy import stats

from krflow.calc import as_batch, check_positivity_or_throw, logsumexp, make_rng, split_rng, mc_mean, MCEstimate

# log-density used for points outside the support
SENTINEL = -1e30

# samples of the Monte Carlo entropy baseline
ENTROPY_SAMPLES = 10 ** 6

HoleSpec = namedtuple('HoleSpec', ['dims', 'scale', 'aspect', 'threshold'])
Normalizer = namedtuple('Normalizer', ['ln_EIB', 'std_err', 'n_mc', 'seed'])


class TargetDistribution:
    """Benchmark distribution: sampler, (possibly unnormalized) log-density and its gradient, and the differential
    entropy where a closed form exists

    Parameters
    ----------
    name : str
        Name of the distribution
    dims : int
        Dimension
    sampler : callable
        Function (rng, n) -> samples of shape (n, dims)
    logpdf : callable
        Function of a batch returning the per-sample log-density. Points outside the support return SENTINEL
    grad_logpdf : callable
        Function of a batch returning the gradient of the log-density
    entropy : float, optional
        Analytic differential entropy
    normalized : bool, optional
        Whether logpdf integrates to 1
    params : dict, optional
        Parameters of the distribution, recorded in result files
    """
    def __init__(self, name, dims, sampler, logpdf, grad_logpdf, entropy=None, normalized=True, params=None):
        self.name = name
        self.dims = int(dims)
        self._sampler = sampler
        self._logpdf = logpdf
        self._grad = grad_logpdf
        self.entropy = entropy
        self.normalized = normalized
        self.params = params or {}
        self.normalizer = None
        self.entropy_estimate = None
        self.entropy_seed = None
        self.hole_spec = None
        self._shift = 0.

    def logpdf(self, y):
        y = as_batch(y, self.dims, 'y')
        lp = self._logpdf(y)
        if self.normalizer is not None:
            lp = np.where(lp > SENTINEL / 2, lp - self.normalizer.ln_EIB, lp)
        return lp + self._shift

    def grad_logpdf(self, y):
        return self._grad(as_batch(y, self.dims, 'y'))

    def sample(self, rng, n):
        check_positivity_or_throw(n)
        return self._sampler(rng, int(n))

    def attach_normalizer(self, normalizer):
        """Attach an estimate of ln E[I_B], after which logpdf is normalized"""
        self.normalizer = normalizer
        self.normalized = True
        return self

    def shift(self, c):
        """Copy of the distribution whose log-density is offset by the constant c (unnormalized)"""
        other = TargetDistribution(self.name, self.dims, self._sampler, self._logpdf, self._grad, self.entropy,
                                   normalized=False, params=dict(self.params))
        other.normalizer = self.normalizer
        other.hole_spec = self.hole_spec
        other._shift = self._shift + c
        return other

    def reference_entropy(self):
        """Analytic entropy if available, otherwise the attached Monte Carlo estimate (or None)"""
        if self.entropy is not None:
            return self.entropy
        if self.entropy_estimate is not None:
            return self.entropy_estimate.value
        return None

    def __repr__(self):
        return 'TargetDistribution(%s, dims=%i)' % (self.name, self.dims)


def _with_support_(logp, inside):
    return np.where(inside, logp, SENTINEL)


def logistic_target(loc=0., scale=2.):
    r"""One-dimensional logistic distribution

    .. math::

        \rho(y) = \frac{e^{-(y - \mu)/s}}{s (1 + e^{-(y - \mu)/s})^2}, \quad h = \ln s + 2
    """
    check_positivity_or_throw(scale)
    dist = stats.logistic(loc=loc, scale=scale)
    return TargetDistribution('logistic', 1,
                              lambda rng, n: dist.rvs(size=(n, 1), random_state=rng),
                              lambda y: dist.logpdf(y[:, 0]),
                              lambda y: -np.tanh((y - loc) / (2 * scale)) / scale,
                              entropy=float(dist.entropy()), params={'loc': loc, 'scale': scale})


def lognormal_target():
    r"""Standard lognormal distribution, h = ln(2 pi)/2 + 1/2"""
    dist = stats.lognorm(s=1.)

    def logpdf(y):
        inside = y[:, 0] > 0
        safe = np.where(inside, y[:, 0], 1.)
        return _with_support_(dist.logpdf(safe), inside)

    def grad(y):
        safe = np.where(y > 0, y, 1.)
        return np.where(y > 0, -(1. + np.log(safe)) / safe, 0.)

    return TargetDistribution('lognormal', 1, lambda rng, n: dist.rvs(size=(n, 1), random_state=rng), logpdf, grad,
                              entropy=float(dist.entropy()))


def uniform_target(low=-1., high=1.):
    """Uniform distribution on [low, high], h = ln(high - low)"""
    if not high > low:
        raise ValueError('uniform target requires high > low')
    dist = stats.uniform(loc=low, scale=high - low)

    def logpdf(y):
        inside = (y[:, 0] >= low) & (y[:, 0] <= high)
        return _with_support_(np.full(y.shape[0], -np.log(high - low)), inside)

    return TargetDistribution('uniform', 1, lambda rng, n: dist.rvs(size=(n, 1), random_state=rng), logpdf,
                              lambda y: np.zeros_like(y), entropy=float(dist.entropy()),
                              params={'low': low, 'high': high})


def uniform_hole_target():
    """Uniform distribution on [-1.5, -0.5] U [0.5, 1.5]. The support has length 2, so h = ln 2"""
    def sampler(rng, n):
        u = rng.uniform(-1., 1., size=(n, 1))
        return u + 0.5 * np.sign(u)

    def logpdf(y):
        a = np.abs(y[:, 0])
        return _with_support_(np.full(y.shape[0], -np.log(2.)), (a >= 0.5) & (a <= 1.5))

    return TargetDistribution('uniform_hole', 1, sampler, logpdf, lambda y: np.zeros_like(y), entropy=np.log(2.))


def mixture_centers(radius=5., n_modes=6):
    angles = 2 * np.pi * np.arange(1, n_modes + 1) / n_modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def mixture_target(radius=5., n_modes=6):
    r"""Mixture of standard Gaussians located uniformly on a circle

    .. math::

        f(y) = \frac{1}{6} \sum_{i=1}^{6} \frac{1}{2\pi} e^{-\|y - y_i\|^2 / 2}, \quad
        y_i = 5 (\cos(i \pi / 3), \sin(i \pi / 3))
    """
    centers = mixture_centers(radius, n_modes)

    def sampler(rng, n):
        which = rng.integers(0, n_modes, size=n)
        return centers[which] + rng.standard_normal((n, 2))

    def terms(y):
        return -0.5 * np.sum((y[:, None, :] - centers[None, :, :]) ** 2, axis=2)

    def logpdf(y):
        return logsumexp(terms(y), axis=1) - np.log(n_modes) - np.log(2 * np.pi)

    def grad(y):
        t = terms(y)
        w = np.exp(t - logsumexp(t, axis=1)[:, None])
        return w @ centers - y

    return TargetDistribution('mixture2d', 2, sampler, logpdf, grad,
                              params={'radius': radius, 'n_modes': n_modes})


def gaussian_target(dims=1):
    """Standard normal distribution, the prior of every model"""
    def logpdf(y):
        return -0.5 * np.sum(y ** 2, axis=1) - 0.5 * y.shape[1] * np.log(2 * np.pi)

    return TargetDistribution('gaussian', dims, lambda rng, n: rng.standard_normal((n, dims)), logpdf,
                              lambda y: -y, entropy=0.5 * dims * np.log(2 * np.pi * np.e), params={'dims': dims})


def hole_spec(dims, scale=2., aspect=3., threshold=7.6):
    """Validated HoleSpec"""
    if int(dims) < 2:
        raise ValueError('holes distribution needs at least two dimensions')
    if aspect <= 0:
        raise ValueError('hole aspect must be positive')
    check_positivity_or_throw(scale)
    if threshold < 0:
        raise ValueError('hole threshold must be non-negative')
    return HoleSpec(int(dims), float(scale), float(aspect), float(threshold))


def hole_region(spec, y):
    r"""Indicator of the acceptance region B. A sample is kept when, for every pair of neighbouring coordinates,

    .. math::

        \| R_{\gamma, \theta_j} [y_j, y_{j+1}]^T \|_2 \geq C

    with R = diag(gamma, 1) times the rotation by theta_j = pi/4 for even j and 3 pi/4 for odd j (j = 1..n-1)
    """
    inside = np.ones(y.shape[0], dtype=bool)
    for j in range(1, spec.dims):
        theta = np.pi / 4 if j % 2 == 0 else 3 * np.pi / 4
        a, b = y[:, j - 1], y[:, j]
        v1 = spec.aspect * (np.cos(theta) * a - np.sin(theta) * b)
        v2 = np.sin(theta) * a + np.cos(theta) * b
        inside &= np.sqrt(v1 ** 2 + v2 ** 2) >= spec.threshold
    return inside


def _rejection_sample_(spec, rng, n, window=10 ** 6):
    proposal = stats.logistic(scale=spec.scale)
    accepted, n_accepted, n_proposed = [], 0, 0
    batch = max(1000, 2 * n)
    while n_accepted < n:
        y = proposal.rvs(size=(batch, spec.dims), random_state=rng)
        keep = y[hole_region(spec, y)]
        accepted.append(keep)
        n_accepted += keep.shape[0]
        n_proposed += batch
        if n_proposed >= window and n_accepted < 1e-6 * n_proposed:
            raise ValueError('acceptance rate of the holes distribution is below 1e-6; the hole specification is '
                             'degenerate')
    return np.concatenate(accepted, axis=0)[:n]


def holes_target(dims=4, scale=2., aspect=3., threshold=7.6):
    r"""Logistic distribution with holes. The reference density is

    .. math::

        p_{ref}(y) = \frac{I_B(y) \prod_i \rho(y_i)}{E[I_B(Y)]}

    with rho logistic. The normalizer E[I_B] is unknown, so the log-density is unnormalized until an estimate is
    attached with attach_normalizer()
    """
    spec = hole_spec(dims, scale, aspect, threshold)
    proposal = stats.logistic(scale=spec.scale)

    def logpdf(y):
        return _with_support_(np.sum(proposal.logpdf(y), axis=1), hole_region(spec, y))

    def grad(y):
        inside = hole_region(spec, y)[:, None]
        return np.where(inside, -np.tanh(y / (2 * spec.scale)) / spec.scale, 0.)

    dist = TargetDistribution('holes', spec.dims, lambda rng, n: _rejection_sample_(spec, rng, n), logpdf, grad,
                              normalized=False, params=dict(spec._asdict()))
    dist.hole_spec = spec
    return dist


def sample_target(dist, rng, n):
    """Draw n exact samples of a target distribution

    Parameters
    ----------
    dist : TargetDistribution
        Distribution
    rng : numpy.random.Generator
        Random generator
    n : int
        Number of samples, n >= 1

    Returns
    -------
    numpy.ndarray
    """
    return dist.sample(rng, n)


def logpdf_target(dist, y):
    """Per-sample log-density of a target distribution, SENTINEL outside the support"""
    return dist.logpdf(y)


def analytic_entropy(dist):
    """Closed-form differential entropy, None where no closed form exists (holes, mixture)"""
    return dist.entropy


def estimate_entropy_mc(dist, rng, n):
    """Monte Carlo estimate of the differential entropy, -mean(log f(Y)) over samples of f

    Parameters
    ----------
    dist : TargetDistribution
        Normalized distribution (holes distributions need an attached normalizer)
    rng : numpy.random.Generator
        Random generator
    n : int
        Number of samples

    Returns
    -------
    MCEstimate
    """
    if not dist.normalized:
        raise ValueError('entropy of an unnormalized distribution requires a normalizer estimate')
    return mc_mean(-dist.logpdf(dist.sample(rng, n)))


def estimate_normalizer(spec, rng, n_mc=10 ** 5):
    """Estimate ln E[I_B(Y)] of a holes distribution from the acceptance rate of logistic proposals

    Parameters
    ----------
    spec : HoleSpec
        Holes specification
    rng : numpy.random.Generator
        Random generator
    n_mc : int, optional
        Number of proposals, at least 10^4. Default is 10^5

    Returns
    -------
    MCEstimate
        value is ln E[I_B], std_err its delta-method standard error
    """
    if n_mc < 10 ** 4:
        raise ValueError('normalizer estimate requires n_mc >= 10^4')
    y = stats.logistic(scale=spec.scale).rvs(size=(int(n_mc), spec.dims), random_state=rng)
    rate = mc_mean(hole_region(spec, y).astype(float))
    if rate.value == 0:
        raise ValueError('no proposal was accepted; the hole specification is degenerate')
    return MCEstimate(float(np.log(rate.value)), rate.std_err / rate.value, rate.n)


@functools.lru_cache(maxsize=32)
def cached_normalizer(spec, seed, n_mc):
    """Normalizer estimate memoized by (spec, seed, n_mc), so relative KL values are reproducible"""
    est = estimate_normalizer(spec, make_rng(seed), n_mc)
    return Normalizer(est.value, est.std_err, int(n_mc), int(seed))


_targets = {'logistic': logistic_target, 'lognormal': lognormal_target, 'uniform': uniform_target,
            'uniform_hole': uniform_hole_target, 'mixture2d': mixture_target, 'gaussian': gaussian_target,
            'holes': holes_target}


def get_target(name, **params):
    """Create a benchmark distribution by name. Available: logistic, lognormal, uniform, uniform_hole, mixture2d,
    gaussian, holes"""
    if name not in _targets:
        raise ValueError('unknown target "%s"; available targets are %s' % (name, ', '.join(sorted(_targets))))
    try:
        return _targets[name](**params)
    except TypeError as e:
        raise ValueError('invalid parameters for target "%s": %s' % (name, e))


def export_samples(samples, path, comments=None):
    """Write samples as comma-separated text, one sample per row, with a header row y1..yn. Comment lines (prefixed
    by '#') are written first

    Parameters
    ----------
    samples : numpy.ndarray
        Batch of samples
    path : str
        Output file
    comments : list, optional
        Lines written as comments before the header
    """
    samples = np.asarray(samples)
    df = pd.DataFrame(samples, columns=['y' + str(i + 1) for i in range(samples.shape[1])])
    with open(path, 'w', newline='') as f:
        for line in comments or []:
            f.write('# ' + line + '\n')
        df.to_csv(f, index=False, float_format='%.17g')


def normalized_target(dist, seed, n_mc=10 ** 5, n_entropy=ENTROPY_SAMPLES):
    """Attach the reference quantities the metrics need. A holes distribution gets its normalizer and a Monte Carlo
    entropy estimate; any other normalized distribution without a closed-form entropy (the mixture) gets the Monte
    Carlo entropy estimate. The estimate is drawn from a stream of the seed, so repeated calls with the same seed
    reproduce it, and the seed is stored with it. Distributions with an analytic entropy are returned unchanged

    Parameters
    ----------
    dist : TargetDistribution
        Distribution
    seed : int
        Seed of the estimates, recorded with them
    n_mc : int, optional
        Proposals for the normalizer
    n_entropy : int, optional
        Samples for the entropy estimate. Default is 10**6

    Returns
    -------
    TargetDistribution
    """
    if dist.hole_spec is not None and dist.normalizer is None:
        dist.attach_normalizer(cached_normalizer(dist.hole_spec, seed, n_mc))
    elif dist.entropy is not None or dist.entropy_estimate is not None or not dist.normalized:
        return dist
    dist.entropy_estimate = estimate_entropy_mc(dist, split_rng(seed, 8)[7], n_entropy)
    dist.entropy_seed = int(seed)
    return dist
