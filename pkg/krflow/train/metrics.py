import warnings

import numpy as np

from krflow.calc import as_batch, make_rng
from krflow.datasets import hole_region, mixture_centers
from krflow.flow import forward_logdensity, marginal_logdensity


def metric_delta(loss_estimate, entropy):
    r"""Relative error of a cross-entropy estimate with respect to the differential entropy

    .. math::

        \delta = \frac{|L - h(f)|}{h(f)}

    Parameters
    ----------
    loss_estimate : float
        Cross entropy L, e.g. the validation loss
    entropy : float
        Differential entropy h(f). Negative values are accepted with a warning

    Returns
    -------
    float
    """
    if entropy == 0:
        raise ValueError('relative error is undefined for zero entropy')
    if entropy < 0:
        warnings.warn('Differential entropy is negative; the relative error keeps its sign from h(f)', UserWarning)
    return abs(loss_estimate - entropy) / entropy


def model_logdensity(model, y, method='gamma_star', rng=None, n_mc=100):
    """Background function returning log p_Y(y) of a model, marginalized over gamma for augmented models"""
    if model.augmented:
        return marginal_logdensity(model, y, method=method, n_mc=n_mc, rng=rng)
    return forward_logdensity(model, y)[1]


def metric_rel_kl(model, validation, target, method='gamma_star', rng=None):
    r"""Relative Kullback-Leibler divergence estimated on samples of the target

    .. math::

        \frac{D_{KL}(p_{ref} \| p_Y)}{h(p_{ref})} \approx
        \frac{1}{N h(p_{ref})} \sum_i \left[\ln p_{ref}(y^{(i)}) - \ln p_Y(y^{(i)})\right]

    Parameters
    ----------
    model : FlowModel
        Model
    validation : array-like
        Samples of the target
    target : TargetDistribution
        Normalized target with an analytic or estimated entropy
    method : str, optional
        Marginal method of augmented models, 'gamma_star' (default) or 'mc'
    rng : numpy.random.Generator, optional
        Random generator for the 'mc' marginal

    Returns
    -------
    float
    """
    if not target.normalized:
        raise ValueError('relative KL requires a normalized target; attach a normalizer estimate first')
    h = target.reference_entropy()
    if h is None:
        raise ValueError('relative KL requires the entropy of the target')
    if h == 0:
        raise ValueError('relative KL is undefined for zero entropy')
    validation = as_batch(validation, model.n_data, 'validation')
    if method == 'mc' and rng is None:
        rng = make_rng(0)
    diff = target.logpdf(validation) - model_logdensity(model, validation, method, rng)
    return float(np.mean(diff) / h)


def mode_coverage(samples, radius=5., n_modes=6):
    """Share of samples closest to each mode of the mixture target"""
    samples = as_batch(samples, 2, 'samples')
    centers = mixture_centers(radius, n_modes)
    d = np.sum((samples[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.bincount(np.argmin(d, axis=1), minlength=n_modes) / samples.shape[0]


def hole_violation(spec, samples):
    """Share of samples that fall inside a hole of a holes distribution"""
    samples = as_batch(samples, spec.dims, 'samples')
    return float(1. - np.mean(hole_region(spec, samples)))
