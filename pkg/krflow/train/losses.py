import numpy as np

from krflow.calc import gauss_sample, std_normal_logpdf, check_positivity_or_throw
from krflow.datasets import SENTINEL
from krflow.gradients import adjoint_grad, backprop_grad, reparam_grad


def estimation_loss(model, y, gamma=None, grad_path='adjoint'):
    r"""Cross entropy between the data and the model, with its gradient

    .. math::

        L = \frac{1}{N} \sum_i \ln \frac{p_\gamma(\gamma^{(i)})}{p(\gamma^{(i)}, y^{(i)})}

    For a regular model the numerator is dropped and L is the mean negative log-likelihood

    Parameters
    ----------
    model : FlowModel
        Model
    y : array-like
        Data minibatch
    gamma : array-like, optional
        Draws from the augmented prior, one per sample, required for augmented models
    grad_path : str, optional
        'adjoint' (default) or 'backprop'

    Returns
    -------
    tuple
        loss, GradientBundle
    """
    if grad_path == 'adjoint':
        loss, bundle = adjoint_grad(model, y, gamma)
    elif grad_path == 'backprop':
        loss, bundle = backprop_grad(model, y, gamma)
    else:
        raise ValueError('grad_path must be either "adjoint" or "backprop"')
    if model.augmented:
        loss += np.mean(std_normal_logpdf(np.asarray(gamma, dtype=np.float64).reshape(-1, model.m_aug)))
    return loss, bundle


def validation_loss(model, y, rng=None):
    """Estimation loss without gradient, e.g. on a validation set. Fresh gamma are drawn from rng for augmented
    models"""
    gamma = None
    if model.augmented:
        if rng is None:
            raise ValueError('validation of an augmented model requires a random generator')
        gamma = gauss_sample(rng, (np.shape(y)[0], model.m_aug))
    z, logdet = model.transform(model.join(y, gamma))
    loss = -np.mean(std_normal_logpdf(z) + logdet)
    if gamma is not None:
        loss += np.mean(std_normal_logpdf(gamma))
    return float(loss)


def _joint_target_(model, target):
    """Background function extending a target over the augmented dimensions with the standard normal p_gamma"""
    def log_target(x):
        y, gamma = model.split(x)
        lp = target.logpdf(y)
        if np.all(lp <= SENTINEL / 2):
            raise FloatingPointError('every model sample lies outside the support of the target')
        if gamma is not None:
            lp = lp + std_normal_logpdf(gamma)
        return lp

    def grad_log_target(x):
        y, gamma = model.split(x)
        g = target.grad_logpdf(y)
        if gamma is not None:
            g = np.concatenate([-gamma, g], axis=1)
        return g

    return log_target, grad_log_target


def approximation_loss(model, rng, batch_size, target, noise=None):
    r"""Reverse Kullback-Leibler divergence between the model and an (unnormalized) target, with its gradient

    .. math::

        J = \frac{1}{N} \sum_i \left[\ln p(y^{(i)}) - \ln \hat{p}(y^{(i)})\right], \quad y^{(i)} \sim p

    Every call draws a fresh minibatch from the model. For augmented models the target is extended by the
    augmented prior p_gamma. An additive constant in the target log-density changes the loss but not the gradient

    Parameters
    ----------
    model : FlowModel
        Model, initialized
    rng : numpy.random.Generator
        Random generator of the prior draws
    batch_size : int
        Minibatch size
    target : TargetDistribution
        Target distribution
    noise : numpy.ndarray, optional
        Prior draws to use instead of sampling from rng

    Returns
    -------
    tuple
        loss, GradientBundle
    """
    if target.dims != model.n_data:
        raise ValueError('target has %i dimensions but the model has %i' % (target.dims, model.n_data))
    if noise is None:
        check_positivity_or_throw(batch_size)
        noise = gauss_sample(rng, (int(batch_size), model.n_total))
    log_target, grad_log_target = _joint_target_(model, target)
    loss, bundle, _ = reparam_grad(model, noise, log_target, grad_log_target)
    return loss, bundle


def approximation_grad_check(model, target, noise, eps=1e-5, n_probes=50, rng=None):
    """Worst relative error of the reverse-KL gradient against central finite differences on randomly selected
    parameters, with the prior draws held fixed

    Returns
    -------
    float
    """
    if n_probes <= 0:
        return 0.
    _, bundle = approximation_loss(model, None, None, target, noise=noise)
    theta = model.get_flat_params()
    probes = rng.choice(theta.size, size=min(n_probes, theta.size), replace=False)
    worst = 0.
    try:
        for j in probes:
            shifted = theta.copy()
            shifted[j] += eps
            model.set_flat_params(shifted)
            up = approximation_loss(model, None, None, target, noise=noise)[0]
            shifted[j] -= 2 * eps
            model.set_flat_params(shifted)
            down = approximation_loss(model, None, None, target, noise=noise)[0]
            fd = (up - down) / (2 * eps)
            g = bundle.values[j]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-4))
    finally:
        model.set_flat_params(theta)
    return worst
