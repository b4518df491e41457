import warnings
import weakref
from collections import namedtuple

import numpy as np

from krflow.calc import check_finite_or_throw, std_normal_logpdf, make_rng

AdjointState = namedtuple('AdjointState', ['lam', 'state'])


class HeldCache:
    """Layer cache held by a gradient pass, counted by the CacheLedger that issued it until it is released"""
    __slots__ = ('cache', '__weakref__')

    def __init__(self, cache):
        self.cache = cache


class CacheLedger:
    """Counts the layer caches a gradient pass keeps alive.

    Every cache goes through hold(), which wraps it and attaches a finalizer to the wrapper. The live count drops
    only when the wrapper is garbage collected, so a pass that keeps a list of caches shows up in the peak.
    """
    def __init__(self):
        self.live = 0
        self.peak = 0
        self.held = 0

    def hold(self, cache):
        item = HeldCache(cache)
        weakref.finalize(item, self._release_)
        self.live += 1
        self.held += 1
        self.peak = max(self.peak, self.live)
        return item

    def _release_(self):
        self.live -= 1

    def stats(self, n_layers):
        return {'max_live_caches': self.peak, 'live_caches': self.live, 'caches_held': self.held,
                'n_layers': n_layers}


class GradientBundle:
    """Gradient of a loss with respect to every trainable parameter, laid out like the model's parameter registry

    Parameters
    ----------
    values : numpy.ndarray
        Flat gradient vector
    registry : ParameterRegistry
        Registry of the model the gradient belongs to
    input_grad : numpy.ndarray, optional
        Per-sample gradient of the per-sample loss with respect to the model input
    stats : dict, optional
        Bookkeeping of the gradient pass, e.g. the largest number of layer caches held at once
    """
    def __init__(self, values, registry, input_grad=None, stats=None):
        if values.shape != (registry.size, ):
            raise ValueError('gradient length does not match the parameter registry')
        self.values = values
        self.registry = registry
        self.input_grad = input_grad
        self.stats = stats or {}

    def __len__(self):
        return self.values.size

    def by_layer(self):
        """Per-layer slices as {layer position: {parameter name: array}}"""
        out = {}
        for e in self.registry.entries:
            out.setdefault(e.position, {})[e.name] = self.values[e.offset:e.offset + e.size].reshape(e.shape)
        return out

    def __add__(self, other):
        return GradientBundle(self.values + other.values, self.registry)


def _prepare_(model, y, gamma):
    x = model.join(y, gamma)
    model.initialize(y, gamma)
    return x


def backprop_grad(model, y, gamma=None):
    """Mean negative log-density and its gradient by reverse accumulation through cached forward passes

    Parameters
    ----------
    model : FlowModel
        Model
    y : array-like
        Data batch
    gamma : array-like, optional
        Augmented dimensions, required for augmented models

    Returns
    -------
    tuple
        loss, GradientBundle
    """
    x = _prepare_(model, y, gamma)
    n = x.shape[0]
    ledger = CacheLedger()
    caches = []
    logdet = np.zeros(n)
    for i, layer in enumerate(model.layers):
        x, ld, cache = layer.forward(x, cache=True)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(ld))):
            raise FloatingPointError('non-finite output at layer %i (%s)' % (i, layer.kind))
        logdet += ld
        caches.append(ledger.hold(cache))
        del cache
    loss = -np.mean(std_normal_logpdf(x) + logdet)
    check_finite_or_throw(loss, 'loss')
    flat = np.zeros(model.registry.size)
    cot = x.copy()
    cot_logdet = -np.ones(n)
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        grads, cot = layer.vjp(caches[i].cache, cot, cot_logdet)
        caches[i] = None
        model.registry.accumulate(flat, layer, grads)
    flat /= n
    check_finite_or_throw(flat, 'gradient')
    return loss, GradientBundle(flat, model.registry, input_grad=cot,
                                stats=ledger.stats(len(model.layers)))


def adjoint_grad(model, y, gamma=None):
    r"""Mean negative log-density and its gradient by the discrete adjoint method.

    The forward pass keeps only z and the per-layer logdets. Starting from the terminal condition
    lambda = -grad log p_Z(z), the backward pass reconstructs each layer input by exact inversion, re-runs the
    layer's local forward to obtain its vector-Jacobian product, and applies

    .. math::

        \lambda_{[i-1]} = (\nabla_{y_{[i]}} F_{[i]})^T \lambda_{[i]} - \nabla_{y_{[i]}} g_{[i]}, \quad
        \nabla_{\theta_{[i]}} L = (\nabla_{\theta_{[i]}} F_{[i]})^T \lambda_{[i]} - \nabla_{\theta_{[i]}} g_{[i]}

    where g is the layer log-determinant. At most one layer cache is alive at any time.

    Parameters
    ----------
    model : FlowModel
        Model
    y : array-like
        Data batch
    gamma : array-like, optional
        Augmented dimensions, required for augmented models

    Returns
    -------
    tuple
        loss, GradientBundle
    """
    x = _prepare_(model, y, gamma)
    n = x.shape[0]
    z, logdet = model.transform(x)
    loss = -np.mean(std_normal_logpdf(z) + logdet)
    check_finite_or_throw(loss, 'loss')
    flat = np.zeros(model.registry.size)
    # terminal condition: lambda = -grad log p_Z(z) = z
    adj = AdjointState(z.copy(), z)
    cot_logdet = -np.ones(n)
    ledger = CacheLedger()
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        previous = layer.inverse(adj.state)
        if not np.all(np.isfinite(previous)):
            raise FloatingPointError('inversion failed at layer %i (%s)' % (i, layer.kind))
        held = ledger.hold(layer.forward(previous, cache=True)[2])
        grads, lam = layer.vjp(held.cache, adj.lam, cot_logdet)
        del held
        model.registry.accumulate(flat, layer, grads)
        adj = AdjointState(lam, previous)
    flat /= n
    check_finite_or_throw(flat, 'gradient')
    return loss, GradientBundle(flat, model.registry, input_grad=adj.lam,
                                stats=ledger.stats(len(model.layers)))


def reparam_grad(model, z, log_target, grad_log_target):
    r"""Reverse Kullback-Leibler objective and its gradient along the sampling path y = f^{-1}(z) for fixed prior
    noise z

    .. math::

        J = \frac{1}{N} \sum_i \left[\log p_Z(z^{(i)}) + \sum_k g_{[k]}(y^{(i)}_{[k]}) - \log \hat{p}(y^{(i)})\right]

    The sweep runs through the layers in forward order from the sampled state. Each layer contributes
    grad_theta g - (grad_theta F)^T nu with nu solving (grad_y F)^T nu = mu, where mu is the cotangent of J at the
    layer input, so only one layer cache is alive at a time.

    Parameters
    ----------
    model : FlowModel
        Model, initialized
    z : numpy.ndarray
        Prior noise of shape (N, n_total)
    log_target : callable
        Target log-density of the full model state (unnormalized allowed)
    grad_log_target : callable
        Gradient of log_target with respect to the state

    Returns
    -------
    tuple
        loss, GradientBundle, sampled state
    """
    n = z.shape[0]
    x0 = model.inverse_transform(z)
    target = log_target(x0)
    mu = -np.asarray(grad_log_target(x0), dtype=np.float64)
    flat = np.zeros(model.registry.size)
    logdet = np.zeros(n)
    zeros = np.zeros(n)
    ones = np.ones(n)
    ledger = CacheLedger()
    x = x0
    for i, layer in enumerate(model.layers):
        out, ld, cache = layer.forward(x, cache=True)
        held = ledger.hold(cache)
        del cache
        logdet += ld
        g_param, g_input = layer.vjp(held.cache, np.zeros_like(x), ones)
        mu = mu + g_input
        nu = layer.transpose_solve(held.cache, mu)
        f_param, _ = layer.vjp(held.cache, -nu, zeros)
        del held
        model.registry.accumulate(flat, layer, g_param)
        model.registry.accumulate(flat, layer, f_param)
        mu = nu
        x = out
    loss = np.mean(std_normal_logpdf(z) + logdet - target)
    check_finite_or_throw(loss, 'loss')
    flat /= n
    check_finite_or_throw(flat, 'gradient')
    return loss, GradientBundle(flat, model.registry, stats=ledger.stats(len(model.layers))), x0


def _loss_only_(model, x):
    z, logdet = model.transform(x)
    return -np.mean(std_normal_logpdf(z) + logdet)


def grad_check(model, y, gamma=None, eps=1e-5, n_probes=50, rng=None, grad_path='adjoint'):
    """Audit the gradient against central finite differences of the mean negative log-density on randomly selected
    parameters

    The relative error of a probe is |fd - g| / max(|fd|, |g|, 1e-4), the floor keeping near-zero gradients from
    dominating

    Parameters
    ----------
    model : FlowModel
        Model
    y : array-like
        Data batch
    gamma : array-like, optional
        Augmented dimensions
    eps : float, optional
        Finite difference step. Default is 1e-5
    n_probes : int, optional
        Number of parameters probed. Default is 50
    rng : numpy.random.Generator, optional
        Selects the probed parameters. Default is a generator seeded with 0
    grad_path : str, optional
        'adjoint' (default) or 'backprop'

    Returns
    -------
    float
        Worst relative error over the probes
    """
    if eps <= 0:
        raise ValueError('eps must be positive')
    if n_probes <= 0:
        warnings.warn('grad_check called with zero probes; nothing was checked', UserWarning)
        return 0.
    if rng is None:
        rng = make_rng(0)
    path = {'adjoint': adjoint_grad, 'backprop': backprop_grad}
    if grad_path not in path:
        raise ValueError('grad_path must be either "adjoint" or "backprop"')
    _, bundle = path[grad_path](model, y, gamma)
    x = model.join(y, gamma)
    theta = model.get_flat_params()
    probes = rng.choice(theta.size, size=min(n_probes, theta.size), replace=False)
    worst = 0.
    try:
        for j in probes:
            shifted = theta.copy()
            shifted[j] += eps
            model.set_flat_params(shifted)
            up = _loss_only_(model, x)
            shifted[j] -= 2 * eps
            model.set_flat_params(shifted)
            down = _loss_only_(model, x)
            fd = (up - down) / (2 * eps)
            g = bundle.values[j]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-4))
    finally:
        model.set_flat_params(theta)
    return worst


def compare_paths(model, y, gamma=None):
    """Largest difference between the adjoint and backprop gradients, relative to the largest backprop entry"""
    _, adjoint = adjoint_grad(model, y, gamma)
    _, backprop = backprop_grad(model, y, gamma)
    scale = max(np.max(np.abs(backprop.values)), 1e-300)
    return float(np.max(np.abs(adjoint.values - backprop.values)) / scale)
