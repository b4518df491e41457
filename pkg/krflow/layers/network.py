from collections import OrderedDict, namedtuple

import numpy as np

from krflow.calc import check_positivity_or_throw

MlpCache = namedtuple('MlpCache', ['owner', 'version', 'x', 'a1', 'a2'])

# activation -> (function, derivative written in terms of the activation output)
_activations = {'tanh': (np.tanh, lambda a: 1.0 - a ** 2),
                'sigmoid': (lambda z: 0.5 * (np.tanh(0.5 * z) + 1.0), lambda a: a * (1.0 - a))}


class MlpParams:
    r"""Weights of the two-hidden-layer network producing the scaling and translation of a coupling layer

    .. math::

        a_1 = \sigma(x W_1 + b_1), \; a_2 = \sigma(a_1 W_2 + b_2), \; (s, t) = a_2 W_3 + b_3

    Parameters
    ----------
    params : OrderedDict
        Arrays named W1, b1, W2, b2, W3, b3. Weight matrices are stored as (fan_in, fan_out)
    activation : str, optional
        Hidden activation. Options are 'tanh' (default) and 'sigmoid'
    heads : int, optional
        Number of output halves. 2 splits the output into s and t, 1 returns t only (translation coupling)
    """
    def __init__(self, params, activation='tanh', heads=2):
        if activation not in _activations:
            raise ValueError('activation must be one of ' + str(sorted(_activations)))
        if heads not in (1, 2):
            raise ValueError('heads must be 1 or 2')
        self.params = params
        self.activation = activation
        self.heads = heads
        self.version = 0
        if params['W3'].shape[1] % heads != 0:
            raise ValueError('output width must split evenly into %i heads' % heads)

    @property
    def in_dim(self):
        return self.params['W1'].shape[0]

    @property
    def hidden(self):
        return self.params['W1'].shape[1]

    @property
    def out_dim(self):
        return self.params['W3'].shape[1] // self.heads

    def touch(self):
        """Mark the weights as changed so caches produced before the change are rejected"""
        self.version += 1

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))


def _glorot_uniform_(rng, fan_in, fan_out):
    bound = np.sqrt(6. / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def mlp_init(rng, in_dim, hidden, out_dim, scheme='zero_output', activation='tanh', heads=2):
    """Initialize the coupling network. Hidden weights are Glorot-uniform, biases are zero

    Parameters
    ----------
    rng : numpy.random.Generator
        Random generator
    in_dim : int
        Width of the conditioning part
    hidden : int
        Width of both hidden layers
    out_dim : int
        Width of the updated part. The output layer has heads*out_dim units
    scheme : str, optional
        'zero_output' (default) sets W3 and b3 to zero so the coupling starts as the identity map. 'dense' also
        draws W3 Glorot-uniform, which is used for gradient audits on non-trivial networks
    activation : str, optional
        Hidden activation, default 'tanh'
    heads : int, optional
        2 for (s, t) output, 1 for t only

    Returns
    -------
    MlpParams
    """
    check_positivity_or_throw(in_dim, hidden, out_dim)
    if scheme not in ('zero_output', 'dense'):
        raise ValueError('scheme must be either "zero_output" or "dense"')
    p = OrderedDict()
    p['W1'] = _glorot_uniform_(rng, in_dim, hidden)
    p['b1'] = np.zeros(hidden)
    p['W2'] = _glorot_uniform_(rng, hidden, hidden)
    p['b2'] = np.zeros(hidden)
    if scheme == 'dense':
        p['W3'] = _glorot_uniform_(rng, hidden, heads * out_dim)
    else:
        p['W3'] = np.zeros((hidden, heads * out_dim))
    p['b3'] = np.zeros(heads * out_dim)
    return MlpParams(p, activation=activation, heads=heads)


def mlp_forward(p, x):
    """Evaluate the network on a batch

    Parameters
    ----------
    p : MlpParams
        Network weights
    x : numpy.ndarray
        Batch of shape (n_samples, in_dim)

    Returns
    -------
    tuple
        s, t, cache. s is None for a single-head network
    """
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ValueError('network expects input width %i, got shape %s' % (p.in_dim, str(x.shape)))
    act = _activations[p.activation][0]
    w = p.params
    a1 = act(x @ w['W1'] + w['b1'])
    a2 = act(a1 @ w['W2'] + w['b2'])
    out = a2 @ w['W3'] + w['b3']
    cache = MlpCache(p, p.version, x, a1, a2)
    if p.heads == 1:
        return None, out, cache
    k = p.out_dim
    return out[:, :k], out[:, k:], cache


def mlp_vjp(p, cache, cot_s, cot_t):
    """Vector-Jacobian product of the network. Parameter gradients are summed over the batch, the input gradient is
    returned per row

    Parameters
    ----------
    p : MlpParams
        Network weights used in the forward call
    cache : MlpCache
        Cache returned by mlp_forward
    cot_s : numpy.ndarray, None
        Cotangent of s. Ignored for a single-head network
    cot_t : numpy.ndarray
        Cotangent of t

    Returns
    -------
    tuple
        OrderedDict of parameter gradients and the input gradient
    """
    if cache.owner is not p or cache.version != p.version:
        raise ValueError('stale cache: network weights changed after the forward call')
    dact = _activations[p.activation][1]
    w = p.params
    if p.heads == 1:
        cot_o = cot_t
    else:
        cot_o = np.concatenate([cot_s, cot_t], axis=1)
    g = OrderedDict()
    g['W3'] = cache.a2.T @ cot_o
    g['b3'] = cot_o.sum(axis=0)
    dz2 = (cot_o @ w['W3'].T) * dact(cache.a2)
    g['W2'] = cache.a1.T @ dz2
    g['b2'] = dz2.sum(axis=0)
    dz1 = (dz2 @ w['W2'].T) * dact(cache.a1)
    g['W1'] = cache.x.T @ dz1
    g['b1'] = dz1.sum(axis=0)
    grad_x = dz1 @ w['W1'].T
    return OrderedDict((k, g[k]) for k in w), grad_x
