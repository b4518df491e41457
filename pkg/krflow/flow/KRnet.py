import copy
import math
from collections import namedtuple

import numpy as np
import pandas as pd
from tabulate import tabulate

from krflow.calc import (as_batch, check_finite_or_throw, gauss_sample, logsumexp, std_normal_logpdf,
                         check_positivity_or_throw)
from krflow.layers import AffineCoupling, ScaleBias, Rotation, Squeeze, CdfLayer, LogitTransform, prefix_mask

ParamEntry = namedtuple('ParamEntry', ['layer', 'position', 'name', 'shape', 'offset', 'size', 'category'])

_cdf_defaults = {'elements': 32, 'bound': 20., 'ratio': 1.15, 'tail_slope': 1e-10, 'on_augmented': False}


class FlowConfig:
    r"""Architecture of a KRnet, augmented KRnet, or KRnet_ODE model.

    The data vector is split into K blocks. Each outer stage applies an optional rotation, L inner blocks of
    (scale-bias, affine coupling), and a squeezing layer that deactivates the last active block. For an augmented model
    the m_aug extra dimensions gamma are placed in front of the data and join every coupling as the partner of the
    active data, so they are never deactivated.

    Parameters
    ----------
    n_data : int
        Number of data dimensions
    m_aug : int, optional
        Number of augmented dimensions. Default is 0 (regular KRnet)
    K : int, optional
        Number of data blocks. Default is 1
    block_sizes : list, optional
        Sizes of the K blocks. Default splits n_data as evenly as possible, larger blocks first
    L : int, optional
        Number of coupling layers per stage. Must be even. Default is 2
    hidden0 : int, optional
        Hidden width of the coupling networks in the first stage. Default is 24
    width_decay : float, optional
        Width decay r in (0, 1]. Stage k+1 uses ceil(r * width of stage k). Default is 1
    use_rotation : bool, optional
        Whether each stage starts with a rotation of the active data dimensions
    use_cdf_layer : bool, optional
        Whether the model ends with the nonlinear CDF layer
    alpha : float, optional
        Scale bound of the discrete couplings in (0, 1). Default is 0.6
    cdf : dict, optional
        CDF layer settings: elements (32), bound (20), ratio (1.15), tail_slope (1e-10), on_augmented (False)
    ode : dict, optional
        ODE settings {'n_steps': int, 'dt': float} with dt * n_steps = 1. Either key can be omitted
    tied : bool, optional
        Share the coupling parameters across ODE steps
    activation : str, optional
        Hidden activation of the coupling networks. Default is 'tanh'
    rotation_logdet : bool, optional
        Include log|det W| of the rotation layers in the density. Default is True
    volume_preserving : bool, optional
        Use translation-only couplings
    logit : dict, optional
        Logistic preprocessing {'scale', 'lower', 'upper'} applied to the data before the first layer
    data_init : bool, optional
        Initialize scale-bias layers from the first data batch. If False they start as the identity
    init_scheme : str, optional
        Coupling network initialization, 'zero_output' (default) or 'dense'

    Examples
    --------
    >>> from krflow.flow import FlowConfig
    >>> cfg = FlowConfig(n_data=2, m_aug=1, K=2, L=6, use_rotation=True, use_cdf_layer=True)
    """
    fields = ('n_data', 'm_aug', 'K', 'block_sizes', 'L', 'hidden0', 'width_decay', 'use_rotation', 'use_cdf_layer',
              'alpha', 'cdf', 'ode', 'tied', 'activation', 'rotation_logdet', 'volume_preserving', 'logit',
              'data_init', 'init_scheme')

    def __init__(self, n_data, m_aug=0, K=1, block_sizes=None, L=2, hidden0=24, width_decay=1.0, use_rotation=False,
                 use_cdf_layer=False, alpha=0.6, cdf=None, ode=None, tied=False, activation='tanh',
                 rotation_logdet=True, volume_preserving=False, logit=None, data_init=True,
                 init_scheme='zero_output'):
        self.n_data = self._int_field_('n_data', n_data, 1)
        self.m_aug = self._int_field_('m_aug', m_aug, 0)
        self.K = self._int_field_('K', K, 1)
        if self.K > self.n_data:
            raise ValueError('K: cannot split %i data dimensions into %i blocks' % (self.n_data, self.K))
        if block_sizes is None:
            base, extra = divmod(self.n_data, self.K)
            block_sizes = [base + 1 if i < extra else base for i in range(self.K)]
        block_sizes = [int(b) for b in block_sizes]
        if len(block_sizes) != self.K or any(b < 1 for b in block_sizes) or sum(block_sizes) != self.n_data:
            raise ValueError('block_sizes: must be K positive integers summing to n_data')
        self.block_sizes = block_sizes
        self.L = self._int_field_('L', L, 2)
        if self.L % 2 != 0:
            raise ValueError('L: the number of coupling layers per stage must be even')
        self.hidden0 = self._int_field_('hidden0', hidden0, 1)
        if not 0 < width_decay <= 1:
            raise ValueError('width_decay: must be in (0, 1]')
        self.width_decay = float(width_decay)
        if not 0 < alpha < 1:
            raise ValueError('alpha: must be in (0, 1)')
        self.alpha = float(alpha)
        self.use_rotation = bool(use_rotation)
        self.use_cdf_layer = bool(use_cdf_layer)
        cdf = dict(cdf or {})
        unknown = set(cdf) - set(_cdf_defaults)
        if unknown:
            raise ValueError('cdf: unknown keys ' + str(sorted(unknown)))
        self.cdf = dict(_cdf_defaults, **cdf)
        self.ode = self._ode_field_(ode)
        if self.ode is not None and (self.use_rotation or self.use_cdf_layer):
            raise ValueError('ode: rotation and cdf layers are not part of an ODE step')
        self.tied = bool(tied)
        if self.tied and self.ode is None:
            raise ValueError('tied: shared parameters require an ode configuration')
        if activation not in ('tanh', 'sigmoid'):
            raise ValueError('activation: must be "tanh" or "sigmoid"')
        self.activation = activation
        self.rotation_logdet = bool(rotation_logdet)
        self.volume_preserving = bool(volume_preserving)
        if logit is not None:
            logit = dict(logit)
            if set(logit) - {'scale', 'lower', 'upper'} or 'scale' not in logit:
                raise ValueError('logit: expected keys scale, lower, upper')
            logit = {'scale': float(logit['scale']), 'lower': float(logit.get('lower', 0.)),
                     'upper': float(logit.get('upper', 1.))}
        self.logit = logit
        self.data_init = bool(data_init)
        if init_scheme not in ('zero_output', 'dense'):
            raise ValueError('init_scheme: must be "zero_output" or "dense"')
        self.init_scheme = init_scheme
        if self.m_aug == 0 and self.K == 1 and self.n_data < 2:
            raise ValueError('n_data: a model without augmented dimensions needs at least two data dimensions')

    @staticmethod
    def _int_field_(name, value, minimum):
        if int(value) != value or value < minimum:
            raise ValueError('%s: must be an integer >= %i' % (name, minimum))
        return int(value)

    @staticmethod
    def _ode_field_(ode):
        if ode is None:
            return None
        ode = dict(ode)
        if set(ode) - {'n_steps', 'dt'}:
            raise ValueError('ode: expected keys n_steps, dt')
        if 'n_steps' not in ode and 'dt' not in ode:
            raise ValueError('ode: n_steps or dt must be given')
        if 'n_steps' in ode:
            n_steps = int(ode['n_steps'])
        else:
            n_steps = int(round(1. / float(ode['dt'])))
        if n_steps < 1:
            raise ValueError('ode: n_steps must be positive')
        dt = float(ode.get('dt', 1. / n_steps))
        if abs(dt * n_steps - 1.) > 1e-9:
            raise ValueError('ode: dt * n_steps must equal 1')
        return {'n_steps': n_steps, 'dt': dt}

    @property
    def n_total(self):
        return self.n_data + self.m_aug

    def is_uniform_partition(self):
        return len(set(self.block_sizes)) == 1

    def to_dict(self):
        return {f: copy.deepcopy(getattr(self, f)) for f in self.fields}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.fields)
        if unknown:
            raise ValueError('model: unknown keys ' + str(sorted(unknown)))
        if 'n_data' not in d:
            raise ValueError('model: n_data is required')
        return cls(**d)

    def __eq__(self, other):
        return isinstance(other, FlowConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return 'FlowConfig(' + ', '.join('%s=%r' % (k, v) for k, v in self.to_dict().items()) + ')'


class ParameterRegistry:
    """Flat index of every trainable array of a model. Each distinct layer is registered once, so tied layers that
    appear several times in the stack own a single slice"""
    def __init__(self, layers):
        self.entries = []
        self._by_layer = {}
        offset = 0
        seen = set()
        position = 0
        for layer in layers:
            if id(layer) in seen:
                continue
            seen.add(id(layer))
            own = []
            for name, value in layer.params.items():
                e = ParamEntry(layer, position, name, value.shape, offset, value.size, layer.category)
                own.append(e)
                offset += value.size
            self.entries.extend(own)
            self._by_layer[id(layer)] = own
            position += 1
        self.size = offset

    def values(self):
        if self.size == 0:
            return np.zeros(0)
        return np.concatenate([e.layer.params[e.name].ravel() for e in self.entries])

    def assign(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size, ):
            raise ValueError('parameter vector has length %i but the model has %i parameters'
                             % (vector.size, self.size))
        touched = {}
        for e in self.entries:
            e.layer.params[e.name][...] = vector[e.offset:e.offset + e.size].reshape(e.shape)
            touched[id(e.layer)] = e.layer
        for layer in touched.values():
            layer.touch()

    def accumulate(self, flat, layer, grads):
        """Add a layer's gradient dictionary into the flat gradient vector"""
        for e in self._by_layer[id(layer)]:
            flat[e.offset:e.offset + e.size] += np.asarray(grads[e.name]).ravel()

    def counts(self):
        out = {}
        for e in self.entries:
            out[e.category] = out.get(e.category, 0) + e.size
        return out


class FlowModel:
    """Ordered stack of invertible layers acting on the state (gamma, y) with a standard normal prior over all
    n_data + m_aug dimensions. Built by build_model()"""
    def __init__(self, config, layers, steps=None):
        self.config = config
        self.layers = layers
        self.steps = steps
        self.n_data = config.n_data
        self.m_aug = config.m_aug
        self.n_total = config.n_total
        self.registry = ParameterRegistry(layers)

    @property
    def augmented(self):
        return self.m_aug > 0

    @property
    def n_params(self):
        return self.registry.size

    def unique_layers(self):
        """Layers in stack order, each distinct layer once"""
        seen, out = set(), []
        for layer in self.layers:
            if id(layer) not in seen:
                seen.add(id(layer))
                out.append(layer)
        return out

    def join(self, y, gamma=None):
        """Stack data and augmented dimensions into the model state (gamma first)"""
        y = as_batch(y, self.n_data, 'y')
        if not self.augmented:
            if gamma is not None:
                raise ValueError('gamma was given but the model has no augmented dimensions')
            return y
        if gamma is None:
            raise ValueError('gamma is required for a model with augmented dimensions')
        gamma = as_batch(gamma, self.m_aug, 'gamma')
        if gamma.shape[0] != y.shape[0]:
            raise ValueError('y and gamma have a different number of samples')
        return np.concatenate([gamma, y], axis=1)

    def split(self, x):
        """Inverse of join(): returns (y, gamma), gamma is None for a regular model"""
        if not self.augmented:
            return x, None
        return x[:, self.m_aug:], x[:, :self.m_aug]

    def transform(self, x, trace=False):
        """Apply the full stack. Returns z and the per-sample total logdet, plus the list of intermediate states if
        trace is True"""
        states = [x]
        logdet = np.zeros(x.shape[0])
        for i, layer in enumerate(self.layers):
            x, ld, _ = layer.forward(x)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(ld))):
                raise FloatingPointError('non-finite output at layer %i (%s)' % (i, layer.kind))
            logdet += ld
            if trace:
                states.append(x)
        if trace:
            return x, logdet, states
        return x, logdet

    def inverse_transform(self, z):
        """Apply the inverse of every layer in reverse order"""
        x = z
        for i in reversed(range(len(self.layers))):
            x = self.layers[i].inverse(x)
            if not np.all(np.isfinite(x)):
                raise FloatingPointError('inversion failed at layer %i (%s)' % (i, self.layers[i].kind))
        return x

    def is_initialized(self):
        return all(layer.initialized for layer in self.layers if isinstance(layer, ScaleBias))

    def initialize(self, y, gamma=None):
        """Data-dependent initialization of the scale-bias layers from a batch. Layers already initialized are left
        unchanged"""
        if not self.is_initialized():
            self.transform(self.join(y, gamma))
        return self

    def identity_initialize(self):
        """Mark every scale-bias layer initialized at a = 1, b = 0"""
        for layer in self.layers:
            if isinstance(layer, ScaleBias) and not layer.initialized:
                layer.initialized = True
        return self

    def get_flat_params(self):
        return self.registry.values()

    def set_flat_params(self, vector):
        self.registry.assign(vector)

    def step_layers(self, step):
        """Layers of one ODE step"""
        if self.steps is None:
            raise ValueError('model is not an ODE model')
        return [layer for layer, s in zip(self.layers, self.steps) if s == step]

    def summary(self):
        """Prints the layer stack of the model"""
        cfg = self.config
        if cfg.ode is not None:
            name = 'KRnet_ODE'
        elif self.augmented:
            name = 'augmented KRnet'
        elif cfg.K == 1:
            name = 'real NVP equivalent'
        else:
            name = 'KRnet'
        print('======================================================================')
        print('                          Flow model                                  ')
        print('======================================================================')
        fmt = 'Model:            {:<20} Parameters:           {:<15}'
        print(fmt.format(name, self.n_params))
        fmt = 'Data dims:        {:<20} Augmented dims:       {:<15}'
        print(fmt.format(self.n_data, self.m_aug))
        fmt = 'Blocks (K):       {:<20} Couplings per stage:  {:<15}'
        print(fmt.format(cfg.K, cfg.L))
        print('======================================================================')
        rows = []
        for i, layer in enumerate(self.layers):
            rows.append([i, layer.stage if layer.stage is not None else '-', layer.describe(), layer.n_params()])
        print(tabulate(rows, headers=['Layer', 'Stage', 'Type', 'Parameters'], tablefmt='simple'))
        print('======================================================================')


def _stage_plan_(cfg):
    """Background function listing, per outer stage, the active data width, the coupling partition, and whether a
    rotation and a squeeze are applied"""
    m, n, b = cfg.m_aug, cfg.n_data, cfg.block_sizes
    data = np.arange(m, m + n)
    ends = np.cumsum(b)
    plan = []
    if m > 0:
        gamma = np.arange(m)
        for k in range(1, cfg.K + 1):
            active_data = data[:ends[cfg.K - k]]
            last = k == cfg.K
            plan.append({'stage': k, 'rotation': not last and active_data.size >= 2, 'active_data': active_data,
                         'parts': (active_data, gamma), 'n_active': m + active_data.size,
                         'squeeze': None if last else m + ends[cfg.K - k] - b[cfg.K - k]})
    elif cfg.K == 1:
        half = (n + 1) // 2
        plan.append({'stage': 1, 'rotation': False, 'active_data': data, 'parts': (data[:half], data[half:]),
                     'n_active': n, 'squeeze': None})
    else:
        for k in range(1, cfg.K):
            active_data = data[:ends[cfg.K - k]]
            partner = data[ends[cfg.K - k] - b[cfg.K - k]:ends[cfg.K - k]]
            others = data[:ends[cfg.K - k] - b[cfg.K - k]]
            plan.append({'stage': k, 'rotation': True, 'active_data': active_data, 'parts': (others, partner),
                         'n_active': active_data.size, 'squeeze': active_data.size - partner.size})
    return plan


def build_model(cfg, rng):
    """Assemble the layer stack of a model

    Parameters
    ----------
    cfg : FlowConfig
        Architecture
    rng : numpy.random.Generator
        Random generator for the coupling networks

    Returns
    -------
    FlowModel

    Examples
    --------
    >>> from krflow.calc import make_rng
    >>> from krflow.flow import FlowConfig, build_model
    >>> model = build_model(FlowConfig(n_data=2, K=2, L=2, use_rotation=True, use_cdf_layer=True), make_rng(1))
    >>> model.summary()
    """
    if not isinstance(cfg, FlowConfig):
        raise ValueError('build_model expects a FlowConfig')
    n_total = cfg.n_total
    ode = cfg.ode is not None
    plan = _stage_plan_(cfg)
    coupling_kw = {'alpha': cfg.alpha, 'activation': cfg.activation, 'scheme': cfg.init_scheme,
                   'translation_only': cfg.volume_preserving}
    if ode:
        coupling_kw.update(mode='ode', dt=cfg.ode['dt'])

    def one_pass():
        stack = []
        hidden = cfg.hidden0
        for st in plan:
            if st['rotation'] and cfg.use_rotation:
                stack.append(Rotation(st['active_data'], include_logdet=cfg.rotation_logdet))
            active = np.arange(st['n_active'])
            first, second = st['parts']
            for j in range(cfg.L):
                if not ode:
                    stack.append(ScaleBias(active, initialized=not cfg.data_init))
                cond, upd = (first, second) if j % 2 == 0 else (second, first)
                stack.append(AffineCoupling(cond, upd, hidden, rng, **coupling_kw))
            if st['squeeze'] is not None:
                stack.append(Squeeze(prefix_mask(n_total, st['squeeze'])))
            for layer in stack:
                if layer.stage is None:
                    layer.stage = st['stage']
            hidden = int(math.ceil(cfg.width_decay * hidden))
        return stack

    layers, steps = [], None
    if cfg.logit is not None:
        lg = LogitTransform(np.arange(cfg.m_aug, n_total), **cfg.logit)
        layers.append(lg)
    if ode:
        steps = [None] * len(layers)
        shared = None
        for s in range(cfg.ode['n_steps']):
            if cfg.tied and shared is not None:
                block = shared
            else:
                block = one_pass()
                shared = block
            layers.extend(block)
            steps.extend([s] * len(block))
    else:
        layers.extend(one_pass())
    if cfg.use_cdf_layer:
        c = cfg.cdf
        idx = np.arange(n_total) if c['on_augmented'] else np.arange(cfg.m_aug, n_total)
        layers.append(CdfLayer(idx, n_elements=c['elements'], bound=c['bound'], ratio=c['ratio'],
                               tail_slope=c['tail_slope']))
    if steps is not None:
        steps.extend([None] * (len(layers) - len(steps)))
    return FlowModel(cfg, layers, steps=steps)


def forward_logdensity(model, y, gamma=None):
    r"""Log-density of the model by the change of variables

    .. math::

        \log p(y) = \log p_Z(f(y)) + \sum_i \log |\det \nabla F_{[i]}|

    For augmented models the joint log-density of (gamma, y) is returned

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
        z, per-sample log-density
    """
    z, logdet = model.transform(model.join(y, gamma))
    return z, std_normal_logpdf(z) + logdet


def sample(model, rng, n):
    """Draw n samples by pushing prior draws through the inverse of the model

    Returns
    -------
    tuple
        y and gamma (None for a regular model)
    """
    check_positivity_or_throw(n)
    z = gauss_sample(rng, (n, model.n_total))
    return model.split(model.inverse_transform(z))


def marginal_logdensity(model, y, method='gamma_star', n_mc=100, rng=None, chunk=1000):
    r"""Marginal log-density of the data dimensions of an augmented model

    'mc' integrates gamma out by Monte Carlo over the augmented prior

    .. math::

        \log p_Y(y) \approx \log \frac{1}{N} \sum_i \frac{p(y, \gamma^{(i)})}{p_\gamma(\gamma^{(i)})}

    'gamma_star' evaluates the joint at gamma = 0 and rescales by the augmented prior at its mode

    .. math::

        \log p_Y(y) \approx \log p(y, 0) + \frac{m}{2} \log(2 \pi)

    Parameters
    ----------
    model : FlowModel
        Augmented model
    y : array-like
        Data batch
    method : str, optional
        'gamma_star' (default) or 'mc'
    n_mc : int, optional
        Monte Carlo size for 'mc'. Default is 100
    rng : numpy.random.Generator, optional
        Random generator, required for 'mc'
    chunk : int, optional
        Number of data points evaluated together for 'mc'

    Returns
    -------
    numpy.ndarray
    """
    if not model.augmented:
        raise ValueError('marginal log-density requires a model with augmented dimensions')
    y = as_batch(y, model.n_data, 'y')
    m = model.m_aug
    if method == 'gamma_star':
        _, lp = forward_logdensity(model, y, np.zeros((y.shape[0], m)))
        return lp + 0.5 * m * np.log(2 * np.pi)
    if method != 'mc':
        raise ValueError('method must be either "mc" or "gamma_star"')
    if n_mc < 1:
        raise ValueError('Monte Carlo marginal requires n_mc >= 1')
    if rng is None:
        raise ValueError('Monte Carlo marginal requires a random generator')
    out = []
    for start in range(0, y.shape[0], chunk):
        yc = y[start:start + chunk]
        yy = np.repeat(yc, n_mc, axis=0)
        gg = gauss_sample(rng, (yy.shape[0], m))
        _, lp = forward_logdensity(model, yy, gg)
        w = (lp - std_normal_logpdf(gg)).reshape(yc.shape[0], n_mc)
        out.append(logsumexp(w, axis=1) - np.log(n_mc))
    return np.concatenate(out)


def _predicted_counts_(cfg, n_points):
    """Background function for the closed-form parameter counts. Returns None where the formula does not apply"""
    if not cfg.is_uniform_partition():
        return {'coupling': None, 'scale_bias': None, 'rotation': None, 'cdf': None}
    n, m, K, b, L = cfg.n_data, cfg.m_aug, cfg.K, cfg.block_sizes[0], cfg.L
    if m > 0:
        n_k = [n + m - (k - 1) * b for k in range(1, K + 1)]
    elif K == 1:
        n_k = [n]
    else:
        n_k = [n - (k - 1) * b for k in range(1, K)]
    hidden, coupling, scale_bias = cfg.hidden0, 0, 0
    for nk in n_k:
        if cfg.volume_preserving:
            pair = 2 * hidden ** 2 + 4 * hidden + 2 * (hidden + 1) * nk
        else:
            pair = 2 * hidden ** 2 + 4 * hidden + 3 * (hidden + 1) * nk
            if cfg.ode is not None:
                pair += nk
        coupling += pair * L // 2
        scale_bias += 2 * nk * L
        hidden = int(math.ceil(cfg.width_decay * hidden))
    if cfg.ode is not None:
        scale_bias = 0
        if not cfg.tied:
            coupling *= cfg.ode['n_steps']
    rotation = 0
    if cfg.use_rotation:
        rotation = (b * n * (K + 1) * (2 * K + 1) - 6 * b ** 2) // 6
    cdf = 0
    if cfg.use_cdf_layer:
        cdf = (n + m if cfg.cdf['on_augmented'] else n) * n_points
    return {'coupling': coupling, 'scale_bias': scale_bias, 'rotation': rotation, 'cdf': cdf}


def count_params(model):
    """Audit the number of trainable parameters. The registry is enumerated per category and compared with the
    closed-form counts: 2h^2 + 4h + 3(h+1)n_k per coupling pair, 2n_k per scale-bias layer, sum_{i=2}^K (im)^2 for the
    rotations, and n n_p for the CDF layer

    Parameters
    ----------
    model : FlowModel
        Built model

    Returns
    -------
    pandas.DataFrame
        Rows coupling, scale_bias, rotation, cdf, total. Columns enumerated, formula, match. The formula is None for a
        non-uniform partition
    """
    enumerated = model.registry.counts()
    n_points = model.config.cdf['elements'] + 1
    predicted = _predicted_counts_(model.config, n_points)
    rows = []
    for cat in ('coupling', 'scale_bias', 'rotation', 'cdf'):
        e = int(enumerated.get(cat, 0))
        f = predicted[cat]
        rows.append([cat, e, f, None if f is None else e == f])
    total_f = None if any(v is None for v in predicted.values()) else int(sum(predicted.values()))
    rows.append(['total', int(model.n_params), total_f, None if total_f is None else model.n_params == total_f])
    return pd.DataFrame(rows, columns=['category', 'enumerated', 'formula', 'match']).set_index('category')


def ode_limit_probe(model, y, dt_list, gamma=None):
    r"""First-order limit check of one ODE step. For each dt the difference quotient

    .. math::

        q(\Delta t) = \frac{f_{step}(y; \Delta t) - y}{\Delta t}

    is computed with the parameters of the first step, and the difference to q(dt/2) is reported. A first-order
    scheme gives differences that shrink linearly, so the ratio of successive differences is close to 0.5

    Parameters
    ----------
    model : FlowModel
        KRnet_ODE model
    y : array-like
        Data batch
    dt_list : list
        Step sizes, decreasing
    gamma : array-like, optional
        Augmented dimensions. Default is zeros

    Returns
    -------
    pandas.DataFrame
        Columns dt, difference, ratio
    """
    if model.config.ode is None:
        raise ValueError('ode_limit_probe requires an ODE model')
    if model.augmented and gamma is None:
        gamma = np.zeros((as_batch(y).shape[0], model.m_aug))
    x = model.join(y, gamma)
    step = copy.deepcopy(model.step_layers(0))

    def quotient(dt):
        out = x
        for layer in step:
            if isinstance(layer, AffineCoupling):
                layer.dt = dt
            out = layer.forward(out)[0]
        return (out - x) / dt

    rows, previous = [], None
    for dt in dt_list:
        diff = float(np.linalg.norm(quotient(dt) - quotient(dt / 2.)))
        if previous is None or previous == 0:
            ratio = np.nan
        else:
            ratio = diff / previous
        rows.append([dt, diff, ratio])
        previous = diff
    return pd.DataFrame(rows, columns=['dt', 'difference', 'ratio'])


def volume_preserving_trajectory(b1, b2, gamma0, y0, dt, n_steps):
    r"""Exactly invertible first-order scheme for the volume-preserving system

    .. math::

        \dot{\gamma} = b_1(y), \quad \dot{y} = b_2(\gamma)

    gamma is updated first and y uses the updated gamma, the order of a coupling pair of a KRnet_ODE step

    Returns
    -------
    numpy.ndarray
        Array of shape (n_steps + 1, 2) with columns gamma, y
    """
    check_positivity_or_throw(dt)
    traj = np.empty((n_steps + 1, 2))
    gamma, y = float(gamma0), float(y0)
    traj[0] = gamma, y
    for i in range(n_steps):
        gamma = gamma + b1(y) * dt
        y = y + b2(gamma) * dt
        traj[i + 1] = gamma, y
    check_finite_or_throw(traj, 'trajectory')
    return traj
