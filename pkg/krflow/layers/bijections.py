from collections import OrderedDict, namedtuple

import numpy as np
from scipy.linalg import solve_triangular

from krflow.calc import check_positivity_or_throw
from krflow.layers.network import mlp_init, mlp_forward, mlp_vjp

LayerCache = namedtuple('LayerCache', ['owner', 'version', 'data'])
ActiveMask = namedtuple('ActiveMask', ['mask', 'n_active'])


def prefix_mask(n_total, n_active):
    """ActiveMask with the first n_active dimensions active and the rest frozen"""
    mask = np.zeros(n_total, dtype=bool)
    mask[:n_active] = True
    return ActiveMask(mask, int(n_active))


def _check_direction_(direction):
    if direction not in ('forward', 'inverse'):
        raise ValueError('direction must be either "forward" or "inverse"')


class Bijection:
    """Base class of the invertible layers. A layer acts on the columns `idx` of the full state vector and leaves
    every other column bit-identical.

    Every layer supports
        * forward(x, cache) -> (out, logdet, cache)
        * inverse(z) -> x
        * vjp(cache, cot_out, cot_logdet) -> (param_grads, cot_in)
        * transpose_solve(cache, mu) -> nu, solving J^T nu = mu with J the input Jacobian at the cached point
    """
    kind = 'bijection'
    category = None

    def __init__(self, idx):
        self.idx = np.asarray(idx, dtype=int)
        self.params = OrderedDict()
        self.version = 0
        self.stage = None

    @property
    def width(self):
        return self.idx.shape[0]

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    def touch(self):
        self.version += 1

    def _cache_(self, data):
        return LayerCache(self, self.version, data)

    def _check_cache_(self, cache):
        if cache is None or cache.owner is not self or cache.version != self.version:
            raise ValueError('stale cache: ' + self.kind + ' layer changed after the forward call')
        return cache.data

    def describe(self):
        return self.kind

    def forward(self, x, cache=False):
        raise NotImplementedError

    def inverse(self, z):
        raise NotImplementedError

    def vjp(self, cache, cot_out, cot_logdet):
        raise NotImplementedError

    def transpose_solve(self, cache, mu):
        raise NotImplementedError


#############################################################################
# Affine coupling
#############################################################################
CouplingCache = namedtuple('CouplingCache', ['owner', 'version', 'y1', 'y2', 'net_cache', 'u', 'v', 'scale'])


class AffineCoupling(Bijection):
    r"""Affine coupling layer. The updated part y2 is transformed conditionally on y1 by

    .. math::

        z_2 = y_2 \odot (1 + \alpha \tanh(s(y_1))) + e^{\beta} \odot \tanh(t(y_1))

    In 'ode' mode the layer is the Delta t scaled step

    .. math::

        z_2 = y_2 + \left(y_2 \odot e^{\alpha} \tanh(s(y_1)) + e^{\beta} \odot \tanh(t(y_1))\right) \Delta t

    where the log-scale alpha is trainable per dimension.

    Parameters
    ----------
    cond_idx : array-like
        Columns of the conditioning part y1
    upd_idx : array-like
        Columns of the updated part y2
    hidden : int
        Hidden width of the coupling network
    rng : numpy.random.Generator
        Random generator for the network weights
    alpha : float, optional
        Constant in (0, 1) bounding the scale of the discrete coupling. Default is 0.6
    mode : str, optional
        'discrete' (default) or 'ode'
    dt : float, optional
        Step size, required for 'ode' mode
    activation : str, optional
        Hidden activation of the network
    scheme : str, optional
        Initialization scheme of the network, see mlp_init
    translation_only : bool, optional
        Drop the scale so the layer is volume preserving
    """
    kind = 'coupling'
    category = 'coupling'

    def __init__(self, cond_idx, upd_idx, hidden, rng, alpha=0.6, mode='discrete', dt=None, activation='tanh',
                 scheme='zero_output', translation_only=False):
        cond_idx = np.asarray(cond_idx, dtype=int)
        upd_idx = np.asarray(upd_idx, dtype=int)
        if cond_idx.size == 0 or upd_idx.size == 0:
            raise ValueError('coupling requires nonempty conditioning and updated parts')
        if np.intersect1d(cond_idx, upd_idx).size > 0:
            raise ValueError('conditioning and updated parts of a coupling must be disjoint')
        super().__init__(np.concatenate([cond_idx, upd_idx]))
        if mode not in ('discrete', 'ode'):
            raise ValueError('mode must be either "discrete" or "ode"')
        if mode == 'discrete' and not 0 < alpha < 1:
            raise ValueError('alpha must be in (0, 1)')
        if mode == 'ode':
            if dt is None:
                raise ValueError('dt is required for an ode coupling')
            check_positivity_or_throw(dt)
        self.cond_idx = cond_idx
        self.upd_idx = upd_idx
        self.alpha = float(alpha)
        self.mode = mode
        self.dt = dt
        self.translation_only = translation_only
        self.net = mlp_init(rng, cond_idx.size, hidden, upd_idx.size, scheme=scheme, activation=activation,
                            heads=1 if translation_only else 2)
        self.params = OrderedDict(self.net.params)
        self.params['beta'] = np.zeros(upd_idx.size)
        if mode == 'ode' and not translation_only:
            self.params['alpha'] = np.zeros(upd_idx.size)

    def touch(self):
        self.version += 1
        self.net.touch()

    def describe(self):
        return 'coupling (%s, %i | %i, h=%i)' % (self.mode, self.cond_idx.size, self.upd_idx.size, self.net.hidden)

    def _log_scale_(self):
        # keeps dt * e^alpha <= 0.99 so the step scale stays positive
        cap = np.log(0.99 / self.dt)
        a = self.params['alpha']
        return np.minimum(a, cap), a < cap

    def forward(self, x, cache=False):
        z2, logdet, cc = coupling_forward(self, x[:, self.cond_idx], x[:, self.upd_idx])
        out = x.copy()
        out[:, self.upd_idx] = z2
        return out, logdet, (cc if cache else None)

    def inverse(self, z):
        out = z.copy()
        out[:, self.upd_idx] = coupling_inverse(self, z[:, self.cond_idx], z[:, self.upd_idx])
        return out

    def vjp(self, cache, cot_out, cot_logdet):
        grads, cot_y1, cot_y2 = coupling_vjp(self, cache, cot_out[:, self.upd_idx], cot_logdet)
        cot_in = cot_out.copy()
        cot_in[:, self.upd_idx] = cot_y2
        cot_in[:, self.cond_idx] += cot_y1
        return grads, cot_in

    def transpose_solve(self, cache, mu):
        nu = mu.copy()
        nu2 = mu[:, self.upd_idx] / cache.scale
        _, back, _ = coupling_vjp(self, cache, nu2, np.zeros(mu.shape[0]))
        nu[:, self.upd_idx] = nu2
        nu[:, self.cond_idx] = mu[:, self.cond_idx] - back
        return nu


def _coupling_terms_(p, y1):
    s, t, net_cache = mlp_forward(p.net, y1)
    v = np.tanh(t)
    if p.mode == 'ode':
        shift = p.dt * np.exp(p.params['beta']) * v
    else:
        shift = np.exp(p.params['beta']) * v
    if p.translation_only:
        return None, v, np.ones_like(v), shift, net_cache
    u = np.tanh(s)
    if p.mode == 'ode':
        log_scale, _ = p._log_scale_()
        scale = 1.0 + p.dt * np.exp(log_scale) * u
    else:
        scale = 1.0 + p.alpha * u
    if np.any(scale <= 0):
        raise FloatingPointError('nonpositive coupling scale encountered')
    return u, v, scale, shift, net_cache


def coupling_forward(p, y1, y2):
    """Forward pass of an affine coupling on the partition (y1, y2)

    Parameters
    ----------
    p : AffineCoupling
        Coupling layer holding the network, beta, and alpha
    y1 : numpy.ndarray
        Conditioning part
    y2 : numpy.ndarray
        Updated part

    Returns
    -------
    tuple
        z2, per-sample logdet, CouplingCache
    """
    if y2.shape[1] != p.upd_idx.size:
        raise ValueError('updated part has width %i but the coupling expects %i' % (y2.shape[1], p.upd_idx.size))
    u, v, scale, shift, net_cache = _coupling_terms_(p, y1)
    z2 = y2 * scale + shift
    if p.translation_only:
        logdet = np.zeros(y1.shape[0])
    else:
        logdet = np.sum(np.log(scale), axis=1)
    return z2, logdet, CouplingCache(p, p.version, y1, y2, net_cache, u, v, scale)


def coupling_inverse(p, y1, z2):
    """Exact inverse of coupling_forward: y2 = (z2 - shift(y1)) / scale(y1)"""
    if z2.shape[1] != p.upd_idx.size:
        raise ValueError('updated part has width %i but the coupling expects %i' % (z2.shape[1], p.upd_idx.size))
    _, _, scale, shift, _ = _coupling_terms_(p, y1)
    return (z2 - shift) / scale


def coupling_vjp(p, cache, cot_z2, cot_logdet):
    """Background function for the coupling vector-Jacobian product on the partition (y1, y2)"""
    if cache.owner is not p or cache.version != p.version:
        raise ValueError('stale cache: coupling layer changed after the forward call')
    g = cot_z2
    grads = OrderedDict()
    cot_y2 = g * cache.scale
    if p.mode == 'ode':
        e_beta = p.dt * np.exp(p.params['beta'])
    else:
        e_beta = np.exp(p.params['beta'])
    cot_t = g * e_beta * (1.0 - cache.v ** 2)
    beta_grad = np.sum(g * e_beta * cache.v, axis=0)
    if p.translation_only:
        cot_s = None
        alpha_grad = None
    else:
        d_scale = g * cache.y2 + cot_logdet[:, None] / cache.scale
        if p.mode == 'ode':
            log_scale, free = p._log_scale_()
            e_alpha = p.dt * np.exp(log_scale)
            cot_s = d_scale * e_alpha * (1.0 - cache.u ** 2)
            alpha_grad = np.sum(d_scale * e_alpha * cache.u, axis=0) * free
        else:
            cot_s = d_scale * p.alpha * (1.0 - cache.u ** 2)
            alpha_grad = None
    net_grads, cot_y1 = mlp_vjp(p.net, cache.net_cache, cot_s, cot_t)
    grads.update(net_grads)
    grads['beta'] = beta_grad
    if alpha_grad is not None:
        grads['alpha'] = alpha_grad
    return grads, cot_y1, cot_y2


#############################################################################
# Scale and bias
#############################################################################
class ScaleBias(Bijection):
    r"""Scale and bias layer, a simplification of batch normalization

    .. math::

        \hat{y} = a \odot y + b

    a and b are set from the mean and standard deviation of the first batch passed forward, then trained as
    regular parameters
    """
    kind = 'scale_bias'
    category = 'scale_bias'

    def __init__(self, idx, initialized=False):
        super().__init__(idx)
        self.params['a'] = np.ones(self.width)
        self.params['b'] = np.zeros(self.width)
        self.initialized = initialized

    def describe(self):
        return 'scale-bias (%i)' % self.width

    def initialize(self, x_active):
        mean = np.mean(x_active, axis=0)
        std = np.std(x_active, axis=0)
        if np.any(std < 1e-12):
            raise ValueError('scale-bias initialization batch has zero standard deviation')
        self.params['a'][...] = 1.0 / std
        self.params['b'][...] = -mean / std
        self.initialized = True
        self.touch()

    def forward(self, x, cache=False):
        xa = x[:, self.idx]
        za, logdet = scale_bias_apply(self, xa, 'forward')
        out = x.copy()
        out[:, self.idx] = za
        return out, logdet, (self._cache_(xa) if cache else None)

    def inverse(self, z):
        out = z.copy()
        out[:, self.idx] = scale_bias_apply(self, z[:, self.idx], 'inverse')[0]
        return out

    def vjp(self, cache, cot_out, cot_logdet):
        xa = self._check_cache_(cache)
        a = self.params['a']
        g = cot_out[:, self.idx]
        grads = OrderedDict()
        grads['a'] = np.sum(g * xa, axis=0) + np.sum(cot_logdet) / a
        grads['b'] = np.sum(g, axis=0)
        cot_in = cot_out.copy()
        cot_in[:, self.idx] = g * a
        return grads, cot_in

    def transpose_solve(self, cache, mu):
        self._check_cache_(cache)
        nu = mu.copy()
        nu[:, self.idx] = mu[:, self.idx] / self.params['a']
        return nu


def scale_bias_apply(p, x, direction):
    """Apply a scale-bias layer to its active columns

    Parameters
    ----------
    p : ScaleBias
        Layer parameters. An uninitialized layer is initialized from x on a forward call
    x : numpy.ndarray
        Active columns
    direction : str
        'forward' or 'inverse'

    Returns
    -------
    tuple
        out, per-sample logdet of the applied map
    """
    _check_direction_(direction)
    if not p.initialized:
        if direction == 'inverse':
            raise ValueError('scale-bias layer must be initialized with a forward data batch before inversion')
        p.initialize(x)
    a, b = p.params['a'], p.params['b']
    logdet = np.full(x.shape[0], np.sum(np.log(np.abs(a))))
    if direction == 'forward':
        return a * x + b, logdet
    return (x - b) / a, -logdet


#############################################################################
# Rotation
#############################################################################
class Rotation(Bijection):
    """Linear layer W = LU acting on the active data dimensions. L is unit lower-triangular, U is upper-triangular.
    Both start at the identity and no orthogonality is enforced"""
    kind = 'rotation'
    category = 'rotation'

    def __init__(self, idx, include_logdet=True):
        super().__init__(idx)
        k = self.width
        self._tril = np.tril_indices(k, -1)
        self._triu = np.triu_indices(k)
        self.params['L'] = np.zeros(self._tril[0].size)
        u = np.zeros(self._triu[0].size)
        u[self._triu[0] == self._triu[1]] = 1.0
        self.params['U'] = u
        self.include_logdet = include_logdet

    def describe(self):
        return 'rotation (%i)' % self.width

    def matrices(self):
        k = self.width
        lower = np.eye(k)
        lower[self._tril] = self.params['L']
        upper = np.zeros((k, k))
        upper[self._triu] = self.params['U']
        return lower, upper

    def forward(self, x, cache=False):
        xa = x[:, self.idx]
        za, logdet = rotation_apply(self, xa, 'forward')
        out = x.copy()
        out[:, self.idx] = za
        return out, logdet, (self._cache_(xa) if cache else None)

    def inverse(self, z):
        out = z.copy()
        out[:, self.idx] = rotation_apply(self, z[:, self.idx], 'inverse')[0]
        return out

    def vjp(self, cache, cot_out, cot_logdet):
        xa = self._check_cache_(cache)
        lower, upper = self.matrices()
        g = cot_out[:, self.idx]
        gw = g.T @ xa
        d_lower = gw @ upper.T
        d_upper = lower.T @ gw
        if self.include_logdet:
            d_upper[np.diag_indices(self.width)] += np.sum(cot_logdet) / np.diag(upper)
        grads = OrderedDict()
        grads['L'] = d_lower[self._tril]
        grads['U'] = d_upper[self._triu]
        cot_in = cot_out.copy()
        cot_in[:, self.idx] = g @ (lower @ upper)
        return grads, cot_in

    def transpose_solve(self, cache, mu):
        self._check_cache_(cache)
        lower, upper = self.matrices()
        w = solve_triangular(upper.T, mu[:, self.idx].T, lower=True)
        nu = mu.copy()
        nu[:, self.idx] = solve_triangular(lower.T, w, lower=False, unit_diagonal=True).T
        return nu


def rotation_apply(p, x_active, direction):
    """Apply the LU rotation to the active data columns

    Parameters
    ----------
    p : Rotation
        Layer parameters
    x_active : numpy.ndarray
        Active data columns, width k
    direction : str
        'forward' (out = L U x) or 'inverse' (two triangular solves)

    Returns
    -------
    tuple
        out, per-sample logdet of the applied map
    """
    _check_direction_(direction)
    if x_active.shape[1] != p.width:
        raise ValueError('rotation expects width %i, got %i' % (p.width, x_active.shape[1]))
    lower, upper = p.matrices()
    diag = np.diag(upper)
    if np.any(np.abs(diag) < 1e-12):
        raise FloatingPointError('singular rotation: |u_ii| < 1e-12')
    ld = np.sum(np.log(np.abs(diag))) if p.include_logdet else 0.0
    logdet = np.full(x_active.shape[0], ld)
    if direction == 'forward':
        return x_active @ (lower @ upper).T, logdet
    y = solve_triangular(lower, x_active.T, lower=True, unit_diagonal=True)
    return solve_triangular(upper, y, lower=False).T, -logdet


#############################################################################
# Squeezing
#############################################################################
class Squeeze(Bijection):
    """Squeezing layer. Reorders the state so active dimensions come first and marks the trailing ones frozen. With
    a prefix mask the reordering is the identity and only the active count changes"""
    kind = 'squeeze'

    def __init__(self, mask):
        super().__init__(np.arange(mask.mask.size))
        self.mask = mask
        self.perm = np.concatenate([np.flatnonzero(mask.mask), np.flatnonzero(~mask.mask)])

    def describe(self):
        return 'squeeze (%i active)' % self.mask.n_active

    def forward(self, x, cache=False):
        return squeeze_apply(self.mask, x, 'forward'), np.zeros(x.shape[0]), (self._cache_(None) if cache else None)

    def inverse(self, z):
        return squeeze_apply(self.mask, z, 'inverse')

    def vjp(self, cache, cot_out, cot_logdet):
        self._check_cache_(cache)
        cot_in = np.empty_like(cot_out)
        cot_in[:, self.perm] = cot_out
        return OrderedDict(), cot_in

    def transpose_solve(self, cache, mu):
        self._check_cache_(cache)
        return mu[:, self.perm]


def squeeze_apply(mask, x, direction):
    """Partition the state into (kept-active, newly-deactivated) columns, or restore the original ordering

    Parameters
    ----------
    mask : ActiveMask
        Boolean mask over the total dimensions
    x : numpy.ndarray
        State batch
    direction : str
        'forward' or 'inverse'

    Returns
    -------
    numpy.ndarray
    """
    _check_direction_(direction)
    if mask.mask.size != x.shape[1]:
        raise ValueError('mask has %i dims but the state has %i' % (mask.mask.size, x.shape[1]))
    perm = np.concatenate([np.flatnonzero(mask.mask), np.flatnonzero(~mask.mask)])
    if direction == 'forward':
        return x[:, perm]
    out = np.empty_like(x)
    out[:, perm] = x
    return out


#############################################################################
# Nonlinear CDF layer
#############################################################################
def nonuniform_mesh(n_elements=32, bound=20., ratio=1.15):
    """Symmetric mesh on [-bound, bound]. Element widths grow geometrically by `ratio` from the middle to both sides

    Returns
    -------
    numpy.ndarray
        The n_elements + 1 knots
    """
    check_positivity_or_throw(bound, ratio)
    if n_elements < 2 or n_elements % 2 != 0:
        raise ValueError('number of CDF elements must be an even integer >= 2')
    widths = ratio ** np.arange(n_elements // 2)
    widths = widths / np.sum(widths) * bound
    right = np.cumsum(widths)
    right[-1] = bound
    return np.concatenate([-right[::-1], [0.], right])


class CdfLayer(Bijection):
    r"""Component-wise nonlinear invertible layer. On [-a, a] each component is mapped through the cumulative
    distribution F of a piecewise-linear density p on a nonuniform mesh of [0, 1]

    .. math::

        z = \phi^{-1}(F(\phi(x))), \quad p_i = e^{\theta_i} / Z

    where phi maps [-a, a] affinely onto [0, 1]. Outside [-a, a] the map is linear with slope `tail_slope`

    Parameters
    ----------
    idx : array-like
        Columns transformed
    n_elements : int, optional
        Number of mesh elements. Default is 32
    bound : float, optional
        Half-width a of the interval. Default is 20
    ratio : float, optional
        Geometric growth of the element widths. Default is 1.15
    tail_slope : float, optional
        Slope outside [-a, a]. Default is 1e-10
    """
    kind = 'cdf'
    category = 'cdf'

    def __init__(self, idx, n_elements=32, bound=20., ratio=1.15, tail_slope=1e-10):
        super().__init__(idx)
        check_positivity_or_throw(tail_slope)
        self.bound = float(bound)
        self.tail_slope = float(tail_slope)
        self.knots = nonuniform_mesh(n_elements, bound, ratio)
        self.knots01 = (self.knots + self.bound) / (2 * self.bound)
        self.knots01[0], self.knots01[-1] = 0., 1.
        self.h = np.diff(self.knots01)
        self.n_elements = n_elements
        self.n_points = n_elements + 1
        # trapezoidal weights: Z = sum_j mesh_weights_j e^theta_j
        self.mesh_weights = np.zeros(self.n_points)
        self.mesh_weights[:-1] += self.h / 2
        self.mesh_weights[1:] += self.h / 2
        # coefficients of F at the left knot of every element, linear in p
        self.prefix = np.zeros((n_elements, self.n_points))
        for k in range(1, n_elements):
            self.prefix[k] = self.prefix[k - 1]
            self.prefix[k, k - 1] += self.h[k - 1] / 2
            self.prefix[k, k] += self.h[k - 1] / 2
        self.params['theta'] = np.zeros((self.width, self.n_points))

    def describe(self):
        return 'cdf (%i x %i)' % (self.width, self.n_points)

    def density(self):
        """Knot values of the piecewise-linear densities and the cumulative values at the knots"""
        th = self.params['theta']
        q = np.exp(th - np.max(th, axis=1, keepdims=True))
        dens = q / (q @ self.mesh_weights)[:, None]
        cum = np.cumsum(0.5 * (dens[:, :-1] + dens[:, 1:]) * self.h, axis=1)
        return dens, np.concatenate([np.zeros((self.width, 1)), cum], axis=1)

    def forward(self, x, cache=False):
        xa = x[:, self.idx]
        za, logdet, cc = cdf_forward(self, xa)
        out = x.copy()
        out[:, self.idx] = za
        return out, logdet, (cc if cache else None)

    def inverse(self, z):
        out = z.copy()
        out[:, self.idx] = cdf_inverse(self, z[:, self.idx])
        return out

    def vjp(self, cache, cot_out, cot_logdet):
        c = self._check_cache_(cache)
        dens = c['dens']
        a = self.bound
        g = cot_out[:, self.idx]
        grad_theta = np.zeros_like(self.params['theta'])
        for j in range(self.width):
            kk, delta, inside = c['kk'][:, j], c['delta'][:, j], c['inside'][:, j]
            hk, P, F = self.h[kk], c['P'][:, j], c['F'][:, j]
            w1 = np.where(inside, g[:, j] * 2 * a, 0.)
            w2 = np.where(inside, cot_logdet, 0.)
            # d F / d p
            sa = np.bincount(kk, weights=w1, minlength=self.n_elements) @ self.prefix
            sa += np.bincount(kk, weights=w1 * (delta - delta ** 2 / (2 * hk)), minlength=self.n_points)
            sa += np.bincount(kk + 1, weights=w1 * delta ** 2 / (2 * hk), minlength=self.n_points)
            # d log p(xi) / d p
            r = w2 / P
            sb = np.bincount(kk, weights=r * (1 - delta / hk), minlength=self.n_points)
            sb += np.bincount(kk + 1, weights=r * delta / hk, minlength=self.n_points)
            # chain through the softmax-like normalization p_l = e^theta_l / Z
            grad_theta[j] = dens[j] * (sa - np.sum(w1 * F) * self.mesh_weights)
            grad_theta[j] += dens[j] * (sb - np.sum(w2) * self.mesh_weights)
        cot_in = cot_out.copy()
        cot_in[:, self.idx] = np.where(c['inside'],
                                       g * c['P'] + cot_logdet[:, None] * c['slope'] / (c['P'] * 2 * a),
                                       g * self.tail_slope)
        grads = OrderedDict()
        grads['theta'] = grad_theta
        return grads, cot_in

    def transpose_solve(self, cache, mu):
        c = self._check_cache_(cache)
        nu = mu.copy()
        nu[:, self.idx] = mu[:, self.idx] / np.where(c['inside'], c['P'], self.tail_slope)
        return nu


def cdf_forward(p, x):
    """Forward map of the nonlinear CDF layer on its columns

    Parameters
    ----------
    p : CdfLayer
        Layer parameters and mesh
    x : numpy.ndarray
        Columns to transform

    Returns
    -------
    tuple
        z, per-sample logdet, cache
    """
    a = p.bound
    dens, cum = p.density()
    n, k = x.shape
    if k != p.width:
        raise ValueError('cdf layer expects width %i, got %i' % (p.width, k))
    z = np.empty_like(x)
    logdet = np.zeros(n)
    store = {name: np.zeros((n, k)) for name in ('delta', 'P', 'F', 'slope')}
    store['kk'] = np.zeros((n, k), dtype=int)
    store['inside'] = np.zeros((n, k), dtype=bool)
    for j in range(k):
        xj = x[:, j]
        xi = (xj + a) / (2 * a)
        inside = (xi >= 0) & (xi <= 1)
        kk = np.clip(np.searchsorted(p.knots01, xi, side='right') - 1, 0, p.n_elements - 1)
        delta = np.where(inside, xi - p.knots01[kk], 0.)
        hk = p.h[kk]
        pk, pk1 = dens[j, kk], dens[j, kk + 1]
        slope = (pk1 - pk) / hk
        fv = cum[j, kk] + pk * delta + 0.5 * slope * delta ** 2
        dzdx = np.where(inside, pk + slope * delta, 1.)
        tail = np.where(xj > a, p.tail_slope * (xj - a) + a, p.tail_slope * (xj + a) - a)
        z[:, j] = np.where(inside, 2 * a * fv - a, tail)
        logdet += np.where(inside, np.log(dzdx), np.log(p.tail_slope))
        store['kk'][:, j], store['delta'][:, j], store['inside'][:, j] = kk, delta, inside
        store['P'][:, j], store['F'][:, j], store['slope'][:, j] = dzdx, fv, slope
    store['dens'] = dens
    return z, logdet, p._cache_(store)


def cdf_inverse(p, z):
    """Inverse of the nonlinear CDF layer. The mesh element is located from the cumulative values at the knots, then
    the in-element quadratic is solved with the cancellation-free root 2c / (p_k + sqrt(p_k^2 + 2 p' c))"""
    a = p.bound
    dens, cum = p.density()
    x = np.empty_like(z)
    for j in range(z.shape[1]):
        zj = z[:, j]
        zeta = (zj + a) / (2 * a)
        inside = (zeta >= 0) & (zeta <= 1)
        kk = np.clip(np.searchsorted(cum[j], zeta, side='right') - 1, 0, p.n_elements - 1)
        c = np.where(inside, np.maximum(zeta - cum[j, kk], 0.), 0.)
        pk, pk1 = dens[j, kk], dens[j, kk + 1]
        slope = (pk1 - pk) / p.h[kk]
        disc = np.maximum(pk ** 2 + 2 * slope * c, 0.)
        xi = p.knots01[kk] + 2 * c / (pk + np.sqrt(disc))
        tail = np.where(zj > a, (zj - a) / p.tail_slope + a, (zj + a) / p.tail_slope - a)
        x[:, j] = np.where(inside, 2 * a * xi - a, tail)
    return x


#############################################################################
# Logistic preprocessing
#############################################################################
class LogitTransform(Bijection):
    """Logistic preprocessing of bounded data. The box (lower, upper) is mapped affinely onto (0, 1), then
    y = (s/2) ln(x / (1 - x)) is applied"""
    kind = 'logit'

    def __init__(self, idx, scale, lower=0., upper=1.):
        super().__init__(idx)
        check_positivity_or_throw(scale)
        if not upper > lower:
            raise ValueError('logit transform requires upper > lower')
        self.scale = float(scale)
        self.lower = float(lower)
        self.upper = float(upper)

    def describe(self):
        return 'logit (s=%.3g)' % self.scale

    def forward(self, x, cache=False):
        xa = x[:, self.idx]
        ya, logdet = logit_preprocess(self.scale, xa, 'forward', self.lower, self.upper)
        out = x.copy()
        out[:, self.idx] = ya
        return out, logdet, (self._cache_(xa) if cache else None)

    def inverse(self, z):
        out = z.copy()
        out[:, self.idx] = logit_preprocess(self.scale, z[:, self.idx], 'inverse', self.lower, self.upper)[0]
        return out

    def _unit_(self, xa):
        return (xa - self.lower) / (self.upper - self.lower)

    def vjp(self, cache, cot_out, cot_logdet):
        xa = self._check_cache_(cache)
        u = self._unit_(xa)
        width = self.upper - self.lower
        dydx = self.scale / (2 * u * (1 - u)) / width
        dlog = (2 * u - 1) / (u * (1 - u)) / width
        cot_in = cot_out.copy()
        cot_in[:, self.idx] = cot_out[:, self.idx] * dydx + cot_logdet[:, None] * dlog
        return OrderedDict(), cot_in

    def transpose_solve(self, cache, mu):
        xa = self._check_cache_(cache)
        u = self._unit_(xa)
        nu = mu.copy()
        nu[:, self.idx] = mu[:, self.idx] / (self.scale / (2 * u * (1 - u)) / (self.upper - self.lower))
        return nu


def logit_preprocess(s, x, direction, lower=0., upper=1.):
    """Logistic preprocessing transform

    Parameters
    ----------
    s : float
        Scale of the transform
    x : numpy.ndarray
        Batch. Forward requires every entry in (lower, upper)
    direction : str
        'forward' or 'inverse'
    lower : float, optional
        Lower edge of the data box. Default is 0
    upper : float, optional
        Upper edge of the data box. Default is 1

    Returns
    -------
    tuple
        out, per-sample logdet of the applied map
    """
    _check_direction_(direction)
    width = upper - lower
    if direction == 'forward':
        u = (x - lower) / width
        if np.any(u <= 0) or np.any(u >= 1):
            raise ValueError('logistic preprocessing requires inputs inside (%g, %g)' % (lower, upper))
        y = 0.5 * s * np.log(u / (1 - u))
        logdet = np.sum(np.log(s / (2 * u * (1 - u))) - np.log(width), axis=1)
        return y, logdet
    u = 0.5 * (np.tanh(x / s) + 1.)
    out = lower + width * u
    logdet = -np.sum(np.log(s / (2 * u * (1 - u))) - np.log(width), axis=1)
    return out, logdet


def layer_vjp(layer, cache, cot_out, cot_logdet):
    """Vector-Jacobian product of any layer: gradients of <cot_out, output> + <cot_logdet, logdet> with respect to
    the layer parameters and the layer input

    Parameters
    ----------
    layer : Bijection
        Layer that produced the cache
    cache : LayerCache, CouplingCache
        Cache from layer.forward(x, cache=True)
    cot_out : numpy.ndarray
        Cotangent of the layer output, full state width
    cot_logdet : numpy.ndarray
        Per-sample cotangent of the layer logdet

    Returns
    -------
    tuple
        OrderedDict of parameter gradients (summed over the batch) and the input cotangent
    """
    return layer.vjp(cache, cot_out, np.asarray(cot_logdet, dtype=np.float64))
