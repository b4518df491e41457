import warnings
from collections import namedtuple

import numpy as np
from scipy.special import logsumexp as _scipy_logsumexp
from statsmodels.stats.weightstats import DescrStatsW

MCEstimate = namedtuple('MCEstimate', ['value', 'std_err', 'n'])


def check_positivity_or_throw(*args):
    for arg in args:
        if arg <= 0:
            raise ValueError('Value must be positive, however %f is not positive' % arg)


def check_finite_or_throw(values, where):
    """Background function to raise a FloatingPointError when a numerical result contains inf or nan"""
    if not np.all(np.isfinite(values)):
        raise FloatingPointError('Non-finite values encountered in ' + str(where))


def as_batch(x, n_dims=None, name='batch'):
    """Convert input to a two-dimensional float64 batch (n_samples x n_dims) and validate it

    Parameters
    ----------
    x : array-like
        Samples. A one-dimensional array is treated as a batch of one-dimensional samples
    n_dims : int, optional
        Expected number of columns. Default is None, which skips the width check
    name : str, optional
        Name used in error messages

    Returns
    -------
    numpy.ndarray
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError('"' + name + '" must be a two-dimensional array of shape (n_samples, n_dims)')
    if x.shape[0] == 0:
        raise ValueError('"' + name + '" contains zero samples')
    if n_dims is not None and x.shape[1] != n_dims:
        raise ValueError('"' + name + '" has %i columns but %i were expected' % (x.shape[1], n_dims))
    check_finite_or_throw(x, name)
    return x


def make_rng(seed):
    """Create a counter-based random generator (Philox) from an integer seed. Identical seeds produce identical
    streams

    Parameters
    ----------
    seed : int, numpy.random.SeedSequence
        Seed of the stream

    Returns
    -------
    numpy.random.Generator
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def split_rng(seed, n_streams):
    """Split one seed into independent, reproducible substreams. Used so data generation, initialization, and
    augmented-dimension resampling never share random numbers

    Parameters
    ----------
    seed : int, numpy.random.SeedSequence
        Root seed
    n_streams : int
        Number of substreams to create

    Returns
    -------
    list
        List of numpy.random.Generator objects
    """
    check_positivity_or_throw(n_streams)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return [make_rng(child) for child in root.spawn(int(n_streams))]


def rng_state(rng):
    """Export the generator state as JSON-friendly python objects"""
    state = rng.bit_generator.state

    def _convert_(obj):
        if isinstance(obj, dict):
            return {k: _convert_(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return [int(v) for v in obj]
        if isinstance(obj, np.integer):
            return int(obj)
        return obj

    return _convert_(state)


def restore_rng(state):
    """Rebuild a generator from the output of rng_state()"""
    inner = state['state']
    restored = {'bit_generator': state['bit_generator'],
                'state': {'counter': np.array(inner['counter'], dtype=np.uint64),
                          'key': np.array(inner['key'], dtype=np.uint64)},
                'buffer': np.array(state['buffer'], dtype=np.uint64),
                'buffer_pos': int(state['buffer_pos']),
                'has_uint32': int(state['has_uint32']),
                'uinteger': int(state['uinteger'])}
    rng = np.random.Generator(np.random.Philox())
    rng.bit_generator.state = restored
    return rng


def gauss_sample(rng, shape):
    """Draw i.i.d. standard normal values

    Parameters
    ----------
    rng : numpy.random.Generator
        Random generator, advanced deterministically
    shape : tuple
        Shape of the batch, (n_samples, n_dims)

    Returns
    -------
    numpy.ndarray
    """
    shape = tuple(int(s) for s in shape)
    check_positivity_or_throw(*shape)
    return rng.standard_normal(shape)


def finite_diff_jacobian(f, x, h=1e-5):
    r"""Central-difference Jacobian of a vector-valued map

    .. math::

        J_{ij} = \frac{f_i(x + h e_j) - f_i(x - h e_j)}{2h}

    Parameters
    ----------
    f : callable
        Function mapping a one-dimensional array to a one-dimensional array
    x : array-like
        Point at which the Jacobian is evaluated
    h : float, optional
        Step size. Default is 1e-5, which balances truncation and cancellation error in double precision

    Returns
    -------
    numpy.ndarray
        Matrix of shape (len(f(x)), len(x))

    Examples
    --------
    >>> import numpy as np
    >>> from krflow.calc import finite_diff_jacobian
    >>> finite_diff_jacobian(lambda v: np.array([v[0]**2, v[1]]), np.array([3., 5.]))
    """
    check_positivity_or_throw(h)
    x = np.asarray(x, dtype=np.float64).ravel()
    columns = []
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        fp = np.asarray(f(x + e), dtype=np.float64).ravel()
        fm = np.asarray(f(x - e), dtype=np.float64).ravel()
        check_finite_or_throw(fp, 'finite difference evaluation')
        check_finite_or_throw(fm, 'finite difference evaluation')
        columns.append((fp - fm) / (2 * h))
    return np.stack(columns, axis=1)


def logsumexp(values, axis=None):
    """Overflow-safe log of a sum of exponentials

    Parameters
    ----------
    values : array-like
        Values to reduce. Must be nonempty
    axis : int, optional
        Axis to reduce over. Default reduces over every entry

    Returns
    -------
    float or numpy.ndarray
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError('logsumexp requires a nonempty input')
    return _scipy_logsumexp(values, axis=axis)


def std_normal_logpdf(x):
    """Background function returning the standard normal log-density summed over the columns of a batch"""
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * np.sum(x ** 2, axis=1) - 0.5 * x.shape[1] * np.log(2 * np.pi)


def mc_mean(values):
    """Monte Carlo mean with standard error

    Parameters
    ----------
    values : array-like
        Independent draws

    Returns
    -------
    MCEstimate
        namedtuple of value, std_err, n. The standard error is nan (with a warning) for a single draw
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError('Monte Carlo estimate requires at least one draw')
    if values.size == 1:
        warnings.warn('Standard error is undefined for a single draw', UserWarning)
        return MCEstimate(float(values[0]), np.nan, 1)
    d = DescrStatsW(values, ddof=1)
    return MCEstimate(float(d.mean), float(d.std / np.sqrt(values.size)), int(values.size))
