import numpy as np
import matplotlib.pyplot as plt
from matplotlib.figure import Figure

from krflow.calc import as_batch


def _check_dims_(samples, dims):
    samples = as_batch(samples, name='samples')
    if len(dims) != 2:
        raise ValueError('exactly two dimensions must be chosen for a scatter plot')
    if samples.shape[1] == 1:
        raise ValueError('a scatter plot needs at least two-dimensional samples')
    for d in dims:
        if not 0 <= d < samples.shape[1]:
            raise ValueError('dimension %i is out of range for %i-dimensional samples' % (d, samples.shape[1]))
    return samples


def scatter_plot(samples, dims=(0, 1), ax=None, **scatter_kwargs):
    """Scatter plot of two chosen dimensions of a batch of samples, e.g. the generated samples of a model next to
    the training set

    Parameters
    ----------
    samples : array-like
        Batch of samples
    dims : tuple, optional
        Indices of the two dimensions. Default is (0, 1)
    ax : matplotlib axes, optional
        Axes to draw on. Default is the current axes
    scatter_kwargs :
        Passed to ``matplotlib.axes.Axes.scatter``. Default marker size is 1

    Returns
    -------
    matplotlib axes

    Examples
    --------
    >>> import matplotlib.pyplot as plt
    >>> from krflow import mixture_target, make_rng
    >>> from krflow.graphics import scatter_plot
    >>> scatter_plot(mixture_target().sample(make_rng(1), 10000))
    >>> plt.show()
    """
    samples = _check_dims_(samples, dims)
    if ax is None:
        ax = plt.gca()
    scatter_kwargs.setdefault('s', 1)
    ax.scatter(samples[:, dims[0]], samples[:, dims[1]], **scatter_kwargs)
    ax.set_xlabel('y' + str(dims[0] + 1))
    ax.set_ylabel('y' + str(dims[1] + 1))
    return ax


def save_scatter_svg(samples, path, dims=(0, 1), title=None, metadata=None):
    """Render the scatter plot of two chosen dimensions directly to an SVG file. No interactive backend is used

    Parameters
    ----------
    samples : array-like
        Batch of samples
    path : str
        Output file
    dims : tuple, optional
        Indices of the two dimensions
    title : str, optional
        Plot title
    metadata : dict, optional
        SVG metadata, e.g. {'Description': 'config_hash ... seed ...'}
    """
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(1, 1, 1)
    scatter_plot(samples, dims=dims, ax=ax, color='darkblue')
    if title is not None:
        ax.set_title(title)
    fig.savefig(path, format='svg', metadata=metadata)


def loss_plot(history, ax=None, metric=True):
    """Training curves of a history DataFrame: the loss against the epoch and, on a second log-scaled axis, the
    evaluated metric

    Returns
    -------
    matplotlib axes
    """
    if ax is None:
        ax = plt.gca()
    ax.plot(history['epoch'], history['loss'], color='k', label='loss')
    ax.set_xlabel('Epoch')
    ax.set_ylabel('Loss')
    if metric:
        evaluated = history.dropna(subset=['metric'])
        evaluated = evaluated.loc[evaluated['metric'] > 0]
        if evaluated.shape[0] > 0:
            ax2 = ax.twinx()
            ax2.plot(evaluated['epoch'], evaluated['metric'], 'o-', color='darkred', label='metric')
            ax2.set_yscale('log')
            ax2.set_ylabel('Metric')
    return ax


def dof_plot(table, ax=None):
    """Log-log plot of the metric against the number of parameters, one line per variant

    Parameters
    ----------
    table : DataFrame
        Columns variant, n_params, metric

    Returns
    -------
    matplotlib axes
    """
    if ax is None:
        ax = plt.gca()
    for variant, group in table.groupby('variant', sort=False):
        group = group.sort_values('n_params')
        ax.plot(group['n_params'], np.abs(group['metric']), 'o-', label=variant)
    ax.set_xscale('log')
    ax.set_yscale('log')
    ax.set_xlabel('DOFs')
    ax.set_ylabel('Metric')
    ax.legend()
    return ax
