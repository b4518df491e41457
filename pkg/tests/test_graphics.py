import pytest
import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from krflow.calc import make_rng
from krflow.datasets import mixture_target
from krflow.graphics import scatter_plot, save_scatter_svg, loss_plot, dof_plot


@pytest.fixture
def samples():
    return mixture_target().sample(make_rng(1), 500)


class TestScatter:

    def test_returns_axes(self, samples):
        ax = scatter_plot(samples)
        assert ax.get_xlabel() == 'y1'
        assert ax.get_ylabel() == 'y2'
        plt.close('all')

    def test_chosen_dimensions(self):
        ax = scatter_plot(make_rng(0).standard_normal((50, 4)), dims=(1, 3))
        assert ax.get_ylabel() == 'y4'
        plt.close('all')

    def test_error_one_dimensional(self):
        with pytest.raises(ValueError):
            scatter_plot(np.zeros((10, 1)))

    def test_error_dimension_range(self, samples):
        with pytest.raises(ValueError):
            scatter_plot(samples, dims=(0, 2))

    def test_error_number_of_dimensions(self, samples):
        with pytest.raises(ValueError):
            scatter_plot(samples, dims=(0, 1, 1))

    def test_svg(self, samples, tmp_path):
        path = str(tmp_path / 'samples.svg')
        save_scatter_svg(samples, path, title='mixture', metadata={'Description': 'config_hash: abc; seed: 0'})
        with open(path) as f:
            text = f.read()
        assert text.lstrip().startswith('<?xml')
        assert 'config_hash: abc' in text


class TestCurves:

    def test_loss_plot(self):
        history = pd.DataFrame({'epoch': [1, 2, 3], 'loss': [3., 2.9, 2.8], 'metric': [np.nan, 0.05, 0.02]})
        ax = loss_plot(history)
        assert ax.get_xlabel() == 'Epoch'
        plt.close('all')

    def test_loss_plot_without_metric(self):
        history = pd.DataFrame({'epoch': [1, 2], 'loss': [3., 2.9], 'metric': [np.nan, np.nan]})
        loss_plot(history, metric=True)
        plt.close('all')

    def test_dof_plot(self):
        table = pd.DataFrame({'variant': ['KRnet', 'KRnet', 'realNVP', 'realNVP'], 'n_params': [100, 400, 90, 380],
                              'metric': [0.2, 0.05, 0.3, 0.1]})
        ax = dof_plot(table)
        assert ax.get_xscale() == 'log'
        assert len(ax.get_lines()) == 2
        plt.close('all')
