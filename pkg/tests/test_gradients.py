import pytest
import numpy as np
import numpy.testing as npt

from krflow.base import variant_model
from krflow.calc import make_rng, std_normal_logpdf
from krflow.flow import build_model
from krflow.gradients import GradientBundle, CacheLedger, backprop_grad, adjoint_grad, reparam_grad, grad_check, compare_paths

variants = ['KRnet', 'KRnet_aug', 'KRnet_R&N', 'KRnet_aug_R&N', 'KRnet_ODE', 'realNVP']


def _model_and_batch_(variant, n_data=3, n=32, seed=0):
    cfg = variant_model(variant, n_data, L=2, hidden0=6, dt=0.25, init_scheme='dense')
    model = build_model(cfg, make_rng(seed))
    rng = make_rng(seed + 100)
    y = 1.5 * rng.standard_normal((n, n_data)) + 0.5
    gamma = rng.standard_normal((n, cfg.m_aug)) if cfg.m_aug > 0 else None
    model.initialize(y, gamma)
    # move away from the data-initialized scale-bias values so every parameter has a nonzero gradient
    theta = model.get_flat_params()
    model.set_flat_params(theta + 0.05 * rng.standard_normal(theta.size))
    return model, y, gamma


class TestBackpropAdjoint:

    @pytest.mark.parametrize('variant', variants)
    def test_paths_agree(self, variant):
        model, y, gamma = _model_and_batch_(variant)
        loss_a, grad_a = adjoint_grad(model, y, gamma)
        loss_b, grad_b = backprop_grad(model, y, gamma)
        npt.assert_allclose(loss_a, loss_b, rtol=1e-12)
        assert compare_paths(model, y, gamma) <= 1e-9
        npt.assert_allclose(grad_a.input_grad, grad_b.input_grad, rtol=1e-7, atol=1e-9)

    @pytest.mark.parametrize('variant', variants)
    @pytest.mark.parametrize('grad_path', ['adjoint', 'backprop'])
    def test_finite_differences(self, variant, grad_path):
        model, y, gamma = _model_and_batch_(variant)
        assert grad_check(model, y, gamma, n_probes=30, rng=make_rng(1), grad_path=grad_path) <= 1e-4

    def test_parameters_restored_after_check(self):
        model, y, gamma = _model_and_batch_('KRnet_aug')
        theta = model.get_flat_params()
        grad_check(model, y, gamma, n_probes=10)
        npt.assert_array_equal(model.get_flat_params(), theta)

    def test_cache_bookkeeping(self):
        model, y, gamma = _model_and_batch_('KRnet_aug_R&N')
        n_layers = len(model.layers)
        _, adj = adjoint_grad(model, y, gamma)
        _, bp = backprop_grad(model, y, gamma)
        assert adj.stats['caches_held'] == n_layers
        assert adj.stats['max_live_caches'] == 1
        assert bp.stats['caches_held'] == n_layers
        assert bp.stats['max_live_caches'] == n_layers
        assert adj.stats['live_caches'] == 0
        assert bp.stats['live_caches'] == 0

    def test_ledger_sees_retained_caches(self):
        model, y, gamma = _model_and_batch_('KRnet_aug')
        x = model.join(y, gamma)
        ledger = CacheLedger()
        kept = []
        for layer in model.layers:
            x, _, cache = layer.forward(x, cache=True)
            kept.append(ledger.hold(cache))
            del cache
        assert ledger.live == len(model.layers)
        assert ledger.peak == len(model.layers)
        kept.clear()
        assert ledger.live == 0
        assert ledger.peak == len(model.layers)

    def test_ledger_releases_on_drop(self):
        ledger = CacheLedger()
        held = ledger.hold(object())
        assert ledger.live == 1
        del held
        held = ledger.hold(object())
        del held
        assert ledger.stats(2) == {'max_live_caches': 1, 'live_caches': 0, 'caches_held': 2, 'n_layers': 2}

    def test_input_gradient_of_identity(self):
        cfg = variant_model('KRnet', 2, L=2, data_init=False)
        model = build_model(cfg, make_rng(0)).identity_initialize()
        y = make_rng(1).standard_normal((4, 2))
        _, bundle = adjoint_grad(model, y)
        # the loss is the mean of -log N(y), whose per-sample gradient is y
        npt.assert_allclose(bundle.input_grad, y, atol=1e-12)

    def test_by_layer(self):
        model, y, gamma = _model_and_batch_('KRnet_R&N')
        _, bundle = adjoint_grad(model, y, gamma)
        layers = bundle.by_layer()
        assert len(layers) == len([layer for layer in model.unique_layers() if layer.params])
        assert len(bundle) == model.n_params

    def test_error_length(self):
        model, _, _ = _model_and_batch_('KRnet')
        with pytest.raises(ValueError):
            GradientBundle(np.zeros(model.n_params + 1), model.registry)

    def test_zero_parameters_warns(self):
        model, y, gamma = _model_and_batch_('KRnet')
        with pytest.warns(UserWarning, match='zero probes'):
            assert grad_check(model, y, gamma, n_probes=0) == 0.

    def test_error_grad_path(self):
        model, y, gamma = _model_and_batch_('KRnet')
        with pytest.raises(ValueError):
            grad_check(model, y, gamma, grad_path='forward')

    def test_error_eps(self):
        model, y, gamma = _model_and_batch_('KRnet')
        with pytest.raises(ValueError):
            grad_check(model, y, gamma, eps=0.)


class TestReparameterized:

    @staticmethod
    def _target_():
        center = np.array([1., -0.5, 0.25, 2.])

        def log_target(x):
            return std_normal_logpdf(x - center[:x.shape[1]])

        def grad_log_target(x):
            return -(x - center[:x.shape[1]])

        return log_target, grad_log_target

    @pytest.mark.parametrize('variant', ['KRnet', 'KRnet_aug_R&N', 'KRnet_ODE', 'realNVP'])
    def test_finite_differences(self, variant):
        model, _, _ = _model_and_batch_(variant)
        log_target, grad_log_target = self._target_()
        z = make_rng(7).standard_normal((32, model.n_total))
        _, bundle, x0 = reparam_grad(model, z, log_target, grad_log_target)
        assert x0.shape == z.shape
        theta = model.get_flat_params()
        eps = 1e-5
        for j in make_rng(8).choice(theta.size, size=25, replace=False):
            shifted = theta.copy()
            shifted[j] += eps
            model.set_flat_params(shifted)
            up = reparam_grad(model, z, log_target, grad_log_target)[0]
            shifted[j] -= 2 * eps
            model.set_flat_params(shifted)
            down = reparam_grad(model, z, log_target, grad_log_target)[0]
            model.set_flat_params(theta)
            fd = (up - down) / (2 * eps)
            assert abs(fd - bundle.values[j]) <= 1e-4 * max(abs(fd), abs(bundle.values[j]), 1e-4)

    def test_single_live_cache(self):
        model, _, _ = _model_and_batch_('KRnet_ODE')
        log_target, grad_log_target = self._target_()
        z = make_rng(7).standard_normal((16, model.n_total))
        _, bundle, _ = reparam_grad(model, z, log_target, grad_log_target)
        assert bundle.stats['caches_held'] == len(model.layers)
        assert bundle.stats['max_live_caches'] == 1
        assert bundle.stats['live_caches'] == 0

    def test_constant_shift_leaves_gradient(self):
        model, _, _ = _model_and_batch_('KRnet_aug')
        log_target, grad_log_target = self._target_()
        z = make_rng(7).standard_normal((16, model.n_total))
        loss, bundle, _ = reparam_grad(model, z, log_target, grad_log_target)
        loss_s, bundle_s, _ = reparam_grad(model, z, lambda x: log_target(x) + 3., grad_log_target)
        npt.assert_allclose(loss - loss_s, 3.)
        npt.assert_array_equal(bundle.values, bundle_s.values)

    def test_identity_model_on_prior(self):
        cfg = variant_model('KRnet', 2, L=2, data_init=False)
        model = build_model(cfg, make_rng(0)).identity_initialize()
        z = make_rng(3).standard_normal((8, 2))
        loss, _, x0 = reparam_grad(model, z, std_normal_logpdf, lambda x: -x)
        npt.assert_allclose(x0, z)
        npt.assert_allclose(loss, 0., atol=1e-12)
