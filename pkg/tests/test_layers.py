import pytest
import numpy as np
import numpy.testing as npt

from krflow.calc import make_rng, finite_diff_jacobian
from krflow.layers import (mlp_init, mlp_forward, mlp_vjp, ActiveMask, prefix_mask, AffineCoupling, ScaleBias,
                           Rotation, Squeeze, CdfLayer, LogitTransform, nonuniform_mesh, layer_vjp, logit_preprocess,
                           squeeze_apply)


def _map_(layer):
    return lambda v: layer.forward(v[None, :])[0][0]


def _logdet_matches_jacobian_(layer, x):
    for row in x:
        jac = finite_diff_jacobian(_map_(layer), row)
        ld = layer.forward(row[None, :])[1][0]
        npt.assert_allclose(ld, np.log(np.abs(np.linalg.det(jac))), atol=1e-6)


def _vjp_matches_fd_(layer, x, rng):
    cot = rng.standard_normal(x.shape)
    w = rng.standard_normal(x.shape[0])

    def phi(flat):
        out, ld, _ = layer.forward(flat.reshape(x.shape))
        return np.array([np.sum(cot * out) + np.sum(w * ld)])

    _, _, cache = layer.forward(x, cache=True)
    grads, cot_in = layer_vjp(layer, cache, cot, w)
    fd = finite_diff_jacobian(phi, x.ravel())[0].reshape(x.shape)
    npt.assert_allclose(cot_in, fd, rtol=1e-5, atol=1e-6)
    for name, value in layer.params.items():
        def phi_param(flat):
            old = value.copy()
            value[...] = flat.reshape(value.shape)
            layer.touch()
            try:
                return phi(x.ravel())
            finally:
                value[...] = old
                layer.touch()

        fd = finite_diff_jacobian(phi_param, value.ravel().copy())[0].reshape(value.shape)
        npt.assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-6, err_msg=name)


def _transpose_solve_matches_(layer, x, rng):
    mu = rng.standard_normal((1, x.shape[1]))
    _, _, cache = layer.forward(x[:1], cache=True)
    nu = layer.transpose_solve(cache, mu)
    jac = finite_diff_jacobian(_map_(layer), x[0])
    npt.assert_allclose(jac.T @ nu[0], mu[0], rtol=1e-5, atol=1e-6)


@pytest.fixture
def rng():
    return make_rng(2024)


@pytest.fixture
def batch(rng):
    return rng.standard_normal((5, 3))


class TestNetwork:

    def test_zero_output_start(self, rng):
        net = mlp_init(rng, 2, 8, 3)
        s, t, _ = mlp_forward(net, rng.standard_normal((4, 2)))
        npt.assert_array_equal(s, 0.)
        npt.assert_array_equal(t, 0.)

    def test_parameter_count(self, rng):
        net = mlp_init(rng, 2, 8, 3)
        assert net.n_params() == 2 * 8 + 8 + 8 * 8 + 8 + 8 * 6 + 6

    def test_single_head(self, rng):
        net = mlp_init(rng, 2, 8, 3, heads=1)
        s, t, _ = mlp_forward(net, np.zeros((1, 2)))
        assert s is None
        assert t.shape == (1, 3)

    def test_error_input_width(self, rng):
        net = mlp_init(rng, 2, 8, 3)
        with pytest.raises(ValueError):
            mlp_forward(net, np.zeros((1, 3)))

    def test_error_scheme(self, rng):
        with pytest.raises(ValueError):
            mlp_init(rng, 2, 8, 3, scheme='random')

    @pytest.mark.parametrize('activation', ['tanh', 'sigmoid'])
    def test_vjp_against_fd(self, rng, activation):
        net = mlp_init(rng, 2, 6, 2, scheme='dense', activation=activation)
        x = rng.standard_normal((4, 2))
        cs, ct = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))

        def phi(flat):
            s, t, _ = mlp_forward(net, flat.reshape(x.shape))
            return np.array([np.sum(cs * s) + np.sum(ct * t)])

        _, _, cache = mlp_forward(net, x)
        grads, grad_x = mlp_vjp(net, cache, cs, ct)
        npt.assert_allclose(grad_x, finite_diff_jacobian(phi, x.ravel())[0].reshape(x.shape), rtol=1e-5, atol=1e-7)
        w1 = net.params['W1']
        old = w1.copy()

        def phi_w1(flat):
            w1[...] = flat.reshape(w1.shape)
            out = phi(x.ravel())
            w1[...] = old
            return out

        npt.assert_allclose(grads['W1'], finite_diff_jacobian(phi_w1, old.ravel())[0].reshape(w1.shape),
                            rtol=1e-5, atol=1e-7)

    def test_stale_cache(self, rng):
        net = mlp_init(rng, 2, 4, 2)
        _, _, cache = mlp_forward(net, np.zeros((1, 2)))
        net.touch()
        with pytest.raises(ValueError, match='stale'):
            mlp_vjp(net, cache, np.zeros((1, 2)), np.zeros((1, 2)))


class TestAffineCoupling:

    @pytest.fixture
    def coupling(self, rng):
        layer = AffineCoupling([0], [1, 2], 8, rng, scheme='dense')
        layer.params['beta'][...] = [0.3, -0.2]
        return layer

    @pytest.fixture
    def ode_coupling(self, rng):
        layer = AffineCoupling([0, 1], [2], 8, rng, mode='ode', dt=0.1, scheme='dense')
        layer.params['beta'][...] = 0.4
        layer.params['alpha'][...] = -0.5
        return layer

    def test_identity_at_init(self, rng, batch):
        layer = AffineCoupling([0], [1, 2], 8, rng)
        out, logdet, _ = layer.forward(batch)
        npt.assert_array_equal(out, batch)
        npt.assert_array_equal(logdet, 0.)

    def test_conditioning_part_untouched(self, coupling, batch):
        out = coupling.forward(batch)[0]
        npt.assert_array_equal(out[:, 0], batch[:, 0])

    def test_round_trip(self, coupling, batch):
        npt.assert_allclose(coupling.inverse(coupling.forward(batch)[0]), batch, atol=1e-12)

    def test_scale_bounded(self, coupling, rng):
        x = 10 * rng.standard_normal((200, 3))
        _, _, cache = coupling.forward(x, cache=True)
        assert np.all(cache.scale >= 1 - coupling.alpha)
        assert np.all(cache.scale <= 1 + coupling.alpha)

    def test_logdet(self, coupling, batch):
        _logdet_matches_jacobian_(coupling, batch)

    def test_vjp(self, coupling, batch, rng):
        _vjp_matches_fd_(coupling, batch, rng)

    def test_transpose_solve(self, coupling, batch, rng):
        _transpose_solve_matches_(coupling, batch, rng)

    def test_ode_round_trip(self, ode_coupling, batch):
        npt.assert_allclose(ode_coupling.inverse(ode_coupling.forward(batch)[0]), batch, atol=1e-12)

    def test_ode_vjp(self, ode_coupling, batch, rng):
        _vjp_matches_fd_(ode_coupling, batch, rng)

    def test_ode_logdet(self, ode_coupling, batch):
        _logdet_matches_jacobian_(ode_coupling, batch)

    def test_translation_only_preserves_volume(self, rng, batch):
        layer = AffineCoupling([0], [1, 2], 8, rng, scheme='dense', translation_only=True)
        out, logdet, _ = layer.forward(batch)
        npt.assert_array_equal(logdet, 0.)
        assert 'alpha' not in layer.params
        npt.assert_allclose(layer.inverse(out), batch, atol=1e-12)

    def test_error_overlap(self, rng):
        with pytest.raises(ValueError):
            AffineCoupling([0, 1], [1, 2], 8, rng)

    def test_error_alpha(self, rng):
        with pytest.raises(ValueError):
            AffineCoupling([0], [1], 8, rng, alpha=1.)

    def test_error_ode_without_dt(self, rng):
        with pytest.raises(ValueError):
            AffineCoupling([0], [1], 8, rng, mode='ode')

    def test_stale_cache(self, coupling, batch):
        _, _, cache = coupling.forward(batch, cache=True)
        coupling.touch()
        with pytest.raises(ValueError, match='stale'):
            coupling.vjp(cache, batch, np.ones(batch.shape[0]))


class TestScaleBias:

    def test_data_initialization(self, rng):
        x = 3 + 2 * rng.standard_normal((1000, 2))
        layer = ScaleBias([0, 1])
        out = layer.forward(x)[0]
        npt.assert_allclose(np.mean(out, axis=0), 0., atol=1e-12)
        npt.assert_allclose(np.std(out, axis=0), 1., atol=1e-12)
        assert layer.initialized

    def test_only_first_batch_initializes(self, rng):
        layer = ScaleBias([0])
        layer.forward(rng.standard_normal((50, 1)))
        a = layer.params['a'].copy()
        layer.forward(5 * rng.standard_normal((50, 1)))
        npt.assert_array_equal(layer.params['a'], a)

    def test_error_inverse_before_init(self):
        with pytest.raises(ValueError):
            ScaleBias([0]).inverse(np.zeros((1, 1)))

    def test_error_constant_batch(self):
        with pytest.raises(ValueError):
            ScaleBias([0]).forward(np.ones((10, 1)))

    def test_vjp(self, batch, rng):
        layer = ScaleBias([0, 2], initialized=True)
        layer.params['a'][...] = [1.5, -0.7]
        layer.params['b'][...] = [0.2, 0.1]
        _vjp_matches_fd_(layer, batch, rng)
        _logdet_matches_jacobian_(layer, batch)
        _transpose_solve_matches_(layer, batch, rng)


class TestRotation:

    @pytest.fixture
    def rotation(self):
        layer = Rotation([0, 1, 2])
        layer.params['L'][...] = [0.3, -0.4, 0.2]
        layer.params['U'][...] = [1.2, 0.5, -0.3, 0.8, 0.1, -1.1]
        return layer

    def test_identity_at_init(self, batch):
        out, logdet, _ = Rotation([0, 1, 2]).forward(batch)
        npt.assert_array_equal(out, batch)
        npt.assert_array_equal(logdet, 0.)

    def test_round_trip(self, rotation, batch):
        npt.assert_allclose(rotation.inverse(rotation.forward(batch)[0]), batch, atol=1e-12)

    def test_logdet(self, rotation, batch):
        npt.assert_allclose(rotation.forward(batch)[1], np.log(1.2 * 0.8 * 1.1))
        _logdet_matches_jacobian_(rotation, batch)

    def test_logdet_excluded(self, batch):
        layer = Rotation([0, 1], include_logdet=False)
        layer.params['U'][...] = [2., 0., 3.]
        npt.assert_array_equal(layer.forward(batch)[1], 0.)

    def test_vjp(self, rotation, batch, rng):
        _vjp_matches_fd_(rotation, batch, rng)
        _transpose_solve_matches_(rotation, batch, rng)

    def test_singular(self, batch):
        layer = Rotation([0, 1])
        layer.params['U'][...] = [0., 1., 1.]
        with pytest.raises(FloatingPointError):
            layer.forward(batch)

    def test_acts_on_active_columns_only(self, batch):
        layer = Rotation([0, 1])
        layer.params['L'][...] = 0.5
        npt.assert_array_equal(layer.forward(batch)[0][:, 2], batch[:, 2])


class TestSqueeze:

    def test_prefix_mask_is_identity(self, batch):
        layer = Squeeze(prefix_mask(3, 2))
        out, logdet, _ = layer.forward(batch)
        npt.assert_array_equal(out, batch)
        npt.assert_array_equal(logdet, 0.)

    def test_general_mask(self, batch, rng):
        mask = ActiveMask(np.array([True, False, True]), 2)
        out = squeeze_apply(mask, batch, 'forward')
        npt.assert_array_equal(out, batch[:, [0, 2, 1]])
        npt.assert_array_equal(squeeze_apply(mask, out, 'inverse'), batch)
        layer = Squeeze(mask)
        _vjp_matches_fd_(layer, batch, rng)
        _transpose_solve_matches_(layer, batch, rng)

    def test_error_direction(self, batch):
        with pytest.raises(ValueError):
            squeeze_apply(prefix_mask(3, 1), batch, 'sideways')


class TestCdfLayer:

    @pytest.fixture
    def cdf(self, rng):
        layer = CdfLayer([0, 1, 2])
        layer.params['theta'][...] = 0.5 * rng.standard_normal(layer.params['theta'].shape)
        return layer

    def test_mesh(self):
        knots = nonuniform_mesh(32, 20., 1.15)
        assert knots.size == 33
        npt.assert_allclose(knots, -knots[::-1])
        assert knots[0] == -20. and knots[-1] == 20.
        widths = np.diff(knots[16:])
        assert np.all(np.diff(widths) > 0)

    def test_error_odd_mesh(self):
        with pytest.raises(ValueError):
            nonuniform_mesh(31)

    def test_uniform_density_is_identity(self, batch):
        out, logdet, _ = CdfLayer([0, 1, 2]).forward(batch)
        npt.assert_allclose(out, batch, atol=1e-12)
        npt.assert_allclose(logdet, 0., atol=1e-12)

    def test_density_normalized(self, cdf):
        dens, cum = cdf.density()
        npt.assert_allclose(cum[:, -1], 1.)
        npt.assert_allclose(dens @ cdf.mesh_weights, 1.)

    def test_round_trip(self, cdf, rng):
        x = 4 * rng.standard_normal((200, 3))
        npt.assert_allclose(cdf.inverse(cdf.forward(x)[0]), x, atol=1e-9)

    def test_monotone(self, cdf):
        x = np.linspace(-30, 30, 601)[:, None].repeat(3, axis=1)
        out = cdf.forward(x)[0]
        assert np.all(np.diff(out, axis=0) > 0)

    def test_tail_is_linear(self):
        layer = CdfLayer([0], tail_slope=0.5)
        out, logdet, _ = layer.forward(np.array([[25.], [-24.]]))
        npt.assert_allclose(out[:, 0], [22.5, -22.])
        npt.assert_allclose(logdet, np.log(0.5))
        npt.assert_allclose(layer.inverse(out), [[25.], [-24.]])

    def test_logdet(self, cdf, batch):
        _logdet_matches_jacobian_(cdf, batch)

    def test_vjp(self, cdf, batch, rng):
        _vjp_matches_fd_(cdf, batch, rng)
        _transpose_solve_matches_(cdf, batch, rng)


class TestLogitTransform:

    @pytest.fixture
    def box(self, rng):
        return rng.uniform(-1.4, 1.4, size=(5, 3))

    def test_round_trip(self, box):
        layer = LogitTransform([0, 1, 2], scale=1., lower=-1.6, upper=1.6)
        npt.assert_allclose(layer.inverse(layer.forward(box)[0]), box, atol=1e-12)

    def test_centre_maps_to_zero(self):
        y, _ = logit_preprocess(2., np.array([[0.5]]), 'forward')
        npt.assert_allclose(y, 0.)

    def test_inverse_logdet(self, box):
        y, ld = logit_preprocess(1., box, 'forward', -1.6, 1.6)
        _, ld_inv = logit_preprocess(1., y, 'inverse', -1.6, 1.6)
        npt.assert_allclose(ld_inv, -ld)

    def test_error_outside_box(self):
        with pytest.raises(ValueError):
            logit_preprocess(1., np.array([[1.]]), 'forward')

    def test_vjp(self, box, rng):
        layer = LogitTransform([0, 2], scale=0.7, lower=-1.6, upper=1.6)
        _vjp_matches_fd_(layer, box, rng)
        _logdet_matches_jacobian_(layer, box)
        _transpose_solve_matches_(layer, box, rng)
