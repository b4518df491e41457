"""Pinned desk-scale configurations of the reproduction cases. The training and validation sizes are scaled down
from the original experiments; the bounds are property-based acceptance levels, with the published values kept for
reference where they exist"""
from collections import namedtuple

from krflow.base import ExperimentConfig, variant_model

Case = namedtuple('Case', ['case_id', 'description', 'runs', 'expectations', 'orderings', 'checks'])
Run = namedtuple('Run', ['row', 'column', 'config'])
Expectation = namedtuple('Expectation', ['row', 'column', 'bound', 'published'])

# published relative errors of the 2D mixture estimation, by variant and L
MIXTURE_TABLE = {'KRnet': {2: 6.96e-2, 4: 1.74e-2, 6: 5.46e-3},
                 'KRnet_aug': {2: 1.02e-1, 4: 8.47e-3, 6: 1.53e-3},
                 'KRnet_aug_R&N': {2: 4.52e-2, 4: 1.29e-3, 6: 6.79e-4},
                 'KRnet_R&N': {2: 1.50e-2, 4: 2.56e-3, 6: 1.56e-3},
                 'KRnet_ODE': {2: 2.93e-2, 4: 1.67e-2, 6: 1.02e-2}}


def _config_(variant, n_data, L, target, budgets, hidden0=24, width_decay=1.0, dt=0.05, mode='estimation',
             runs=3, **model_kw):
    model = variant_model(variant, n_data, L=L, hidden0=hidden0, dt=dt, width_decay=width_decay, **model_kw)
    return ExperimentConfig(variant, model, target, mode=mode, budgets=budgets, runs=runs)


def _one_dim_(case_id, target, L, bound, description, **model_kw):
    budgets = {'epochs': 200, 'minibatches': 4, 'train_size': 80000, 'valid_size': 20000, 'eval_every': 50}
    runs = [Run('KRnet_aug', 'L=%i' % L, _config_('KRnet_aug', 1, L, target, budgets, **model_kw)),
            Run('KRnet_ODE', 'L=%i' % L, _config_('KRnet_ODE', 1, L, target, budgets, dt=0.1, **model_kw))]
    return Case(case_id, description, runs, [Expectation('KRnet_aug', 'L=%i' % L, bound, None)], [], [])


def _mixture_table_():
    budgets = {'epochs': 2000, 'minibatches': 8, 'train_size': 160000, 'valid_size': 40000, 'eval_every': 100}
    target = {'name': 'mixture2d', 'params': {}}
    runs = []
    for variant in MIXTURE_TABLE:
        for L in (2, 4, 6):
            runs.append(Run(variant, 'L=%i' % L, _config_(variant, 2, L, target, budgets, width_decay=0.9)))
    expectations = [Expectation(v, 'L=%i' % L, None, MIXTURE_TABLE[v][L]) for v in MIXTURE_TABLE for L in (2, 4, 6)]
    expectations.append(Expectation('KRnet_aug_R&N', 'L=6', 5e-3, MIXTURE_TABLE['KRnet_aug_R&N'][6]))
    orderings = [('L=6', ['KRnet_aug_R&N', 'KRnet_aug', 'KRnet'])]
    return Case('2d-mixture-table', 'Density estimation of the 2D mixture of Gaussians, variants by L', runs,
                expectations, orderings, [])


def _mixture_approx_():
    budgets = {'epochs': 500, 'minibatches': 8, 'batch_size': 10000, 'valid_size': 10000, 'eval_every': 50}
    config = _config_('KRnet_aug_R&N', 2, 6, {'name': 'mixture2d', 'params': {}}, budgets, width_decay=0.9,
                      mode='approximation', runs=1)
    return Case('2d-mixture-approx', 'Reverse-KL approximation of the 2D mixture of Gaussians',
                [Run('KRnet_aug_R&N', 'L=6', config)], [Expectation('KRnet_aug_R&N', 'L=6', 5e-2, None)], [],
                [('mode_coverage', 0.05)])


def _holes_(n, hidden0, case_id):
    budgets = {'epochs': 300, 'minibatches': 8, 'train_size': 100000, 'valid_size': 50000, 'eval_every': 50}
    target = {'name': 'holes', 'params': {'dims': n, 'scale': 2., 'aspect': 3., 'threshold': 7.6}}
    variants = ['KRnet_aug', 'KRnet', 'realNVP']
    if n == 8:
        variants.insert(1, 'KRnet_aug_R&N')
    runs = []
    for variant in variants:
        for L in (2, 4, 6):
            runs.append(Run(variant, 'L=%i' % L, _config_(variant, n, L, target, budgets, hidden0=hidden0)))
    return Case(case_id, 'Relative KL of the %iD logistic distribution with holes against DOFs' % n, runs, [],
                [], [('beats_realNVP', 'KRnet_aug'), ('hole_violation', 0.01)])


CASES = {'1d-logistic': lambda: _one_dim_('1d-logistic', {'name': 'logistic', 'params': {'loc': 0., 'scale': 2.}},
                                          2, 1e-2, 'Logistic(0, 2) estimation, h = 2 + ln 2'),
         '1d-lognormal': lambda: _one_dim_('1d-lognormal', {'name': 'lognormal', 'params': {}}, 4, 2e-2,
                                           'Lognormal estimation, h = ln(2 pi)/2 + 1/2'),
         '1d-uniform': lambda: _one_dim_('1d-uniform', {'name': 'uniform', 'params': {'low': -1., 'high': 1.}}, 4,
                                         5e-2, 'Uniform[-1, 1] estimation, h = ln 2'),
         '1d-uniform-hole': lambda: _one_dim_('1d-uniform-hole', {'name': 'uniform_hole', 'params': {}}, 4, 1e-1,
                                              'Uniform on [-1.5, -0.5] U [0.5, 1.5] with logistic preprocessing, '
                                              'h = ln 2', logit={'scale': 1., 'lower': -1.6, 'upper': 1.6}),
         '2d-mixture-table': _mixture_table_,
         '2d-mixture-approx': _mixture_approx_,
         'holes-4d': lambda: _holes_(4, 24, 'holes-4d'),
         'holes-8d': lambda: _holes_(8, 32, 'holes-8d')}


def get_case(case_id):
    """Pinned configuration of a reproduction case"""
    if case_id not in CASES:
        raise ValueError('unknown case "%s"; available cases are %s' % (case_id, ', '.join(sorted(CASES))))
    return CASES[case_id]()
