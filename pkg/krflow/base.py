import copy
import hashlib
import json

from krflow.flow import FlowConfig

VARIANTS = ('KRnet', 'KRnet_aug', 'KRnet_R&N', 'KRnet_aug_R&N', 'KRnet_ODE', 'realNVP')

_budget_defaults = {'epochs': 100, 'minibatches': 4, 'train_size': 10000, 'valid_size': 10000, 'batch_size': 1000,
                    'eval_every': 10}
_optimizer_defaults = {'lr': 1e-3, 'beta1': 0.9, 'beta2': 0.999, 'eps': 1e-8}


def _merge_(name, given, defaults):
    given = dict(given or {})
    unknown = set(given) - set(defaults)
    if unknown:
        raise ValueError('%s: unknown keys %s' % (name, sorted(unknown)))
    return dict(defaults, **given)


def variant_model(variant, n_data, L=2, hidden0=24, dt=0.05, **kwargs):
    """Model configuration of a named variant

    Parameters
    ----------
    variant : str
        One of KRnet, KRnet_aug, KRnet_R&N, KRnet_aug_R&N, KRnet_ODE, realNVP
    n_data : int
        Number of data dimensions. Every KRnet variant deactivates the data one dimension at a time (K = n_data);
        augmented variants add one dimension
    L : int, optional
        Coupling layers per stage
    hidden0 : int, optional
        Hidden width of the first stage
    dt : float, optional
        Step size of KRnet_ODE. Default is 0.05
    kwargs :
        Further FlowConfig fields

    Returns
    -------
    FlowConfig
    """
    if variant not in VARIANTS:
        raise ValueError('variant: unknown tag "%s"; expected one of %s' % (variant, ', '.join(VARIANTS)))
    opts = dict(n_data=n_data, L=L, hidden0=hidden0)
    if variant == 'realNVP':
        opts.update(m_aug=0, K=1)
    else:
        opts.update(K=n_data, m_aug=1 if ('aug' in variant or variant == 'KRnet_ODE') else 0)
    if variant.endswith('R&N'):
        opts.update(use_rotation=True, use_cdf_layer=True)
    if variant == 'KRnet_ODE':
        opts['ode'] = {'dt': dt}
    opts.update(kwargs)
    return FlowConfig(**opts)


def check_variant(variant, model):
    """Raise a ValueError if the model configuration does not have the structure the variant tag names"""
    if variant not in VARIANTS:
        raise ValueError('variant: unknown tag "%s"; expected one of %s' % (variant, ', '.join(VARIANTS)))
    augmented = model.m_aug > 0
    rn = model.use_rotation and model.use_cdf_layer
    if variant == 'realNVP':
        ok = not augmented and model.K == 1 and model.ode is None
    elif variant == 'KRnet_ODE':
        ok = model.ode is not None
    else:
        ok = (augmented == ('aug' in variant)) and (rn == variant.endswith('R&N')) and model.ode is None
    if not ok:
        raise ValueError('variant: model configuration does not match the "%s" tag' % variant)


class ExperimentConfig:
    """Complete description of a training experiment. Saved runs always contain every field

    Parameters
    ----------
    variant : str
        Model tag, one of KRnet, KRnet_aug, KRnet_R&N, KRnet_aug_R&N, KRnet_ODE, realNVP
    model : FlowConfig, dict
        Model configuration, consistent with the variant
    target : dict
        {'name': str, 'params': dict} of the benchmark distribution
    mode : str, optional
        'estimation' (default) fits samples of the target; 'approximation' minimizes the reverse KL divergence
    budgets : dict, optional
        epochs (100), minibatches (4), train_size (10^4), valid_size (10^4), batch_size (10^3, approximation only),
        eval_every (10)
    optimizer : dict, optional
        lr (1e-3), beta1 (0.9), beta2 (0.999), eps (1e-8)
    seed : int, optional
        Root seed. Default is 0
    runs : int, optional
        Number of independent runs (seeds seed, seed+1, ...). Default is 1
    out : str, optional
        Output directory. Default is 'results'
    grad_path : str, optional
        'adjoint' (default) or 'backprop'
    gamma_resample : str, optional
        Cadence of the augmented draws in estimation, 'epoch' (default) or 'minibatch'
    n_generated : int, optional
        Number of generated samples written after training. Default is 10^4
    normalizer_mc : int, optional
        Proposals used to estimate the normalizer of a holes target. Default is 10^5
    """
    fields = ('variant', 'mode', 'model', 'target', 'budgets', 'optimizer', 'seed', 'runs', 'out', 'grad_path',
              'gamma_resample', 'n_generated', 'normalizer_mc')

    def __init__(self, variant, model, target, mode='estimation', budgets=None, optimizer=None, seed=0, runs=1,
                 out='results', grad_path='adjoint', gamma_resample='epoch', n_generated=10000,
                 normalizer_mc=100000):
        if isinstance(model, dict):
            model = FlowConfig.from_dict(model)
        if not isinstance(model, FlowConfig):
            raise ValueError('model: expected a FlowConfig or a dictionary')
        check_variant(variant, model)
        self.variant = variant
        self.model = model
        if mode not in ('estimation', 'approximation'):
            raise ValueError('mode: must be "estimation" or "approximation"')
        self.mode = mode
        target = _merge_('target', target, {'name': None, 'params': {}})
        if not target['name']:
            raise ValueError('target: a target name is required')
        target['params'] = dict(target['params'] or {})
        self.target = target
        self.budgets = _merge_('budgets', budgets, _budget_defaults)
        for key, value in self.budgets.items():
            minimum = 0 if key == 'epochs' else 1
            if int(value) != value or value < minimum:
                raise ValueError('budgets: %s must be an integer >= %i' % (key, minimum))
            self.budgets[key] = int(value)
        self.optimizer = _merge_('optimizer', optimizer, _optimizer_defaults)
        if self.optimizer['lr'] <= 0:
            raise ValueError('optimizer: lr must be positive')
        self.seed = int(seed)
        if int(runs) < 1:
            raise ValueError('runs: must be at least 1')
        self.runs = int(runs)
        self.out = str(out)
        if grad_path not in ('adjoint', 'backprop'):
            raise ValueError('grad_path: must be "adjoint" or "backprop"')
        self.grad_path = grad_path
        if gamma_resample not in ('epoch', 'minibatch'):
            raise ValueError('gamma_resample: must be "epoch" or "minibatch"')
        self.gamma_resample = gamma_resample
        if int(n_generated) < 1:
            raise ValueError('n_generated: must be at least 1')
        self.n_generated = int(n_generated)
        if int(normalizer_mc) < 10 ** 4:
            raise ValueError('normalizer_mc: must be at least 10^4')
        self.normalizer_mc = int(normalizer_mc)

    def to_dict(self):
        d = {f: copy.deepcopy(getattr(self, f)) for f in self.fields}
        d['model'] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.fields)
        if unknown:
            raise ValueError('config: unknown keys ' + str(sorted(unknown)))
        for key in ('variant', 'model', 'target'):
            if key not in d:
                raise ValueError('config: "%s" is required' % key)
        return cls(**d)

    def replace(self, **changes):
        """Copy of the configuration with some fields replaced"""
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def config_hash(self):
        """First 12 hex digits of the SHA-256 of the canonical JSON. The seed, the number of runs and the output
        directory are not part of the hash, so repeated runs of one configuration share it"""
        d = self.to_dict()
        for key in ('out', 'seed', 'runs'):
            del d[key]
        text = json.dumps(d, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return 'ExperimentConfig(%s, %s, hash=%s)' % (self.variant, self.target['name'], self.config_hash())


def load_config(path):
    """Read an ExperimentConfig from a JSON file"""
    with open(path, 'r') as f:
        return ExperimentConfig.from_dict(json.load(f))


def save_config(config, path):
    """Write the complete configuration as JSON"""
    with open(path, 'w') as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
