import time
import warnings
from collections import namedtuple

import numpy as np
import pandas as pd
from tabulate import tabulate

from krflow.calc import split_rng, gauss_sample, rng_state, restore_rng
from krflow.datasets import get_target, normalized_target
from krflow.flow import build_model
from krflow.gradients import grad_check, compare_paths
from krflow.train.optimizer import AdamState, adam_step
from krflow.train.losses import estimation_loss, approximation_loss, validation_loss
from krflow.train.metrics import metric_delta, metric_rel_kl

Experiment = namedtuple('Experiment', ['trainer', 'model', 'target', 'train', 'valid'])

# losses above this value count as divergence
DIVERGENCE = 1e6


class FlowTrainer:
    r"""Trains a flow model with ADAM at a fixed learning rate, either by density estimation from samples (cross
    entropy) or by density approximation of a known, possibly unnormalized, target (reverse KL divergence).

    For estimation, the data are reshuffled every epoch and split into a fixed number of minibatches. Augmented models
    draw one gamma per sample from the standard normal, either once per epoch (default) or once per minibatch. For
    approximation, every minibatch is sampled from the current model.

    The metric recorded in the history is the relative error

    .. math::

        \delta = \frac{|L - h(f)|}{h(f)}

    for targets with an analytic entropy or a stored Monte Carlo entropy estimate (the mixture, see
    normalized_target), the relative KL divergence for holes targets, and the reverse KL estimate for approximation
    of a normalized target.

    Parameters
    ----------
    model : FlowModel
        Model to train
    target : TargetDistribution
        Target distribution. Used for the metrics (estimation) or as the objective (approximation)
    mode : str, optional
        'estimation' (default) or 'approximation'
    lr : float, optional
        Learning rate. Default is 1e-3
    beta1 : float, optional
        Default is 0.9
    beta2 : float, optional
        Default is 0.999
    eps : float, optional
        Default is 1e-8
    minibatches : int, optional
        Minibatches per epoch. Default is 4
    batch_size : int, optional
        Samples per minibatch in approximation. Default is 1000
    grad_path : str, optional
        'adjoint' (default) or 'backprop'
    gamma_resample : str, optional
        'epoch' (default) or 'minibatch'
    eval_every : int, optional
        Epochs between metric evaluations. The last epoch is always evaluated. Default is 1
    seed : int, numpy.random.SeedSequence, optional
        Seed of the shuffling, augmented draws, model samples and evaluation streams. Default is 0

    Examples
    --------
    >>> from krflow import FlowConfig, build_model, FlowTrainer, logistic_target, make_rng
    >>> target = logistic_target()
    >>> model = build_model(FlowConfig(n_data=1, m_aug=1, L=2), make_rng(1))
    >>> trainer = FlowTrainer(model, target)
    >>> trainer.fit(50, train=target.sample(make_rng(2), 8000), valid=target.sample(make_rng(3), 8000))
    >>> trainer.summary()
    """
    def __init__(self, model, target, mode='estimation', lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, minibatches=4,
                 batch_size=1000, grad_path='adjoint', gamma_resample='epoch', eval_every=1, seed=0):
        if mode not in ('estimation', 'approximation'):
            raise ValueError('mode must be either "estimation" or "approximation"')
        if gamma_resample not in ('epoch', 'minibatch'):
            raise ValueError('gamma_resample must be either "epoch" or "minibatch"')
        if grad_path not in ('adjoint', 'backprop'):
            raise ValueError('grad_path must be either "adjoint" or "backprop"')
        if target is not None and target.dims != model.n_data:
            raise ValueError('target has %i dimensions but the model has %i' % (target.dims, model.n_data))
        if int(minibatches) < 1 or int(batch_size) < 1 or int(eval_every) < 1:
            raise ValueError('minibatches, batch_size and eval_every must be positive integers')
        self.model = model
        self.target = target
        self.mode = mode
        self.minibatches = int(minibatches)
        self.batch_size = int(batch_size)
        self.grad_path = grad_path
        self.gamma_resample = gamma_resample
        self.eval_every = int(eval_every)
        self.optimizer = AdamState(model.n_params, lr, beta1, beta2, eps)
        self._rng_shuffle, self._rng_gamma, self._rng_model, self._rng_eval = split_rng(seed, 4)
        self.epoch = 0
        self.diverged = False
        self.history = pd.DataFrame(columns=['epoch', 'loss', 'metric'])
        self.timing = pd.DataFrame(columns=['epoch', 'seconds'])
        self.audits = pd.DataFrame(columns=['epoch', 'fd_error', 'path_discrepancy'])
        self._records = []
        self._times = []
        self._audits = []
        self._fit = False

    def rng_states(self):
        """States of the four random streams, for checkpoints"""
        return [rng_state(r) for r in (self._rng_shuffle, self._rng_gamma, self._rng_model, self._rng_eval)]

    def restore_rng_states(self, states):
        self._rng_shuffle, self._rng_gamma, self._rng_model, self._rng_eval = [restore_rng(s) for s in states]

    def _minibatches_(self, train):
        n = train.shape[0]
        perm = self._rng_shuffle.permutation(n)
        batches = [b for b in np.array_split(perm, min(self.minibatches, n))]
        gamma = None
        if self.model.augmented and self.gamma_resample == 'epoch':
            gamma = gauss_sample(self._rng_gamma, (n, self.model.m_aug))
        for idx in batches:
            if not self.model.augmented:
                yield train[idx], None
            elif gamma is not None:
                yield train[idx], gamma[idx]
            else:
                yield train[idx], gauss_sample(self._rng_gamma, (idx.size, self.model.m_aug))

    def _step_(self, bundle):
        theta = adam_step(self.optimizer, self.model.get_flat_params(), bundle.values)
        self.model.set_flat_params(theta)

    def _metric_(self, valid, epoch_loss):
        target = self.target
        if self.mode == 'approximation':
            return epoch_loss if target.normalized else np.nan
        reference = target.reference_entropy()
        if reference is None or not target.normalized:
            return np.nan
        if target.hole_spec is None:
            return metric_delta(validation_loss(self.model, valid, self._rng_eval), reference)
        return metric_rel_kl(self.model, valid, target)

    def _audit_(self, y, gamma):
        fd = grad_check(self.model, y, gamma, grad_path=self.grad_path, rng=self._rng_eval)
        self._audits.append({'epoch': self.epoch, 'fd_error': fd,
                             'path_discrepancy': compare_paths(self.model, y, gamma)})

    def fit(self, epochs, train=None, valid=None, audit_epochs=(), print_results=False):
        """Run a number of epochs. Can be called again to continue training

        Parameters
        ----------
        epochs : int
            Number of epochs. Zero leaves an uninitialized model identity-initialized and otherwise unchanged
        train : numpy.ndarray, optional
            Training samples, required for estimation
        valid : numpy.ndarray, optional
            Validation samples for the metric. Default uses the training samples
        audit_epochs : iterable, optional
            Epoch indices (counted before the update, so 0 is the untrained model) at which the gradient is audited
            against finite differences and the other gradient path
        print_results : bool, optional
            Whether to print the loss and metric at every evaluation
        """
        if int(epochs) != epochs or epochs < 0:
            raise ValueError('epochs must be a non-negative integer')
        if self.mode == 'estimation':
            if train is None:
                raise ValueError('estimation requires training samples')
            train = np.asarray(train, dtype=np.float64).reshape(-1, self.model.n_data)
            valid = train if valid is None else valid
            if not self.model.config.data_init:
                self.model.identity_initialize()
        else:
            self.model.identity_initialize()
        if epochs == 0:
            self.model.identity_initialize()
        audit_epochs = set(audit_epochs)
        last = self.epoch + int(epochs)

        while self.epoch < last:
            start = time.perf_counter()
            losses, sizes = [], []
            try:
                if self.mode == 'estimation':
                    for j, (y, gamma) in enumerate(self._minibatches_(train)):
                        if j == 0 and self.epoch in audit_epochs:
                            self.model.initialize(y, gamma)
                            self._audit_(y, gamma)
                        loss, bundle = estimation_loss(self.model, y, gamma, self.grad_path)
                        self._step_(bundle)
                        losses.append(loss)
                        sizes.append(y.shape[0])
                else:
                    for _ in range(self.minibatches):
                        loss, bundle = approximation_loss(self.model, self._rng_model, self.batch_size, self.target)
                        self._step_(bundle)
                        losses.append(loss)
                        sizes.append(self.batch_size)
            except FloatingPointError as e:
                warnings.warn('Training diverged at epoch %i: %s' % (self.epoch + 1, e), UserWarning)
                self.diverged = True
                break
            epoch_loss = float(np.average(losses, weights=sizes))
            self.epoch += 1
            if not np.isfinite(epoch_loss) or abs(epoch_loss) > DIVERGENCE:
                warnings.warn('Training diverged at epoch %i: loss %s' % (self.epoch, epoch_loss), UserWarning)
                self.diverged = True
                self._records.append({'epoch': self.epoch, 'loss': epoch_loss, 'metric': np.nan})
                break
            metric = np.nan
            if self.epoch % self.eval_every == 0 or self.epoch == last:
                metric = self._metric_(valid, epoch_loss)
                if print_results:
                    print('Epoch {:>6}   loss: {:<14.6f} metric: {:.4e}'.format(self.epoch, epoch_loss, metric))
            self._records.append({'epoch': self.epoch, 'loss': epoch_loss, 'metric': metric})
            self._times.append({'epoch': self.epoch, 'seconds': time.perf_counter() - start})

        if self.epoch in audit_epochs and self.mode == 'estimation' and not self.diverged:
            y, gamma = next(self._minibatches_(train))
            self._audit_(y, gamma)
        self.history = pd.DataFrame(self._records, columns=['epoch', 'loss', 'metric'])
        self.timing = pd.DataFrame(self._times, columns=['epoch', 'seconds'])
        self.audits = pd.DataFrame(self._audits, columns=['epoch', 'fd_error', 'path_discrepancy'])
        self._fit = True
        return self

    def summary(self, decimal=4):
        """Prints the training summary

        Parameters
        ----------
        decimal : integer, optional
            Decimal points to display. Default is 4
        """
        if self._fit is False:
            raise ValueError('fit() function must be completed before results can be obtained')
        final = self.history.iloc[-1] if self.history.shape[0] > 0 else None
        print('======================================================================')
        print('                          Flow training                               ')
        print('======================================================================')
        fmt = 'Mode:              {:<18} Target:             {:<15}'
        print(fmt.format(self.mode, self.target.name if self.target is not None else '-'))
        fmt = 'Parameters:        {:<18} Gradient path:      {:<15}'
        print(fmt.format(self.model.n_params, self.grad_path))
        fmt = 'Epochs:            {:<18} Minibatches:        {:<15}'
        print(fmt.format(self.epoch, self.minibatches))
        fmt = 'Learning rate:     {:<18} Diverged:           {:<15}'
        print(fmt.format(self.optimizer.lr, str(self.diverged)))
        print('======================================================================')
        if final is not None:
            print('Final loss:   ', np.round(final['loss'], decimal))
            print('Final metric: ', '%.*e' % (decimal - 1, final['metric']))
        if self.audits.shape[0] > 0:
            print('----------------------------------------------------------------------')
            print(tabulate(self.audits.values, headers=['Epoch', 'FD error', 'Adjoint vs backprop'],
                           tablefmt='grid', floatfmt='.2e'))
        print('======================================================================')

    def plot(self, ax=None, metric=True):
        """Plot the loss (and metric) curves of the history

        Returns
        -------
        matplotlib axes
        """
        from krflow.graphics import loss_plot
        if self._fit is False:
            raise ValueError('fit() function must be completed before results can be obtained')
        return loss_plot(self.history, ax=ax, metric=metric)


def prepare_experiment(config):
    """Build the target, data and model of an experiment. Returns the target, training samples (None for
    approximation), validation samples and the model, together with the seed of the trainer streams"""
    data_seed, init_seed, trainer_seed = np.random.SeedSequence(config.seed).spawn(3)
    target = get_target(config.target['name'], **config.target['params'])
    if target.dims != config.model.n_data:
        raise ValueError('target "%s" has %i dimensions but the model has n_data=%i'
                         % (target.name, target.dims, config.model.n_data))
    target = normalized_target(target, config.seed, n_mc=config.normalizer_mc)
    rng_data, rng_valid = split_rng(data_seed, 2)
    train = None
    if config.mode == 'estimation':
        train = target.sample(rng_data, config.budgets['train_size'])
    valid = target.sample(rng_valid, config.budgets['valid_size'])
    model = build_model(config.model, split_rng(init_seed, 1)[0])
    return target, train, valid, model, trainer_seed


def trainer_from_config(config, model, target, seed):
    b, o = config.budgets, config.optimizer
    return FlowTrainer(model, target, mode=config.mode, lr=o['lr'], beta1=o['beta1'], beta2=o['beta2'], eps=o['eps'],
                       minibatches=b['minibatches'], batch_size=b['batch_size'], grad_path=config.grad_path,
                       gamma_resample=config.gamma_resample, eval_every=b['eval_every'], seed=seed)


def run_experiment(config, audit_epochs=(), print_results=False):
    """Run one training experiment

    Parameters
    ----------
    config : ExperimentConfig
        Experiment
    audit_epochs : iterable, optional
        Epochs at which gradients are audited
    print_results : bool, optional
        Print progress

    Returns
    -------
    Experiment
        namedtuple of trainer, model, target, train, valid
    """
    target, train, valid, model, seed = prepare_experiment(config)
    trainer = trainer_from_config(config, model, target, seed)
    trainer.fit(config.budgets['epochs'], train=train, valid=valid, audit_epochs=audit_epochs,
                print_results=print_results)
    return Experiment(trainer, model, target, train, valid)


def train(config, print_results=False):
    """Train the model an ExperimentConfig describes, deterministically under its seed

    Returns
    -------
    tuple
        history DataFrame (epoch, loss, metric), trained FlowModel
    """
    exp = run_experiment(config, print_results=print_results)
    return exp.trainer.history, exp.model


def generation_rng(seed):
    """Random stream of the samples generated from a trained model, independent of the training streams"""
    return split_rng(seed, 4)[3]
