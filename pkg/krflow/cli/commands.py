import json
import logging
import os

import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from tabulate import tabulate

from krflow.base import save_config
from krflow.calc import split_rng, gauss_sample, make_rng
from krflow.datasets import get_target, normalized_target, export_samples
from krflow.flow import build_model, count_params, sample, marginal_logdensity
from krflow.gradients import grad_check, compare_paths
from krflow.graphics import save_scatter_svg, dof_plot
from krflow.train import (run_experiment, prepare_experiment, generation_rng, validation_loss, metric_delta,
                          metric_rel_kl, mode_coverage, hole_violation, approximation_grad_check)
from krflow.cli.cases import get_case
from krflow.cli.checkpoint import save_checkpoint, load_checkpoint

logger = logging.getLogger(__name__)

# acceptance levels of the gradient audit
FD_TOLERANCE = 1e-4
PATH_TOLERANCE = 1e-9


def _comments_(config, seed):
    return ['config_hash: %s' % config.config_hash(), 'seed: %i' % seed]


def write_csv(df, path, comments):
    """Comma-separated table preceded by '#' comment lines. Floats are written with 17 significant digits"""
    with open(path, 'w', newline='') as f:
        for line in comments:
            f.write('# ' + line + '\n')
        df.to_csv(f, index=False, float_format='%.17g')


def _plain_(obj):
    if isinstance(obj, dict):
        return {k: _plain_(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain_(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def write_json(d, path):
    with open(path, 'w') as f:
        json.dump(_plain_(d), f, indent=2, sort_keys=True)


def _last_metric_(history):
    evaluated = history['metric'].dropna()
    return float(evaluated.iloc[-1]) if evaluated.shape[0] > 0 else np.nan


def _metric_name_(config, target):
    if config.mode == 'approximation':
        return 'reverse_kl'
    if target.hole_spec is None:
        return 'delta'
    return 'rel_kl'


def _target_checks_(target, generated):
    out = {}
    if target.name == 'mixture2d':
        out['mode_coverage'] = mode_coverage(generated, **target.params)
    if target.hole_spec is not None:
        out['hole_violation'] = hole_violation(target.hole_spec, generated)
    return out


def run_one(config, out_dir):
    """Train one configuration and write its artifacts: config.json, history.csv, timing.csv, checkpoint.json,
    samples.csv (and samples.svg for multivariate data) and metrics.json. Every file carries the config hash and seed

    Returns
    -------
    dict
        Contents of metrics.json
    """
    logger.info('run %s seed %i -> %s', config.config_hash(), config.seed, out_dir)
    exp = run_experiment(config)
    trainer, model = exp.trainer, exp.model
    os.makedirs(out_dir, exist_ok=True)
    comments = _comments_(config, config.seed)
    save_config(config, os.path.join(out_dir, 'config.json'))
    write_csv(trainer.history, os.path.join(out_dir, 'history.csv'), comments)
    write_csv(trainer.timing, os.path.join(out_dir, 'timing.csv'), comments)
    save_checkpoint(os.path.join(out_dir, 'checkpoint.json'), config, model, trainer.epoch, trainer.optimizer,
                    trainer.rng_states())
    metrics = {'config_hash': config.config_hash(), 'seed': config.seed, 'variant': config.variant,
               'mode': config.mode, 'target': config.target['name'], 'epochs': trainer.epoch,
               'n_params': model.n_params, 'diverged': trainer.diverged,
               'final_loss': float(trainer.history['loss'].iloc[-1]) if trainer.history.shape[0] > 0 else None,
               'metric_name': _metric_name_(config, exp.target), 'metric': _last_metric_(trainer.history)}
    if exp.target.normalizer is not None:
        metrics['ln_EIB'] = exp.target.normalizer.ln_EIB
    if exp.target.entropy_estimate is not None:
        metrics['entropy_estimate'] = exp.target.entropy_estimate.value
        metrics['entropy_std_err'] = exp.target.entropy_estimate.std_err
        metrics['entropy_seed'] = exp.target.entropy_seed
    if not trainer.diverged:
        generated, _ = sample(model, generation_rng(config.seed), config.n_generated)
        export_samples(generated, os.path.join(out_dir, 'samples.csv'), comments)
        if generated.shape[1] >= 2:
            save_scatter_svg(generated, os.path.join(out_dir, 'samples.svg'),
                             title='%s, %s' % (config.variant, config.target['name']),
                             metadata={'Description': '; '.join(comments)})
        metrics.update(_target_checks_(exp.target, generated))
    write_json(metrics, os.path.join(out_dir, 'metrics.json'))
    return metrics


def _run_all_(config, out):
    results = []
    for r in range(config.runs):
        cfg = config.replace(seed=config.seed + r)
        name = '%s_%s' % (cfg.variant.replace('&', 'and'), cfg.config_hash())
        folder = os.path.join(out, name, 'seed%i' % cfg.seed)
        results.append(run_one(cfg, folder))
    rows = [[m['seed'], m['epochs'], m['final_loss'], m['metric_name'], m['metric'], m['diverged']] for m in results]
    print(tabulate(rows, headers=['Seed', 'Epochs', 'Final loss', 'Metric', 'Value', 'Diverged'], tablefmt='grid',
                   floatfmt='.4e'))
    return results


def cmd_fit(config, out=None):
    """Density estimation: train every run of the configuration and write the artifacts

    Returns
    -------
    list
        metrics of every run
    """
    if config.mode != 'estimation':
        raise ValueError('mode: fit requires an estimation configuration; use approx for approximation')
    return _run_all_(config, out or config.out)


def cmd_approx(config, out=None):
    """Density approximation by the reverse KL divergence, with the artifacts of cmd_fit"""
    if config.mode != 'approximation':
        config = config.replace(mode='approximation')
    return _run_all_(config, out or config.out)


def _eval_target_(name, config, n_data):
    if name is None or name == config.target['name']:
        return get_target(config.target['name'], **config.target['params'])
    if name in ('gaussian', 'holes'):
        return get_target(name, dims=n_data)
    return get_target(name)


def cmd_eval(checkpoints, target=None, n_valid=10000, method='both', seed=0, out=None):
    """Evaluate saved models on fresh target samples: the relative error or relative KL divergence, both marginal
    methods side by side for augmented models, and the hole violation or mode coverage of generated samples.
    Checkpoints of different configurations are not compared

    Returns
    -------
    list
        one result dictionary per checkpoint
    """
    if method not in ('gamma_star', 'mc', 'both'):
        raise ValueError('method: must be "gamma_star", "mc" or "both"')
    loaded = [(path, load_checkpoint(path)) for path in checkpoints]
    hashes = sorted({ck.config_hash for _, ck in loaded})
    if len(hashes) > 1:
        raise ValueError('refusing to compare checkpoints of different configurations: ' + ', '.join(hashes))
    results = []
    for path, ck in loaded:
        model, config = ck.model, ck.config
        dist = _eval_target_(target, config, model.n_data)
        if dist.dims != model.n_data:
            raise ValueError('target "%s" has %i dimensions but the checkpoint model has %i'
                             % (dist.name, dist.dims, model.n_data))
        dist = normalized_target(dist, config.seed, n_mc=config.normalizer_mc)
        rng_valid, rng_eval, rng_gen = split_rng(seed, 3)
        valid = dist.sample(rng_valid, n_valid)
        res = {'checkpoint': path, 'config_hash': ck.config_hash, 'seed': ck.seed, 'eval_seed': seed,
               'target': dist.name, 'n_valid': n_valid, 'epoch': ck.epoch}
        res['loss'] = validation_loss(model, valid, rng_eval)
        if dist.hole_spec is None and dist.reference_entropy() is not None:
            res['delta'] = metric_delta(res['loss'], dist.reference_entropy())
        if dist.normalized and dist.reference_entropy() is not None:
            if method in ('gamma_star', 'both'):
                res['rel_kl'] = metric_rel_kl(model, valid, dist, 'gamma_star')
            if model.augmented and method in ('mc', 'both'):
                res['rel_kl_mc'] = metric_rel_kl(model, valid, dist, 'mc', rng=rng_eval)
        if model.augmented:
            subset = valid[:min(100, n_valid)]
            star = marginal_logdensity(model, subset, 'gamma_star')
            mc = marginal_logdensity(model, subset, 'mc', n_mc=100, rng=rng_eval)
            res['marginal'] = {'gamma_star_mean': np.mean(star), 'mc_mean': np.mean(mc),
                               'max_abs_difference': np.max(np.abs(star - mc))}
        generated, _ = sample(model, rng_gen, 10000)
        res.update(_target_checks_(dist, generated))
        results.append(res)
    report = _plain_(results)
    print(json.dumps(report, indent=2, sort_keys=True))
    if out is not None:
        os.makedirs(out, exist_ok=True)
        write_json({'config_hash': hashes[0], 'results': report}, os.path.join(out, 'eval.json'))
    return results


def cmd_gradcheck(config, n_probes=50, batch=64):
    """Audit the gradient of a configuration's model on a small batch: the largest relative error against central
    finite differences, and the discrepancy between the adjoint and backprop paths

    Returns
    -------
    dict
    """
    small = dict(config.budgets, train_size=batch, valid_size=batch)
    target, _, valid, model, _ = prepare_experiment(config.replace(budgets=small))
    rng = make_rng(config.seed)
    gamma = gauss_sample(rng, (batch, model.m_aug)) if model.augmented else None
    model.initialize(valid, gamma)
    report = {'config_hash': config.config_hash(), 'seed': config.seed, 'grad_path': config.grad_path,
              'n_params': model.n_params,
              'fd_error': grad_check(model, valid, gamma, n_probes=n_probes, rng=rng, grad_path=config.grad_path),
              'path_discrepancy': compare_paths(model, valid, gamma)}
    if config.mode == 'approximation':
        noise = gauss_sample(rng, (batch, model.n_total))
        report['reverse_kl_fd_error'] = approximation_grad_check(model, target, noise, n_probes=n_probes, rng=rng)
    report['passed'] = (report['fd_error'] <= FD_TOLERANCE and report['path_discrepancy'] <= PATH_TOLERANCE and
                        report.get('reverse_kl_fd_error', 0.) <= FD_TOLERANCE)
    print('======================================================================')
    print('                          Gradient audit                              ')
    print('======================================================================')
    fmt = 'Variant:           {:<18} Parameters:         {:<15}'
    print(fmt.format(config.variant, model.n_params))
    fmt = 'Gradient path:     {:<18} Probes:             {:<15}'
    print(fmt.format(config.grad_path, n_probes))
    print('======================================================================')
    print('Max FD relative error:       ', '%.3e' % report['fd_error'])
    print('Adjoint vs backprop:         ', '%.3e' % report['path_discrepancy'])
    if 'reverse_kl_fd_error' in report:
        print('Reverse KL FD relative error:', '%.3e' % report['reverse_kl_fd_error'])
    print('Result:                      ', 'PASS' if report['passed'] else 'FAIL')
    print('======================================================================')
    return report


def cmd_paramcount(config):
    """Enumerated against closed-form parameter counts per category, with PASS/FAIL (n/a where the formula does not
    apply)

    Returns
    -------
    DataFrame
    """
    model = build_model(config.model, make_rng(config.seed))
    df = count_params(model)
    df['status'] = ['n/a' if m is None else ('PASS' if m else 'FAIL') for m in df['match']]
    rows = [[cat, r['enumerated'], 'n/a' if r['formula'] is None else int(r['formula']), r['status']]
            for cat, r in df.iterrows()]
    print(tabulate(rows, headers=['Category', 'Enumerated', 'Formula', 'Status'], tablefmt='grid'))
    return df


def _flag_(value, bound, published):
    """PASS within the bound, TOLERANCE within three times the bound, FAIL otherwise. Without a bound the published
    value, scaled by three, acts as the bound"""
    if value is None or not np.isfinite(value):
        return 'FAIL'
    limit = bound if bound is not None else 3 * published
    if value <= limit:
        return 'PASS'
    if value <= 3 * limit:
        return 'TOLERANCE'
    return 'FAIL'


def _case_checks_(case, results, means):
    rows = []
    for e in case.expectations:
        value = means.get((e.row, e.column), np.nan)
        rows.append(['%s %s' % (e.row, e.column), value, e.bound if e.bound is not None else '-',
                     e.published if e.published is not None else '-', _flag_(value, e.bound, e.published)])
    for column, order in case.orderings:
        values = [means.get((row, column), np.nan) for row in order]
        ok = all(a <= b for a, b in zip(values[:-1], values[1:]))
        rows.append([' <= '.join(order) + ' ' + column, '-', '-', '-', 'PASS' if ok else 'FAIL'])
    for name, arg in case.checks:
        if name == 'mode_coverage':
            worst = min(min(c) for c in results['mode_coverage'].dropna())
            rows.append(['smallest mode share', worst, '>= %g' % arg, '-', 'PASS' if worst >= arg else 'FAIL'])
        elif name == 'hole_violation':
            aug = results.loc[results['row'].str.startswith('KRnet_aug')]
            worst = aug['hole_violation'].max()
            rows.append(['share of samples in holes', worst, arg, '-', _flag_(worst, arg, None)])
        elif name == 'beats_realNVP':
            dof = results.groupby(['row', 'column'])[['n_params', 'metric']].mean().reset_index()
            mine = dof.loc[dof['row'] == arg].sort_values('n_params').iloc[-1]
            base = dof.loc[dof['row'] == 'realNVP']
            nearest = base.iloc[int(np.argmin(np.abs(base['n_params'].values - mine['n_params'])))]
            rows.append(['%s below realNVP at matched DOFs' % arg, mine['metric'], nearest['metric'], '-',
                         'PASS' if mine['metric'] < nearest['metric'] else 'FAIL'])
    return pd.DataFrame(rows, columns=['check', 'value', 'bound', 'published', 'flag'])


def cmd_repro(case_id, out='results', runs=None, seed=None):
    """Run the pinned configuration of a reproduction case and compare the seed-averaged results with the
    expectations of the case

    Returns
    -------
    tuple
        checks DataFrame, per-run results DataFrame
    """
    case = get_case(case_id)
    root = os.path.join(out, case_id)
    records = []
    for run in case.runs:
        changes = {}
        if runs is not None:
            changes['runs'] = runs
        if seed is not None:
            changes['seed'] = seed
        config = run.config.replace(**changes) if changes else run.config
        for r in range(config.runs):
            cfg = config.replace(seed=config.seed + r)
            folder = os.path.join(root, run.row.replace('&', 'and'), run.column.replace('=', ''), 'seed%i' % cfg.seed)
            m = run_one(cfg, folder)
            m.update(row=run.row, column=run.column)
            records.append(m)
    results = pd.DataFrame(records)
    for col in ('mode_coverage', 'hole_violation'):
        if col not in results:
            results[col] = np.nan
    means = results.groupby(['row', 'column'])['metric'].mean().to_dict()
    checks = _case_checks_(case, results, means)
    table = results.pivot_table(index='row', columns='column', values='metric', aggfunc='mean', sort=False)
    print('======================================================================')
    print('  ' + case.description)
    print('======================================================================')
    print(tabulate(table, headers='keys', tablefmt='grid', floatfmt='.3e'))
    print(tabulate(checks.values, headers=['Check', 'Value', 'Bound', 'Published', 'Flag'], tablefmt='grid'))
    print('======================================================================')
    comments = ['case: %s' % case_id] + ['seeds: %s' % sorted(results['seed'].unique().tolist())]
    write_csv(results.drop(columns=['mode_coverage']), os.path.join(root, 'results.csv'), comments)
    write_csv(checks, os.path.join(root, 'comparison.csv'), comments)
    if case_id.startswith('holes'):
        fig = Figure(figsize=(6, 4))
        dof_plot(results.rename(columns={'row': 'variant'}).groupby(['variant', 'column'], sort=False)
                 [['n_params', 'metric']].mean().reset_index(), ax=fig.add_subplot(1, 1, 1))
        fig.savefig(os.path.join(root, 'dof.svg'), format='svg')
    return checks, results
