import argparse
import logging
import sys

from krflow.base import load_config
from krflow.cli.cases import CASES
from krflow.cli.commands import cmd_fit, cmd_approx, cmd_eval, cmd_gradcheck, cmd_paramcount, cmd_repro

logger = logging.getLogger(__name__)

# exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def build_arg_parser():
    parser = argparse.ArgumentParser(prog='krflow', description='Augmented KRnet density estimation and '
                                                                'approximation experiments.')
    parser.add_argument('--verbose', action='store_true', help='Log the command, config hash and output folders.')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p):
        p.add_argument('--config', required=True, help='Path to the JSON experiment configuration.')
        p.add_argument('--seed', type=int, default=None, help='Root seed, overrides the configuration.')
        p.add_argument('--grad-path', choices=['adjoint', 'backprop'], default=None,
                       help='Gradient path, overrides the configuration.')

    for name, helptext in (('fit', 'Density estimation from target samples.'),
                           ('approx', 'Density approximation by the reverse KL divergence.')):
        p = sub.add_parser(name, help=helptext)
        with_config(p)
        p.add_argument('--out', default=None, help='Output directory, overrides the configuration.')
        p.add_argument('--runs', type=int, default=None, help='Number of runs, overrides the configuration.')

    p = sub.add_parser('eval', help='Evaluate checkpoints on fresh target samples.')
    p.add_argument('--checkpoint', nargs='+', required=True, help='Checkpoint file(s) of one configuration.')
    p.add_argument('--target', default=None, help='Target name. Default is the target of the checkpoint.')
    p.add_argument('--n-valid', type=int, default=10000, help='Validation sample size.')
    p.add_argument('--method', choices=['gamma_star', 'mc', 'both'], default='both',
                   help='Marginal method for augmented models.')
    p.add_argument('--seed', type=int, default=0, help='Seed of the validation samples.')
    p.add_argument('--out', default=None, help='Directory for eval.json.')

    p = sub.add_parser('gradcheck', help='Finite-difference and adjoint-vs-backprop gradient audit.')
    with_config(p)
    p.add_argument('--probes', type=int, default=50, help='Number of probed parameters.')

    p = sub.add_parser('paramcount', help='Enumerated against closed-form parameter counts.')
    with_config(p)

    p = sub.add_parser('repro', help='Run a pinned reproduction case.')
    p.add_argument('--case', required=True, help='Case id: ' + ', '.join(sorted(CASES)))
    p.add_argument('--out', default='results', help='Output directory.')
    p.add_argument('--runs', type=int, default=None, help='Runs per configuration.')
    p.add_argument('--seed', type=int, default=None, help='Root seed of the first run.')
    return parser


def _config_(args):
    config = load_config(args.config)
    changes = {}
    for key in ('seed', 'out', 'runs', 'grad_path'):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    return config.replace(**changes) if changes else config


def run(args):
    """Dispatch a parsed command line. Returns the exit code"""
    if args.command == 'fit':
        results = cmd_fit(_config_(args))
    elif args.command == 'approx':
        results = cmd_approx(_config_(args))
    elif args.command == 'eval':
        cmd_eval(args.checkpoint, target=args.target, n_valid=args.n_valid, method=args.method, seed=args.seed,
                 out=args.out)
        return EXIT_OK
    elif args.command == 'gradcheck':
        cmd_gradcheck(_config_(args), n_probes=args.probes)
        return EXIT_OK
    elif args.command == 'paramcount':
        cmd_paramcount(_config_(args))
        return EXIT_OK
    else:
        checks, results = cmd_repro(args.case, out=args.out, runs=args.runs, seed=args.seed)
        results = results.to_dict('records')
    if any(r['diverged'] for r in results):
        print('error: training diverged', file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None):
    """Command-line entry point. Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure"""
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    logger.info('krflow %s', args.command)
    try:
        return run(args)
    except FloatingPointError as e:
        print('numerical failure: %s' % e, file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError) as e:
        print('error: %s' % e, file=sys.stderr)
        return EXIT_USAGE
