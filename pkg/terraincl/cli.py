"""
Command line interface: ``terraincl train | sweep | report | gen-terrain | validate``.
"""
import argparse
import logging
import sys

from terraincl.config import apply_overrides, load_config, parse_lines
from terraincl.errors import TerrainclError
from terraincl.experiment import RunConfig, probe, report, run, sweep
from terraincl.terrain import TerrainParams, TerrainSpec, generate, write_csv

log = logging.getLogger(__name__)


def _seed_list(text):
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seeds, got '{text}'") from None


def _add_run_options(parser):
    parser.add_argument('--scenario', help='easy2hard, hard2easy or custom:<terrain>,<terrain>,...')
    parser.add_argument('--config', help='key = value config file')
    parser.add_argument('--out', help='output directory (default: runs)')
    parser.add_argument('--full-scale', action='store_true',
                        help='4096 training agents, 512 validation agents per terrain, 500-iteration phases')
    parser.add_argument('-s', '--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override a config key (repeatable), e.g. -s env.backend=surrogate')


def build_parser():
    parser = argparse.ArgumentParser(prog='terraincl',
                                     description='Terrain-incremental continual reinforcement learning.')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings only')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='train one seed through a scenario')
    _add_run_options(train)
    train.add_argument('--seed', type=int)

    sweep_parser = commands.add_parser('sweep', help='train several seeds and aggregate them')
    _add_run_options(sweep_parser)
    sweep_parser.add_argument('--seeds', type=_seed_list, default=[1, 2, 3, 4, 5], help='e.g. 1,2,3,4,5')
    sweep_parser.add_argument('--jobs', type=int, default=1, help='seeds run in parallel processes')

    report_parser = commands.add_parser('report', help='summarize forgetting and transfer of finished runs')
    report_parser.add_argument('--runs', required=True, help='output directory of train/sweep')

    gen = commands.add_parser('gen-terrain', help='write a terrain patch as CSV')
    gen.add_argument('--kind', required=True, help='terrain label, e.g. stairs_up or slope_up+rough')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--out', required=True, help='CSV file')

    validate = commands.add_parser('validate', help='measure a checkpoint on one terrain')
    validate.add_argument('--checkpoint', required=True)
    validate.add_argument('--terrain', required=True, help='terrain label')
    validate.add_argument('--config', help='key = value config file (env.* and terrain.* keys apply)')
    validate.add_argument('-s', '--set', action='append', default=[], metavar='KEY=VALUE')
    validate.add_argument('--agents', type=int, default=64)
    validate.add_argument('--windows', type=int, default=50)
    validate.add_argument('--seed', type=int, default=0)
    return parser


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def resolve_config(args):
    """
    Build the run configuration from defaults, config file, ``--set`` overrides and flags.

    Returns:
        RunConfig: The configuration (not yet validated).
    """
    cfg = RunConfig.full_scale() if getattr(args, 'full_scale', False) else RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.set:
        apply_overrides(cfg, parse_lines(args.set, '--set'))
    if getattr(args, 'scenario', None):
        cfg.scenario = args.scenario
    if getattr(args, 'seed', None) is not None and args.command == 'train':
        cfg.seed = args.seed
    if getattr(args, 'out', None):
        cfg.out_dir = args.out
    return cfg


def _train(args):
    artifacts = run(resolve_config(args))
    print(artifacts.run_dir)
    if artifacts.report is not None:
        for metric, value in artifacts.report.summary().items():
            print(f'mean {metric}: {value:.3f}')


def _sweep(args):
    result = sweep(resolve_config(args), args.seeds, jobs=args.jobs)
    print(result.scenario_dir)
    if result.failed:
        for seed, message in result.failed.items():
            print(f'seed {seed} failed: {message}', file=sys.stderr)
        raise TerrainclError(f'{len(result.failed)} of {len(args.seeds)} seeds failed')


def _report(args):
    print(report(args.runs), end='')


def _gen_terrain(args):
    params = TerrainParams()
    field = generate(TerrainSpec.parse(args.kind), params, seed=args.seed)
    write_csv(field, args.out)
    print(args.out)


def _validate(args):
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.set:
        apply_overrides(cfg, parse_lines(args.set, '--set'))
    average, count = probe(args.checkpoint, args.terrain, env_cfg=cfg.env, terrain_params=cfg.terrain,
                           agents=args.agents, windows=args.windows, seed=args.seed,
                           steps_per_window=cfg.ppo.steps_per_iteration)
    shown = '-' if average is None else f'{average:.4f}'
    print(f'{args.terrain}: reward_ma {shown} over {count} episodes')


COMMANDS = {'train': _train, 'sweep': _sweep, 'report': _report, 'gen-terrain': _gen_terrain,
            'validate': _validate}


def main(argv=None):
    """
    Entry point.

    Returns:
        int: 0 on success, 1 after a reported error (argparse exits with 2 on usage errors).
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        COMMANDS[args.command](args)
    except (TerrainclError, OSError) as e:
        print(f'terraincl: error: {e}', file=sys.stderr)
        return 1
    return 0
