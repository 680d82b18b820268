"""Command-line entry point.

    dhsdeepo run CONFIG [--seeds 0,1,2] [--out-dir DIR] [--workers N] [--algo gd]
    dhsdeepo preset NAME --emit-config
"""

import argparse
import logging
import sys

import yaml

from . import config as config_mod
from . import runner
from .errors import ConfigError, DhsDeepoError


def _seeds(text):
    try:
        return [int(s) for s in text.split(',') if s.strip() != '']
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog='dhsdeepo', description=__doc__.split('\n')[0])
    p.add_argument('-v', '--verbose', action='store_true')
    sub = p.add_subparsers(dest='command', required=True)

    r = sub.add_parser('run', help='execute an experiment config')
    r.add_argument('config')
    r.add_argument('--seeds', type=_seeds, help='comma-separated seed list')
    r.add_argument('--out-dir')
    r.add_argument('--workers', type=int)
    r.add_argument('--algo', action='append', choices=config_mod.ALGORITHMS,
                   help='algorithm to run (repeatable)')
    r.add_argument('--no-plots', action='store_true')

    s = sub.add_parser('preset', help='print a preset config')
    s.add_argument('name', choices=sorted(config_mod.PRESET_BUILDERS))
    s.add_argument('--emit-config', action='store_true', required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        if args.command == 'preset':
            sys.stdout.write(config_mod.dump(config_mod.get_preset(args.name)))
            return 0
        with open(args.config, encoding='utf-8') as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        if args.seeds is not None:
            raw['seeds'] = args.seeds
        if args.out_dir is not None:
            raw['out_dir'] = args.out_dir
        if args.workers is not None:
            raw['workers'] = args.workers
        if args.algo:
            raw['algorithms'] = args.algo
        if args.no_plots:
            raw['plots'] = False
        cfg = config_mod.resolve(raw)
        results = runner.run(cfg)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DhsDeepoError, ArithmeticError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1
    failed = sum(1 for r in results if r.failed)
    print(f"{len(results)} runs written to {cfg['out_dir']} ({failed} failed)")
    return 0


if __name__ == '__main__':
    sys.exit(main())
