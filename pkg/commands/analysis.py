"""complexity and bench"""
import argparse

from commands import add_common_arguments, load_system, out_path
from utils.detectors import ComplexityWeights
from utils.errors import ConfigError
from utils.dl_decoder import DecoderArch
from utils.harness import (
    COMPLEXITY_COLUMNS,
    DetectorSpec,
    benchmark_runtime,
    build_detector,
    compare_complexity,
)
from utils.helpers import command_guard, parse_int_list, write_csv, write_json
from utils.logger import setup_logger

logger = setup_logger(__name__)


@command_guard
def complexity(args: argparse.Namespace) -> int:
    ctx = load_system(args)
    weights = parse_int_list(args.weights)
    if len(weights) != 3:
        raise ConfigError('--weights takes three integers: add,mul,exp')
    rows = compare_complexity(
        ctx.config,
        parse_int_list(args.it),
        DecoderArch.for_config(ctx.config, args.hidden_layers, args.hidden_width),
        ComplexityWeights(*weights),
    )
    for row in rows:
        reduction = '' if row.reduction_pct is None else f', DL saves {row.reduction_pct:.1f}%'
        logger.info(f'{row.detector}: {row.units} units{reduction}')
    write_csv(out_path(ctx, args.name + '.csv'), COMPLEXITY_COLUMNS, [r.row() for r in rows])
    return 0


@command_guard
def bench(args: argparse.Namespace) -> int:
    ctx = load_system(args)
    detectors = [build_detector(DetectorSpec.parse(text.strip()), ctx.codebook, ctx.gains)
                 for text in args.detectors.split(',') if text.strip()]
    report = benchmark_runtime(detectors, args.frames, ctx.seed, ebn0_db=args.ebn0, warmup=args.warmup)
    rows = [[r.detector, r.frames, f'{r.mean_ns_per_frame:.0f}'] for r in report['rows']]
    write_csv(out_path(ctx, args.name + '.csv'), ('detector', 'frames', 'ns_per_frame'), rows)
    write_json(out_path(ctx, args.name + '.json'),
               {'hardware': report['hardware'], 'ebn0_db': report['ebn0_db'], 'seed': report['seed']})
    return 0


def setup(subparsers):
    parser = subparsers.add_parser('complexity', help='closed-form operation counts and normalized cost')
    add_common_arguments(parser)
    parser.add_argument('--it', default='3,5,7', help='Log-MPA iteration counts')
    parser.add_argument('--weights', default='1,10,20', help='cost of add,mul,exp in addition units')
    parser.add_argument('--hidden-layers', type=int, default=6)
    parser.add_argument('--hidden-width', type=int, default=48)
    parser.add_argument('--name', default='complexity', help='output file stem')
    parser.set_defaults(handler=complexity)

    parser = subparsers.add_parser('bench', help='per-frame decode time')
    add_common_arguments(parser)
    parser.add_argument('--detectors', default='map,logmpa:3,logmpa:5,logmpa:7',
                        help='comma separated detector list')
    parser.add_argument('--frames', type=int, default=1000)
    parser.add_argument('--warmup', type=int, default=20)
    parser.add_argument('--ebn0', type=float, default=8.0)
    parser.add_argument('--name', default='bench', help='output file stem')
    parser.set_defaults(handler=bench)
