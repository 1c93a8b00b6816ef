"""sweep: BER/SER against Eb/N0 for one detector"""
import argparse
import re

from commands import add_common_arguments, default_detector, load_system, out_path
from config import DEFAULT_WORKERS
from utils.harness import SWEEP_COLUMNS, DetectorSpec, SweepSpec, build_detector, run_sweep
from utils.helpers import command_guard, parse_grid, write_csv, write_json
from utils.logger import setup_logger
from utils.monitoring import get_run_report
from utils.plotting import render_ber_curve, save_png

logger = setup_logger(__name__)


@command_guard
def sweep(args: argparse.Namespace) -> int:
    ctx = load_system(args)
    detector_text = default_detector(ctx.run, args.detector)
    spec = SweepSpec(
        detector=DetectorSpec.parse(detector_text),
        ebn0_grid=tuple(parse_grid(args.ebn0)),
        seed=ctx.seed,
        min_bit_errors=args.min_errors,
        min_frames=args.min_frames,
        max_frames=args.max_frames,
        batch_frames=args.batch,
        noise_disabled=args.noiseless,
        workers=args.workers,
        timing=args.timing,
    )
    detector = build_detector(spec.detector, ctx.codebook, ctx.gains)
    result = run_sweep(spec, detector)

    stem = args.name or 'sweep_' + re.sub(r'[^A-Za-z0-9]+', '_', str(spec.detector)).strip('_')
    write_csv(out_path(ctx, f'{stem}.csv'), SWEEP_COLUMNS, result.rows())
    sidecar = result.sidecar()
    sidecar['codebook'] = ctx.run.codebook or args.codebook or 'default'
    write_json(out_path(ctx, f'{stem}.json'), sidecar)
    if args.png:
        save_png(render_ber_curve([p.ebn0_db for p in result.points], [p.ber for p in result.points],
                                  str(spec.detector)), out_path(ctx, f'{stem}.png'))
    get_run_report(f'sweep {detector.name}')
    return 0


def setup(subparsers):
    parser = subparsers.add_parser('sweep', help='Monte-Carlo BER/SER sweep')
    add_common_arguments(parser)
    parser.add_argument('--detector', default=None, help='map | logmpa:N | dl:CHECKPOINT | ae:CHECKPOINT')
    parser.add_argument('--ebn0', default='0:2:16', help='Eb/N0 grid in dB, start:step:stop or a,b,c')
    parser.add_argument('--min-errors', type=int, default=100, help='bit errors to collect per point')
    parser.add_argument('--min-frames', type=int, default=1000)
    parser.add_argument('--max-frames', type=int, default=1_000_000, help='frame cap per point')
    parser.add_argument('--batch', type=int, default=1000, help='frames per batch')
    parser.add_argument('--workers', type=int, default=DEFAULT_WORKERS)
    parser.add_argument('--noiseless', action='store_true', help='disable the channel noise')
    parser.add_argument('--timing', action='store_true', help='fill the ns_per_frame column')
    parser.add_argument('--png', action='store_true', help='also render the BER curve')
    parser.add_argument('--name', default=None, help='output file stem')
    parser.set_defaults(handler=sweep)
