"""export-codebook and constellation"""
import argparse

import numpy as np

from commands import add_common_arguments, load_system, out_path
from utils.ae_codec import extract_codebooks, load_autoencoder
from utils.harness import CONSTELLATION_COLUMNS, constellation_projection
from utils.helpers import command_guard, write_csv
from utils.logger import setup_logger
from utils.plotting import render_constellation, save_png
from utils.scma_model import add_awgn, db_to_linear, encode_frames, ensemble_power, save_codebook, superpose

logger = setup_logger(__name__)


@command_guard
def export_codebook(args: argparse.Namespace) -> int:
    ae = load_autoencoder(args.checkpoint)
    codebook = extract_codebooks(ae)
    path = args.file or out_path(args, 'learned_codebook.json')
    save_codebook(codebook, path)
    bound = max(np.abs(codebook.codewords.real).max(), np.abs(codebook.codewords.imag).max())
    logger.info(f'Extracted {codebook.config.users} user codebooks, largest component {bound:.4f}')
    return 0


@command_guard
def constellation(args: argparse.Namespace) -> int:
    ctx = load_system(args)
    codebook, gains = ctx.codebook, ctx.gains
    if args.checkpoint:
        ae = load_autoencoder(args.checkpoint)
        codebook, gains = extract_codebooks(ae), ae.gains

    received = None
    if args.received:
        rng = np.random.default_rng(ctx.seed)
        bits = rng.integers(0, 2, size=(args.received, codebook.config.frame_bits), dtype=np.uint8)
        clean = superpose(encode_frames(bits, codebook), gains)
        noiseless = args.ebn0 is None
        ebn0_linear = 1.0 if noiseless else float(db_to_linear(args.ebn0))
        received = add_awgn(clean, ebn0_linear, codebook.config, ensemble_power(codebook, gains), rng,
                            noise_disabled=noiseless).samples

    points = constellation_projection(codebook, args.resource, gains, received, include_codewords=args.codewords)
    stem = args.name or f'constellation_r{args.resource}'
    write_csv(out_path(ctx, stem + '.csv'), CONSTELLATION_COLUMNS, [p.row() for p in points])
    if args.png:
        save_png(render_constellation(points, f'Resource {args.resource}'), out_path(ctx, stem + '.png'))
    return 0


def setup(subparsers):
    parser = subparsers.add_parser('export-codebook', help='write the codebook learned by an autoencoder')
    add_common_arguments(parser, system=False)
    parser.add_argument('--checkpoint', required=True, help='autoencoder checkpoint')
    parser.add_argument('--file', default=None, help='output file (default: OUT/learned_codebook.json)')
    parser.set_defaults(handler=export_codebook)

    parser = subparsers.add_parser('constellation', help='superposition points on one resource')
    add_common_arguments(parser)
    parser.add_argument('--resource', type=int, required=True, help='resource index, 0-based')
    parser.add_argument('--checkpoint', default=None, help='project the codebook of this autoencoder')
    parser.add_argument('--received', type=int, default=0, help='also emit this many received samples')
    parser.add_argument('--ebn0', type=float, default=None, help='Eb/N0 (dB) of the received samples')
    parser.add_argument('--codewords', action='store_true', help='include single-user codewords')
    parser.add_argument('--png', action='store_true', help='also render a scatter plot')
    parser.add_argument('--name', default=None, help='output file stem')
    parser.set_defaults(handler=constellation)
