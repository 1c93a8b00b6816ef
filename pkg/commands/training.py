"""train-decoder and train-autoencoder"""
import argparse

import numpy as np

from commands import add_common_arguments, load_system, out_path
from config import DEFAULT_WORKERS
from utils.ae_codec import (
    DEFAULT_SAMPLES,
    DEFAULT_TRAIN_EBN0_DB,
    LARGE_SAMPLES,
    AETrainingHyper,
    StackArch,
    build_autoencoder,
    extract_codebooks,
    make_dcma_masks,
    noiseless_round_trip,
    overlap_degree,
    save_autoencoder,
    train_autoencoder,
)
from utils.dl_decoder import (
    DEFAULT_GROUPS_DB,
    DESK_SAMPLES_PER_GROUP,
    FULL_SAMPLES_PER_GROUP,
    DecoderArch,
    TrainingHyper,
    export_training_set,
    generate_training_set,
    save_decoder,
    train_decoder,
)
from utils.harness import DetectorSpec, SweepSpec, training_sensitivity_matrix
from utils.helpers import command_guard, parse_grid, write_csv, write_json
from utils.logger import setup_logger
from utils.monitoring import get_run_report
from utils.scma_model import derive_masks, save_codebook

logger = setup_logger(__name__)


# ==================== DL DECODER ====================

@command_guard
def train_decoder_command(args: argparse.Namespace) -> int:
    ctx = load_system(args)
    arch = DecoderArch.for_config(ctx.config, args.hidden_layers, args.hidden_width)
    samples = FULL_SAMPLES_PER_GROUP if args.full else args.samples
    hyper = TrainingHyper(batch_size=args.batch, epochs=args.epochs, lr=args.lr, seed=ctx.seed)

    if args.sensitivity:
        return _sensitivity(args, ctx, arch, samples, hyper)

    groups = [(e, samples) for e in parse_grid(args.groups)]
    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 1]))
    training_set = generate_training_set(ctx.config, ctx.codebook, ctx.gains, groups, rng,
                                         noise_disabled=args.noiseless)
    if args.export_dataset:
        export_training_set(training_set, args.export_dataset)

    model = train_decoder(arch, training_set, hyper)
    model.system = ctx.config
    save_decoder(model, out_path(ctx, args.name + '.ckpt'), extra={'seed': ctx.seed})
    write_csv(out_path(ctx, args.name + '_loss.csv'), ('epoch', 'loss'),
              [[i + 1, f'{loss:.8e}'] for i, loss in enumerate(model.loss_curve)])
    logger.info(f'Initial loss {model.provenance["initial_loss"]:.4f}, best {model.provenance["best_loss"]:.5f}')
    get_run_report('train_decoder')
    return 0


def _sensitivity(args, ctx, arch, samples, hyper) -> int:
    template = SweepSpec(
        detector=DetectorSpec('dl', checkpoint='-'),
        ebn0_grid=tuple(parse_grid(args.test_ebn0)),
        seed=ctx.seed,
        min_bit_errors=args.min_errors,
        min_frames=args.min_frames,
        max_frames=args.max_frames,
        workers=args.workers,
    )
    results = training_sensitivity_matrix(ctx.codebook, ctx.gains, parse_grid(args.train_ebn0),
                                          template.ebn0_grid, samples, hyper, arch, template)
    rows = [[f'{train:g}', f'{p.ebn0_db:g}', str(p.frames), str(p.bit_err), f'{p.ber:.6e}', f'{p.ser:.6e}']
            for train, p in results]
    write_csv(out_path(ctx, 'sensitivity.csv'),
              ('train_ebn0_db', 'test_ebn0_db', 'frames', 'bit_err', 'ber', 'ser'), rows)
    return 0


# ==================== AUTOENCODER ====================

@command_guard
def train_autoencoder_command(args: argparse.Namespace) -> int:
    ctx = load_system(args)
    if args.mode == 'dcma':
        masks = make_dcma_masks(ctx.config, density=args.density, base_graph=ctx.codebook.graph())
    else:
        masks = derive_masks(ctx.codebook.graph())

    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 2]))
    ae = build_autoencoder(ctx.config, masks,
                           enc_arch=StackArch(args.encoder_layers, args.encoder_width),
                           dec_arch=StackArch(args.decoder_layers, args.decoder_width),
                           gains=ctx.gains, rng=rng, train_ebn0_db=args.train_ebn0)
    hyper = AETrainingHyper(
        train_ebn0_db=args.train_ebn0,
        batch_size=args.batch,
        samples=LARGE_SAMPLES if args.large else args.samples,
        epochs=args.epochs,
        lr=args.lr,
        seed=ctx.seed,
    )
    result = train_autoencoder(ae, hyper)

    round_trip = noiseless_round_trip(ae)
    per_resource, d_f = overlap_degree(ae.masks)
    if result.loss_curve[-1] >= 0.01:
        logger.warning(f'Final loss {result.loss_curve[-1]:.4f} is above the 0.01 convergence gate')
    logger.info(f'Noiseless round-trip BER {round_trip:.3e}')

    provenance = {
        'seed': ctx.seed,
        'hyper': {k: getattr(hyper, k) for k in ('train_ebn0_db', 'batch_size', 'samples', 'epochs', 'lr')},
        'coverage': result.coverage,
        'final_loss': result.loss_curve[-1],
        'noiseless_ber': round_trip,
        'mode': args.mode,
    }
    save_autoencoder(ae, out_path(ctx, args.name + '.ckpt'), provenance)
    save_codebook(extract_codebooks(ae), out_path(ctx, args.name + '_codebook.json'))
    write_csv(out_path(ctx, args.name + '_loss.csv'), ('epoch', 'loss'),
              [[i + 1, f'{loss:.8e}'] for i, loss in enumerate(result.loss_curve)])
    write_json(out_path(ctx, args.name + '.json'), dict(provenance, users_per_resource=per_resource.tolist(),
                                                        overlap_degree=d_f))
    get_run_report('train_autoencoder')
    return 0


def setup(subparsers):
    parser = subparsers.add_parser('train-decoder', help='train the neural SCMA decoder')
    add_common_arguments(parser)
    parser.add_argument('--groups', default=','.join(f'{g:g}' for g in DEFAULT_GROUPS_DB),
                        help='training Eb/N0 groups in dB')
    parser.add_argument('--samples', type=int, default=DESK_SAMPLES_PER_GROUP, help='samples per group')
    parser.add_argument('--full', action='store_true', help=f'{FULL_SAMPLES_PER_GROUP} samples per group')
    parser.add_argument('--epochs', type=int, default=TrainingHyper.epochs)
    parser.add_argument('--batch', type=int, default=TrainingHyper.batch_size)
    parser.add_argument('--lr', type=float, default=TrainingHyper.lr)
    parser.add_argument('--hidden-layers', type=int, default=6)
    parser.add_argument('--hidden-width', type=int, default=48)
    parser.add_argument('--noiseless', action='store_true', help='train on noise-free superpositions')
    parser.add_argument('--export-dataset', default=None, help='also write the training set to this file')
    parser.add_argument('--name', default='dl_decoder', help='output file stem')
    parser.add_argument('--sensitivity', action='store_true',
                        help='train one decoder per --train-ebn0 value and sweep each over --test-ebn0')
    parser.add_argument('--train-ebn0', default='2,6,10')
    parser.add_argument('--test-ebn0', default='0:2:12')
    parser.add_argument('--min-errors', type=int, default=100)
    parser.add_argument('--min-frames', type=int, default=1000)
    parser.add_argument('--max-frames', type=int, default=100_000)
    parser.add_argument('--workers', type=int, default=DEFAULT_WORKERS)
    parser.set_defaults(handler=train_decoder_command)

    parser = subparsers.add_parser('train-autoencoder', help='learn codebooks end to end')
    add_common_arguments(parser)
    parser.add_argument('--mode', choices=('scma', 'dcma'), default='scma', help='sparse or dense masks')
    parser.add_argument('--density', type=float, default=1.0, help='DCMA occupied share of resources')
    parser.add_argument('--train-ebn0', type=float, default=DEFAULT_TRAIN_EBN0_DB)
    parser.add_argument('--samples', type=int, default=DEFAULT_SAMPLES, help='joint symbols per epoch')
    parser.add_argument('--large', action='store_true', help=f'{LARGE_SAMPLES} joint symbols per epoch')
    parser.add_argument('--epochs', type=int, default=AETrainingHyper.epochs)
    parser.add_argument('--batch', type=int, default=AETrainingHyper.batch_size)
    parser.add_argument('--lr', type=float, default=AETrainingHyper.lr)
    parser.add_argument('--encoder-layers', type=int, default=4)
    parser.add_argument('--encoder-width', type=int, default=32)
    parser.add_argument('--decoder-layers', type=int, default=5)
    parser.add_argument('--decoder-width', type=int, default=48)
    parser.add_argument('--name', default='autoencoder', help='output file stem')
    parser.set_defaults(handler=train_autoencoder_command)
