"""
Neural SCMA decoder

A dense network maps the 2K received reals straight to the m*J transmitted
bits. Training data are synthesized from the codebook at one or more Eb/N0
groups; the network is trained with Adam on binary cross-entropy and the
best validation snapshot is kept.
"""

import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.detectors import OperationCount, count_dnn_ops
from utils.errors import (
    CheckpointError,
    ConfigError,
    ShapeMismatchError,
    SizeMismatchError,
    TrainingDivergedError,
)
from utils.logger import setup_logger
from utils.monitoring import performance_monitor, timed
from utils.neuro import (
    AdamState,
    Network,
    adam_step,
    backward,
    build_network,
    cross_entropy,
)
from utils.scma_model import (
    ChannelGain,
    Codebook,
    ReceivedSignal,
    SystemConfig,
    add_awgn,
    db_to_linear,
    encode_frames,
    ensemble_power,
    superpose,
)

logger = setup_logger(__name__)

# Training groups used for the mixed-Eb/N0 decoder (dB)
DEFAULT_GROUPS_DB = (2.0, 3.0, 4.0, 5.0, 6.0)
DESK_SAMPLES_PER_GROUP = 100_000
FULL_SAMPLES_PER_GROUP = 500_000


# ==================== ARCHITECTURE ====================

@dataclass(frozen=True)
class DecoderArch:
    resources: int
    users: int
    bits_per_symbol: int
    hidden_layers: int = 6
    hidden_width: int = 48

    def __post_init__(self):
        if min(self.resources, self.users, self.bits_per_symbol, self.hidden_layers, self.hidden_width) < 1:
            raise ConfigError(f'decoder dimensions must be positive: {self}')

    @property
    def input_width(self) -> int:
        return 2 * self.resources

    @property
    def output_width(self) -> int:
        return self.bits_per_symbol * self.users

    def widths(self) -> List[int]:
        return [self.input_width] + [self.hidden_width] * self.hidden_layers + [self.output_width]

    def operation_count(self) -> OperationCount:
        return count_dnn_ops(self.hidden_width, self.hidden_layers, self.resources, self.users)

    @classmethod
    def for_config(cls, config: SystemConfig, hidden_layers: int = 6, hidden_width: int = 48) -> 'DecoderArch':
        return cls(config.resources, config.users, config.m, hidden_layers, hidden_width)


@dataclass(frozen=True)
class TrainingHyper:
    batch_size: int = 256
    epochs: int = 40
    lr: float = 1e-4
    seed: int = 0
    validation_fraction: float = 0.05

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f'batch size must be >= 2, got {self.batch_size}')
        if self.epochs < 1:
            raise ConfigError(f'epochs must be >= 1, got {self.epochs}')
        if not self.lr > 0:
            raise ConfigError(f'learning rate must be positive, got {self.lr}')
        if not 0.0 <= self.validation_fraction < 0.5:
            raise ConfigError(f'validation fraction must lie in [0, 0.5), got {self.validation_fraction}')


# ==================== TRAINING DATA ====================

@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Noisy received frames with their transmitted bits, grouped by Eb/N0 (dB)"""
    inputs: np.ndarray
    labels: np.ndarray
    groups: Tuple[Tuple[float, int], ...]

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 2:
            raise ShapeMismatchError('inputs and labels must be 2-D')
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise SizeMismatchError(f'{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels')
        if sum(n for _, n in self.groups) != self.inputs.shape[0]:
            raise SizeMismatchError('group sizes do not add up to the number of samples')
        if not np.isin(self.labels, (0, 1)).all():
            raise ConfigError('labels must be binary')

    def __len__(self):
        return self.inputs.shape[0]


@timed
def generate_training_set(config: SystemConfig, codebook: Codebook, gains: ChannelGain,
                          groups: Sequence[Tuple[float, int]], rng: np.random.Generator,
                          noise_disabled: bool = False) -> TrainingSet:
    """
    Synthesize labelled received frames

    Args:
        config: system dimensioning
        codebook: user codebooks
        gains: channel gain
        groups: (Eb/N0 in dB, sample count) pairs, generated in this order
        rng: random generator
        noise_disabled: emit exact superpositions

    Returns:
        TrainingSet
    """
    power = ensemble_power(codebook, gains)
    inputs, labels = [], []
    for ebn0_db, count in groups:
        if count < 1:
            raise ConfigError(f'each group needs at least one sample, got {count} at {ebn0_db} dB')
        if not math.isfinite(ebn0_db):
            raise ConfigError(f'invalid Eb/N0 {ebn0_db}')
        bits = rng.integers(0, 2, size=(count, config.frame_bits), dtype=np.uint8)
        clean = superpose(encode_frames(bits, codebook), gains)
        received = add_awgn(clean, float(db_to_linear(ebn0_db)), config, power, rng,
                            noise_disabled=noise_disabled)
        inputs.append(received.samples)
        labels.append(bits)
        logger.debug(f'Generated {count} frames at {ebn0_db} dB')

    return TrainingSet(
        inputs=np.concatenate(inputs),
        labels=np.concatenate(labels),
        groups=tuple((float(e), int(n)) for e, n in groups),
    )


DATASET_MAGIC = b'SCMADSET'
DATASET_VERSION = 1
_DATASET_PREFIX = struct.Struct('<8sIQIII')
_DATASET_GROUP = struct.Struct('<dQ')


def export_training_set(training_set: TrainingSet, path: str) -> None:
    """
    Write a training set as a little-endian binary file

    Header: magic, uint32 version, uint64 n, uint32 input width, uint32 label
    width, uint32 group count, then (float64 Eb/N0 dB, uint64 size) per group.
    Body: n x width float64 inputs followed by n x width uint8 labels.
    """
    n, width_in = training_set.inputs.shape
    width_out = training_set.labels.shape[1]
    with open(path, 'wb') as f:
        f.write(_DATASET_PREFIX.pack(DATASET_MAGIC, DATASET_VERSION, n, width_in, width_out,
                                     len(training_set.groups)))
        for ebn0_db, count in training_set.groups:
            f.write(_DATASET_GROUP.pack(ebn0_db, count))
        f.write(np.ascontiguousarray(training_set.inputs, dtype='<f8').tobytes())
        f.write(np.ascontiguousarray(training_set.labels, dtype=np.uint8).tobytes())
    logger.info(f'Training set ({n} frames) written to {path}')


def load_training_set(path: str) -> TrainingSet:
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _DATASET_PREFIX.size:
        raise CheckpointError(f'{path} is truncated')
    magic, version, n, width_in, width_out, n_groups = _DATASET_PREFIX.unpack_from(raw)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise CheckpointError(f'{path} is not a version {DATASET_VERSION} training set')

    offset = _DATASET_PREFIX.size
    groups = []
    for _ in range(n_groups):
        groups.append(_DATASET_GROUP.unpack_from(raw, offset))
        offset += _DATASET_GROUP.size

    body_in = n * width_in * 8
    if offset + body_in + n * width_out != len(raw):
        raise CheckpointError(f'{path}: body size does not match its header')
    inputs = np.frombuffer(raw, dtype='<f8', count=n * width_in, offset=offset).reshape(n, width_in)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n * width_out, offset=offset + body_in).reshape(n, width_out)
    return TrainingSet(inputs.astype(np.float64), labels.copy(), tuple(groups))


# ==================== TRAINING ====================

@dataclass
class TrainedDecoder:
    network: Network
    arch: DecoderArch
    provenance: Dict[str, Any] = field(default_factory=dict)
    loss_curve: List[float] = field(default_factory=list)
    # system the training frames came from, when known
    system: Optional[SystemConfig] = None


def train_decoder(arch: DecoderArch, training_set: TrainingSet, hyper: TrainingHyper = TrainingHyper()) -> TrainedDecoder:
    """
    Train the decoder network with mini-batch Adam

    A validation_fraction share of the samples is held out; the returned
    network is the snapshot with the lowest validation loss (training loss
    when nothing is held out).

    Args:
        arch: network dimensions
        training_set: labelled frames
        hyper: batch size, epochs, learning rate, seed, validation share

    Returns:
        TrainedDecoder with per-epoch loss curve
    """
    if len(training_set) < 2:
        raise ConfigError('training needs at least two samples')
    if training_set.inputs.shape[1] != arch.input_width or training_set.labels.shape[1] != arch.output_width:
        raise ShapeMismatchError(
            f'training set is {training_set.inputs.shape[1]} -> {training_set.labels.shape[1]}, '
            f'architecture {arch.input_width} -> {arch.output_width}'
        )

    rng = np.random.default_rng(hyper.seed)
    net = build_network(arch.widths(), 'tanh', 'sigmoid', batch_norm=True, rng=rng)
    params = net.parameters()
    adam = AdamState(lr=hyper.lr)

    order = rng.permutation(len(training_set))
    n_val = int(round(hyper.validation_fraction * len(training_set)))
    if n_val < 2 or len(training_set) - n_val < 2:
        n_val = 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train = training_set.inputs[train_idx]
    y_train = training_set.labels[train_idx].astype(np.float64)
    x_val = training_set.inputs[val_idx]
    y_val = training_set.labels[val_idx].astype(np.float64)

    first = x_train[:hyper.batch_size]
    initial_loss = cross_entropy(y_train[:hyper.batch_size],
                                 net.forward(first, mode='train', update_stats=False))

    loss_curve = []
    best_loss, best_net, best_epoch = math.inf, net.snapshot(), 0
    with performance_monitor.track('train_decoder'):
        for epoch in range(1, hyper.epochs + 1):
            perm = rng.permutation(len(x_train))
            batch_losses = []
            for start in range(0, len(perm), hyper.batch_size):
                idx = perm[start:start + hyper.batch_size]
                if len(idx) < 2:
                    continue
                probs = net.forward(x_train[idx], mode='train')
                loss = cross_entropy(y_train[idx], probs)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f'loss became {loss} in epoch {epoch} at sample {start}')
                adam_step(params, backward(net, y_train[idx]), adam)
                batch_losses.append(loss)

            epoch_loss = float(np.mean(batch_losses))
            loss_curve.append(epoch_loss)
            monitor_loss = cross_entropy(y_val, net.predict(x_val)) if n_val else epoch_loss
            if not math.isfinite(monitor_loss):
                raise TrainingDivergedError(f'validation loss became {monitor_loss} in epoch {epoch}')
            if monitor_loss < best_loss:
                best_loss, best_net, best_epoch = monitor_loss, net.snapshot(), epoch
            logger.info(f'Epoch {epoch}/{hyper.epochs}: train loss {epoch_loss:.5f}, '
                        f'{"validation" if n_val else "train"} loss {monitor_loss:.5f}')

    provenance = {
        'groups': [[e, n] for e, n in training_set.groups],
        'samples': len(training_set),
        'hyper': asdict(hyper),
        'initial_loss': initial_loss,
        'final_loss': loss_curve[-1],
        'best_loss': best_loss,
        'best_epoch': best_epoch,
    }
    logger.info(f'Decoder trained: best epoch {best_epoch}, loss {best_loss:.5f}')
    return TrainedDecoder(network=best_net, arch=arch, provenance=provenance, loss_curve=loss_curve)


# ==================== DECODING ====================

def hard_decision(probs: np.ndarray) -> np.ndarray:
    """bit = 1 iff p >= 0.5"""
    return (np.asarray(probs) >= 0.5).astype(np.uint8)


def decode(model: TrainedDecoder, received) -> np.ndarray:
    """
    Decode received frames to bits

    Args:
        model: trained decoder
        received: ReceivedSignal or (F, 2K) / (2K,) array

    Returns:
        (F, m*J) uint8 bits
    """
    samples = received.samples if isinstance(received, ReceivedSignal) else received
    frames = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if frames.shape[1] != model.arch.input_width:
        raise ShapeMismatchError(f'frames have width {frames.shape[1]}, decoder expects {model.arch.input_width}')
    return hard_decision(model.network.predict(frames))


def save_decoder(model: TrainedDecoder, path: str, extra: Optional[Dict[str, Any]] = None) -> None:
    meta = {
        'kind': 'dl-decoder',
        'arch': asdict(model.arch),
        'provenance': model.provenance,
        'loss_curve': model.loss_curve,
    }
    if model.system is not None:
        meta['system'] = model.system.to_dict()
    if extra:
        meta.update(extra)
    save_checkpoint(path, {'decoder': model.network}, meta)


def load_decoder(path: str) -> TrainedDecoder:
    sections, meta = load_checkpoint(path)
    if meta.get('kind') != 'dl-decoder' or 'decoder' not in sections:
        raise CheckpointError(f'{path} does not hold a DL decoder')
    arch = DecoderArch(**meta['arch'])
    network = sections['decoder']
    if network.input_width != arch.input_width or network.output_width != arch.output_width:
        raise CheckpointError(f'{path}: network widths disagree with the stored architecture')
    system = SystemConfig.from_dict(meta['system']) if 'system' in meta else None
    logger.debug(f'Loaded decoder from {os.path.abspath(path)}')
    return TrainedDecoder(network=network, arch=arch, provenance=meta.get('provenance', {}),
                          loss_curve=meta.get('loss_curve', []), system=system)
