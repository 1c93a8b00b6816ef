"""
Autoencoder-designed codebooks

J per-user encoder networks map m bits to 2K reals; each output is multiplied
by the user's mapping mask, the users are summed, the channel gain is applied
and Gaussian noise is injected; a shared decoder network recovers all m*J
bits. Sparse masks give SCMA codebooks, (nearly) all-ones masks give dense
code multiple access (DCMA).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import MAP_ENUMERATION_LIMIT
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.errors import (
    CheckpointError,
    ConfigError,
    EnumerationLimitError,
    MissingForwardStateError,
    ShapeMismatchError,
    SupportMismatchError,
    TrainingDivergedError,
)
from utils.logger import setup_logger
from utils.monitoring import performance_monitor
from utils.neuro import (
    AdamState,
    Network,
    adam_step,
    build_network,
    cross_entropy,
    cross_entropy_grad,
)
from utils.scma_model import (
    ChannelGain,
    Codebook,
    FactorGraph,
    MappingMask,
    ReceivedSignal,
    SystemConfig,
    db_to_linear,
    derive_masks,
    ensemble_power,
    masks_to_graph,
    noise_variance,
    real_to_complex,
    symbols_to_bits,
)

logger = setup_logger(__name__)

DEFAULT_TRAIN_EBN0_DB = 5.0
DEFAULT_SAMPLES = 200_000
LARGE_SAMPLES = 2_000_000


@dataclass(frozen=True)
class StackArch:
    hidden_layers: int
    hidden_width: int

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ConfigError(f'hidden stack must be non-empty: {self}')


ENCODER_ARCH = StackArch(4, 32)
DECODER_ARCH = StackArch(5, 48)


# ==================== MASKS ====================

def make_dcma_masks(config: SystemConfig, density: float = 1.0,
                    pattern: Optional[np.ndarray] = None,
                    base_graph: Optional[FactorGraph] = None) -> List[MappingMask]:
    """
    Mapping masks with N' = round(density * K) occupied resources per user

    N' equal to the system's N reproduces the sparse base graph. Larger N'
    extends each user's support cyclically from its lowest resource; smaller
    N' keeps the lowest N' resources of the support.

    Args:
        config: system dimensioning
        density: occupied share of the K resources, in (0, 1]
        pattern: explicit K x J 0/1 occupancy, overrides density
        base_graph: sparse graph to densify (canonical graph by default)

    Returns:
        list of J MappingMask
    """
    K, J = config.resources, config.users
    if pattern is not None:
        graph = pattern if isinstance(pattern, FactorGraph) else FactorGraph(np.asarray(pattern))
        if graph.matrix.shape != (K, J):
            raise ShapeMismatchError(f'mask pattern is {graph.matrix.shape}, expected ({K}, {J})')
    else:
        if not 0.0 < density <= 1.0:
            raise ConfigError(f'density must lie in (0, 1], got {density}')
        target = max(1, int(round(density * K)))
        if target == K:
            graph = FactorGraph(np.ones((K, J), dtype=np.uint8))
        else:
            if base_graph is None:
                if (K, J) != FactorGraph.canonical().matrix.shape:
                    raise ConfigError('a base factor graph is needed for partial densities of this system')
                base_graph = FactorGraph.canonical()
            supports = []
            for j in range(J):
                support = list(base_graph.support(j))
                if target > len(support):
                    start = support[0]
                    for step in range(K):
                        k = (start + step) % K
                        if len(support) == target:
                            break
                        if k not in support:
                            support.append(k)
                supports.append(sorted(support)[:target])
            graph = FactorGraph.from_supports(supports, K)

    masks = derive_masks(graph)
    if any(m.ones == 0 for m in masks):
        raise SupportMismatchError('every user needs a non-empty mask')
    _, d_f = overlap_degree(masks)
    logger.info(f'Masks: {[m.ones // 2 for m in masks]} resources per user, overlap degree d_f = {d_f:.2f}')
    return masks


def overlap_degree(masks: Sequence[MappingMask]) -> Tuple[np.ndarray, float]:
    """Users per resource and their mean (d_f)"""
    per_resource = masks_to_graph(masks).row_degrees()
    return per_resource, float(per_resource.mean())


# ==================== AUTOENCODER ====================

class Autoencoder:
    """Per-user encoders, channel layer and shared decoder"""

    def __init__(self, config: SystemConfig, masks: Sequence[MappingMask], gains: ChannelGain,
                 encoders: Sequence[Network], decoder: Network,
                 train_ebn0_db: float = DEFAULT_TRAIN_EBN0_DB):
        width = 2 * config.resources
        if len(masks) != config.users or len(encoders) != config.users:
            raise ShapeMismatchError(f'need {config.users} masks and encoders, got {len(masks)} and {len(encoders)}')
        if any(m.vector.size != width for m in masks):
            raise ShapeMismatchError(f'masks must have length {width}')
        if gains.values.size != width:
            raise ShapeMismatchError(f'gain vector must have length {width}')
        for enc in encoders:
            if enc.input_width != config.m or enc.output_width != width:
                raise ShapeMismatchError(f'encoders must map {config.m} -> {width}')
        if decoder.input_width != width or decoder.output_width != config.frame_bits:
            raise ShapeMismatchError(f'decoder must map {width} -> {config.frame_bits}')
        self.config = config
        self.masks = list(masks)
        self.gains = gains
        self.encoders = list(encoders)
        self.decoder = decoder
        self.train_ebn0_db = train_ebn0_db

    @property
    def codebook_config(self) -> SystemConfig:
        """Dimensioning of the codebook the masks allow"""
        sizes = {m.ones // 2 for m in self.masks}
        if self.config.mode == 'scma' and sizes == {self.config.nonzero_per_codeword}:
            return self.config
        cfg = self.config
        mode = 'dcma' if cfg.resources < cfg.users else 'unconstrained'
        return SystemConfig(cfg.users, cfg.resources, cfg.codebook_size, max(sizes), mode)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for j, enc in enumerate(self.encoders):
            params.update({f'encoder{j}.{k}': v for k, v in enc.parameters().items()})
        params.update({f'decoder.{k}': v for k, v in self.decoder.parameters().items()})
        return params


def build_autoencoder(config: SystemConfig, masks: Sequence[MappingMask],
                      enc_arch: StackArch = ENCODER_ARCH, dec_arch: StackArch = DECODER_ARCH,
                      gains: Optional[ChannelGain] = None, rng: Optional[np.random.Generator] = None,
                      train_ebn0_db: float = DEFAULT_TRAIN_EBN0_DB) -> Autoencoder:
    """Fresh Xavier-initialized autoencoder; batch norm on every hidden layer"""
    rng = rng if rng is not None else np.random.default_rng()
    gains = gains if gains is not None else ChannelGain.unit(config.resources)
    width = 2 * config.resources
    encoders = [
        build_network([config.m] + [enc_arch.hidden_width] * enc_arch.hidden_layers + [width],
                      'tanh', 'tanh', batch_norm=True, rng=rng)
        for _ in range(config.users)
    ]
    decoder = build_network([width] + [dec_arch.hidden_width] * dec_arch.hidden_layers + [config.frame_bits],
                            'tanh', 'sigmoid', batch_norm=True, rng=rng)
    return Autoencoder(config, masks, gains, encoders, decoder, train_ebn0_db)


@dataclass
class AEForward:
    clean: np.ndarray
    noisy: np.ndarray
    probs: np.ndarray
    noise_var: float
    user_outputs: List[np.ndarray] = field(default_factory=list)


def _user_bits(bits: np.ndarray, config: SystemConfig) -> List[np.ndarray]:
    m = config.m
    return [bits[:, j * m:(j + 1) * m] for j in range(config.users)]


def ae_forward(ae: Autoencoder, bits: np.ndarray, ebn0_db: Optional[float],
               rng: Optional[np.random.Generator], mode: str = 'train',
               noise: Optional[np.ndarray] = None, update_stats: bool = True) -> AEForward:
    """
    Encode, superpose, pass through the channel and decode a batch of bits

    Args:
        ae: autoencoder
        bits: (B, m*J) bits
        ebn0_db: noise level in dB; None disables noise
        rng: generator for the noise draw
        mode: 'train' (batch statistics, noise power from the batch) or
            'infer' (running statistics, exact ensemble power)
        noise: explicit (B, 2K) noise draw used instead of sampling
        update_stats: fold batch statistics into running averages in train mode

    Returns:
        AEForward with clean sum, noisy signal and decoded probabilities
    """
    cfg = ae.config
    bits = np.asarray(bits, dtype=np.float64)
    if bits.ndim != 2 or bits.shape[1] != cfg.frame_bits:
        raise ShapeMismatchError(f'bits batch must be (B, {cfg.frame_bits}), got {bits.shape}')

    outputs = []
    for enc, mask, user_bits in zip(ae.encoders, ae.masks, _user_bits(bits, cfg)):
        # + 0.0 turns masked -0.0 entries into +0.0
        outputs.append(enc.forward(user_bits, mode=mode, update_stats=update_stats) * mask.vector + 0.0)
    clean = np.sum(outputs, axis=0) * ae.gains.values

    noise_var = 0.0
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != clean.shape:
            raise ShapeMismatchError(f'noise shape {noise.shape} != signal shape {clean.shape}')
    elif ebn0_db is None:
        noise = np.zeros_like(clean)
    else:
        if mode == 'train':
            power = float((clean ** 2).sum(axis=1).mean())
        else:
            power = ensemble_power(extract_codebooks(ae), ae.gains)
        noise_var = noise_variance(power, float(db_to_linear(ebn0_db)), cfg)
        noise = rng.normal(0.0, math.sqrt(noise_var), size=clean.shape)

    noisy = clean + noise
    probs = ae.decoder.forward(noisy, mode=mode, update_stats=update_stats)
    return AEForward(clean=clean, noisy=noisy, probs=probs, noise_var=noise_var, user_outputs=outputs)


def ae_backward(ae: Autoencoder, targets: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Gradients of the cross-entropy loss after a train-mode ae_forward

    The noise is a constant of the step, so the decoder input gradient flows
    unchanged into the clean sum, then through the gain and each mask.
    """
    if ae.decoder._cache is None:
        raise MissingForwardStateError('ae_backward() needs a train-mode ae_forward pass')
    grads = {}
    probs = ae.decoder._cache[-1].outputs
    dec_grads, grad_signal = ae.decoder.backward(cross_entropy_grad(targets, probs), through_activation=False)
    grads.update({f'decoder.{k}': v for k, v in dec_grads.items()})

    grad_clean = grad_signal * ae.gains.values
    for j, (enc, mask) in enumerate(zip(ae.encoders, ae.masks)):
        enc_grads, _ = enc.backward(grad_clean * mask.vector)
        grads.update({f'encoder{j}.{k}': v for k, v in enc_grads.items()})
    return grads


# ==================== TRAINING ====================

class JointSymbolStream:
    """
    Joint symbol indices drawn from successive random permutations of all M^J

    Every index appears once per pass, so M^J draws cover every combination.
    """

    def __init__(self, config: SystemConfig, rng: np.random.Generator):
        self.total = config.codebook_size ** config.users
        if self.total > MAP_ENUMERATION_LIMIT:
            raise EnumerationLimitError(f'{self.total} joint symbols exceed the enumeration limit')
        self.config = config
        self.rng = rng
        self.visited = np.zeros(self.total, dtype=bool)
        self._pending = np.empty(0, dtype=np.int64)

    def draw(self, n: int) -> np.ndarray:
        chunks, needed = [], n
        while needed > 0:
            if self._pending.size == 0:
                self._pending = self.rng.permutation(self.total)
            take = self._pending[:needed]
            self._pending = self._pending[needed:]
            chunks.append(take)
            needed -= take.size
        index = np.concatenate(chunks)
        self.visited[index] = True
        return index

    def bits(self, index: np.ndarray) -> np.ndarray:
        cfg = self.config
        powers = cfg.codebook_size ** np.arange(cfg.users - 1, -1, -1)
        symbols = (index[:, None] // powers) % cfg.codebook_size
        return symbols_to_bits(symbols, cfg.m)

    def coverage(self) -> Dict[str, Any]:
        visited = int(self.visited.sum())
        return {'visited': visited, 'total': self.total, 'complete': visited == self.total}


@dataclass(frozen=True)
class AETrainingHyper:
    train_ebn0_db: float = DEFAULT_TRAIN_EBN0_DB
    batch_size: int = 256
    samples: int = DEFAULT_SAMPLES
    epochs: int = 10
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f'batch size must be >= 2, got {self.batch_size}')
        if self.samples < 2 or self.epochs < 1:
            raise ConfigError('samples must be >= 2 and epochs >= 1')
        if not self.lr > 0:
            raise ConfigError(f'learning rate must be positive, got {self.lr}')


@dataclass
class AETrainingResult:
    autoencoder: Autoencoder
    loss_curve: List[float]
    coverage: Dict[str, Any]


def train_autoencoder(ae: Autoencoder, hyper: AETrainingHyper = AETrainingHyper()) -> AETrainingResult:
    """
    End-to-end Adam training through the noisy channel

    Each epoch streams `samples` joint symbols in batches; noise is drawn per
    batch at train_ebn0_db using that batch's signal power.
    """
    rng = np.random.default_rng(hyper.seed)
    stream = JointSymbolStream(ae.config, rng)
    params = ae.parameters()
    adam = AdamState(lr=hyper.lr)
    ae.train_ebn0_db = hyper.train_ebn0_db

    loss_curve = []
    with performance_monitor.track('train_autoencoder'):
        for epoch in range(1, hyper.epochs + 1):
            batch_losses = []
            for start in range(0, hyper.samples, hyper.batch_size):
                n = min(hyper.batch_size, hyper.samples - start)
                if n < 2:
                    continue
                bits = stream.bits(stream.draw(n)).astype(np.float64)
                result = ae_forward(ae, bits, hyper.train_ebn0_db, rng, mode='train')
                loss = cross_entropy(bits, result.probs)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f'autoencoder loss became {loss} in epoch {epoch}')
                adam_step(params, ae_backward(ae, bits), adam)
                batch_losses.append(loss)
            loss_curve.append(float(np.mean(batch_losses)))
            logger.info(f'Epoch {epoch}/{hyper.epochs}: loss {loss_curve[-1]:.5f}')

    coverage = stream.coverage()
    if coverage['complete']:
        logger.info(f'Joint symbol coverage {coverage["visited"]}/{coverage["total"]}')
    else:
        logger.warning(f'Joint symbol coverage incomplete: {coverage["visited"]}/{coverage["total"]}')
    return AETrainingResult(autoencoder=ae, loss_curve=loss_curve, coverage=coverage)


# ==================== CODEBOOK EXTRACTION ====================

def extract_codebooks(ae: Autoencoder) -> Codebook:
    """Learned codebook: every user's M bit patterns through its encoder in infer mode"""
    cfg = ae.config
    patterns = symbols_to_bits(np.arange(cfg.codebook_size)[:, None], cfg.m).astype(np.float64)
    words = np.stack([
        real_to_complex(enc.predict(patterns) * mask.vector + 0.0)
        for enc, mask in zip(ae.encoders, ae.masks)
    ])
    return Codebook(config=ae.codebook_config, codewords=words,
                    supports=tuple(masks_to_graph(ae.masks).supports()))


def ae_decode(ae: Autoencoder, received) -> np.ndarray:
    """Hard bit decisions of the autoencoder's decoder for received frames"""
    samples = received.samples if isinstance(received, ReceivedSignal) else received
    frames = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if frames.shape[1] != ae.decoder.input_width:
        raise ShapeMismatchError(f'frames have width {frames.shape[1]}, decoder expects {ae.decoder.input_width}')
    return (ae.decoder.predict(frames) >= 0.5).astype(np.uint8)


def noiseless_round_trip(ae: Autoencoder) -> float:
    """Bit error rate over all M^J joint symbols with the noise switched off"""
    stream = JointSymbolStream(ae.config, np.random.default_rng(0))
    bits = stream.bits(np.arange(stream.total))
    result = ae_forward(ae, bits, None, None, mode='infer')
    decided = (result.probs >= 0.5).astype(np.uint8)
    return float((decided != bits).mean())


# ==================== PERSISTENCE ====================

def save_autoencoder(ae: Autoencoder, path: str, provenance: Optional[Dict[str, Any]] = None) -> None:
    sections = {f'encoder.{j}': enc for j, enc in enumerate(ae.encoders)}
    sections['decoder'] = ae.decoder
    meta = {
        'kind': 'autoencoder',
        'config': ae.config.to_dict(),
        'masks': [[int(v) for v in m.vector] for m in ae.masks],
        'gains': [float(v) for v in ae.gains.values],
        'train_ebn0_db': float(ae.train_ebn0_db),
        'provenance': provenance or {},
    }
    save_checkpoint(path, sections, meta)


def load_autoencoder(path: str) -> Autoencoder:
    sections, meta = load_checkpoint(path)
    if meta.get('kind') != 'autoencoder':
        raise CheckpointError(f'{path} does not hold an autoencoder')
    try:
        config = SystemConfig.from_dict(meta['config'])
        encoders = [sections[f'encoder.{j}'] for j in range(config.users)]
        return Autoencoder(
            config=config,
            masks=[MappingMask(np.asarray(m, dtype=np.float64)) for m in meta['masks']],
            gains=ChannelGain(np.asarray(meta['gains'])),
            encoders=encoders,
            decoder=sections['decoder'],
            train_ebn0_db=meta.get('train_ebn0_db', DEFAULT_TRAIN_EBN0_DB),
        )
    except KeyError as e:
        raise CheckpointError(f'{path}: missing autoencoder entry {e}') from e
