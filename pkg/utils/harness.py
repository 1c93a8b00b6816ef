"""
Monte-Carlo evaluation harness

BER/SER sweeps over an Eb/N0 grid for any detector, the closed-form
complexity comparison, per-frame runtime benchmarks, constellation
projections and the training-Eb/N0 sensitivity matrix.
"""

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import MAP_ENUMERATION_LIMIT
from utils.ae_codec import ae_decode, extract_codebooks, load_autoencoder
from utils.detectors import (
    ComplexityWeights,
    OperationCount,
    count_dnn_ops,
    count_graph_ops,
    count_logmpa_ops,
    logmpa_detect,
    map_detect,
    normalize_complexity,
)
from utils.dl_decoder import (
    DecoderArch,
    TrainedDecoder,
    TrainingHyper,
    decode,
    generate_training_set,
    load_decoder,
    train_decoder,
)
from utils.errors import ConfigError, IncompatibleDetectorError, ShapeMismatchError
from utils.logger import setup_logger
from utils.monitoring import health_check, performance_monitor
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

CSV_SCHEMA_VERSION = 1
SWEEP_COLUMNS = ('ebn0_db', 'frames', 'bit_err', 'sym_err', 'ber', 'ser', 'ci95', 'ns_per_frame')
CONSTELLATION_COLUMNS = ('kind', 'label', 're', 'im')


# ==================== DETECTORS ====================

@dataclass(frozen=True)
class DetectorSpec:
    """map | logmpa:<iterations> | dl:<checkpoint> | ae:<checkpoint>"""
    kind: str
    iterations: int = 0
    checkpoint: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> 'DetectorSpec':
        kind, _, arg = text.partition(':')
        if kind == 'map' and not arg:
            return cls('map')
        if kind == 'logmpa':
            try:
                iterations = int(arg or 5)
            except ValueError as e:
                raise ConfigError(f'bad iteration count in {text!r}') from e
            if iterations < 1:
                raise ConfigError(f'iterations must be >= 1 in {text!r}')
            return cls('logmpa', iterations=iterations)
        if kind in ('dl', 'ae') and arg:
            return cls(kind, checkpoint=arg)
        raise ConfigError(f'unknown detector {text!r}; use map, logmpa:N, dl:FILE or ae:FILE')

    def __str__(self):
        if self.kind == 'logmpa':
            return f'logmpa:{self.iterations}'
        return self.kind if self.checkpoint is None else f'{self.kind}:{self.checkpoint}'


@dataclass
class Detector:
    """
    A ready-to-run detector

    codebook and gains are what the transmitter must use for this detector;
    the autoencoder detector substitutes its learned codebook.
    """
    name: str
    codebook: Codebook
    gains: ChannelGain
    decide: Callable[[ReceivedSignal], np.ndarray]
    ops_per_frame: Optional[OperationCount] = None


def _require_system(name: str, expected: SystemConfig, actual: SystemConfig) -> None:
    if (expected.users, expected.resources, expected.codebook_size) != \
            (actual.users, actual.resources, actual.codebook_size):
        raise IncompatibleDetectorError(
            f'{name} was built for J={actual.users}, K={actual.resources}, M={actual.codebook_size}; '
            f'system is J={expected.users}, K={expected.resources}, M={expected.codebook_size}'
        )


def dl_detector(model: TrainedDecoder, codebook: Codebook, gains: ChannelGain, name: str = 'dl') -> Detector:
    cfg = codebook.config
    if model.arch.input_width != 2 * cfg.resources or model.arch.output_width != cfg.frame_bits:
        raise IncompatibleDetectorError(
            f'decoder maps {model.arch.input_width} -> {model.arch.output_width}, '
            f'system needs {2 * cfg.resources} -> {cfg.frame_bits}'
        )
    if model.system is not None:
        _require_system(name, cfg, model.system)
    return Detector(name, codebook, gains, lambda rx: decode(model, rx), model.arch.operation_count())


def build_detector(spec: DetectorSpec, codebook: Codebook, gains: ChannelGain,
                   map_limit: int = MAP_ENUMERATION_LIMIT) -> Detector:
    """Instantiate a detector for a codebook and channel gain"""
    cfg = codebook.config
    m = cfg.m

    if spec.kind == 'map':
        hypotheses = cfg.codebook_size ** cfg.users
        if hypotheses > map_limit:
            raise IncompatibleDetectorError(f'MAP would enumerate {hypotheses} hypotheses (limit {map_limit})')
        return Detector(
            'map', codebook, gains,
            lambda rx: map_detect(rx, codebook, gains, rx.detection_variance, limit=map_limit).bits(m),
        )

    if spec.kind == 'logmpa':
        graph = codebook.graph()
        if graph.is_regular():
            ops = count_logmpa_ops(cfg, spec.iterations)
        else:
            ops = count_graph_ops(graph, cfg.codebook_size, spec.iterations)

        def run(rx):
            decision, _ = logmpa_detect(rx, codebook, gains, rx.detection_variance, spec.iterations, graph=graph)
            return decision.bits(m)
        return Detector(str(spec), codebook, gains, run, ops)

    if spec.kind == 'dl':
        return dl_detector(load_decoder(spec.checkpoint), codebook, gains, name=str(spec))

    if spec.kind == 'ae':
        ae = load_autoencoder(spec.checkpoint)
        _require_system(str(spec), cfg, ae.config)
        learned = extract_codebooks(ae)
        dec_arch = DecoderArch(cfg.resources, cfg.users, m,
                               len(ae.decoder.layers) - 1, ae.decoder.layers[0].n_out)
        return Detector(str(spec), learned, ae.gains, lambda rx: ae_decode(ae, rx), dec_arch.operation_count())

    raise ConfigError(f'unknown detector kind {spec.kind!r}')


# ==================== ERROR COUNTING ====================

def count_errors(tx_bits: np.ndarray, rx_bits: np.ndarray, bits_per_symbol: int) -> Tuple[int, int]:
    """
    Bit and symbol errors between transmitted and detected frames

    A symbol is in error when any of its m bits is.
    """
    tx = np.atleast_2d(np.asarray(tx_bits, dtype=np.uint8))
    rx = np.atleast_2d(np.asarray(rx_bits, dtype=np.uint8))
    if tx.shape != rx.shape:
        raise ShapeMismatchError(f'transmitted {tx.shape} and detected {rx.shape} bits differ')
    if tx.shape[1] % bits_per_symbol:
        raise ShapeMismatchError(f'{tx.shape[1]} bits per frame do not split into {bits_per_symbol}-bit symbols')
    wrong = tx != rx
    symbol_wrong = wrong.reshape(tx.shape[0], -1, bits_per_symbol).any(axis=2)
    return int(wrong.sum()), int(symbol_wrong.sum())


def confidence_halfwidth(errors: int, trials: int) -> float:
    """95% normal-approximation half-width of an error rate"""
    if trials == 0:
        return 0.0
    p = errors / trials
    return 1.96 * math.sqrt(p * (1.0 - p) / trials)


# ==================== SWEEP ====================

@dataclass(frozen=True)
class SweepSpec:
    detector: DetectorSpec
    ebn0_grid: Tuple[float, ...]
    seed: int
    min_bit_errors: int = 100
    min_frames: int = 1000
    max_frames: int = 1_000_000
    batch_frames: int = 1000
    noise_disabled: bool = False
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        grid = tuple(float(x) for x in self.ebn0_grid)
        if not grid:
            raise ConfigError('Eb/N0 grid is empty')
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError('Eb/N0 grid must be strictly increasing')
        object.__setattr__(self, 'ebn0_grid', grid)
        if min(self.min_bit_errors, self.min_frames, self.max_frames, self.batch_frames, self.workers) < 1:
            raise ConfigError('stopping thresholds, batch size and workers must be positive')
        if self.min_frames > self.max_frames:
            raise ConfigError(f'min_frames {self.min_frames} exceeds the frame cap {self.max_frames}')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'detector': str(self.detector),
            'ebn0_grid': list(self.ebn0_grid),
            'seed': self.seed,
            'min_bit_errors': self.min_bit_errors,
            'min_frames': self.min_frames,
            'max_frames': self.max_frames,
            'batch_frames': self.batch_frames,
            'noise_disabled': self.noise_disabled,
        }


@dataclass
class SweepPoint:
    ebn0_db: float
    frames: int
    bit_err: int
    sym_err: int
    ber: float
    ser: float
    ci95: float
    ns_per_frame: Optional[float] = None

    def row(self) -> List[str]:
        return [
            f'{self.ebn0_db:g}', str(self.frames), str(self.bit_err), str(self.sym_err),
            f'{self.ber:.6e}', f'{self.ser:.6e}', f'{self.ci95:.6e}',
            '' if self.ns_per_frame is None else f'{self.ns_per_frame:.0f}',
        ]


@dataclass
class SweepResult:
    spec: SweepSpec
    config: SystemConfig
    signal_power: float
    points: List[SweepPoint] = field(default_factory=list)
    ops_per_frame: Optional[OperationCount] = None

    def rows(self) -> List[List[str]]:
        return [p.row() for p in self.points]

    def sidecar(self) -> Dict[str, Any]:
        return {
            'schema_version': CSV_SCHEMA_VERSION,
            'columns': list(SWEEP_COLUMNS),
            'system': self.config.to_dict(),
            'sweep': self.spec.to_dict(),
            'signal_power': self.signal_power,
            'power_note': 'Eb/N0 is referenced to the exact ensemble power of the transmitted codebook',
            'ops_per_frame': None if self.ops_per_frame is None else self.ops_per_frame.to_dict(),
        }


def _run_batch(detector: Detector, config: SystemConfig, ebn0_linear: float, power: float,
               frames: int, seed_seq: np.random.SeedSequence, noise_disabled: bool) -> Tuple[int, int, int, int]:
    rng = np.random.default_rng(seed_seq)
    bits = rng.integers(0, 2, size=(frames, config.frame_bits), dtype=np.uint8)
    clean = superpose(encode_frames(bits, detector.codebook), detector.gains)
    received = add_awgn(clean, ebn0_linear, config, power, rng, noise_disabled=noise_disabled)
    start = time.perf_counter_ns()
    decided = detector.decide(received)
    elapsed = time.perf_counter_ns() - start
    bit_err, sym_err = count_errors(bits, decided, config.m)
    return frames, bit_err, sym_err, elapsed


def run_sweep(spec: SweepSpec, detector: Detector) -> SweepResult:
    """
    BER/SER at every Eb/N0 grid point

    Frames are processed in batches; batch b of point i draws from
    SeedSequence([seed, i, b]). A point stops after the first batch at which
    both min_bit_errors and min_frames are reached, or at the frame cap.
    Batches are accumulated in order, so the result does not depend on the
    number of worker threads.

    Args:
        spec: grid, stopping rule and seed
        detector: detector together with the codebook it expects

    Returns:
        SweepResult
    """
    config = detector.codebook.config
    power = ensemble_power(detector.codebook, detector.gains)
    result = SweepResult(spec=spec, config=config, signal_power=power, ops_per_frame=detector.ops_per_frame)
    logger.info(f'Sweep {detector.name}: {len(spec.ebn0_grid)} points, seed {spec.seed}, power {power:.6f}')

    executor = ThreadPoolExecutor(max_workers=spec.workers) if spec.workers > 1 else None
    try:
        with performance_monitor.track(f'sweep {detector.name}'):
            for point_index, ebn0_db in enumerate(spec.ebn0_grid):
                result.points.append(
                    _run_point(spec, detector, config, power, point_index, ebn0_db, executor)
                )
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return result


def _run_point(spec: SweepSpec, detector: Detector, config: SystemConfig, power: float,
               point_index: int, ebn0_db: float, executor: Optional[ThreadPoolExecutor]) -> SweepPoint:
    ebn0_linear = float(db_to_linear(ebn0_db))
    frames = bit_err = sym_err = elapsed = 0
    batch_index = 0
    done = False

    while not done:
        window = []
        for _ in range(spec.workers):
            size = min(spec.batch_frames, spec.max_frames - (batch_index + len(window)) * spec.batch_frames)
            if size <= 0:
                break
            seed_seq = np.random.SeedSequence([spec.seed, point_index, batch_index + len(window)])
            window.append((size, seed_seq))
        if not window:
            break

        args = [(detector, config, ebn0_linear, power, size, seq, spec.noise_disabled) for size, seq in window]
        if executor is None:
            outcomes = [_run_batch(*a) for a in args]
        else:
            outcomes = list(executor.map(lambda a: _run_batch(*a), args))

        for n, b_err, s_err, ns in outcomes:
            frames += n
            bit_err += b_err
            sym_err += s_err
            elapsed += ns
            batch_index += 1
            logger.debug(f'{ebn0_db:g} dB: {frames} frames, {bit_err} bit errors')
            if (bit_err >= spec.min_bit_errors and frames >= spec.min_frames) or frames >= spec.max_frames:
                done = True
                break

    if bit_err < spec.min_bit_errors and not spec.noise_disabled:
        logger.warning(f'{ebn0_db:g} dB: frame cap {spec.max_frames} reached with only {bit_err} bit errors')

    n_bits = frames * config.frame_bits
    n_symbols = frames * config.users
    point = SweepPoint(
        ebn0_db=ebn0_db,
        frames=frames,
        bit_err=bit_err,
        sym_err=sym_err,
        ber=bit_err / n_bits,
        ser=sym_err / n_symbols,
        ci95=confidence_halfwidth(bit_err, n_bits),
        ns_per_frame=elapsed / frames if spec.timing else None,
    )
    logger.info(f'{ebn0_db:g} dB: BER {point.ber:.3e} SER {point.ser:.3e} over {frames} frames')
    return point


# ==================== COMPLEXITY ====================

@dataclass
class ComplexityRow:
    detector: str
    counts: OperationCount
    units: int
    reduction_pct: Optional[float] = None

    def row(self) -> List[str]:
        return [self.detector, str(self.counts.multiplications), str(self.counts.additions),
                str(self.counts.log_exp_ops), str(self.units),
                '' if self.reduction_pct is None else f'{self.reduction_pct:.1f}']


COMPLEXITY_COLUMNS = ('detector', 'mul', 'add', 'log_exp', 'normalized', 'dl_reduction_pct')


def compare_complexity(config: SystemConfig, iterations: Sequence[int], arch: DecoderArch,
                       weights: ComplexityWeights = ComplexityWeights()) -> List[ComplexityRow]:
    """
    Closed-form complexity table: one row per Log-MPA iteration count plus the DL decoder

    Log-MPA rows carry the percentage by which the DL decoder undercuts them.
    """
    dl_counts = count_dnn_ops(arch.hidden_width, arch.hidden_layers, config.resources, config.users)
    dl_units = normalize_complexity(dl_counts, weights)
    rows = []
    for it in iterations:
        counts = count_logmpa_ops(config, it)
        units = normalize_complexity(counts, weights)
        rows.append(ComplexityRow(f'logmpa:{it}', counts, units, round(100.0 * (units - dl_units) / units, 1)))
    rows.append(ComplexityRow('dl', dl_counts, dl_units))
    return rows


# ==================== RUNTIME ====================

@dataclass
class BenchmarkRow:
    detector: str
    frames: int
    mean_ns_per_frame: float


def benchmark_runtime(detectors: Sequence[Detector], n_frames: int, seed: int,
                      ebn0_db: float = 8.0, warmup: int = 20) -> Dict[str, Any]:
    """
    Mean wall-clock decode time per frame, one frame per call

    Every detector sees frames generated from the same seed; the first
    `warmup` calls are excluded from the mean.
    """
    if n_frames < 1:
        raise ConfigError('benchmark needs at least one frame')
    if n_frames < 1000:
        logger.warning(f'{n_frames} frames give an unstable mean; 1000 or more are recommended')

    rows = []
    for detector in detectors:
        config = detector.codebook.config
        rng = np.random.default_rng(seed)
        power = ensemble_power(detector.codebook, detector.gains)
        bits = rng.integers(0, 2, size=(n_frames + warmup, config.frame_bits), dtype=np.uint8)
        clean = superpose(encode_frames(bits, detector.codebook), detector.gains)
        received = add_awgn(clean, float(db_to_linear(ebn0_db)), config, power, rng)

        total = 0
        for i in range(n_frames + warmup):
            frame = ReceivedSignal(received.samples[i:i + 1], received.noise_var)
            start = time.perf_counter_ns()
            detector.decide(frame)
            if i >= warmup:
                total += time.perf_counter_ns() - start
        rows.append(BenchmarkRow(detector.name, n_frames, total / n_frames))
        logger.info(f'{detector.name}: {total / n_frames / 1000:.1f} us per frame')

    return {'rows': rows, 'hardware': health_check.hardware_descriptor(), 'ebn0_db': ebn0_db, 'seed': seed}


# ==================== CONSTELLATIONS ====================

@dataclass(frozen=True)
class ConstellationPoint:
    kind: str
    label: str
    re: float
    im: float

    def row(self) -> List[str]:
        return [self.kind, self.label, repr(self.re), repr(self.im)]


def constellation_projection(codebook: Codebook, resource: int, gains: Optional[ChannelGain] = None,
                             received: Optional[np.ndarray] = None,
                             include_codewords: bool = False) -> List[ConstellationPoint]:
    """
    Points seen on one resource

    Superposition points enumerate every symbol combination of the users
    sharing the resource (label 'i1-i2-...' in user order). Received frames,
    when given, are added as raw points.

    Args:
        codebook: codebook to project
        resource: resource index in [0, K)
        gains: channel gain (unit gain by default)
        received: optional (F, 2K) received frames
        include_codewords: also emit every single user's codewords

    Returns:
        list of ConstellationPoint
    """
    cfg = codebook.config
    if not 0 <= resource < cfg.resources:
        raise ConfigError(f'resource index {resource} outside [0, {cfg.resources})')
    gains = gains if gains is not None else ChannelGain.unit(cfg.resources)
    h_re, h_im = gains.values[2 * resource], gains.values[2 * resource + 1]

    users = [j for j, support in enumerate(codebook.supports) if resource in support]
    points = []
    if include_codewords:
        for j in users:
            for i, c in enumerate(codebook.codewords[j, :, resource]):
                points.append(ConstellationPoint('codeword', f'u{j}:{i}', float(c.real * h_re), float(c.imag * h_im)))
    for combo in itertools.product(range(cfg.codebook_size), repeat=len(users)):
        total = sum(codebook.codewords[j, i, resource] for j, i in zip(users, combo))
        points.append(ConstellationPoint('superposition', '-'.join(map(str, combo)),
                                         float(np.real(total) * h_re), float(np.imag(total) * h_im)))

    if received is not None and len(received):
        frames = np.atleast_2d(np.asarray(received, dtype=np.float64))
        for f, row in enumerate(frames):
            points.append(ConstellationPoint('received', str(f), float(row[2 * resource]), float(row[2 * resource + 1])))
    return points


# ==================== TRAINING SENSITIVITY ====================

def training_sensitivity_matrix(codebook: Codebook, gains: ChannelGain, train_ebn0s: Sequence[float],
                                test_grid: Sequence[float], samples: int, hyper: TrainingHyper,
                                arch: DecoderArch, sweep_template: SweepSpec) -> List[Tuple[float, SweepPoint]]:
    """
    Train one decoder per training Eb/N0 and sweep each over the test grid

    Returns:
        (training Eb/N0, sweep point) pairs, training Eb/N0 major
    """
    config = codebook.config
    results = []
    for index, train_db in enumerate(train_ebn0s):
        rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, index]))
        training_set = generate_training_set(config, codebook, gains, [(train_db, samples)], rng)
        model = train_decoder(arch, training_set, hyper)
        model.system = config
        detector = dl_detector(model, codebook, gains, name=f'dl@{train_db:g}dB')
        spec = SweepSpec(
            detector=DetectorSpec('dl', checkpoint=f'<trained at {train_db:g} dB>'),
            ebn0_grid=tuple(test_grid),
            seed=sweep_template.seed,
            min_bit_errors=sweep_template.min_bit_errors,
            min_frames=sweep_template.min_frames,
            max_frames=sweep_template.max_frames,
            batch_frames=sweep_template.batch_frames,
            workers=sweep_template.workers,
        )
        for point in run_sweep(spec, detector).points:
            results.append((float(train_db), point))
    return results
