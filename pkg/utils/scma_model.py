"""
SCMA system model

System dimensioning, codebooks, the factor graph and mapping masks, encoding,
superposition and the AWGN channel.

Serialization convention used everywhere (files, masks, network inputs):
per resource the real part then the imaginary part, resources in ascending
index order. Bit groups map to codeword indices big-endian; frame bit vectors
are user-major (user 0 first).
"""

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import (
    CodebookFormatError,
    ConfigError,
    ShapeMismatchError,
    SizeMismatchError,
    SupportMismatchError,
)
from utils.logger import setup_logger

logger = setup_logger(__name__)

SYSTEM_MODES = ('scma', 'dcma', 'unconstrained')


# ==================== SYSTEM DIMENSIONING ====================

@dataclass(frozen=True)
class SystemConfig:
    """
    SCMA dimensioning constants

    Args:
        users: J, number of multiplexed users (layers)
        resources: K, number of OFDM sub-carriers
        codebook_size: M, codewords per user (power of two, >= 2)
        nonzero_per_codeword: N, occupied resources per user
        mode: 'scma' (K < J, N < K), 'dcma' (K < J, N <= K) or
            'unconstrained' for toy / orthogonal test systems
    """
    users: int
    resources: int
    codebook_size: int
    nonzero_per_codeword: int
    mode: str = 'scma'

    def __post_init__(self):
        for name in ('users', 'resources', 'codebook_size', 'nonzero_per_codeword'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f'{name} must be a positive integer, got {value!r}')

        M = self.codebook_size
        if M < 2 or M & (M - 1):
            raise ConfigError(f'codebook_size must be a power of two >= 2, got {M}')

        if self.mode not in SYSTEM_MODES:
            raise ConfigError(f'mode must be one of {SYSTEM_MODES}, got {self.mode!r}')

        J, K, N = self.users, self.resources, self.nonzero_per_codeword
        if N > K:
            raise ConfigError(f'N={N} cannot exceed K={K}')
        if self.mode == 'scma':
            if not K < J:
                raise ConfigError(f'SCMA needs overloading K < J (K={K}, J={J})')
            if not N < K:
                raise ConfigError(f'SCMA needs sparsity N < K (N={N}, K={K})')
        elif self.mode == 'dcma' and not K < J:
            raise ConfigError(f'DCMA keeps the overloading K < J (K={K}, J={J})')

    # short names matching the usual notation
    @property
    def J(self) -> int:
        return self.users

    @property
    def K(self) -> int:
        return self.resources

    @property
    def M(self) -> int:
        return self.codebook_size

    @property
    def N(self) -> int:
        return self.nonzero_per_codeword

    @property
    def m(self) -> int:
        """Bits per symbol, log2(M)"""
        return self.codebook_size.bit_length() - 1

    @property
    def frame_bits(self) -> int:
        return self.m * self.users

    @property
    def overlap_degree(self) -> float:
        """d_f = J*N/K"""
        return self.users * self.nonzero_per_codeword / self.resources

    @property
    def overload(self) -> float:
        """lambda = J/K"""
        return self.users / self.resources

    @classmethod
    def canonical(cls) -> 'SystemConfig':
        return cls(users=6, resources=4, codebook_size=4, nonzero_per_codeword=2)

    @classmethod
    def from_dict(cls, data: Dict) -> 'SystemConfig':
        try:
            return cls(
                users=int(data['J']),
                resources=int(data['K']),
                codebook_size=int(data['M']),
                nonzero_per_codeword=int(data['N']),
                mode=data.get('mode', 'scma'),
            )
        except KeyError as e:
            raise ConfigError(f'system configuration is missing {e}') from e

    def to_dict(self) -> Dict:
        return {'J': self.users, 'K': self.resources, 'M': self.codebook_size,
                'N': self.nonzero_per_codeword, 'mode': self.mode}

    def with_density(self, nonzero: int) -> 'SystemConfig':
        """Same system with N' occupied resources per user (DCMA when N' > N)"""
        mode = self.mode
        if nonzero >= self.resources and mode == 'scma':
            mode = 'dcma'
        return SystemConfig(self.users, self.resources, self.codebook_size, nonzero, mode)


# ==================== FACTOR GRAPH / MASKS ====================

# Column j lists the resources of user j; rows are resources.
CANONICAL_GRAPH = np.array([
    [0, 1, 1, 0, 1, 0],
    [1, 0, 1, 0, 0, 1],
    [0, 1, 0, 1, 0, 1],
    [1, 0, 0, 1, 1, 0],
], dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Binary K x J occupancy matrix: matrix[k, j] == 1 iff user j uses resource k"""
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix)
        if matrix.ndim != 2:
            raise CodebookFormatError(f'factor graph must be a K x J matrix, got shape {matrix.shape}')
        if not np.isin(matrix, (0, 1)).all():
            raise CodebookFormatError('factor graph entries must be 0 or 1')
        matrix = matrix.astype(np.uint8)
        if (matrix.sum(axis=0) == 0).any():
            raise SupportMismatchError('every user must occupy at least one resource')
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @property
    def resources(self) -> int:
        return self.matrix.shape[0]

    @property
    def users(self) -> int:
        return self.matrix.shape[1]

    def support(self, user: int) -> Tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.matrix[:, user]))

    def supports(self) -> List[Tuple[int, ...]]:
        return [self.support(j) for j in range(self.users)]

    def users_on(self, resource: int) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.matrix[resource]))

    def row_degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=1).astype(int)

    def column_weights(self) -> np.ndarray:
        return self.matrix.sum(axis=0).astype(int)

    def is_regular(self) -> bool:
        return len(set(self.row_degrees())) == 1 and len(set(self.column_weights())) == 1

    def check_against(self, config: SystemConfig) -> None:
        """Raise unless the graph has the shape and column weights the config declares"""
        if self.matrix.shape != (config.resources, config.users):
            raise SizeMismatchError(
                f'factor graph is {self.matrix.shape}, config expects '
                f'({config.resources}, {config.users})'
            )
        weights = self.column_weights()
        if config.mode == 'scma' and (weights != config.nonzero_per_codeword).any():
            raise SupportMismatchError(
                f'SCMA graph columns must each hold N={config.nonzero_per_codeword} ones, got {weights.tolist()}'
            )

    @classmethod
    def canonical(cls) -> 'FactorGraph':
        return cls(CANONICAL_GRAPH.copy())

    @classmethod
    def from_supports(cls, supports: Sequence[Sequence[int]], resources: int) -> 'FactorGraph':
        matrix = np.zeros((resources, len(supports)), dtype=np.uint8)
        for j, support in enumerate(supports):
            for k in support:
                if not 0 <= k < resources:
                    raise SupportMismatchError(f'user {j}: resource index {k} outside [0, {resources})')
                matrix[k, j] = 1
        return cls(matrix)


def load_factor_graph(path: str) -> FactorGraph:
    """Read a K x J matrix of 0/1 integers, one resource per line"""
    try:
        matrix = np.loadtxt(path, dtype=int, ndmin=2)
    except (OSError, ValueError) as e:
        raise CodebookFormatError(f'Cannot parse factor graph {path}: {e}') from e
    graph = FactorGraph(matrix)
    logger.debug(f'Loaded factor graph {graph.matrix.shape} from {path}')
    return graph


@dataclass(frozen=True, eq=False)
class MappingMask:
    """Binary vector s_j of length 2K (real/imag interleaved per resource)"""
    vector: np.ndarray

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1 or vector.size % 2:
            raise ShapeMismatchError(f'mask must be a 1-D vector of even length, got {vector.shape}')
        if not np.isin(vector, (0.0, 1.0)).all():
            raise ConfigError('mask entries must be 0 or 1')
        if (vector[0::2] != vector[1::2]).any():
            raise ConfigError('real and imaginary positions of a resource must agree')
        vector.setflags(write=False)
        object.__setattr__(self, 'vector', vector)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.vector[0::2]))

    @property
    def ones(self) -> int:
        return int(self.vector.sum())


def derive_masks(graph: FactorGraph) -> List[MappingMask]:
    """One 2K-length mask per user with ones at the real/imag slots of its resources"""
    return [MappingMask(np.repeat(graph.matrix[:, j], 2).astype(np.float64))
            for j in range(graph.users)]


def masks_to_graph(masks: Sequence[MappingMask]) -> FactorGraph:
    """Collapse real/imag pairs back into factor-graph columns"""
    return FactorGraph(np.stack([m.vector[0::2] for m in masks], axis=1).astype(np.uint8))


# ==================== CHANNEL GAIN ====================

@dataclass(frozen=True, eq=False)
class ChannelGain:
    """
    Constant per-component gains h (length 2K)

    The gain multiplies the interleaved real vector element-wise, the same
    operation the autoencoder's channel layer performs.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size % 2:
            raise ShapeMismatchError(f'gain vector must have even length 2K, got shape {values.shape}')
        if not np.isfinite(values).all():
            raise CodebookFormatError('gain vector must be finite')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def resources(self) -> int:
        return self.values.size // 2

    @classmethod
    def unit(cls, resources: int) -> 'ChannelGain':
        return cls(np.ones(2 * resources))


def load_gains(path: Optional[str], resources: int) -> ChannelGain:
    """Load 2K gains from a whitespace separated text file (None -> all ones)"""
    if path is None:
        return ChannelGain.unit(resources)
    try:
        values = np.loadtxt(path, dtype=np.float64, ndmin=1).ravel()
    except (OSError, ValueError) as e:
        raise CodebookFormatError(f'Cannot parse gains {path}: {e}') from e
    if values.size != 2 * resources:
        raise SizeMismatchError(f'gain file {path} holds {values.size} values, expected {2 * resources}')
    return ChannelGain(values)


# ==================== CODEBOOK ====================

def complex_to_real(values: np.ndarray) -> np.ndarray:
    """(..., K) complex -> (..., 2K) real, interleaved re/im"""
    values = np.asarray(values)
    out = np.stack([values.real, values.imag], axis=-1)
    return out.reshape(values.shape[:-1] + (2 * values.shape[-1],))


def real_to_complex(values: np.ndarray) -> np.ndarray:
    """(..., 2K) real interleaved -> (..., K) complex"""
    values = np.asarray(values, dtype=np.float64)
    return values[..., 0::2] + 1j * values[..., 1::2]


@dataclass(frozen=True, eq=False)
class Codebook:
    """
    Per-user codeword tables

    Args:
        config: system dimensioning
        codewords: complex array (J, M, K)
        supports: per user, the resource indices carrying non-zero entries
    """
    config: SystemConfig
    codewords: np.ndarray
    supports: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        codewords = np.asarray(self.codewords, dtype=np.complex128)
        cfg = self.config
        expected = (cfg.users, cfg.codebook_size, cfg.resources)
        if codewords.shape != expected:
            raise SizeMismatchError(f'codewords have shape {codewords.shape}, expected {expected}')
        if not np.isfinite(codewords.real).all() or not np.isfinite(codewords.imag).all():
            raise CodebookFormatError('codewords must be finite')

        supports = tuple(tuple(sorted(int(k) for k in s)) for s in self.supports)
        if len(supports) != cfg.users:
            raise SizeMismatchError(f'{len(supports)} supports given for {cfg.users} users')
        for j, support in enumerate(supports):
            if len(set(support)) != len(support) or not support:
                raise SupportMismatchError(f'user {j}: support {support} is empty or repeats a resource')
            if support[0] < 0 or support[-1] >= cfg.resources:
                raise SupportMismatchError(f'user {j}: support {support} outside [0, {cfg.resources})')
            off = np.ones(cfg.resources, dtype=bool)
            off[list(support)] = False
            if np.any(codewords[j][:, off] != 0):
                raise SupportMismatchError(f'user {j}: codeword non-zero off its support {support}')

        codewords.setflags(write=False)
        object.__setattr__(self, 'codewords', codewords)
        object.__setattr__(self, 'supports', supports)

    def user(self, j: int) -> np.ndarray:
        """(M, K) complex codewords of user j"""
        return self.codewords[j]

    def serialized(self) -> np.ndarray:
        """(J, M, 2K) real interleaved codewords"""
        return complex_to_real(self.codewords)

    def graph(self) -> FactorGraph:
        return FactorGraph.from_supports(self.supports, self.config.resources)

    def check_graph(self, graph: FactorGraph) -> None:
        """Raise SupportMismatchError unless supports equal the graph columns"""
        if graph.matrix.shape != (self.config.resources, self.config.users):
            raise SizeMismatchError(f'factor graph shape {graph.matrix.shape} does not match codebook')
        for j, support in enumerate(self.supports):
            if graph.support(j) != support:
                raise SupportMismatchError(
                    f'user {j}: codebook support {support} != factor graph column {graph.support(j)}'
                )


def _reject_constant(name: str):
    raise CodebookFormatError(f'non-finite value {name} in codebook file')


def _infer_config(J: int, K: int, M: int, supports: List[List[int]]) -> SystemConfig:
    sizes = {len(s) for s in supports}
    N = max(sizes)
    if len(sizes) == 1 and N < K < J:
        mode = 'scma'
    elif K < J:
        mode = 'dcma'
    else:
        mode = 'unconstrained'
    return SystemConfig(J, K, M, N, mode)


def parse_codebook(document: Dict, config: Optional[SystemConfig] = None) -> Codebook:
    """Build a Codebook from an already decoded codebook document"""
    try:
        J, K, M = int(document['J']), int(document['K']), int(document['M'])
        users = document['users']
    except (KeyError, TypeError, ValueError) as e:
        raise CodebookFormatError(f'codebook document lacks J/K/M/users: {e}') from e

    if config is not None and (config.users, config.resources, config.codebook_size) != (J, K, M):
        raise SizeMismatchError(
            f'codebook declares J={J}, K={K}, M={M}; config expects '
            f'J={config.users}, K={config.resources}, M={config.codebook_size}'
        )
    if not isinstance(users, list) or len(users) != J:
        raise SizeMismatchError(f'codebook declares J={J} but lists {len(users) if isinstance(users, list) else "no"} users')

    supports = []
    codewords = np.zeros((J, M, K), dtype=np.complex128)
    for j, entry in enumerate(users):
        try:
            support = [int(k) for k in entry['support']]
            words = entry['codewords']
        except (KeyError, TypeError, ValueError) as e:
            raise CodebookFormatError(f'user {j}: malformed entry: {e}') from e
        if len(words) != M:
            raise SizeMismatchError(f'user {j}: {len(words)} codewords listed, M={M}')
        for i, word in enumerate(words):
            if len(word) != K:
                raise SizeMismatchError(f'user {j} codeword {i}: {len(word)} entries, K={K}')
            for k, pair in enumerate(word):
                if len(pair) != 2:
                    raise CodebookFormatError(f'user {j} codeword {i} resource {k}: expected [re, im]')
                re, im = float(pair[0]), float(pair[1])
                if not (math.isfinite(re) and math.isfinite(im)):
                    raise CodebookFormatError(f'user {j} codeword {i}: non-finite entry')
                codewords[j, i, k] = complex(re, im)
        supports.append(support)

    if config is None:
        config = _infer_config(J, K, M, supports)
    codebook = Codebook(config=config, codewords=codewords, supports=tuple(tuple(s) for s in supports))
    if config.mode == 'scma':
        bad = [j for j, s in enumerate(codebook.supports) if len(s) != config.nonzero_per_codeword]
        if bad:
            raise SupportMismatchError(f'users {bad} do not occupy exactly N={config.nonzero_per_codeword} resources')
    return codebook


def load_codebook(path: str, config: Optional[SystemConfig] = None,
                  graph: Optional[FactorGraph] = None) -> Codebook:
    """
    Load and validate a codebook file

    Args:
        path: JSON codebook file {J, K, M, users: [{support, codewords}]}
        config: expected dimensioning (inferred from the file when omitted)
        graph: factor graph the supports must agree with

    Returns:
        Codebook
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise CodebookFormatError(f'Cannot parse codebook {path}: {e}') from e
    except OSError as e:
        raise CodebookFormatError(f'Cannot read codebook {path}: {e}') from e

    codebook = parse_codebook(document, config)
    if graph is not None:
        codebook.check_graph(graph)
    logger.debug(f'Loaded codebook {path}: J={codebook.config.users}, M={codebook.config.codebook_size}')
    return codebook


def codebook_document(codebook: Codebook) -> Dict:
    cfg = codebook.config
    return {
        'J': cfg.users,
        'K': cfg.resources,
        'M': cfg.codebook_size,
        'users': [
            {
                'support': list(codebook.supports[j]),
                'codewords': [
                    [[float(c.real), float(c.imag)] for c in word]
                    for word in codebook.codewords[j]
                ],
            }
            for j in range(cfg.users)
        ],
    }


def save_codebook(codebook: Codebook, path: str) -> None:
    """Write a codebook in the format load_codebook reads"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(codebook_document(codebook), f, indent=2)
        f.write('\n')
    logger.info(f'Codebook written to {path}')


# ==================== ENCODING ====================

def bits_to_index(bits: Sequence[int]) -> int:
    index = 0
    for bit in bits:
        index = (index << 1) | int(bit)
    return index


def bits_to_symbols(bits: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    """(F, m*J) bits -> (F, J) symbol indices"""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    if bits.shape[1] % bits_per_symbol:
        raise ShapeMismatchError(f'{bits.shape[1]} bits do not split into {bits_per_symbol}-bit symbols')
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1)
    return bits.reshape(bits.shape[0], -1, bits_per_symbol) @ weights


def symbols_to_bits(symbols: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    """(F, J) symbol indices -> (F, m*J) bits"""
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.int64))
    shifts = np.arange(bits_per_symbol - 1, -1, -1)
    bits = (symbols[..., None] >> shifts) & 1
    return bits.reshape(symbols.shape[0], -1).astype(np.uint8)


def joint_symbols(config: SystemConfig) -> np.ndarray:
    """All M^J symbol vectors in lexicographic order, shape (M^J, J)"""
    J, M = config.users, config.codebook_size
    index = np.arange(M ** J)
    powers = M ** np.arange(J - 1, -1, -1)
    return (index[:, None] // powers) % M


def encode_user(bits: Sequence[int], user_codebook: np.ndarray) -> np.ndarray:
    """Map one user's m bits to its K-dimensional codeword"""
    user_codebook = np.asarray(user_codebook)
    m = user_codebook.shape[0].bit_length() - 1
    if len(bits) != m:
        raise ShapeMismatchError(f'expected {m} bits, got {len(bits)}')
    return user_codebook[bits_to_index(bits)]


def encode_frames(bits: np.ndarray, codebook: Codebook) -> np.ndarray:
    """(F, m*J) bits -> (F, J, K) complex codewords"""
    symbols = bits_to_symbols(bits, codebook.config.m)
    users = np.arange(codebook.config.users)
    return codebook.codewords[users[None, :], symbols]


def superpose(codewords: np.ndarray, gains: ChannelGain) -> np.ndarray:
    """
    Sum the users' codewords and apply the channel gain

    Args:
        codewords: (J, K) or (F, J, K) complex
        gains: channel gain of length 2K

    Returns:
        (2K,) or (F, 2K) real interleaved received signal without noise
    """
    codewords = np.asarray(codewords)
    if codewords.shape[-1] != gains.resources:
        raise ShapeMismatchError(f'codewords span {codewords.shape[-1]} resources, gains {gains.resources}')
    return complex_to_real(codewords.sum(axis=-2)) * gains.values


# ==================== CHANNEL ====================

def db_to_linear(db) -> np.ndarray:
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def ebn0_to_snr(ebn0_linear: float, config: SystemConfig) -> float:
    """SNR = (Eb/N0) * m*J/K"""
    if not ebn0_linear > 0:
        raise ConfigError(f'Eb/N0 must be positive, got {ebn0_linear}')
    return float(ebn0_linear) * config.m * config.users / config.resources


def noise_variance(signal_power: float, ebn0_linear: float, config: SystemConfig) -> float:
    """
    Per real component noise variance

    The total noise power sigma^2 = E[||y||^2] / SNR is spread evenly over
    the 2K real dimensions.
    """
    if not signal_power > 0:
        raise ConfigError(f'signal power must be positive, got {signal_power}')
    return signal_power / (ebn0_to_snr(ebn0_linear, config) * 2 * config.resources)


@dataclass(frozen=True, eq=False)
class ReceivedSignal:
    """Received real vector(s) y (2K,) or (F, 2K) with per-component noise variance"""
    samples: np.ndarray
    noise_var: float

    # argmax decisions do not depend on the variance; this keeps likelihoods finite
    NOISELESS_VARIANCE = 1e-6

    @property
    def frames(self) -> np.ndarray:
        return np.atleast_2d(self.samples)

    @property
    def detection_variance(self) -> float:
        return self.noise_var if self.noise_var > 0 else self.NOISELESS_VARIANCE


def add_awgn(clean: np.ndarray, ebn0_linear: float, config: SystemConfig,
             signal_power_estimate: float, rng: np.random.Generator,
             noise_disabled: bool = False) -> ReceivedSignal:
    """
    Add white Gaussian noise to a clean superposition

    Args:
        clean: (2K,) or (F, 2K) noiseless received vectors
        ebn0_linear: Eb/N0 as a ratio (not dB)
        config: system dimensioning
        signal_power_estimate: E[||y||^2] over the codebook ensemble
        rng: caller-owned generator
        noise_disabled: return the input unchanged (Eb/N0 -> infinity)

    Returns:
        ReceivedSignal recording the per-component variance (0 when disabled)
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.shape[-1] != 2 * config.resources:
        raise ShapeMismatchError(f'received vectors have width {clean.shape[-1]}, expected {2 * config.resources}')
    if not signal_power_estimate > 0:
        raise ConfigError(f'signal power must be positive, got {signal_power_estimate}')
    if noise_disabled:
        return ReceivedSignal(clean.copy(), 0.0)

    var = noise_variance(signal_power_estimate, ebn0_linear, config)
    noisy = clean + rng.normal(0.0, math.sqrt(var), size=clean.shape)
    return ReceivedSignal(noisy, var)


def ensemble_power(codebook: Codebook, gains: ChannelGain) -> float:
    """
    Exact E[||y||^2] for independent uniform user symbols

    Sum of per-user second moments plus the cross terms of the per-user means.
    """
    x = codebook.serialized() * gains.values
    means = x.mean(axis=1)
    second = (x ** 2).sum(axis=2).mean(axis=1)
    cross = float((means.sum(axis=0) ** 2).sum() - (means ** 2).sum())
    return float(second.sum()) + cross
