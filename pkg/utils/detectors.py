"""
Multi-user detectors

Exhaustive MAP detection and the log-domain message passing algorithm
(Log-MPA) on the SCMA factor graph, plus the closed-form complexity counts
used to compare them with the neural decoder.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from config import MAP_ENUMERATION_LIMIT
from utils.errors import (
    ConfigError,
    DetectorInternalError,
    EnumerationLimitError,
    ShapeMismatchError,
)
from utils.logger import setup_logger
from utils.scma_model import (
    ChannelGain,
    Codebook,
    FactorGraph,
    ReceivedSignal,
    SystemConfig,
    complex_to_real,
    joint_symbols,
    symbols_to_bits,
)

logger = setup_logger(__name__)


# ==================== RESULT TYPES ====================

@dataclass(frozen=True, eq=False)
class SymbolDecision:
    """
    Detected symbol indices for a batch of frames

    Args:
        symbols: (F, J) integer indices in [0, M)
        log_marginals: optional (F, J, M) per-user log-marginals, max-normalized to 0
    """
    symbols: np.ndarray
    log_marginals: Optional[np.ndarray] = None

    @property
    def frames(self) -> int:
        return self.symbols.shape[0]

    def bits(self, bits_per_symbol: int) -> np.ndarray:
        return symbols_to_bits(self.symbols, bits_per_symbol)


@dataclass(frozen=True)
class OperationCount:
    multiplications: int = 0
    additions: int = 0
    log_exp_ops: int = 0

    def __post_init__(self):
        for name in ('multiplications', 'additions', 'log_exp_ops'):
            if getattr(self, name) < 0:
                raise ConfigError(f'{name} cannot be negative')

    def __add__(self, other: 'OperationCount') -> 'OperationCount':
        return OperationCount(
            self.multiplications + other.multiplications,
            self.additions + other.additions,
            self.log_exp_ops + other.log_exp_ops,
        )

    def to_dict(self) -> dict:
        return {'mul': self.multiplications, 'add': self.additions, 'log_exp': self.log_exp_ops}


@dataclass(frozen=True)
class ComplexityWeights:
    """Cost of one operation in units of a real addition"""
    add_units: int = 1
    mul_units: int = 10
    exp_units: int = 20

    def __post_init__(self):
        if min(self.add_units, self.mul_units, self.exp_units) < 1:
            raise ConfigError('complexity weights must be positive integers')


def normalize_complexity(counts: OperationCount,
                         weights: ComplexityWeights = ComplexityWeights()) -> int:
    """Weighted sum of operation counts (additions = 1 unit by default)"""
    return (counts.additions * weights.add_units
            + counts.multiplications * weights.mul_units
            + counts.log_exp_ops * weights.exp_units)


# ==================== HELPERS ====================

def _frames(received, config: SystemConfig) -> np.ndarray:
    samples = received.samples if isinstance(received, ReceivedSignal) else received
    frames = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if frames.shape[1] != 2 * config.resources:
        raise ShapeMismatchError(
            f'received frames have width {frames.shape[1]}, expected {2 * config.resources}'
        )
    return frames


def _check_inputs(codebook: Codebook, gains: ChannelGain, noise_var: float) -> None:
    if not noise_var > 0:
        raise ConfigError(f'noise variance must be positive, got {noise_var}')
    if gains.resources != codebook.config.resources:
        raise ShapeMismatchError(
            f'gain vector covers {gains.resources} resources, codebook {codebook.config.resources}'
        )


# ==================== MAP ====================

# float64 elements per distance chunk
_MAP_CHUNK_ELEMENTS = 1 << 22


def map_detect(received, codebook: Codebook, gains: ChannelGain, noise_var: float,
               limit: int = MAP_ENUMERATION_LIMIT) -> SymbolDecision:
    """
    Exact joint MAP detection by enumerating all M^J symbol combinations

    With uniform priors and white Gaussian noise the MAP decision minimizes
    the Euclidean distance to the superposed clean signal. Ties resolve to
    the lexicographically smallest symbol vector.

    Args:
        received: ReceivedSignal or (F, 2K) / (2K,) array
        codebook: user codebooks
        gains: channel gain applied at the transmitter side of the channel
        noise_var: per real component noise variance (> 0)
        limit: maximum number of joint hypotheses

    Returns:
        SymbolDecision with (F, J) symbols
    """
    config = codebook.config
    _check_inputs(codebook, gains, noise_var)
    hypotheses = config.codebook_size ** config.users
    if hypotheses > limit:
        raise EnumerationLimitError(
            f'MAP needs {hypotheses} joint hypotheses (M={config.codebook_size}, '
            f'J={config.users}); limit is {limit}'
        )

    frames = _frames(received, config)
    table = joint_symbols(config)
    users = np.arange(config.users)
    clean = complex_to_real(codebook.codewords[users[None, :], table].sum(axis=1)) * gains.values

    chunk = max(1, _MAP_CHUNK_ELEMENTS // (hypotheses * clean.shape[1]))
    best = np.empty(frames.shape[0], dtype=np.int64)
    for start in range(0, frames.shape[0], chunk):
        block = frames[start:start + chunk]
        dist = ((block[:, None, :] - clean[None, :, :]) ** 2).sum(axis=2)
        best[start:start + chunk] = np.argmin(dist, axis=1)

    return SymbolDecision(symbols=table[best])


# ==================== LOG-MPA ====================

def _resource_likelihoods(frames: np.ndarray, codebook: Codebook, gains: ChannelGain,
                          graph: FactorGraph, noise_var: float) -> List[np.ndarray]:
    """
    Gaussian log-likelihood tensors, one per resource

    Entry [f, i_1, ..., i_d] is -|y_k - sum_u h x_u(i_u)|^2 / (2 sigma^2) for
    the d users sharing resource k.
    """
    M = codebook.config.codebook_size
    tensors = []
    for k in range(graph.resources):
        users = graph.users_on(k)
        d = len(users)
        clean = np.zeros((M,) * d, dtype=np.complex128)
        for pos, u in enumerate(users):
            shape = [1] * d
            shape[pos] = M
            clean = clean + codebook.codewords[u, :, k].reshape(shape)
        clean_re = clean.real * gains.values[2 * k]
        clean_im = clean.imag * gains.values[2 * k + 1]

        expand = (slice(None),) + (None,) * d
        dist = (frames[:, 2 * k][expand] - clean_re) ** 2 + (frames[:, 2 * k + 1][expand] - clean_im) ** 2
        tensors.append(-dist / (2.0 * noise_var))
    return tensors


def logmpa_detect(received, codebook: Codebook, gains: ChannelGain, noise_var: float,
                  iterations: int, normalize: bool = True, message_offset: float = 0.0,
                  graph: Optional[FactorGraph] = None) -> Tuple[SymbolDecision, OperationCount]:
    """
    Iterative sum-product detection in the log domain

    Messages start uniform (all zero). Each iteration updates every
    resource-to-user message with an exact log-sum-exp over the other users
    on that resource, then every user-to-resource message as the sum of the
    user's other incoming messages. The decision is the argmax of the final
    log-marginal.

    Args:
        received: ReceivedSignal or (F, 2K) / (2K,) array
        codebook: user codebooks
        gains: channel gain vector
        noise_var: per real component noise variance (> 0)
        iterations: number of message passing rounds (>= 1)
        normalize: subtract the per-message max from user-to-resource messages
        message_offset: constant added to every user-to-resource message
        graph: factor graph; must match the codebook supports when given

    Returns:
        (SymbolDecision with log-marginals, per-frame cost from count_graph_ops)
    """
    config = codebook.config
    _check_inputs(codebook, gains, noise_var)
    if iterations < 1:
        raise ConfigError(f'iterations must be >= 1, got {iterations}')
    if graph is None:
        graph = codebook.graph()
    else:
        codebook.check_graph(graph)

    frames = _frames(received, config)
    F, M = frames.shape[0], config.codebook_size

    likelihoods = _resource_likelihoods(frames, codebook, gains, graph, noise_var)
    resource_users = [graph.users_on(k) for k in range(graph.resources)]
    # user j -> list of (resource, position of j among that resource's users)
    edges = [[(k, users.index(j)) for k, users in enumerate(resource_users) if j in users]
             for j in range(config.users)]

    to_user = [[np.zeros((F, M)) for _ in users] for users in resource_users]
    to_resource = [[np.full((F, M), float(message_offset)) for _ in users] for users in resource_users]

    for _ in range(iterations):
        # resource (function) node update
        for k, users in enumerate(resource_users):
            d = len(users)
            total = likelihoods[k]
            for pos in range(d):
                total = total + _along(to_resource[k][pos], pos, d)
            for pos in range(d):
                others = tuple(1 + q for q in range(d) if q != pos)
                excl = total - _along(to_resource[k][pos], pos, d)
                msg = logsumexp(excl, axis=others) if others else excl
                to_user[k][pos] = msg
            _check_finite(to_user[k], f'resource {k}')

        # user (variable) node update
        for j, user_edges in enumerate(edges):
            belief = sum(to_user[k][pos] for k, pos in user_edges)
            for k, pos in user_edges:
                msg = belief - to_user[k][pos]
                if normalize:
                    msg = msg - msg.max(axis=1, keepdims=True)
                to_resource[k][pos] = msg + message_offset
            _check_finite([to_resource[k][pos] for k, pos in user_edges], f'user {j}')

    marginals = np.stack(
        [sum(to_user[k][pos] for k, pos in user_edges) for user_edges in edges], axis=1
    )
    marginals = marginals - marginals.max(axis=2, keepdims=True)

    decision = SymbolDecision(symbols=np.argmax(marginals, axis=2), log_marginals=marginals)
    logger.debug(f'Log-MPA: {F} frames, {iterations} iterations')
    return decision, count_graph_ops(graph, M, iterations)


def _along(message: np.ndarray, pos: int, degree: int) -> np.ndarray:
    """Broadcast an (F, M) message onto axis pos of an (F, M, ..., M) tensor"""
    shape = [message.shape[0]] + [1] * degree
    shape[1 + pos] = message.shape[1]
    return message.reshape(shape)


def _check_finite(messages, where: str) -> None:
    for msg in messages:
        if not np.isfinite(msg).all():
            raise DetectorInternalError(f'non-finite message at {where}')


# ==================== CLOSED-FORM COUNTS ====================

def count_graph_ops(graph: FactorGraph, codebook_size: int, iterations: int) -> OperationCount:
    """
    Log-MPA cost model summed node by node over a factor graph

    This is the reference cost model, not a trace of the numpy work: it
    charges squared distances per edge, while the kernel shares one distance
    tensor per resource. Per frame, a resource carrying d users charges
      distances   mul d*M^d*4d + 5dM, add d*M^d*(4d - 2) + 5dM
      each round  add d*(2M^d + M^(d-1)), log/exp d*(M^d + M)
    a user on n resources charges add M*(2n - 1) per round, and the final
    decision one log/exp. On a regular graph the sum equals count_logmpa_ops.
    """
    if iterations < 1:
        raise ConfigError(f'iterations must be >= 1, got {iterations}')
    M = codebook_size
    mul = add = log_exp = 0
    for k in range(graph.resources):
        d = len(graph.users_on(k))
        if d == 0:
            continue
        mul += d * M ** d * 4 * d + 5 * d * M
        add += d * M ** d * (4 * d - 2) + 5 * d * M
        add += iterations * d * (2 * M ** d + M ** (d - 1))
        log_exp += iterations * d * (M ** d + M)
    for n in graph.column_weights():
        if n:
            add += iterations * M * (2 * int(n) - 1)
    return OperationCount(mul, add, log_exp + 1)


def count_logmpa_ops(config: SystemConfig, iterations: int) -> OperationCount:
    """
    Closed-form Log-MPA operation counts per detected frame

    Valid for regular graphs where every resource carries d_f = J*N/K users.

    Args:
        config: system dimensioning
        iterations: message passing rounds I_t

    Returns:
        OperationCount
    """
    M, K, N = config.codebook_size, config.resources, config.nonzero_per_codeword
    d = Fraction(config.users * N, K)
    if d.denominator != 1:
        raise ConfigError(f'closed form needs an integer overlap degree, got d_f={d}')
    d = int(d)
    I = iterations
    base = M * K * d
    spread = M ** (d - 1)

    mul = base * (4 * d * spread + 5)
    add = base * (spread * (4 * d - 2 + I * (2 + Fraction(1, M))) + I * (2 - Fraction(1, N)) + 5)
    log_exp = base * I * (spread + 1) + 1
    if add.denominator != 1:
        raise ConfigError(f'closed form addition count is not integral for {config}')
    return OperationCount(int(mul), int(add), int(log_exp))


def count_dnn_ops(hidden_width: int, hidden_layers: int, resources: int, users: int) -> OperationCount:
    """
    Closed-form operation counts of the neural decoder

    mul = N_HN (2K + N_L N_HN + 2J), add = N_HN (N_L - 1) + 2J, no log/exp.
    """
    if min(hidden_width, hidden_layers, resources, users) < 0:
        raise ConfigError('layer sizes cannot be negative')
    mul = hidden_width * (2 * resources + hidden_layers * hidden_width + 2 * users)
    add = hidden_width * (hidden_layers - 1) + 2 * users
    return OperationCount(mul, max(add, 0), 0)
