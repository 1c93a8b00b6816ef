"""
Small dense neural-network engine

Dense layers with tanh / sigmoid / relu / identity activations, batch
normalization, binary cross-entropy, exact reverse-mode gradients, Adam and
plain gradient descent, and finite-difference gradient checking. Everything
runs in float64 on numpy arrays.

Parameter dictionaries are keyed 'layer{i}.W', 'layer{i}.b', 'layer{i}.gamma'
and 'layer{i}.beta'. The arrays are the layers' own storage, so optimizer
steps update the network in place.
"""

import copy
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from utils.errors import (
    BatchSizeError,
    ConfigError,
    MissingForwardStateError,
    ShapeMismatchError,
)
from utils.logger import setup_logger

logger = setup_logger(__name__)

PROBABILITY_FLOOR = 1e-12


# ==================== ACTIVATIONS ====================

# (function, derivative expressed through the activation output)
ACTIVATIONS: Dict[str, Tuple[Callable, Callable]] = {
    'tanh': (np.tanh, lambda y: 1.0 - y * y),
    'sigmoid': (expit, lambda y: y * (1.0 - y)),
    'relu': (lambda a: np.maximum(a, 0.0), lambda y: (y > 0).astype(np.float64)),
    'identity': (lambda a: a, lambda y: np.ones_like(y)),
}


def xavier_init(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    """
    Xavier weights: uniform on +-sqrt(6/(n_in+n_out)), variance 2/(n_in+n_out)

    Args:
        n_in: fan-in
        n_out: fan-out
        rng: random generator

    Returns:
        (n_in, n_out) float64 matrix
    """
    if n_in < 1 or n_out < 1:
        raise ConfigError(f'layer widths must be >= 1, got {n_in}x{n_out}')
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


# ==================== LAYERS ====================

class DenseLayer:
    """y = activation(x W + b)"""

    def __init__(self, weights: np.ndarray, biases: np.ndarray, activation: str = 'tanh'):
        if activation not in ACTIVATIONS:
            raise ConfigError(f'unknown activation {activation!r}')
        weights = np.array(weights, dtype=np.float64)
        biases = np.array(biases, dtype=np.float64)
        if weights.ndim != 2 or biases.shape != (weights.shape[1],):
            raise ShapeMismatchError(f'weights {weights.shape} and biases {biases.shape} do not agree')
        if not (np.isfinite(weights).all() and np.isfinite(biases).all()):
            raise ConfigError('layer parameters must be finite')
        self.W = weights
        self.b = biases
        self.activation = activation

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    momentum: float = 0.99

    def __post_init__(self):
        self.gamma = np.array(self.gamma, dtype=np.float64)
        self.beta = np.array(self.beta, dtype=np.float64)
        width = self.gamma.shape[0]
        if self.beta.shape != self.gamma.shape:
            raise ShapeMismatchError('gamma and beta must have the same shape')
        if not self.eps > 0:
            raise ConfigError(f'batch-norm epsilon must be positive, got {self.eps}')
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f'momentum must lie in [0, 1), got {self.momentum}')
        self.running_mean = (np.zeros(width) if self.running_mean is None
                             else np.array(self.running_mean, dtype=np.float64))
        self.running_var = (np.ones(width) if self.running_var is None
                            else np.array(self.running_var, dtype=np.float64))
        if (self.running_var < 0).any():
            raise ConfigError('running variance cannot be negative')

    @classmethod
    def fresh(cls, width: int, eps: float = 1e-5, momentum: float = 0.99) -> 'BatchNormState':
        return cls(gamma=np.ones(width), beta=np.zeros(width), eps=eps, momentum=momentum)


def update_running_stats(bn: BatchNormState, batch_mean: np.ndarray,
                         batch_var: np.ndarray) -> BatchNormState:
    """running <- momentum * running + (1 - momentum) * batch, in place"""
    bn.running_mean *= bn.momentum
    bn.running_mean += (1.0 - bn.momentum) * batch_mean
    bn.running_var *= bn.momentum
    bn.running_var += (1.0 - bn.momentum) * batch_var
    return bn


# ==================== NETWORK ====================

@dataclass
class _LayerCache:
    inputs: np.ndarray
    outputs: np.ndarray
    normalized: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None


class Network:
    """Ordered stack of dense layers, each optionally batch-normalized before its activation"""

    def __init__(self, layers: Sequence[DenseLayer], norms: Optional[Sequence[Optional[BatchNormState]]] = None):
        if not layers:
            raise ConfigError('a network needs at least one layer')
        norms = list(norms) if norms is not None else [None] * len(layers)
        if len(norms) != len(layers):
            raise ConfigError('one batch-norm slot per layer is required')
        for prev, nxt in zip(layers, layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeMismatchError(f'layer widths do not chain: {prev.n_out} -> {nxt.n_in}')
        for layer, bn in zip(layers, norms):
            if bn is not None and bn.gamma.shape[0] != layer.n_out:
                raise ShapeMismatchError('batch-norm width differs from its layer width')
        self.layers = list(layers)
        self.norms = norms
        self._cache: Optional[List[_LayerCache]] = None

    @property
    def input_width(self) -> int:
        return self.layers[0].n_in

    @property
    def output_width(self) -> int:
        return self.layers[-1].n_out

    @property
    def has_batch_norm(self) -> bool:
        return any(bn is not None for bn in self.norms)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for i, (layer, bn) in enumerate(zip(self.layers, self.norms)):
            params[f'layer{i}.W'] = layer.W
            params[f'layer{i}.b'] = layer.b
            if bn is not None:
                params[f'layer{i}.gamma'] = bn.gamma
                params[f'layer{i}.beta'] = bn.beta
        return params

    def forward(self, x: np.ndarray, mode: str = 'infer', update_stats: bool = True) -> np.ndarray:
        """
        Run the network on a batch

        Args:
            x: (batch, input_width) inputs
            mode: 'train' normalizes with batch statistics and retains the
                activations for backward(); 'infer' uses running statistics
            update_stats: in train mode, fold batch statistics into the
                running averages

        Returns:
            (batch, output_width) outputs
        """
        if mode not in ('train', 'infer'):
            raise ConfigError(f'mode must be train or infer, got {mode!r}')
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeMismatchError(f'input shape {x.shape}, network expects (batch, {self.input_width})')
        train = mode == 'train'
        if train and self.has_batch_norm and x.shape[0] < 2:
            raise BatchSizeError(f'batch normalization needs at least 2 rows in train mode, got {x.shape[0]}')

        cache = []
        for layer, bn in zip(self.layers, self.norms):
            z = x @ layer.W + layer.b
            normalized = inv_std = None
            if bn is not None:
                if train:
                    mean, var = z.mean(axis=0), z.var(axis=0)
                    if update_stats:
                        update_running_stats(bn, mean, var)
                else:
                    mean, var = bn.running_mean, bn.running_var
                inv_std = 1.0 / np.sqrt(var + bn.eps)
                normalized = (z - mean) * inv_std
                z = bn.gamma * normalized + bn.beta
            y = ACTIVATIONS[layer.activation][0](z)
            cache.append(_LayerCache(inputs=x, outputs=y, normalized=normalized, inv_std=inv_std))
            x = y

        self._cache = cache if train else None
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Infer-mode forward pass that leaves no retained state"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeMismatchError(f'input shape {x.shape}, network expects (batch, {self.input_width})')
        for layer, bn in zip(self.layers, self.norms):
            z = x @ layer.W + layer.b
            if bn is not None:
                # same expression order as forward() so both paths agree bit for bit
                inv_std = 1.0 / np.sqrt(bn.running_var + bn.eps)
                z = bn.gamma * ((z - bn.running_mean) * inv_std) + bn.beta
            x = ACTIVATIONS[layer.activation][0](z)
        return x

    def backward(self, grad_output: np.ndarray,
                 through_activation: bool = True) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        """
        Reverse-mode gradients of the last train-mode forward pass

        Args:
            grad_output: dLoss/d(output), or dLoss/d(pre-activation of the
                last layer) when through_activation is False
            through_activation: apply the last layer's activation derivative

        Returns:
            (gradients keyed like parameters(), dLoss/d(input))
        """
        if self._cache is None:
            raise MissingForwardStateError('backward() needs a retained train-mode forward pass')
        grad = np.asarray(grad_output, dtype=np.float64)
        if grad.shape != self._cache[-1].outputs.shape:
            raise ShapeMismatchError(f'gradient shape {grad.shape} != output shape {self._cache[-1].outputs.shape}')

        grads = {}
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            layer, bn, c = self.layers[i], self.norms[i], self._cache[i]
            if i == last and not through_activation:
                da = grad
            else:
                da = grad * ACTIVATIONS[layer.activation][1](c.outputs)

            if bn is not None:
                n = da.shape[0]
                grads[f'layer{i}.gamma'] = (da * c.normalized).sum(axis=0)
                grads[f'layer{i}.beta'] = da.sum(axis=0)
                dxhat = da * bn.gamma
                dz = (c.inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                        - c.normalized * (dxhat * c.normalized).sum(axis=0))
            else:
                dz = da

            grads[f'layer{i}.W'] = c.inputs.T @ dz
            grads[f'layer{i}.b'] = dz.sum(axis=0)
            grad = dz @ layer.W.T

        return grads, grad

    def describe(self) -> List[Dict]:
        """Architecture descriptor, one entry per layer"""
        out = []
        for layer, bn in zip(self.layers, self.norms):
            entry = {'n_in': layer.n_in, 'n_out': layer.n_out, 'activation': layer.activation,
                     'batch_norm': bn is not None}
            if bn is not None:
                entry['eps'] = bn.eps
                entry['momentum'] = bn.momentum
            out.append(entry)
        return out

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """All stored arrays, parameters and running statistics, in a fixed order"""
        arrays = []
        for i, (layer, bn) in enumerate(zip(self.layers, self.norms)):
            arrays.append((f'layer{i}.W', layer.W))
            arrays.append((f'layer{i}.b', layer.b))
            if bn is not None:
                arrays.append((f'layer{i}.gamma', bn.gamma))
                arrays.append((f'layer{i}.beta', bn.beta))
                arrays.append((f'layer{i}.running_mean', bn.running_mean))
                arrays.append((f'layer{i}.running_var', bn.running_var))
        return arrays

    @classmethod
    def from_description(cls, description: Sequence[Dict], arrays: Dict[str, np.ndarray]) -> 'Network':
        layers, norms = [], []
        for i, entry in enumerate(description):
            layers.append(DenseLayer(arrays[f'layer{i}.W'], arrays[f'layer{i}.b'], entry['activation']))
            if entry.get('batch_norm'):
                norms.append(BatchNormState(
                    gamma=arrays[f'layer{i}.gamma'],
                    beta=arrays[f'layer{i}.beta'],
                    eps=entry['eps'],
                    running_mean=arrays[f'layer{i}.running_mean'],
                    running_var=arrays[f'layer{i}.running_var'],
                    momentum=entry['momentum'],
                ))
            else:
                norms.append(None)
        return cls(layers, norms)

    def snapshot(self) -> 'Network':
        """Independent deep copy without retained activations"""
        clone = copy.deepcopy(self)
        clone._cache = None
        return clone


def build_network(widths: Sequence[int], hidden_activation: str = 'tanh',
                  output_activation: str = 'sigmoid', batch_norm: bool = True,
                  rng: Optional[np.random.Generator] = None,
                  eps: float = 1e-5, momentum: float = 0.99) -> Network:
    """
    Xavier-initialized network with zero biases

    Args:
        widths: [input, hidden..., output]
        hidden_activation: activation of every hidden layer
        output_activation: activation of the last layer
        batch_norm: batch-normalize hidden layers (never the output layer)
        rng: random generator for the weights

    Returns:
        Network
    """
    if len(widths) < 2:
        raise ConfigError('widths need an input and an output size')
    rng = rng if rng is not None else np.random.default_rng()
    layers, norms = [], []
    for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        hidden = i < len(widths) - 2
        layers.append(DenseLayer(xavier_init(n_in, n_out, rng), np.zeros(n_out),
                                 hidden_activation if hidden else output_activation))
        norms.append(BatchNormState.fresh(n_out, eps, momentum) if hidden and batch_norm else None)
    return Network(layers, norms)


# ==================== LOSS ====================

def cross_entropy(targets: np.ndarray, probs: np.ndarray, floor: float = PROBABILITY_FLOOR) -> float:
    """
    Binary cross-entropy summed over outputs and averaged over the batch

    Each output is an independent bit: -t log p - (1 - t) log(1 - p).
    """
    targets = np.asarray(targets, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if targets.shape != probs.shape:
        raise ShapeMismatchError(f'targets {targets.shape} and probabilities {probs.shape} differ')
    p = np.clip(probs, floor, 1.0 - floor)
    loss = -(targets * np.log(p) + (1.0 - targets) * np.log1p(-p))
    return float(np.atleast_2d(loss).sum(axis=1).mean())


def cross_entropy_grad(targets: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """dLoss/d(pre-activation) for sigmoid outputs: (p - t) / batch"""
    targets = np.asarray(targets, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if targets.shape != probs.shape:
        raise ShapeMismatchError(f'targets {targets.shape} and probabilities {probs.shape} differ')
    return (probs - targets) / probs.shape[0]


def backward(net: Network, targets: np.ndarray) -> Dict[str, np.ndarray]:
    """Parameter gradients of the cross-entropy loss for the retained forward pass"""
    if net._cache is None:
        raise MissingForwardStateError('backward() needs a retained train-mode forward pass')
    probs = net._cache[-1].outputs
    if net.layers[-1].activation == 'sigmoid':
        grads, _ = net.backward(cross_entropy_grad(targets, probs), through_activation=False)
    else:
        p = np.clip(probs, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
        t = np.asarray(targets, dtype=np.float64)
        grads, _ = net.backward((p - t) / (p * (1.0 - p)) / p.shape[0])
    return grads


# ==================== OPTIMIZERS ====================

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def _check_matching(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name not in params:
            raise ShapeMismatchError(f'gradient for unknown parameter {name}')
        if params[name].shape != np.shape(g):
            raise ShapeMismatchError(f'{name}: parameter {params[name].shape} vs gradient {np.shape(g)}')


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> Dict[str, np.ndarray]:
    """Bias-corrected Adam update applied in place"""
    _check_matching(params, grads)
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        m = state.first_moment.setdefault(name, np.zeros_like(params[name]))
        v = state.second_moment.setdefault(name, np.zeros_like(params[name]))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> Dict[str, np.ndarray]:
    """theta <- theta - lr * dL/dtheta, in place"""
    _check_matching(params, grads)
    for name, g in grads.items():
        params[name] -= lr * g
    return params


# ==================== GRADIENT CHECK ====================

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: Tuple[int, ...]
    checked: int

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance

    def __str__(self):
        return (f'max rel. error {self.max_rel_error:.3e} at {self.worst_param}{list(self.worst_index)} '
                f'({self.checked} entries checked)')


# denominators below this are treated as this
_REL_ERROR_FLOOR = 1e-5


def compare_gradients(params: Dict[str, np.ndarray], analytic: Dict[str, np.ndarray],
                      loss_fn: Callable[[], float], eps: float = 1e-5) -> GradCheckReport:
    """
    Compare analytic gradients with central finite differences

    Each parameter entry is perturbed in place by +-eps and restored.

    Args:
        params: parameter arrays read by loss_fn
        analytic: gradients with the same keys
        loss_fn: evaluates the loss at the current parameter values
        eps: perturbation step in [1e-7, 1e-3]

    Returns:
        GradCheckReport naming the worst entry
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f'finite-difference step must lie in [1e-7, 1e-3], got {eps}')
    _check_matching(params, analytic)

    worst = (0.0, '', ())
    checked = 0
    for name in sorted(analytic):
        theta = params[name]
        for index in np.ndindex(theta.shape):
            saved = theta[index]
            theta[index] = saved + eps
            plus = loss_fn()
            theta[index] = saved - eps
            minus = loss_fn()
            theta[index] = saved

            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic[name][index])
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), _REL_ERROR_FLOOR)
            checked += 1
            if rel > worst[0] or not worst[1]:
                worst = (rel, name, tuple(int(i) for i in index))

    return GradCheckReport(max_rel_error=worst[0], worst_param=worst[1],
                           worst_index=worst[2], checked=checked)


def grad_check(net: Network, batch: np.ndarray, targets: np.ndarray, eps: float = 1e-5,
               analytic: Optional[Dict[str, np.ndarray]] = None) -> GradCheckReport:
    """
    Finite-difference check of backward() on one batch

    Forward passes run in train mode without touching the running statistics.
    Pass analytic to check a given gradient dictionary instead of backward().
    """
    params = net.parameters()

    def loss_fn():
        return cross_entropy(targets, net.forward(batch, mode='train', update_stats=False))

    if analytic is None:
        net.forward(batch, mode='train', update_stats=False)
        analytic = backward(net, targets)
    report = compare_gradients(params, analytic, loss_fn, eps)
    logger.debug(f'Gradient check: {report}')
    return report
