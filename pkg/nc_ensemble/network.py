"""A small dense feed-forward network engine: deterministic initialization, a softmax forward
pass, cross-entropy loss, exact backpropagation and SGD with classical momentum.

All arithmetic is float64. Every function here is pure: parameters, caches and gradients are
never modified in place, so values can be shared between threads.
"""

from __future__ import annotations

from logging import getLogger
from numbers import Integral
from typing import Any, Optional
from collections.abc import Iterator, Sequence

import numpy as np
from attr import define, field, frozen

from nc_ensemble.errors import ConfigurationError, NumericInputError, ReportFormatError, ShapeError

ACTIVATIONS = ('relu', 'tanh')
FORMAT_VERSION = 1
# Lower clamp for probabilities inside the log of the cross-entropy loss
LOG_EPSILON = 1e-12
CERTAIN_PROBABILITY = 1 - 1e-15

logger = getLogger(__name__)


def is_integer(value: Any) -> bool:
    """Check for a true integer: integral floats and bools don't count"""
    return isinstance(value, Integral) and not isinstance(value, bool)


def _positive(instance, attribute, value):
    if not value > 0:
        raise ConfigurationError(f'must be positive, got {value}', field=attribute.name)


def _at_least_one(instance, attribute, value):
    if not is_integer(value) or value < 1:
        raise ConfigurationError(f'must be an integer >= 1, got {value}', field=attribute.name)


def _non_negative_int(instance, attribute, value):
    if not is_integer(value) or value < 0:
        raise ConfigurationError(f'must be an integer >= 0, got {value}', field=attribute.name)


def _momentum_range(instance, attribute, value):
    if not 0 <= value < 1:
        raise ConfigurationError(f'must be in [0, 1), got {value}', field=attribute.name)


@frozen
class SgdConfig:
    """Optimizer settings shared by every ensemble member"""

    learning_rate: float = field(default=0.05, converter=float, validator=_positive)
    momentum: float = field(default=0.9, converter=float, validator=_momentum_range)
    epochs: int = field(default=30, validator=_non_negative_int)
    batch_size: int = field(default=32, validator=_at_least_one)

    def to_dict(self) -> dict[str, Any]:
        return {
            'lr': self.learning_rate,
            'momentum': self.momentum,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SgdConfig:
        return cls(
            learning_rate=data['lr'],
            momentum=data['momentum'],
            epochs=data['epochs'],
            batch_size=data['batch_size'],
        )


@define(frozen=True, eq=False)
class NetworkParams:
    """Weights and biases of a multilayer perceptron.

    ``weights[l]`` has shape ``(layer_sizes[l + 1], layer_sizes[l])`` and ``biases[l]`` has length
    ``layer_sizes[l + 1]``. The last layer feeds a softmax over ``layer_sizes[-1]`` classes.
    """

    layer_sizes: tuple[int, ...] = field(converter=tuple)
    activation: str = field()
    weights: list[np.ndarray] = field(converter=list)
    biases: list[np.ndarray] = field(converter=list)

    def __attrs_post_init__(self):
        _check_layer_sizes(self.layer_sizes)
        _check_activation(self.activation)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError(
                f'Expected {len(self.layer_sizes) - 1} layers, got {len(self.weights)} weight '
                f'matrices and {len(self.biases)} bias vectors'
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise ShapeError(
                    f'Layer {i}: expected weights {expected} and biases ({expected[0]},), '
                    f'got {w.shape} and {b.shape}'
                )

    def __eq__(self, other: object) -> bool:
        """Exact (bitwise) equality of architecture and every parameter"""
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.activation == other.activation
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> Iterator[np.ndarray]:
        """Iterate over all parameter arrays, weights and biases interleaved per layer"""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def to_dict(self) -> dict[str, Any]:
        return {
            'version': FORMAT_VERSION,
            'layer_sizes': list(self.layer_sizes),
            'activation': self.activation,
            'weights': [w.tolist() for w in self.weights],
            'biases': [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> NetworkParams:
        if data.get('version') != FORMAT_VERSION:
            raise ReportFormatError(f'Unsupported network format version: {data.get("version")}')
        try:
            params = cls(
                layer_sizes=[int(n) for n in data['layer_sizes']],
                activation=data['activation'],
                weights=[np.array(w, dtype=np.float64, ndmin=2) for w in data['weights']],
                biases=[np.array(b, dtype=np.float64, ndmin=1) for b in data['biases']],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ReportFormatError(f'Malformed network parameters: {e}') from e
        if not all(np.isfinite(a).all() for a in params.arrays()):
            raise ReportFormatError('Network parameters contain non-finite values')
        return params


@define(frozen=True, eq=False)
class ParamGrads:
    """Per-layer arrays with the same shapes as a :py:class:`NetworkParams`; used for both
    gradients and momentum buffers
    """

    weights: list[np.ndarray] = field(converter=list)
    biases: list[np.ndarray] = field(converter=list)

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> ParamGrads:
        return cls(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
        )

    def arrays(self) -> Iterator[np.ndarray]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


@define(frozen=True, eq=False)
class ForwardCache:
    """Everything :py:func:`backward` needs from a forward pass over one minibatch.

    ``activations[l]`` is the input to layer ``l`` (so ``activations[0]`` is the batch itself),
    and ``pre_activations[l]`` is that layer's affine output.
    """

    activations: list[np.ndarray]
    pre_activations: list[np.ndarray]
    probs: np.ndarray


def init_params(layer_sizes: Sequence[int], activation: str = 'relu', seed: int = 0) -> NetworkParams:
    """Create a network with weights drawn uniformly from ``±sqrt(6 / (fan_in + fan_out))`` and
    zero biases. The same ``(layer_sizes, activation, seed)`` always gives bit-identical params.
    """
    _check_layer_sizes(layer_sizes)
    _check_activation(activation)
    if not is_integer(seed) or seed < 0:
        raise ConfigurationError(f'must be a non-negative integer, got {seed}', field='seed')

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))

    logger.debug(f'Initialized {activation} network {list(layer_sizes)} with seed {seed}')
    return NetworkParams(layer_sizes, activation, weights, biases)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, with max-subtraction so large logits cannot overflow"""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise ShapeError(f'Expected at least one logit, got shape {z.shape}')
    if not np.isfinite(z).all():
        raise NumericInputError('Logits must be finite')
    shifted = np.exp(z - z.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Cross-entropy of one probability vector against a class index, ``-ln(max(p, 1e-12))``"""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f'Label {label} out of range for {probs.shape[-1]} classes')
    p = float(probs[label])
    if p >= CERTAIN_PROBABILITY:
        return 0.0
    return -float(np.log(max(p, LOG_EPSILON)))


def forward(params: NetworkParams, batch: np.ndarray) -> ForwardCache:
    """Run a batch (rows are samples) through the network, keeping intermediates for backprop"""
    x = _as_batch(batch)
    if x.shape[1] != params.input_dim:
        raise ShapeError(f'Batch has {x.shape[1]} features; network expects {params.input_dim}')

    activations, pre_activations = [x], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = activations[-1] @ w.T + b
        pre_activations.append(z)
        if i < last:
            activations.append(_activate(params.activation, z))
    return ForwardCache(activations, pre_activations, softmax(pre_activations[-1]))


def backward(
    params: NetworkParams,
    cache: ForwardCache,
    labels: Sequence[int] | np.ndarray,
    extra_prob_grad: Optional[np.ndarray] = None,
) -> ParamGrads:
    """Gradients of ``mean_b [CE(p_b, y_b) + <g_b, p_b>]`` with respect to all parameters, where
    ``g = extra_prob_grad`` is treated as a constant (the linear probability-output term used for
    the diversity penalty). Uses the exact chain rule through the softmax.
    """
    probs = cache.probs
    n_samples, n_classes = probs.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n_samples,):
        raise ShapeError(f'Expected {n_samples} labels, got shape {labels.shape}')
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f'Labels must be in [0, {n_classes})')

    # Softmax + cross-entropy: dL/dz = p - onehot(y)
    delta = probs.copy()
    delta[np.arange(n_samples), labels] -= 1.0
    if extra_prob_grad is not None:
        g = np.asarray(extra_prob_grad, dtype=np.float64)
        if g.shape != probs.shape:
            raise ShapeError(f'extra_prob_grad shape {g.shape} != probs shape {probs.shape}')
        # Softmax Jacobian-vector product: p * (g - <g, p>)
        delta += probs * (g - np.sum(g * probs, axis=1, keepdims=True))
    delta /= n_samples

    n_layers = len(params.weights)
    grad_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * n_layers
    for i in reversed(range(n_layers)):
        grad_w[i] = delta.T @ cache.activations[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * _activation_grad(
                params.activation, cache.pre_activations[i - 1], cache.activations[i]
            )
    return ParamGrads(grad_w, grad_b)


def sgd_step(
    params: NetworkParams,
    grads: ParamGrads,
    velocity: Optional[ParamGrads],
    cfg: SgdConfig,
) -> tuple[NetworkParams, ParamGrads]:
    """One SGD step with classical momentum: ``v <- momentum * v + g; theta <- theta - lr * v``.
    A missing ``velocity`` starts from zero.
    """
    velocity = velocity or ParamGrads.zeros_like(params)
    if len(grads.weights) != len(params.weights):
        raise ShapeError('Gradient layer count does not match network')

    new_v = ParamGrads(
        [cfg.momentum * v + g for v, g in zip(velocity.weights, grads.weights)],
        [cfg.momentum * v + g for v, g in zip(velocity.biases, grads.biases)],
    )
    for p, v in zip(params.arrays(), new_v.arrays()):
        if p.shape != v.shape:
            raise ShapeError(f'Gradient shape {v.shape} != parameter shape {p.shape}')

    new_params = NetworkParams(
        params.layer_sizes,
        params.activation,
        [w - cfg.learning_rate * v for w, v in zip(params.weights, new_v.weights)],
        [b - cfg.learning_rate * v for b, v in zip(params.biases, new_v.biases)],
    )
    return new_params, new_v


def _as_batch(batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ShapeError(f'Expected a 2-D batch, got shape {x.shape}')
    return x


def _activate(activation: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == 'relu' else np.tanh(z)


def _activation_grad(activation: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if activation == 'relu':
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _check_layer_sizes(layer_sizes: Sequence[int]):
    if len(layer_sizes) < 2:
        raise ConfigurationError(
            f'needs at least an input and an output size, got {list(layer_sizes)}',
            field='layer_sizes',
        )
    if any(not is_integer(n) or n < 1 for n in layer_sizes):
        raise ConfigurationError(
            f'all sizes must be integers >= 1, got {list(layer_sizes)}', field='layer_sizes'
        )


def _check_activation(activation: str):
    if activation not in ACTIVATIONS:
        raise ConfigurationError(
            f'must be one of {ACTIVATIONS}, got {activation!r}', field='activation'
        )
