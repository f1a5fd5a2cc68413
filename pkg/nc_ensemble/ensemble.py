"""Ensembles of small networks trained with Negative Correlation (NC) diversity regularization.

Each member ``i`` minimizes ``E_i = CE(y, h_i(x)) + lambda * div(h_i(x); h_1..h_M)`` where

    div(h_i; h_1..h_M) = (h_i - h_bar) . sum_{j != i} (h_j - h_bar)

and ``h_bar`` is the mean of the member softmax outputs. Per minibatch, every member runs forward
first, then ``h_bar`` is frozen and each member backpropagates its own ``E_i`` and takes one SGD
step. Predictions are the mean of member probabilities. With ``lambda = 0`` this is a plain
("pure") deep ensemble of independently trained networks.
"""

from __future__ import annotations

from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from logging import getLogger
from typing import Any, Callable, Optional, TypeVar
from collections.abc import Iterable, Sequence

import numpy as np
from attr import define, field, frozen

from nc_ensemble.calibration import DEFAULT_BINS, evaluate
from nc_ensemble.data import Dataset, minibatches
from nc_ensemble.errors import ConfigurationError, ReportFormatError, ShapeError
from nc_ensemble.network import (
    CERTAIN_PROBABILITY,
    LOG_EPSILON,
    NetworkParams,
    ParamGrads,
    SgdConfig,
    backward,
    cross_entropy,
    forward,
    init_params,
    is_integer,
    sgd_step,
)

FORMAT_VERSION = 1
T = TypeVar('T')
R = TypeVar('R')

logger = getLogger(__name__)


@frozen
class EnsembleConfig:
    """Member count, NC strength, optimizer settings, and seeds for an ensemble.

    Args:
        member_count: Number of member networks ``M``
        nc_lambda: NC regularization strength; 0 gives a pure ensemble
        sgd: Optimizer settings shared by all members
        member_seeds: One distinct init seed per member
        shuffle_seed: Minibatch order for epoch ``e`` uses seed ``shuffle_seed + e``; all members
            see the same order
        workers: Threads for per-member work; results do not depend on this
    """

    member_count: int = field()
    nc_lambda: float = field(converter=float)
    sgd: SgdConfig = field(factory=SgdConfig)
    member_seeds: tuple[int, ...] = field(factory=tuple, converter=lambda s: tuple(int(x) for x in s))
    shuffle_seed: int = field(default=0)
    workers: int = field(default=1, eq=False)

    def __attrs_post_init__(self):
        if not is_integer(self.member_count) or self.member_count < 1:
            raise ConfigurationError(f'must be >= 1, got {self.member_count}', field='M')
        if not self.nc_lambda >= 0:
            raise ConfigurationError(f'must be >= 0, got {self.nc_lambda}', field='lambda')
        if len(self.member_seeds) != self.member_count:
            raise ConfigurationError(
                f'expected {self.member_count} seeds, got {len(self.member_seeds)}',
                field='member_seeds',
            )
        if len(set(self.member_seeds)) != len(self.member_seeds):
            raise ConfigurationError('seeds must be pairwise distinct', field='member_seeds')
        if self.workers < 1:
            raise ConfigurationError(f'must be >= 1, got {self.workers}', field='workers')

    @classmethod
    def from_seed(
        cls,
        member_count: int,
        nc_lambda: float,
        sgd: SgdConfig | None = None,
        seed: int = 0,
        workers: int = 1,
    ) -> EnsembleConfig:
        """Derive distinct member seeds from one run seed via :py:class:`numpy.random.SeedSequence`"""
        if not is_integer(seed) or seed < 0:
            raise ConfigurationError(f'must be >= 0, got {seed}', field='seed')
        if not is_integer(member_count) or member_count < 1:
            raise ConfigurationError(f'must be >= 1, got {member_count}', field='M')
        state = np.random.SeedSequence(seed).generate_state(member_count, dtype=np.uint64)
        return cls(
            member_count=member_count,
            nc_lambda=nc_lambda,
            sgd=sgd or SgdConfig(),
            member_seeds=[int(s) for s in state],
            shuffle_seed=seed,
            workers=workers,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            'M': self.member_count,
            'lambda': self.nc_lambda,
            'sgd': self.sgd.to_dict(),
            'member_seeds': list(self.member_seeds),
            'shuffle_seed': self.shuffle_seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], workers: int = 1) -> EnsembleConfig:
        return cls(
            member_count=data['M'],
            nc_lambda=data['lambda'],
            sgd=SgdConfig.from_dict(data['sgd']),
            member_seeds=data['member_seeds'],
            shuffle_seed=data.get('shuffle_seed', 0),
            workers=workers,
        )


@define(frozen=True, eq=False)
class Ensemble:
    """``M`` member networks with identical architecture, plus their momentum buffers.
    Momentum buffers are training state only: they are not serialized or compared.
    """

    config: EnsembleConfig
    members: tuple[NetworkParams, ...] = field(converter=tuple)
    velocities: Optional[tuple[ParamGrads, ...]] = field(default=None)
    class_names: Optional[tuple[str, ...]] = field(
        default=None, converter=lambda names: None if names is None else tuple(names)
    )

    def __attrs_post_init__(self):
        if len(self.members) != self.config.member_count:
            raise ShapeError(
                f'Expected {self.config.member_count} members, got {len(self.members)}'
            )
        first = self.members[0]
        for member in self.members[1:]:
            if (member.layer_sizes, member.activation) != (first.layer_sizes, first.activation):
                raise ShapeError('All ensemble members must share layer sizes and activation')
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ShapeError(
                f'{len(self.class_names)} class names for {self.class_count} output classes'
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ensemble):
            return NotImplemented
        return (
            self.config == other.config
            and self.members == other.members
            and self.class_names == other.class_names
        )

    @property
    def class_count(self) -> int:
        return self.members[0].class_count

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @property
    def mode(self) -> str:
        """``single``, ``pure`` or ``nc``, as implied by ``M`` and ``lambda``"""
        if self.config.member_count == 1:
            return 'single'
        return 'pure' if self.config.nc_lambda == 0 else 'nc'

    def to_dict(self) -> dict[str, Any]:
        data = {
            'version': FORMAT_VERSION,
            'config': self.config.to_dict(),
            'members': [m.to_dict() for m in self.members],
        }
        if self.class_names is not None:
            data['class_names'] = list(self.class_names)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], workers: int = 1) -> Ensemble:
        if not isinstance(data, dict) or data.get('version') != FORMAT_VERSION:
            raise ReportFormatError('Unsupported or missing ensemble format version')
        try:
            config = EnsembleConfig.from_dict(data['config'], workers=workers)
            members = [NetworkParams.from_dict(m) for m in data['members']]
            return cls(config, members, class_names=data.get('class_names'))
        except (KeyError, TypeError, ShapeError) as e:
            raise ReportFormatError(f'Malformed ensemble document: {e!r}') from e


@frozen
class MemberBatchOutputs:
    """Member probabilities for one minibatch and their frozen mean ``h_bar``"""

    member_probs: tuple[np.ndarray, ...] = field(converter=tuple, eq=False)
    mean: np.ndarray = field(eq=False)


@frozen
class EpochRecord:
    epoch: int
    train_loss: float
    eval_acc: Optional[float] = None
    eval_ece: Optional[float] = None


@define
class TrainingLog:
    """Per-epoch training loss, plus eval accuracy and ECE when an eval set is given"""

    records: list[EpochRecord] = field(factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord):
        self.records.append(record)


def ensemble_mean(member_probs: Sequence[np.ndarray]) -> np.ndarray:
    """Entrywise mean of member probability vectors or matrices"""
    if len(member_probs) < 1:
        raise ShapeError('Need at least one member')
    shape = np.shape(member_probs[0])
    if any(np.shape(p) != shape for p in member_probs):
        raise ShapeError(f'Member outputs must share shape {shape}')
    stacked = np.stack(member_probs).astype(np.float64, copy=False)
    # Exact when all members are identical
    return stacked[0] + np.mean(stacked - stacked[0], axis=0)


def nc_div(h_i: np.ndarray, member_probs: Sequence[np.ndarray], i: int) -> float | np.ndarray:
    """Negative correlation penalty ``(h_i - h_bar) . sum_{j != i} (h_j - h_bar)``.

    ``h_bar`` and the other members come from ``member_probs``; ``h_i`` is passed separately so it
    can vary with everything else held fixed. Works on single vectors or row-wise on batches.
    """
    h_i = np.asarray(h_i, dtype=np.float64)
    if h_i.shape != np.shape(member_probs[0]):
        raise ShapeError(f'h_i shape {h_i.shape} != member output shape {np.shape(member_probs[0])}')
    others = nc_div_grad(member_probs, i)
    mean = ensemble_mean(member_probs)
    value = np.sum((h_i - mean) * others, axis=-1)
    return float(value) if value.ndim == 0 else value


def nc_div_grad(member_probs: Sequence[np.ndarray], i: int) -> np.ndarray:
    """Gradient of :py:func:`nc_div` with respect to ``h_i`` with ``h_bar`` held constant:
    ``sum_{j != i} (h_j - h_bar)``
    """
    if not 0 <= i < len(member_probs):
        raise IndexError(f'Member index {i} out of range for {len(member_probs)} members')
    mean = ensemble_mean(member_probs)
    total = np.zeros_like(mean)
    for j, h_j in enumerate(member_probs):
        if j != i:
            total += h_j - mean
    return total


def member_loss(
    label: int,
    h_i: np.ndarray,
    member_probs: Sequence[np.ndarray],
    i: int,
    nc_lambda: float,
) -> float:
    """Per-sample member loss ``E_i = CE(h_i, y) + lambda * div(h_i; h_1..h_M)``"""
    return cross_entropy(h_i, label) + nc_lambda * float(nc_div(h_i, member_probs, i))


def member_outputs(
    ensemble: Ensemble, batch: np.ndarray, executor: Optional[Executor] = None
) -> MemberBatchOutputs:
    probs = _map(executor, lambda m: forward(m, batch).probs, ensemble.members)
    return MemberBatchOutputs(probs, ensemble_mean(probs))


def train_minibatch(
    ensemble: Ensemble,
    batch: np.ndarray,
    labels: Sequence[int] | np.ndarray,
    executor: Optional[Executor] = None,
) -> tuple[Ensemble, np.ndarray]:
    """One NC training step on a minibatch.

    All members run forward first; ``h_bar`` is then frozen, and each member backpropagates its
    batch-mean ``E_i`` (with ``lambda * sum_{j != i}(h_j - h_bar)`` as the extra gradient on its
    probability outputs) and takes one SGD step.

    Returns:
        The updated ensemble, and each member's batch-mean ``E_i`` before the update
    """
    config = ensemble.config
    labels = np.asarray(labels, dtype=np.intp)
    caches = _map(executor, lambda m: forward(m, batch), ensemble.members)
    member_probs = [c.probs for c in caches]
    if labels.shape != (member_probs[0].shape[0],):
        raise ShapeError(f'Expected {member_probs[0].shape[0]} labels, got shape {labels.shape}')

    mean = ensemble_mean(member_probs)
    use_nc = config.nc_lambda > 0 and config.member_count > 1
    velocities = ensemble.velocities or (None,) * config.member_count

    def update(i: int):
        cache, params = caches[i], ensemble.members[i]
        ce = _batch_cross_entropy(cache.probs, labels)
        if use_nc:
            others = nc_div_grad(member_probs, i)
            div = np.sum((cache.probs - mean) * others, axis=1)
            loss = float(np.mean(ce + config.nc_lambda * div))
            grads = backward(params, cache, labels, config.nc_lambda * others)
        else:
            loss = float(np.mean(ce))
            grads = backward(params, cache, labels)
        new_params, new_velocity = sgd_step(params, grads, velocities[i], config.sgd)
        return new_params, new_velocity, loss

    results = _map(executor, update, range(config.member_count))
    updated = Ensemble(
        config,
        [params for params, _, _ in results],
        tuple(velocity for _, velocity, _ in results),
        ensemble.class_names,
    )
    return updated, np.array([loss for _, _, loss in results])


def init_ensemble(
    config: EnsembleConfig,
    layer_sizes: Sequence[int],
    activation: str = 'relu',
    class_names: Optional[Sequence[str]] = None,
) -> Ensemble:
    """Create an untrained ensemble, one network per member seed"""
    members = [init_params(layer_sizes, activation, s) for s in config.member_seeds]
    return Ensemble(config, members, class_names=class_names)


def train(
    train_set: Dataset,
    config: EnsembleConfig,
    layer_sizes: Sequence[int],
    activation: str = 'relu',
    eval_set: Optional[Dataset] = None,
    bin_count: int = DEFAULT_BINS,
    weighting: str = 'standard',
) -> tuple[Ensemble, TrainingLog]:
    """Train an ensemble for ``config.sgd.epochs`` shuffled minibatch sweeps over ``train_set``.
    Deterministic for a given config, regardless of ``config.workers``.
    """
    ensemble = init_ensemble(config, layer_sizes, activation, train_set.class_names)
    _check_architecture(train_set, layer_sizes, 'train_set')
    if eval_set is not None:
        _check_architecture(eval_set, layer_sizes, 'eval_set')

    log = TrainingLog()
    logger.info(
        f'Training {ensemble.mode} ensemble: M={config.member_count}, lambda={config.nc_lambda}, '
        f'layers={list(layer_sizes)}, epochs={config.sgd.epochs}, n={len(train_set)}'
    )

    workers = min(config.workers, config.member_count)
    with ThreadPoolExecutor(workers) if workers > 1 else nullcontext() as executor:
        for epoch in range(config.sgd.epochs):
            total = 0.0
            for indices in minibatches(train_set, config.sgd.batch_size, config.shuffle_seed + epoch):
                ensemble, losses = train_minibatch(
                    ensemble,
                    train_set.features[indices],
                    train_set.labels[indices],
                    executor,
                )
                total += float(np.mean(losses)) * len(indices)

            record = EpochRecord(epoch=epoch + 1, train_loss=total / len(train_set))
            if eval_set is not None:
                report = evaluate(
                    predict(ensemble, eval_set.features, executor),
                    eval_set.labels,
                    bin_count,
                    eval_set.class_count,
                    weighting,
                )
                record = EpochRecord(record.epoch, record.train_loss, report.accuracy, report.ece)
            log.append(record)
            logger.debug(f'Epoch {record}')

    logger.info(f'Finished training after {config.sgd.epochs} epochs')
    return ensemble, log


def predict(
    ensemble: Ensemble, batch: np.ndarray, executor: Optional[Executor] = None
) -> np.ndarray:
    """Ensemble prediction: the mean of member softmax outputs"""
    return member_outputs(ensemble, batch, executor).mean


def _batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    picked = probs[np.arange(len(labels)), labels]
    losses = -np.log(np.clip(picked, LOG_EPSILON, 1.0))
    return np.where(picked >= CERTAIN_PROBABILITY, 0.0, losses)


def _check_architecture(dataset: Dataset, layer_sizes: Sequence[int], name: str):
    if layer_sizes[0] != dataset.dim:
        raise ConfigurationError(
            f'input size {layer_sizes[0]} does not match {name} feature count {dataset.dim}',
            field='layer_sizes',
        )
    if layer_sizes[-1] != dataset.class_count:
        raise ConfigurationError(
            f'output size {layer_sizes[-1]} does not match {name} class count '
            f'{dataset.class_count}',
            field='layer_sizes',
        )


def _map(executor: Optional[Executor], fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map in order, on the executor if there is one"""
    return list(executor.map(fn, items)) if executor else [fn(item) for item in items]
