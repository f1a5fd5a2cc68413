"""Datasets: CSV ingestion and export, seeded Gaussian-blob generation, splitting, and minibatching.

All randomness comes from :py:class:`numpy.random.Generator` over the ``PCG64`` bit generator, so
datasets and batch orders are reproducible across platforms for a given seed. Gaussian noise is
drawn with Box-Muller over that generator's uniform stream.
"""

from __future__ import annotations

import csv
import math
from logging import getLogger
from pathlib import Path
from typing import Optional, Union
from collections.abc import Sequence

import numpy as np
from attr import define, field, frozen

from nc_ensemble.errors import (
    ConfigurationError,
    DatasetParseError,
    EmptyInputError,
    NumericInputError,
    ShapeError,
)
from nc_ensemble.network import is_integer
from nc_ensemble.storage import format_float, write_csv

LabelColumn = Union[int, str]
logger = getLogger(__name__)


@define(frozen=True, eq=False)
class Dataset:
    """A feature matrix (one row per sample), integer class labels, and the class count"""

    features: np.ndarray = field(converter=lambda x: np.asarray(x, dtype=np.float64))
    labels: np.ndarray = field(converter=lambda y: np.asarray(y, dtype=np.intp))
    class_count: int = field()
    class_names: Optional[tuple[str, ...]] = field(
        default=None, converter=lambda names: None if names is None else tuple(names)
    )

    def __attrs_post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ShapeError(
                f'Expected 2-D features and 1-D labels, got {self.features.shape} and '
                f'{self.labels.shape}'
            )
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f'{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels'
            )
        if self.features.shape[0] == 0:
            raise EmptyInputError('A dataset needs at least one sample')
        if self.class_count < 1:
            raise ConfigurationError(
                f'must be >= 1, got {self.class_count}', field='class_count'
            )
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ConfigurationError(
                f'labels must be in [0, {self.class_count})', field='labels'
            )
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ConfigurationError(
                f'expected {self.class_count} names, got {len(self.class_names)}',
                field='class_names',
            )
        if not np.isfinite(self.features).all():
            raise NumericInputError('Dataset features must be finite')

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.class_names == other.class_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int] | np.ndarray) -> Dataset:
        """Get the samples at the given row indices, in that order"""
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(
            self.features[indices], self.labels[indices], self.class_count, self.class_names
        )


def _positive_int(instance, attribute, value):
    if not is_integer(value) or value < 1:
        raise ConfigurationError(f'must be an integer >= 1, got {value}', field=attribute.name)


def _positive(instance, attribute, value):
    if not value > 0:
        raise ConfigurationError(f'must be positive, got {value}', field=attribute.name)


@frozen
class BlobSpec:
    """Settings for :py:func:`gen_blobs`: ``class_count`` isotropic Gaussian clusters with
    ``per_class`` samples each, centers drawn uniformly from ``±center_spread`` per coordinate
    """

    class_count: int = field(validator=_positive_int)
    per_class: int = field(validator=_positive_int)
    dim: int = field(default=2, validator=_positive_int)
    center_spread: float = field(default=3.0, converter=float, validator=_positive)
    cluster_std: float = field(default=1.0, converter=float, validator=_positive)
    seed: int = field(default=0)

    @seed.validator
    def _check_seed(self, attribute, value):
        if not is_integer(value) or value < 0:
            raise ConfigurationError(f'must be a non-negative integer, got {value}', field='seed')


def blob_centers(spec: BlobSpec) -> np.ndarray:
    """Get the cluster centers :py:func:`gen_blobs` uses for this spec"""
    return _draw_centers(_rng(spec.seed), spec)


def gen_blobs(spec: BlobSpec) -> Dataset:
    """Generate a balanced, seeded Gaussian-blob classification dataset, ordered by class"""
    rng = _rng(spec.seed)
    centers = _draw_centers(rng, spec)
    labels = np.repeat(np.arange(spec.class_count), spec.per_class)
    noise = box_muller(rng, (labels.size, spec.dim))
    features = centers[labels] + spec.cluster_std * noise
    logger.debug(
        f'Generated {labels.size} samples in {spec.class_count} blobs (dim={spec.dim}, '
        f'std={spec.cluster_std}, spread={spec.center_spread}, seed={spec.seed})'
    )
    return Dataset(features, labels, spec.class_count)


def box_muller(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal draws from pairs of uniforms: ``r = sqrt(-2 ln u1)``, ``theta = 2 pi u2``"""
    count = math.prod(shape)
    pairs = (count + 1) // 2
    # random() is in [0, 1); flip it to (0, 1] so the log is finite
    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).ravel()
    return normals[:count].reshape(shape)


def shuffle_split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle with a seeded Fisher-Yates permutation, then split into ``(train, test)``"""
    if not 0 < test_fraction < 1:
        raise ConfigurationError(
            f'must be strictly between 0 and 1, got {test_fraction}', field='test_fraction'
        )
    n = len(dataset)
    if n < 2:
        raise ConfigurationError(f'cannot split a dataset of {n} sample(s)', field='test_fraction')

    order = _rng(seed).permutation(n)
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


def minibatches(dataset: Dataset | int, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Seeded permutation of ``0..n-1`` cut into ``ceil(n / batch_size)`` index slices; only the
    last slice may be short
    """
    if batch_size < 1:
        raise ConfigurationError(f'must be >= 1, got {batch_size}', field='batch_size')
    n = dataset if isinstance(dataset, int) else len(dataset)
    order = _rng(epoch_seed).permutation(n)
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]


def load_csv(
    path: Path | str,
    label_column: LabelColumn = -1,
    class_names: Optional[Sequence[str]] = None,
    class_count: Optional[int] = None,
) -> Dataset:
    """Load a dataset from a comma-separated file with an optional header row.

    Args:
        path: CSV file path
        label_column: Label column, by header name or by (possibly negative) index. All other
            columns are float features. A name requires a header row; with an index, the first
            row is treated as a header if any of its feature cells is not a number.
        class_names: Names for class indices ``0..K-1``. Label cells may then be names or indices.
        class_count: Force the class count; labels outside ``[0, class_count)`` are an error.

    Without ``class_names``, integer labels are used as class indices directly (``K = max + 1``);
    any other labels are mapped to ``0..K-1`` in order of first appearance.
    """
    path_str = str(path)
    try:
        with open(Path(path).expanduser(), newline='', encoding='utf-8') as f:
            rows = [(i, row) for i, row in enumerate(csv.reader(f), start=1) if any(row)]
    except FileNotFoundError as e:
        raise DatasetParseError('file not found', path=path_str) from e
    except (UnicodeDecodeError, csv.Error) as e:
        raise DatasetParseError(f'unreadable CSV ({e})', path=path_str) from e
    if not rows:
        raise EmptyInputError(f'{path_str}: file contains no rows')

    width = len(rows[0][1])
    label_idx = _label_index(rows[0][1], label_column, path_str)
    if isinstance(label_column, str) or _looks_like_header(rows[0][1], label_idx):
        rows = rows[1:]
    if not rows:
        raise EmptyInputError(f'{path_str}: file has a header but no data rows')

    features, raw_labels = [], []
    for line, row in rows:
        if len(row) != width:
            raise DatasetParseError(
                f'expected {width} columns, got {len(row)}', path=path_str, row=line
            )
        values = []
        for col, cell in enumerate(row):
            if col == label_idx:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise DatasetParseError(
                    f'column {col}: {cell!r} is not a number', path=path_str, row=line
                ) from None
            if not math.isfinite(value):
                raise DatasetParseError(
                    f'column {col}: {cell!r} is not finite', path=path_str, row=line
                )
            values.append(value)
        features.append(values)
        raw_labels.append((line, row[label_idx].strip()))

    labels, names, n_classes = _map_labels(raw_labels, class_names, class_count, path_str)
    logger.debug(f'Loaded {len(labels)} samples with {n_classes} classes from {path_str}')
    return Dataset(
        np.array(features, dtype=np.float64).reshape(len(labels), width - 1),
        labels,
        n_classes,
        names,
    )


def save_csv(dataset: Dataset, path: Path | str) -> Path:
    """Write a dataset in the dialect :py:func:`load_csv` reads: a ``x0..x{d-1},label`` header,
    full-precision floats, and labels as class names if the dataset has them
    """
    header = [f'x{i}' for i in range(dataset.dim)] + ['label']
    names = dataset.class_names
    rows = (
        [format_float(v) for v in x] + [names[y] if names else str(int(y))]
        for x, y in zip(dataset.features, dataset.labels)
    )
    logger.debug(f'Saving {len(dataset)} samples to {path}')
    return write_csv(path, header, rows)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _draw_centers(rng: np.random.Generator, spec: BlobSpec) -> np.ndarray:
    return rng.uniform(-spec.center_spread, spec.center_spread, size=(spec.class_count, spec.dim))


def _label_index(first_row: list[str], label_column: LabelColumn, path: str) -> int:
    width = len(first_row)
    if isinstance(label_column, str):
        header = [cell.strip() for cell in first_row]
        if label_column not in header:
            raise DatasetParseError(f'no label column named {label_column!r}', path=path, row=1)
        return header.index(label_column)
    if not -width <= label_column < width:
        raise DatasetParseError(
            f'label column {label_column} out of range for {width} columns', path=path, row=1
        )
    return label_column % width


def _looks_like_header(row: list[str], label_idx: int) -> bool:
    for col, cell in enumerate(row):
        if col == label_idx:
            continue
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _parse_int(value: str) -> Optional[int]:
    try:
        return int(value)
    except ValueError:
        return None


def _map_labels(
    raw_labels: list[tuple[int, str]],
    class_names: Optional[Sequence[str]],
    class_count: Optional[int],
    path: str,
) -> tuple[list[int], Optional[tuple[str, ...]], int]:
    """Map label cells to class indices; returns ``(labels, class_names, class_count)``"""
    if class_names is not None:
        names = tuple(class_names)
        lookup = {name: i for i, name in enumerate(names)}
        labels = []
        for line, cell in raw_labels:
            index = lookup.get(cell, _parse_int(cell))
            if index is None or not 0 <= index < len(names):
                raise DatasetParseError(f'unknown class label {cell!r}', path=path, row=line)
            labels.append(index)
        return _check_count(labels, raw_labels, names, class_count or len(names), path)

    ints = [_parse_int(cell) for _, cell in raw_labels]
    if all(i is not None for i in ints):
        for (line, cell), i in zip(raw_labels, ints):
            if i < 0:  # type: ignore[operator]
                raise DatasetParseError(f'negative class label {cell!r}', path=path, row=line)
        labels = [int(i) for i in ints]  # type: ignore[arg-type]
        return _check_count(labels, raw_labels, None, class_count or max(labels) + 1, path)

    order: dict[str, int] = {}
    for _, cell in raw_labels:
        order.setdefault(cell, len(order))
    labels = [order[cell] for _, cell in raw_labels]
    names = tuple(order)
    if class_count is not None and class_count > len(names):
        names = names + tuple(str(i) for i in range(len(names), class_count))
    return _check_count(labels, raw_labels, names, class_count or len(names), path)


def _check_count(labels, raw_labels, names, class_count, path):
    for label, (line, cell) in zip(labels, raw_labels):
        if label >= class_count:
            raise DatasetParseError(
                f'label {cell!r} exceeds class count {class_count}', path=path, row=line
            )
    if names is not None and len(names) != class_count:
        raise DatasetParseError(
            f'{len(names)} class names but class count is {class_count}', path=path
        )
    return labels, names, class_count
