"""Calibration metrics: equal-width confidence bins, per-bin accuracy and confidence, expected
calibration error (ECE), reliability-diagram rows, and per-class confidence/accuracy reports.

Bins are half-open ``[c_{i-1}, c_i)`` over ``[0, 1]``; a confidence of exactly 1.0 goes to the top
bin. In-bin accuracy is the fraction of predictions that match the true label.

ECE weighting modes:

* ``standard``: ``sum_i (|C_i| / n) * |acc_i - con_i|``, an expectation over samples
* ``paper``: ``sum_i (|C_i| / Q) * |acc_i - con_i|``, the bin-count-normalized variant; this is
  not bounded by 1
"""

from __future__ import annotations

from logging import getLogger
from typing import Any, Optional
from collections.abc import Sequence

import numpy as np
from attr import define, field, frozen

from nc_ensemble.errors import ConfigurationError, EmptyInputError, ReportFormatError, ShapeError

DEFAULT_BINS = 10
FORMAT_VERSION = 1
WEIGHTINGS = ('standard', 'paper')

logger = getLogger(__name__)


@frozen
class PredictionRecord:
    """One classified sample: its probability vector, argmax class, confidence and true label"""

    probs: np.ndarray = field(eq=False, repr=False)
    predicted: int
    confidence: float
    true_label: int

    @property
    def correct(self) -> bool:
        return self.predicted == self.true_label


@define(frozen=True, eq=False)
class CalibrationBins:
    """Per-bin sample counts, accuracy and mean confidence over ``bin_count`` equal-width bins.
    Empty bins have count, accuracy and confidence all 0.
    """

    counts: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray

    @property
    def bin_count(self) -> int:
        return len(self.counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def edges(self) -> np.ndarray:
        """Bin edges ``c_0 .. c_Q``"""
        return np.arange(self.bin_count + 1) / self.bin_count

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.bin_count) + 0.5) / self.bin_count


@frozen
class ReliabilityRow:
    bin_mid: float
    acc: float
    con: float
    count: int


@frozen
class ClassCalibrationRow:
    """Accuracy and mean confidence over the samples whose true label is ``class_index``"""

    class_index: int
    count: int
    accuracy: float
    mean_confidence: float
    name: Optional[str] = None

    @property
    def gap(self) -> float:
        """Signed confidence - accuracy; positive means over-confident"""
        return self.mean_confidence - self.accuracy


@define(frozen=True, eq=False)
class EvaluationReport:
    """Everything needed to judge the calibration of a set of predictions"""

    accuracy: float
    ece: float
    weighting: str
    bins: CalibrationBins
    per_class: tuple[ClassCalibrationRow, ...] = field(converter=tuple)
    avg_class_gap: float
    run: Optional[dict[str, Any]] = None

    @property
    def n(self) -> int:
        return self.bins.n

    @property
    def histogram(self) -> np.ndarray:
        """Number of predictions per confidence bin"""
        return self.bins.counts

    @property
    def reliability(self) -> list[ReliabilityRow]:
        return reliability_rows(self.bins)

    def to_dict(self) -> dict[str, Any]:
        edges = self.bins.edges
        data: dict[str, Any] = {
            'version': FORMAT_VERSION,
            'n': self.n,
            'accuracy': self.accuracy,
            'ece': self.ece,
            'q': self.bins.bin_count,
            'weighting': self.weighting,
            'bins': [
                {
                    'lo': float(edges[i]),
                    'hi': float(edges[i + 1]),
                    'count': int(self.bins.counts[i]),
                    'acc': float(self.bins.accuracy[i]),
                    'con': float(self.bins.confidence[i]),
                }
                for i in range(self.bins.bin_count)
            ],
            'per_class': [_class_row_to_dict(row) for row in self.per_class],
            'avg_class_gap': self.avg_class_gap,
        }
        if self.run is not None:
            data['run'] = self.run
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EvaluationReport:
        if not isinstance(data, dict) or data.get('version') != FORMAT_VERSION:
            version = data.get('version') if isinstance(data, dict) else None
            raise ReportFormatError(f'Unsupported metrics format version: {version}')
        try:
            bins = data['bins']
            if len(bins) != data['q']:
                raise ReportFormatError(f'q={data["q"]} but {len(bins)} bins are listed')
            report = cls(
                accuracy=float(data['accuracy']),
                ece=float(data['ece']),
                weighting=str(data['weighting']),
                bins=CalibrationBins(
                    counts=np.array([int(b['count']) for b in bins], dtype=np.int64),
                    accuracy=np.array([float(b['acc']) for b in bins], dtype=np.float64),
                    confidence=np.array([float(b['con']) for b in bins], dtype=np.float64),
                ),
                per_class=[
                    ClassCalibrationRow(
                        class_index=int(row['class']),
                        count=int(row['count']),
                        accuracy=float(row['acc']),
                        mean_confidence=float(row['conf']),
                        name=row.get('name'),
                    )
                    for row in data['per_class']
                ],
                avg_class_gap=float(data['avg_class_gap']),
                run=data.get('run'),
            )
        except ReportFormatError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ReportFormatError(f'Malformed metrics document: {e!r}') from e
        if report.weighting not in WEIGHTINGS:
            raise ReportFormatError(f'Unknown ECE weighting: {report.weighting!r}')
        return report


def make_records(probs: np.ndarray, labels: Sequence[int] | np.ndarray) -> list[PredictionRecord]:
    """Turn a probability matrix into per-sample records; ties go to the lowest class index"""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(
            f'Expected a (n, K) probability matrix and n labels, got {probs.shape} and '
            f'{labels.shape}'
        )
    # argmax returns the first occurrence of the max, which is the lowest-index tie-break
    predicted = np.argmax(probs, axis=1)
    return [
        PredictionRecord(
            probs=row, predicted=int(p), confidence=float(row[p]), true_label=int(y)
        )
        for row, p, y in zip(probs, predicted, labels)
    ]


def bin_index(confidence: float, bin_count: int) -> int:
    """Bin for a confidence value: ``floor(v * Q)``, with 1.0 in the top bin"""
    return min(int(np.floor(confidence * bin_count)), bin_count - 1)


def bin_predictions(
    records: Sequence[PredictionRecord], bin_count: int = DEFAULT_BINS
) -> CalibrationBins:
    """Group records into ``bin_count`` equal-width confidence bins"""
    if bin_count < 1:
        raise ConfigurationError(f'must be >= 1, got {bin_count}', field='bins')

    confidence = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=np.float64)
    indices = np.array([bin_index(c, bin_count) for c in confidence], dtype=np.intp)

    counts = np.bincount(indices, minlength=bin_count).astype(np.int64)
    correct_sums = np.bincount(indices, weights=correct, minlength=bin_count)
    confidence_sums = np.bincount(indices, weights=confidence, minlength=bin_count)
    nonempty = counts > 0
    accuracy = np.zeros(bin_count, dtype=np.float64)
    mean_confidence = np.zeros(bin_count, dtype=np.float64)
    accuracy[nonempty] = correct_sums[nonempty] / counts[nonempty]
    mean_confidence[nonempty] = confidence_sums[nonempty] / counts[nonempty]
    return CalibrationBins(counts, accuracy, mean_confidence)


def ece(bins: CalibrationBins, weighting: str = 'standard') -> float:
    """Expected calibration error over the given bins; see module docs for weighting modes"""
    _check_weighting(weighting)
    n = bins.n
    if n == 0:
        raise EmptyInputError('ECE is undefined for zero samples')
    denominator = n if weighting == 'standard' else bins.bin_count
    gaps = np.abs(bins.accuracy - bins.confidence)
    return float(np.sum(bins.counts / denominator * gaps))


def reliability_rows(bins: CalibrationBins) -> list[ReliabilityRow]:
    """One ``(bin_mid, acc, con, count)`` row per bin, in order, including empty bins"""
    return [
        ReliabilityRow(float(mid), float(acc), float(con), int(count))
        for mid, acc, con, count in zip(
            bins.midpoints, bins.accuracy, bins.confidence, bins.counts
        )
    ]


def per_class_report(
    records: Sequence[PredictionRecord],
    class_count: int,
    class_names: Optional[Sequence[str]] = None,
) -> tuple[list[ClassCalibrationRow], float]:
    """Accuracy and mean confidence per true class, plus the average absolute confidence-accuracy
    gap over classes that have at least one sample
    """
    if class_count < 1:
        raise ConfigurationError(f'must be >= 1, got {class_count}', field='class_count')

    rows = []
    for c in range(class_count):
        members = [r for r in records if r.true_label == c]
        count = len(members)
        accuracy = sum(r.correct for r in members) / count if count else 0.0
        confidence = sum(r.confidence for r in members) / count if count else 0.0
        name = class_names[c] if class_names else None
        rows.append(ClassCalibrationRow(c, count, float(accuracy), float(confidence), name))
    return rows, average_class_gap(rows)


def average_class_gap(rows: Sequence[ClassCalibrationRow]) -> float:
    """Mean of ``|mean_confidence - accuracy|`` over rows with at least one sample"""
    gaps = [abs(row.mean_confidence - row.accuracy) for row in rows if row.count > 0]
    return sum(gaps) / len(gaps) if gaps else 0.0


def evaluate(
    probs: np.ndarray,
    labels: Sequence[int] | np.ndarray,
    bin_count: int = DEFAULT_BINS,
    class_count: Optional[int] = None,
    weighting: str = 'standard',
    class_names: Optional[Sequence[str]] = None,
) -> EvaluationReport:
    """Build a full :py:class:`EvaluationReport` from a probability matrix and true labels"""
    _check_weighting(weighting)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0 or len(labels) == 0:
        raise EmptyInputError('Cannot evaluate zero predictions')
    class_count = class_count or probs.shape[1]
    if probs.shape[1] != class_count:
        raise ShapeError(f'Probabilities have {probs.shape[1]} columns; expected {class_count}')

    records = make_records(probs, labels)
    if any(not 0 <= r.true_label < class_count for r in records):
        raise ShapeError(f'Labels must be in [0, {class_count})')
    bins = bin_predictions(records, bin_count)
    rows, gap = per_class_report(records, class_count, class_names)
    accuracy = sum(r.correct for r in records) / len(records)
    report = EvaluationReport(
        accuracy=float(accuracy),
        ece=ece(bins, weighting),
        weighting=weighting,
        bins=bins,
        per_class=rows,
        avg_class_gap=gap,
    )
    logger.debug(
        f'Evaluated {len(records)} predictions: accuracy={report.accuracy:.4f}, '
        f'ece={report.ece:.4f} ({weighting}, Q={bin_count})'
    )
    return report


def _check_weighting(weighting: str):
    if weighting not in WEIGHTINGS:
        raise ConfigurationError(
            f'must be one of {WEIGHTINGS}, got {weighting!r}', field='ece_weighting'
        )


def _class_row_to_dict(row: ClassCalibrationRow) -> dict[str, Any]:
    data: dict[str, Any] = {
        'class': row.class_index,
        'count': row.count,
        'acc': row.accuracy,
        'conf': row.mean_confidence,
    }
    if row.name is not None:
        data['name'] = row.name
    return data
