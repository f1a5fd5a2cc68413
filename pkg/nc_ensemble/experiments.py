"""Seeded comparisons of a single network, a pure ensemble and an NC ensemble on synthetic blobs.

For every seed, one blob dataset is generated and split; a single network is trained once, and
for every member count ``M`` a pure and an NC ensemble are trained with the same member seeds and
batch order, so the only difference between them is the NC penalty.
"""

from __future__ import annotations

from collections import defaultdict
from logging import getLogger
from statistics import fmean
from collections.abc import Sequence

from attr import define, evolve, field, frozen

from nc_ensemble.calibration import DEFAULT_BINS, evaluate
from nc_ensemble.data import BlobSpec, Dataset, gen_blobs, shuffle_split
from nc_ensemble.ensemble import EnsembleConfig, predict, train
from nc_ensemble.network import SgdConfig
from nc_ensemble.report import format_percent
from nc_ensemble.storage import format_csv, format_float

logger = getLogger(__name__)


@frozen
class SweepSettings:
    """Everything shared by all runs in a sweep. ``blobs.seed`` is replaced by each run seed."""

    blobs: BlobSpec = field(factory=lambda: BlobSpec(class_count=5, per_class=200, cluster_std=1.0))
    hidden_sizes: tuple[int, ...] = field(default=(32,), converter=tuple)
    activation: str = 'relu'
    nc_lambda: float = 0.1
    sgd: SgdConfig = field(factory=SgdConfig)
    bins: int = DEFAULT_BINS
    weighting: str = 'standard'
    test_fraction: float = 0.3
    workers: int = 1


@frozen
class VariantResult:
    mode: str
    member_count: int
    seed: int
    accuracy: float
    ece: float


@define
class SweepResult:
    """All variant results from a sweep, with per-(mode, M) summaries"""

    results: list[VariantResult] = field(factory=list)

    def select(self, mode: str, member_count: int) -> list[VariantResult]:
        return [r for r in self.results if r.mode == mode and r.member_count == member_count]

    def mean_accuracy(self, mode: str, member_count: int) -> float:
        return fmean(r.accuracy for r in self.select(mode, member_count))

    def mean_ece(self, mode: str, member_count: int) -> float:
        return fmean(r.ece for r in self.select(mode, member_count))

    def member_counts(self) -> list[int]:
        return sorted({r.member_count for r in self.results if r.mode != 'single'})

    def paired(self, member_count: int) -> list[tuple[VariantResult, VariantResult]]:
        """``(pure, nc)`` result pairs for the same seed"""
        nc = {r.seed: r for r in self.select('nc', member_count)}
        return [(p, nc[p.seed]) for p in self.select('pure', member_count) if p.seed in nc]

    def nc_wins(self, member_count: int) -> int:
        """Number of seeds where NC has a strictly lower ECE than the pure ensemble"""
        return sum(nc.ece < pure.ece for pure, nc in self.paired(member_count))

    def ece_gap(self, member_count: int) -> float:
        """Mean of ``pure ECE - NC ECE`` over seeds; positive means NC is better calibrated"""
        return fmean(pure.ece - nc.ece for pure, nc in self.paired(member_count))

    def summary_rows(self) -> list[tuple[str, int, int, float, float]]:
        """``(mode, M, seeds, mean accuracy, mean ECE)`` per group, in first-seen order"""
        groups: dict[tuple[str, int], list[VariantResult]] = defaultdict(list)
        for r in self.results:
            groups[(r.mode, r.member_count)].append(r)
        return [
            (mode, m, len(rs), fmean(r.accuracy for r in rs), fmean(r.ece for r in rs))
            for (mode, m), rs in groups.items()
        ]

    def to_text(self) -> str:
        lines = [f'{"mode":<8}{"M":>4}{"seeds":>7}{"accuracy":>10}{"ece":>8}']
        for mode, m, n, acc, ece in self.summary_rows():
            lines.append(f'{mode:<8}{m:>4}{n:>7}{acc:>10.4f}{format_percent(ece):>8}')
        for m in self.member_counts():
            pairs = self.paired(m)
            if pairs:
                lines.append(
                    f'M={m}: NC lower ECE in {self.nc_wins(m)}/{len(pairs)} seeds, '
                    f'mean ECE gap (pure - nc) {format_percent(self.ece_gap(m))}'
                )
        return '\n'.join(lines) + '\n'

    def to_csv(self) -> str:
        return format_csv(
            ['mode', 'M', 'seed', 'accuracy', 'ece'],
            (
                [r.mode, r.member_count, r.seed, format_float(r.accuracy), format_float(r.ece)]
                for r in self.results
            ),
        )


def run_variant(
    mode: str,
    member_count: int,
    seed: int,
    train_set: Dataset,
    test_set: Dataset,
    settings: SweepSettings,
) -> VariantResult:
    """Train one single/pure/NC model and evaluate it on ``test_set``"""
    nc_lambda = settings.nc_lambda if mode == 'nc' else 0.0
    config = EnsembleConfig.from_seed(member_count, nc_lambda, settings.sgd, seed, settings.workers)
    layer_sizes = (train_set.dim, *settings.hidden_sizes, train_set.class_count)
    ensemble, _ = train(train_set, config, layer_sizes, settings.activation)
    report = evaluate(
        predict(ensemble, test_set.features),
        test_set.labels,
        settings.bins,
        test_set.class_count,
        settings.weighting,
    )
    logger.info(
        f'seed={seed} {mode} M={member_count}: accuracy={report.accuracy:.4f}, '
        f'ece={format_percent(report.ece)}'
    )
    return VariantResult(mode, member_count, seed, report.accuracy, report.ece)


def run_sweep(
    seeds: Sequence[int],
    member_counts: Sequence[int],
    settings: SweepSettings | None = None,
) -> SweepResult:
    """Train single, pure and NC variants for every seed and member count"""
    settings = settings or SweepSettings()
    result = SweepResult()
    for seed in seeds:
        dataset = gen_blobs(evolve(settings.blobs, seed=seed))
        train_set, test_set = shuffle_split(dataset, settings.test_fraction, seed)
        result.results.append(run_variant('single', 1, seed, train_set, test_set, settings))
        for m in member_counts:
            for mode in ('pure', 'nc'):
                result.results.append(run_variant(mode, m, seed, train_set, test_set, settings))
    return result
