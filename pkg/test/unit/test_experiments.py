import csv
import io

import pytest

from nc_ensemble.data import BlobSpec
from nc_ensemble.experiments import SweepResult, SweepSettings, VariantResult, run_sweep
from nc_ensemble.network import SgdConfig

TINY_SETTINGS = SweepSettings(
    blobs=BlobSpec(class_count=3, per_class=20, cluster_std=1.0),
    hidden_sizes=(6,),
    sgd=SgdConfig(0.05, 0.9, epochs=2, batch_size=16),
    bins=5,
)

# Desk-scale comparison: 5 blobs in 2-D, one hidden layer of 32 units, lambda 0.1, Q=10
DESK_SETTINGS = SweepSettings(
    blobs=BlobSpec(class_count=5, per_class=200, dim=2, cluster_std=1.0, center_spread=3.0),
    hidden_sizes=(32,),
    nc_lambda=0.1,
    sgd=SgdConfig(0.05, 0.9, epochs=30, batch_size=32),
    bins=10,
)
DESK_SEEDS = list(range(10))


@pytest.fixture
def sweep_result() -> SweepResult:
    return SweepResult(
        [
            VariantResult('single', 1, 0, 0.70, 0.12),
            VariantResult('pure', 3, 0, 0.75, 0.06),
            VariantResult('nc', 3, 0, 0.76, 0.04),
            VariantResult('single', 1, 1, 0.72, 0.10),
            VariantResult('pure', 3, 1, 0.77, 0.05),
            VariantResult('nc', 3, 1, 0.77, 0.05),
        ]
    )


def test_sweep_result__summaries(sweep_result):
    assert sweep_result.member_counts() == [3]
    assert sweep_result.mean_accuracy('single', 1) == pytest.approx(0.71)
    assert sweep_result.mean_ece('pure', 3) == pytest.approx(0.055)
    assert sweep_result.nc_wins(3) == 1
    assert sweep_result.ece_gap(3) == pytest.approx(0.01)
    assert [row[:3] for row in sweep_result.summary_rows()] == [
        ('single', 1, 2),
        ('pure', 3, 2),
        ('nc', 3, 2),
    ]


def test_sweep_result__to_text(sweep_result):
    lines = sweep_result.to_text().splitlines()
    assert lines[0].split() == ['mode', 'M', 'seeds', 'accuracy', 'ece']
    assert lines[1].split() == ['single', '1', '2', '0.7100', '11.0%']
    assert lines[-1] == 'M=3: NC lower ECE in 1/2 seeds, mean ECE gap (pure - nc) 1.0%'


def test_sweep_result__to_csv(sweep_result):
    rows = list(csv.DictReader(io.StringIO(sweep_result.to_csv())))
    assert len(rows) == 6
    assert rows[2] == {'mode': 'nc', 'M': '3', 'seed': '0', 'accuracy': '0.76', 'ece': '0.04'}


def test_run_sweep__tiny():
    result = run_sweep([0, 1], [2], TINY_SETTINGS)
    assert [(r.mode, r.member_count, r.seed) for r in result.results] == [
        ('single', 1, 0),
        ('pure', 2, 0),
        ('nc', 2, 0),
        ('single', 1, 1),
        ('pure', 2, 1),
        ('nc', 2, 1),
    ]
    for r in result.results:
        assert 0 <= r.accuracy <= 1
        assert 0 <= r.ece <= 1
    assert len(result.paired(2)) == 2


def test_run_sweep__deterministic():
    first = run_sweep([3], [2], TINY_SETTINGS)
    second = run_sweep([3], [2], TINY_SETTINGS)
    assert first.results == second.results


@pytest.mark.slow
def test_nc_improves_calibration_without_losing_accuracy():
    result = run_sweep(DESK_SEEDS, [7], DESK_SETTINGS)
    assert result.mean_ece('nc', 7) <= result.mean_ece('pure', 7)
    assert result.nc_wins(7) >= 7
    assert abs(result.mean_accuracy('nc', 7) - result.mean_accuracy('pure', 7)) <= 0.02
    assert result.mean_ece('pure', 7) < result.mean_ece('single', 1)


@pytest.mark.slow
def test_nc_effect_grows_with_member_count():
    result = run_sweep(DESK_SEEDS, [3, 7, 11], DESK_SETTINGS)
    assert result.ece_gap(11) >= result.ece_gap(3)


def test_sweep_settings__default_blobs():
    blobs = SweepSettings().blobs
    assert (blobs.class_count, blobs.per_class, blobs.dim) == (5, 200, 2)
    assert blobs.cluster_std == 1.0
