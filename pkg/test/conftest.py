import logging
from pathlib import Path

import numpy as np
import pytest

from nc_ensemble.data import BlobSpec, Dataset, gen_blobs, shuffle_split
from nc_ensemble.ensemble import EnsembleConfig
from nc_ensemble.network import SgdConfig, forward

# Small enough that a full training run takes well under a second
SMALL_BLOBS = BlobSpec(class_count=3, per_class=20, dim=2, cluster_std=0.8, seed=7)
SMALL_SGD = SgdConfig(learning_rate=0.05, momentum=0.9, epochs=3, batch_size=8)
SMALL_LAYERS = (2, 8, 3)

# Configure logging for pytest session
logging.basicConfig(level='INFO')
# logging.getLogger('nc_ensemble').setLevel('DEBUG')


@pytest.fixture
def blobs() -> Dataset:
    return gen_blobs(SMALL_BLOBS)


@pytest.fixture
def blob_split(blobs) -> tuple[Dataset, Dataset]:
    return shuffle_split(blobs, 0.25, seed=3)


@pytest.fixture
def nc_config() -> EnsembleConfig:
    return EnsembleConfig.from_seed(3, 0.5, SMALL_SGD, seed=11)


def write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding='utf-8')
    return path


def numeric_grad(fn, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function with respect to ``array``, modified in place
    and restored
    """
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + eps
        plus = fn()
        array[index] = original - eps
        minus = fn()
        array[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Largest per-entry relative error, with magnitudes below ``floor`` measured against ``floor``"""
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def batch_probs(params, batch) -> np.ndarray:
    return forward(params, batch).probs
