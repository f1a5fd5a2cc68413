"""Run configuration for the command-line workflow.

Settings are resolved in the following order of precedence:

1. Command-line override flags
2. Values from the JSON config file
3. Defaults, some of which depend on the mode (``single`` implies ``M = 1``; ``pure`` implies
   ``lambda = 0``)

Example config file:

.. code-block:: json

    {
      "mode": "nc",
      "layer_sizes": [2, 32, 5],
      "activation": "relu",
      "M": 7,
      "lambda": 0.1,
      "sgd": {"lr": 0.05, "momentum": 0.9, "epochs": 30, "batch_size": 32},
      "seed": 0,
      "bins": 10,
      "ece_weighting": "standard",
      "data": {"train": "train.csv", "eval": "test.csv"}
    }

Instead of ``data``, a ``blobs`` section (``classes``, ``per_class``, ``dim``, ``std``,
``spread``, ``seed``) generates a synthetic dataset that is split with ``test_fraction``.
"""

from __future__ import annotations

import os
from logging import getLogger
from pathlib import Path
from typing import Any, Optional
from collections.abc import Mapping, Sequence

from attr import field, frozen

from nc_ensemble.calibration import DEFAULT_BINS, WEIGHTINGS
from nc_ensemble.data import BlobSpec
from nc_ensemble.ensemble import EnsembleConfig
from nc_ensemble.errors import ConfigurationError, ReportFormatError
from nc_ensemble.network import ACTIVATIONS, SgdConfig, is_integer
from nc_ensemble.storage import read_json

MODES = ('single', 'pure', 'nc')
DEFAULT_MEMBERS = 7
DEFAULT_LAMBDA = 0.1
DEFAULT_HIDDEN = (32,)
DEFAULT_TEST_FRACTION = 0.3
THREADS_ENV_VAR = 'NC_ENSEMBLE_THREADS'

CONFIG_KEYS = {
    'mode', 'layer_sizes', 'activation', 'M', 'lambda', 'sgd', 'seed', 'bins', 'ece_weighting',
    'data', 'blobs', 'test_fraction',
}  # fmt: skip

logger = getLogger(__name__)


@frozen
class RunConfig:
    """Everything needed to train one single, pure or NC model from the command line.

    ``layer_sizes`` may be omitted, in which case the input and output sizes come from the
    training data with one hidden layer of 32 units. ``forced_lambda`` replaces ``lambda`` after the
    mode checks; it exists so a run can be forced to ``lambda = 0`` in any mode.
    """

    mode: str = field(default='nc')
    layer_sizes: Optional[tuple[int, ...]] = field(
        default=None, converter=lambda s: None if s is None else tuple(s)
    )
    activation: str = field(default='relu')
    member_count: int = field(default=DEFAULT_MEMBERS)
    nc_lambda: float = field(default=DEFAULT_LAMBDA, converter=float)
    sgd: SgdConfig = field(factory=SgdConfig)
    seed: int = field(default=0)
    bins: int = field(default=DEFAULT_BINS)
    ece_weighting: str = field(default='standard')
    train_data: Optional[str] = field(default=None)
    eval_data: Optional[str] = field(default=None)
    blobs: Optional[BlobSpec] = field(default=None)
    test_fraction: float = field(default=DEFAULT_TEST_FRACTION, converter=float)
    forced_lambda: Optional[float] = field(default=None)

    def __attrs_post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f'must be one of {MODES}, got {self.mode!r}', field='mode')
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f'must be one of {ACTIVATIONS}, got {self.activation!r}', field='activation'
            )
        if not is_integer(self.member_count) or self.member_count < 1:
            raise ConfigurationError(f'must be an integer >= 1, got {self.member_count}', field='M')
        sizes = self.layer_sizes or ()
        if any(not is_integer(n) or n < 1 for n in sizes):
            raise ConfigurationError(
                f'all sizes must be integers >= 1, got {list(self.layer_sizes)}', field='layer_sizes'
            )
        if not self.nc_lambda >= 0:
            raise ConfigurationError(f'must be >= 0, got {self.nc_lambda}', field='lambda')
        if self.mode == 'single' and self.member_count != 1:
            raise ConfigurationError(
                f'mode "single" requires M = 1, got {self.member_count}', field='M'
            )
        if self.mode == 'pure' and self.nc_lambda != 0:
            raise ConfigurationError(
                f'mode "pure" requires lambda = 0, got {self.nc_lambda}', field='lambda'
            )
        if self.mode == 'nc' and self.nc_lambda <= 0:
            raise ConfigurationError('mode "nc" requires lambda > 0, got 0', field='lambda')
        if not is_integer(self.seed) or self.seed < 0:
            raise ConfigurationError(f'must be a non-negative integer, got {self.seed}', field='seed')
        if not is_integer(self.bins) or self.bins < 1:
            raise ConfigurationError(f'must be an integer >= 1, got {self.bins}', field='bins')
        if self.ece_weighting not in WEIGHTINGS:
            raise ConfigurationError(
                f'must be one of {WEIGHTINGS}, got {self.ece_weighting!r}', field='ece_weighting'
            )
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError(
                f'must be strictly between 0 and 1, got {self.test_fraction}', field='test_fraction'
            )
        if self.forced_lambda is not None and not self.forced_lambda >= 0:
            raise ConfigurationError(
                f'must be >= 0, got {self.forced_lambda}', field='force_lambda'
            )

    @property
    def effective_lambda(self) -> float:
        return self.nc_lambda if self.forced_lambda is None else float(self.forced_lambda)

    @classmethod
    def from_file(cls, path: Path | str, **overrides: Any) -> RunConfig:
        """Load a JSON config file and apply any non-``None`` overrides"""
        try:
            data = read_json(path)
        except ReportFormatError as e:
            raise ConfigurationError(str(e), field='config') from e
        if not isinstance(data, dict):
            raise ConfigurationError('config file must contain a JSON object', field='config')
        return cls.from_dict(data, **overrides)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], **overrides: Any) -> RunConfig:
        """Build a config from parsed JSON, with override flags taking precedence"""
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigurationError(f'unknown setting(s): {sorted(unknown)}', field='config')
        sgd_data = _section(data, 'sgd')
        data_paths = _section(data, 'data')
        mode = coalesce(overrides.get('mode'), data.get('mode'), default='nc')
        logger.debug(f'Resolving {mode} run config from {dict(data)} with overrides {overrides}')

        try:
            defaults = SgdConfig()
            sgd = SgdConfig(
                learning_rate=coalesce(
                    overrides.get('learning_rate'), sgd_data.get('lr'), default=defaults.learning_rate
                ),
                momentum=coalesce(
                    overrides.get('momentum'), sgd_data.get('momentum'), default=defaults.momentum
                ),
                epochs=coalesce(
                    overrides.get('epochs'), sgd_data.get('epochs'), default=defaults.epochs
                ),
                batch_size=coalesce(
                    overrides.get('batch_size'),
                    sgd_data.get('batch_size'),
                    default=defaults.batch_size,
                ),
            )
            return cls(
                mode=mode,
                layer_sizes=coalesce(overrides.get('layer_sizes'), data.get('layer_sizes')),
                activation=coalesce(
                    overrides.get('activation'), data.get('activation'), default='relu'
                ),
                member_count=coalesce(
                    overrides.get('member_count'),
                    data.get('M'),
                    default=1 if mode == 'single' else DEFAULT_MEMBERS,
                ),
                nc_lambda=coalesce(
                    overrides.get('nc_lambda'),
                    data.get('lambda'),
                    default=DEFAULT_LAMBDA if mode == 'nc' else 0.0,
                ),
                sgd=sgd,
                seed=coalesce(overrides.get('seed'), data.get('seed'), default=0),
                bins=coalesce(overrides.get('bins'), data.get('bins'), default=DEFAULT_BINS),
                ece_weighting=coalesce(
                    overrides.get('ece_weighting'), data.get('ece_weighting'), default='standard'
                ),
                train_data=coalesce(overrides.get('train_data'), data_paths.get('train')),
                eval_data=coalesce(overrides.get('eval_data'), data_paths.get('eval')),
                blobs=_blob_spec(data.get('blobs')),
                test_fraction=coalesce(
                    overrides.get('test_fraction'),
                    data.get('test_fraction'),
                    default=DEFAULT_TEST_FRACTION,
                ),
                forced_lambda=overrides.get('forced_lambda'),
            )
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f'invalid value ({e})', field='config') from e

    def resolve_layer_sizes(self, input_dim: int, class_count: int) -> tuple[int, ...]:
        """Get layer sizes for data with the given shape, checking any configured sizes against it"""
        if self.layer_sizes is None:
            return (input_dim, *DEFAULT_HIDDEN, class_count)
        if len(self.layer_sizes) < 2:
            raise ConfigurationError(
                f'needs at least input and output sizes, got {list(self.layer_sizes)}',
                field='layer_sizes',
            )
        if (self.layer_sizes[0], self.layer_sizes[-1]) != (input_dim, class_count):
            raise ConfigurationError(
                f'{list(self.layer_sizes)} does not match data with {input_dim} features and '
                f'{class_count} classes',
                field='layer_sizes',
            )
        return self.layer_sizes

    def to_ensemble_config(self, workers: int = 1) -> EnsembleConfig:
        if self.forced_lambda is not None:
            logger.warning(f'Forcing lambda={self.forced_lambda} (configured: {self.nc_lambda})')
        return EnsembleConfig.from_seed(
            self.member_count, self.effective_lambda, self.sgd, self.seed, workers
        )


def coalesce(*values: Any, default=None) -> Any:
    """Get the first non-``None`` value in a list of values"""
    return next((v for v in values if v is not None), default)


def get_worker_count(member_count: int, env: Optional[Mapping[str, str]] = None) -> int:
    """Get the number of worker threads to use, from the ``NC_ENSEMBLE_THREADS`` environment
    variable: unset means 1 (serial), 0 means one per member up to the CPU count, and ``n``
    caps the count at ``n``
    """
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV_VAR, '').strip()
    if not raw:
        return 1
    try:
        requested = int(raw)
    except ValueError:
        raise ConfigurationError(
            f'must be a non-negative integer, got {raw!r}', field=THREADS_ENV_VAR
        ) from None
    if requested < 0:
        raise ConfigurationError(f'must be >= 0, got {requested}', field=THREADS_ENV_VAR)
    if requested == 0:
        requested = os.cpu_count() or 1
    return max(1, min(requested, member_count))


def parse_int_list(value: str | Sequence[int]) -> list[int]:
    """Parse ``"2,32,5"`` into ``[2, 32, 5]``"""
    if not isinstance(value, str):
        return [int(v) for v in value]
    return [int(v) for v in value.split(',') if v.strip()]


def _section(data: Mapping[str, Any], key: str) -> Mapping[str, Any]:
    section = data.get(key) or {}
    if not isinstance(section, Mapping):
        raise ConfigurationError('must be a JSON object', field=key)
    return section


def _blob_spec(data: Optional[Mapping[str, Any]]) -> Optional[BlobSpec]:
    if data is None:
        return None
    try:
        return BlobSpec(
            class_count=data['classes'],
            per_class=data['per_class'],
            dim=data.get('dim', 2),
            center_spread=data.get('spread', 3.0),
            cluster_std=data.get('std', 1.0),
            seed=data.get('seed', 0),
        )
    except KeyError as e:
        raise ConfigurationError(f'missing {e}', field='blobs') from None
