import json
import logging
from test.conftest import write_text

import pytest

from nc_ensemble.config import (
    DEFAULT_LAMBDA,
    DEFAULT_MEMBERS,
    THREADS_ENV_VAR,
    RunConfig,
    coalesce,
    get_worker_count,
    parse_int_list,
)
from nc_ensemble.data import BlobSpec
from nc_ensemble.errors import ConfigurationError
from nc_ensemble.network import SgdConfig

FILE_CONFIG = {
    'mode': 'nc',
    'layer_sizes': [2, 16, 5],
    'activation': 'tanh',
    'M': 5,
    'lambda': 0.3,
    'sgd': {'lr': 0.01, 'momentum': 0.5, 'epochs': 12, 'batch_size': 16},
    'seed': 4,
    'bins': 15,
    'ece_weighting': 'paper',
    'data': {'train': 'train.csv', 'eval': 'test.csv'},
    'test_fraction': 0.2,
}


def test_coalesce():
    assert coalesce(None, 0, 1) == 0
    assert coalesce(None, None, default='x') == 'x'
    assert coalesce() is None


@pytest.mark.parametrize(
    'value, expected',
    [('2,32,5', [2, 32, 5]), ('7', [7]), ('3, 4,', [3, 4]), ((1, 2), [1, 2])],
)
def test_parse_int_list(value, expected):
    assert parse_int_list(value) == expected


def test_from_dict__defaults():
    config = RunConfig.from_dict({})
    assert config.mode == 'nc'
    assert config.member_count == DEFAULT_MEMBERS
    assert config.nc_lambda == DEFAULT_LAMBDA
    assert config.sgd == SgdConfig()
    assert config.layer_sizes is None
    assert config.bins == 10
    assert config.ece_weighting == 'standard'


@pytest.mark.parametrize(
    'mode, member_count, nc_lambda',
    [('single', 1, 0.0), ('pure', DEFAULT_MEMBERS, 0.0), ('nc', DEFAULT_MEMBERS, DEFAULT_LAMBDA)],
)
def test_from_dict__mode_defaults(mode, member_count, nc_lambda):
    config = RunConfig.from_dict({'mode': mode})
    assert config.member_count == member_count
    assert config.nc_lambda == nc_lambda


def test_from_file(tmp_path):
    path = write_text(tmp_path / 'config.json', json.dumps(FILE_CONFIG))
    config = RunConfig.from_file(path)
    assert config.layer_sizes == (2, 16, 5)
    assert config.activation == 'tanh'
    assert config.member_count == 5
    assert config.nc_lambda == 0.3
    assert config.sgd == SgdConfig(0.01, 0.5, epochs=12, batch_size=16)
    assert config.seed == 4
    assert config.bins == 15
    assert config.ece_weighting == 'paper'
    assert (config.train_data, config.eval_data) == ('train.csv', 'test.csv')
    assert config.test_fraction == 0.2


def test_from_file__overrides_take_precedence(tmp_path):
    path = write_text(tmp_path / 'config.json', json.dumps(FILE_CONFIG))
    config = RunConfig.from_file(
        path,
        member_count=3,
        nc_lambda=0.7,
        learning_rate=0.2,
        epochs=2,
        seed=9,
        bins=None,
        train_data='other.csv',
    )
    assert config.member_count == 3
    assert config.nc_lambda == 0.7
    assert config.sgd == SgdConfig(0.2, 0.5, epochs=2, batch_size=16)
    assert config.seed == 9
    assert config.bins == 15
    assert config.train_data == 'other.csv'
    assert config.eval_data == 'test.csv'


def test_from_file__mode_override_changes_defaults(tmp_path):
    path = write_text(tmp_path / 'config.json', json.dumps({'mode': 'nc', 'seed': 1}))
    config = RunConfig.from_file(path, mode='pure')
    assert config.mode == 'pure'
    assert config.nc_lambda == 0.0


@pytest.mark.parametrize('content', ['{"mode": ', '[1, 2]'])
def test_from_file__invalid(tmp_path, content):
    with pytest.raises(ConfigurationError) as excinfo:
        RunConfig.from_file(write_text(tmp_path / 'config.json', content))
    assert excinfo.value.field == 'config'


def test_from_file__missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.from_file(tmp_path / 'missing.json')


@pytest.mark.parametrize(
    'data, field',
    [
        ({'mode': 'boosted'}, 'mode'),
        ({'mode': 'single', 'M': 3}, 'M'),
        ({'mode': 'pure', 'lambda': 0.1}, 'lambda'),
        ({'mode': 'nc', 'lambda': 0}, 'lambda'),
        ({'M': 0}, 'M'),
        ({'lambda': -1}, 'lambda'),
        ({'activation': 'sigmoid'}, 'activation'),
        ({'bins': 0}, 'bins'),
        ({'ece_weighting': 'other'}, 'ece_weighting'),
        ({'seed': -3}, 'seed'),
        ({'test_fraction': 1.0}, 'test_fraction'),
        ({'sgd': {'lr': 0}}, 'learning_rate'),
        ({'sgd': {'momentum': 1.0}}, 'momentum'),
        ({'sgd': {'batch_size': 0}}, 'batch_size'),
        ({'sgd': [1]}, 'sgd'),
        ({'M': 'many'}, 'M'),
        ({'M': 3.0}, 'M'),
        ({'sgd': {'epochs': 2.0}}, 'epochs'),
        ({'sgd': {'batch_size': True}}, 'batch_size'),
        ({'bins': 10.0}, 'bins'),
        ({'seed': 1.0}, 'seed'),
        ({'layer_sizes': [2, 32.0, 3]}, 'layer_sizes'),
        ({'blobs': {'classes': 3.0, 'per_class': 10}}, 'class_count'),
        ({'members': 3}, 'config'),
        ({'blobs': {'classes': 3}}, 'blobs'),
    ],
)
def test_from_dict__invalid(data, field):
    with pytest.raises(ConfigurationError) as excinfo:
        RunConfig.from_dict(data)
    assert excinfo.value.field == field


def test_from_dict__blobs():
    config = RunConfig.from_dict(
        {'blobs': {'classes': 4, 'per_class': 50, 'std': 0.5, 'seed': 2}, 'test_fraction': 0.25}
    )
    assert config.blobs == BlobSpec(class_count=4, per_class=50, cluster_std=0.5, seed=2)
    assert config.test_fraction == 0.25


def test_forced_lambda(caplog):
    config = RunConfig.from_dict({'mode': 'nc', 'lambda': 0.5}, forced_lambda=0.0)
    assert config.nc_lambda == 0.5
    assert config.effective_lambda == 0.0
    with caplog.at_level(logging.WARNING, logger='nc_ensemble'):
        ensemble_config = config.to_ensemble_config()
    assert ensemble_config.nc_lambda == 0.0
    assert 'Forcing lambda=0.0' in caplog.text


def test_forced_lambda__invalid():
    with pytest.raises(ConfigurationError):
        RunConfig(forced_lambda=-1.0)


def test_to_ensemble_config():
    config = RunConfig.from_dict({'mode': 'pure', 'M': 3, 'seed': 6})
    ensemble_config = config.to_ensemble_config(workers=2)
    assert ensemble_config.member_count == 3
    assert ensemble_config.nc_lambda == 0.0
    assert ensemble_config.shuffle_seed == 6
    assert ensemble_config.workers == 2
    assert len(set(ensemble_config.member_seeds)) == 3


def test_resolve_layer_sizes():
    assert RunConfig().resolve_layer_sizes(4, 3) == (4, 32, 3)
    assert RunConfig(layer_sizes=[4, 8, 8, 3]).resolve_layer_sizes(4, 3) == (4, 8, 8, 3)


@pytest.mark.parametrize('layer_sizes', [[4], [4, 8, 2], [3, 8, 3]])
def test_resolve_layer_sizes__mismatch(layer_sizes):
    with pytest.raises(ConfigurationError) as excinfo:
        RunConfig(layer_sizes=layer_sizes).resolve_layer_sizes(4, 3)
    assert excinfo.value.field == 'layer_sizes'


@pytest.mark.parametrize(
    'env, member_count, expected',
    [
        ({}, 7, 1),
        ({THREADS_ENV_VAR: ''}, 7, 1),
        ({THREADS_ENV_VAR: '4'}, 7, 4),
        ({THREADS_ENV_VAR: '16'}, 7, 7),
        ({THREADS_ENV_VAR: '1'}, 7, 1),
        ({THREADS_ENV_VAR: '3'}, 1, 1),
    ],
)
def test_get_worker_count(env, member_count, expected):
    assert get_worker_count(member_count, env) == expected


def test_get_worker_count__auto():
    count = get_worker_count(5, {THREADS_ENV_VAR: '0'})
    assert 1 <= count <= 5


def test_get_worker_count__from_environ(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, '2')
    assert get_worker_count(3) == 2


@pytest.mark.parametrize('value', ['-1', 'two'])
def test_get_worker_count__invalid(value):
    with pytest.raises(ConfigurationError) as excinfo:
        get_worker_count(3, {THREADS_ENV_VAR: value})
    assert excinfo.value.field == THREADS_ENV_VAR
