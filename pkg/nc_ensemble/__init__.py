__version__ = '0.1.0'

# flake8: noqa: F401, F403
from nc_ensemble.calibration import EvaluationReport, ece, evaluate
from nc_ensemble.data import BlobSpec, Dataset, gen_blobs, load_csv, save_csv, shuffle_split
from nc_ensemble.ensemble import Ensemble, EnsembleConfig, predict, train
from nc_ensemble.errors import *
from nc_ensemble.network import NetworkParams, SgdConfig, init_params
