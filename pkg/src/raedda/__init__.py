"""Robust adaptive eigen-decomposition discriminant analysis.

Semi-supervised classification with impartial trimming of labelled and
unlabelled rows, parsimonious eigen-decomposed covariance models,
eigenvalue-ratio constraints and discovery of classes absent from the
training set.
"""

from .covariance import MODEL_ORDER, EigenDecomposition, ModelName, allowed_discovery_models
from .criteria import PenaltySpec, penalty, rbic
from .errors import *  # noqa: F401,F403
from .files import Artifact, load_artifact, load_datasets, save_artifact
from .inductive import LearnedModel, fit_discovery_phase, fit_inductive, fit_learning_phase, predict_new
from .selection import SearchGrid, SearchResult, search
from .simulation import MethodSpec, ScenarioSpec, adjusted_rand_index, generate_scenario, run_monte_carlo, score_fit
from .transductive import (
    FitConfig,
    FitResult,
    LabeledDataset,
    MixtureParameters,
    UnlabeledDataset,
    fit_transductive,
)

__version__ = "0.1.0"
