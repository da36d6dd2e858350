"""Federated training of stochastic binary masks over frozen random networks."""
from .aggregate import BayesAggregator, ResetPolicy, SimpleAggregator, simple_aggregate
from .codec import decode_mask, deserialize_model, encode_mask, serialize_model
from .config import ExperimentConfig, load_config, parse_config
from .errors import FedPMError
from .nn import NetworkArch, init_frozen_weights
from .sim import ExperimentResult, RoundMetrics, evaluate, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BayesAggregator", "ExperimentConfig", "ExperimentResult", "FedPMError", "NetworkArch",
    "ResetPolicy", "RoundMetrics", "SimpleAggregator", "decode_mask", "deserialize_model",
    "encode_mask", "evaluate", "init_frozen_weights", "load_config", "parse_config",
    "run_experiment", "serialize_model", "simple_aggregate",
]
