"""Tools for comparing reinforcement-learning agent attention with human gaze."""
from .errors import (
    AttentionError,
    ContractError,
    DataError,
    FormatError,
    IngestionError,
    NoFixationError,
    NumericError,
    ParameterError,
)
from .imaging import Frame, FrameStack, RawFrame, Rect, SaliencyMap, normalize_map, preprocess
from .metrics import MetricConfig, MetricResult, auc, cc, kl, pearson_r_p, sem, welch_test
from .netforward import Network, NetworkSpec, NetworkWeights, load_network, save_network
from .perturbsal import PerturbationConfig, extract_saliency

__version__ = "0.1.0"

__all__ = [
    "AttentionError",
    "ContractError",
    "DataError",
    "FormatError",
    "IngestionError",
    "NoFixationError",
    "NumericError",
    "ParameterError",
    "Frame",
    "FrameStack",
    "RawFrame",
    "Rect",
    "SaliencyMap",
    "normalize_map",
    "preprocess",
    "MetricConfig",
    "MetricResult",
    "auc",
    "cc",
    "kl",
    "pearson_r_p",
    "sem",
    "welch_test",
    "Network",
    "NetworkSpec",
    "NetworkWeights",
    "load_network",
    "save_network",
    "PerturbationConfig",
    "extract_saliency",
]
