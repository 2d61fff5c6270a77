"""Factor-graph symbol detection on cyclic ISI channels.

Builds fixed factor graphs (observation-centric and interference-coupling
forms) for BPSK detection over cyclic linear channels, runs a log-domain
sum-product detector on them, and learns better graph structures by
continuously clustering factor nodes through a differentiable detector.
"""

from .channel import (
    ChannelSpec,
    ObservationBlock,
    make_rng,
    noise_variance_from_esn0,
    reference_channel,
    transmit,
    transmit_batch,
)
from .cluster import ClusterWeights, enumerate_containers, prune
from .detectors import ContinuousClusteringDetector, SumProductDetector
from .evaluation import (
    BerRecord,
    analyze_model,
    ber_sweep,
    make_detector,
    map_marginals_bruteforce,
)
from .graph import FactorGraph, LocalFunctionTable, build_ffg, build_ufg
from .model import ClusterModel, load_model, save_model
from .program import CCRuntime, FfgRuntime, UfgRuntime
from .spa import SpaConfig, hard_decision, run_spa
from .training import TrainConfig, train

__all__ = [
    "BerRecord",
    "CCRuntime",
    "ChannelSpec",
    "ClusterModel",
    "ClusterWeights",
    "ContinuousClusteringDetector",
    "FactorGraph",
    "FfgRuntime",
    "LocalFunctionTable",
    "ObservationBlock",
    "SpaConfig",
    "SumProductDetector",
    "TrainConfig",
    "UfgRuntime",
    "analyze_model",
    "ber_sweep",
    "build_ffg",
    "build_ufg",
    "enumerate_containers",
    "hard_decision",
    "load_model",
    "make_detector",
    "make_rng",
    "map_marginals_bruteforce",
    "noise_variance_from_esn0",
    "prune",
    "reference_channel",
    "run_spa",
    "save_model",
    "train",
    "transmit",
    "transmit_batch",
]

__version__ = "0.1.0"
