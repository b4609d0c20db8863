"""Latent-dynamic conditional random fields with complexity-aware
assignment of latent values to labels."""

from .allocation import AllocationError, AllocationRequest, describe, dist
from .complexity import ComplexityProfile, comp_measure, pair_distance, resample
from .inference import (
    ChainPotentials,
    PosteriorTables,
    forward_backward,
    label_posteriors,
    masked_log_sum,
    potentials,
    predict,
)
from .model import (
    ContractError,
    Dataset,
    LatentMap,
    Model,
    ModelParams,
    SequenceSample,
    label_of,
    uniform_latent_map,
)
from .training import TrainConfig, TrainResult, nll_and_gradient, train

__version__ = "0.1.0"
