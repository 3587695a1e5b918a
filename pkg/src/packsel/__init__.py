"""Online 3D bin packing with a top-k proposal policy, a selection policy,
meta-learned pre-training and selection-only online adaptation."""

__version__ = "0.1.0"

from .env import EnvConfig, PackingState, reset, run_episode, step
from .estimator import ProposalSelectionPacker
from .instances import Dataset, DistributionSpec, Instance, ItemSet, build_dataset
from .policy import Architecture, PolicyPair, PolicyParams, init_params

__all__ = [
    "Architecture",
    "Dataset",
    "DistributionSpec",
    "EnvConfig",
    "Instance",
    "ItemSet",
    "PackingState",
    "PolicyPair",
    "PolicyParams",
    "ProposalSelectionPacker",
    "build_dataset",
    "init_params",
    "reset",
    "run_episode",
    "step",
]
