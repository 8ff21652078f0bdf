"""Combinatorial (DNA-encoded) library subset design.

Sequentially selects building blocks per synthesis cycle to maximize a
per-molecule score table under library-size constraints, producing diverse
candidate libraries.  Samplers follow an estimator-style API:
``Sampler(...).fit(score_table).sample(n)``.
"""

from .core import (
    CycleSpec,
    DesignState,
    SampleEntry,
    SampleSet,
    SizeConstraint,
    decode_selection,
    encode_selection,
    library_size,
)
from .reward import RewardConfig, ScoreAccumulator, ScoreTable, log_reward, mean_score
from .env_flat import FlatEnv, parents_flat, step_flat, valid_mask_flat
from .env_hier import (
    ClusterMap,
    HierEnv,
    HierState,
    Phase,
    cluster_blocks,
    encode_hier_observation,
    step_hier,
    valid_mask_hier,
)
from .neural import MLP, Adam, adam_step, masked_log_softmax, masked_softmax
from .gflownet import (
    GFNConfig,
    GFlowNetSampler,
    ReplayBuffer,
    TBModel,
    sample_library_set,
    sample_trajectory,
    tb_loss,
    train_gfn,
)
from .baselines import (
    GreedySelector,
    MCMCConfig,
    MCMCSampler,
    PPOConfig,
    PPOSampler,
    RandomSampler,
    greedy_select,
    mcmc_sample,
    ppo_train,
    sample_random,
)
from .metrics import EvalReport, PropertyTable, diversity, property_profile, topk_summary
from .io import load_score_table, save_score_table, synth_scores

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ClusterMap",
    "CycleSpec",
    "DesignState",
    "EvalReport",
    "FlatEnv",
    "GFNConfig",
    "GFlowNetSampler",
    "GreedySelector",
    "HierEnv",
    "HierState",
    "MCMCConfig",
    "MCMCSampler",
    "MLP",
    "PPOConfig",
    "PPOSampler",
    "Phase",
    "PropertyTable",
    "RandomSampler",
    "ReplayBuffer",
    "RewardConfig",
    "SampleEntry",
    "SampleSet",
    "ScoreAccumulator",
    "ScoreTable",
    "SizeConstraint",
    "TBModel",
    "adam_step",
    "cluster_blocks",
    "decode_selection",
    "diversity",
    "encode_hier_observation",
    "encode_selection",
    "greedy_select",
    "library_size",
    "load_score_table",
    "log_reward",
    "masked_log_softmax",
    "masked_softmax",
    "mcmc_sample",
    "mean_score",
    "parents_flat",
    "ppo_train",
    "property_profile",
    "sample_library_set",
    "sample_random",
    "sample_trajectory",
    "save_score_table",
    "step_flat",
    "step_hier",
    "synth_scores",
    "tb_loss",
    "topk_summary",
    "train_gfn",
    "valid_mask_flat",
    "valid_mask_hier",
]
