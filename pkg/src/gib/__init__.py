"""Demonstration curation for imitation learning.

Stage 1 learns per-trajectory quality weights from a self-supervised
inconsistency loss; stage 2 fits per-subtask latent Gaussians from the good
trajectories and masks the most deviant subtasks by Mahalanobis score. A
built-in kinematic manipulation benchmark provides labeled mixed-quality
demonstrations and downstream policy evaluation.
"""

from .bed import BedConfig, TrajectoryWeights, compute_bed_loss, resample_latent, train_bed
from .dataset import (
    Dataset,
    MaskEntry,
    SubtaskMask,
    SubtaskSegmentation,
    Trajectory,
    TrajectoryTruth,
    load_dataset,
    load_mask,
    save_dataset,
    save_mask,
)
from .encoder import (
    EncoderParams,
    LatentTrajectory,
    encode,
    encode_dataset,
    grad_check,
    load_params,
    predict_action,
    save_params,
)
from .errors import FitError, GibError, NumericError, ParseError, ValidationError
from .policy import PolicyConfig, bc_loss_weighted, policy_fn, train_policy
from .scoring import (
    SubtaskGaussian,
    build_mask,
    fit_subtask_gaussian,
    mahalanobis,
    score_subtasks,
)
from .segmentation import segment_from_annotation, segment_heuristic
from .synthgym import ErrorSpec, WorldState, evaluate_policy, generate_dataset, step

__version__ = "0.1.0"

__all__ = [
    "BedConfig",
    "Dataset",
    "EncoderParams",
    "ErrorSpec",
    "FitError",
    "GibError",
    "LatentTrajectory",
    "MaskEntry",
    "NumericError",
    "ParseError",
    "PolicyConfig",
    "SubtaskGaussian",
    "SubtaskMask",
    "SubtaskSegmentation",
    "Trajectory",
    "TrajectoryTruth",
    "TrajectoryWeights",
    "ValidationError",
    "WorldState",
    "bc_loss_weighted",
    "build_mask",
    "compute_bed_loss",
    "encode",
    "encode_dataset",
    "evaluate_policy",
    "fit_subtask_gaussian",
    "generate_dataset",
    "grad_check",
    "load_dataset",
    "load_mask",
    "load_params",
    "mahalanobis",
    "policy_fn",
    "predict_action",
    "resample_latent",
    "save_dataset",
    "save_mask",
    "save_params",
    "score_subtasks",
    "segment_from_annotation",
    "segment_heuristic",
    "step",
    "train_bed",
    "train_policy",
]
