"""Infinite Relational Model with collapsed Gibbs and split-merge sampling."""
from .model import (
    BlockCounts,
    HeldOutMask,
    InferenceResult,
    InvariantError,
    IRMConfig,
    IRMState,
    LinkProbability,
    Partition,
    conditional_log_probs,
    crp_draw,
    crp_log_prior,
    gibbs_sweep,
    hold_out,
    joint_log_posterior,
    observed_matrix,
    predict_eta,
    run_inference,
    run_restarts,
    split_merge_move,
)

__all__ = [
    "BlockCounts", "HeldOutMask", "InferenceResult", "InvariantError", "IRMConfig",
    "IRMState", "LinkProbability", "Partition", "conditional_log_probs", "crp_draw",
    "crp_log_prior", "gibbs_sweep", "hold_out", "joint_log_posterior",
    "observed_matrix", "predict_eta", "run_inference", "run_restarts",
    "split_merge_move",
]
