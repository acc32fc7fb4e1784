"""Self-supervised patch ranking: pseudo scores, ranking losses, selection and evaluation."""

from ._ltrp import (
    ConfigError,
    InvalidInput,
    StageFailure,
    TrainingDiverged,
    UnsupportedOperation,
    __version__,
    config_hash,
    dpc_knn,
    flops_estimate,
    image_distance,
    kendall_tau,
    loss_gradient,
    patch_metrics,
    patchify,
    pseudo_scores,
    ranking_loss,
    render_heat,
    render_keep,
    resolve_config,
    run_pipeline,
    sample_mask,
    select_patches,
    synthetic_reconstruct,
    unpatchify,
)

__all__ = [name for name in dir() if not name.startswith("_")]
