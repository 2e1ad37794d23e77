"""Merge toy-model checkpoints and measure what the merge preserves.

Thin wrapper over the compiled ``_core`` extension. Checkpoints are
named-tensor containers; tensors cross the boundary as float32 numpy
arrays, structured values (specs, reports, matrices) as plain dicts
mirroring the on-disk JSON.
"""

from ._core import (
    Checkpoint,
    MergeProbeError,
    __version__,
    categorize_vs_parents,
    checkpoint_bytes,
    correlation_matrix,
    evaluate_behavior,
    extract_representation,
    forward,
    fractional_ranks,
    generate_dataset,
    generate_splits,
    load_checkpoint,
    load_dataset,
    merge_dare_ties,
    merge_linear,
    merge_slerp,
    merge_task_arithmetic,
    merge_ties,
    pearson,
    run_pipeline,
    run_probe_suite,
    save_checkpoint,
    save_dataset,
    spearman,
    train_toy_model,
)

__all__ = [
    "Checkpoint",
    "MergeProbeError",
    "__version__",
    "categorize_vs_parents",
    "checkpoint_bytes",
    "correlation_matrix",
    "evaluate_behavior",
    "extract_representation",
    "forward",
    "fractional_ranks",
    "generate_dataset",
    "generate_splits",
    "load_checkpoint",
    "load_dataset",
    "merge_dare_ties",
    "merge_linear",
    "merge_slerp",
    "merge_task_arithmetic",
    "merge_ties",
    "pearson",
    "run_pipeline",
    "run_probe_suite",
    "save_checkpoint",
    "save_dataset",
    "spearman",
    "train_toy_model",
]
