"""Python access to the brainssl phantoms, metrics, configs and checkpoints."""

from ._core import (
    Error,
    connected_components,
    count_parameters,
    dice,
    evaluate_masks,
    experiment_keys,
    generate_dataset,
    lesionwise_f1,
    load_experiment,
    phantom,
    read_checkpoint,
    read_nifti,
    train_preset,
    volume_difference,
    warmup_cosine_lr,
    write_nifti,
)

__all__ = [
    "Error",
    "connected_components",
    "count_parameters",
    "dice",
    "evaluate_masks",
    "experiment_keys",
    "generate_dataset",
    "lesionwise_f1",
    "load_experiment",
    "phantom",
    "read_checkpoint",
    "read_nifti",
    "train_preset",
    "volume_difference",
    "warmup_cosine_lr",
    "write_nifti",
]
