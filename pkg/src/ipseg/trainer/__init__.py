"""Phantoms, datasets, training, evaluation and checkpoints."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, make_dataset, scan_pairs
from .loop import (
    PIPELINES,
    HyperParams,
    build_network,
    default_config,
    evaluate,
    history_csv,
    load_network,
    predict,
    samples,
    train,
)
from .phantom import PhantomSpec, class_band, phantom_suite, synth_phantom

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint", "Dataset", "make_dataset", "scan_pairs",
    "PIPELINES", "HyperParams", "build_network", "default_config", "evaluate", "history_csv",
    "load_network", "predict", "samples", "train", "PhantomSpec", "class_band", "phantom_suite",
    "synth_phantom",
]
