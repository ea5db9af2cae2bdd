"""Multi-user keystroke identification with ordinal unfolding-based localization."""

from __future__ import annotations

from ._kernels import BACKEND
from .dataset import Dataset, SplitMode, SplitSpec, load_cmu, load_mobikey
from .metrics import adjusted_rand_index, build_template, cross_distances, scaled_manhattan
from .pipeline import ExperimentGrid, PipelineConfig, TrainedModel, identify, identify_batch, run_experiment, train
from .qtransform import apply_quantile, fit_quantile
from .unloc import localize, unfold

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "ExperimentGrid",
    "PipelineConfig",
    "SplitMode",
    "SplitSpec",
    "TrainedModel",
    "adjusted_rand_index",
    "apply_quantile",
    "build_template",
    "cross_distances",
    "fit_quantile",
    "identify",
    "identify_batch",
    "load_cmu",
    "load_mobikey",
    "localize",
    "run_experiment",
    "scaled_manhattan",
    "train",
    "unfold",
]
