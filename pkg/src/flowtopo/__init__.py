"""flowtopo: normalizing-flow density estimation and OOD detection with
learnable accept/reject base distributions."""

from .bases import ClassPrior, GaussianBase, MoGBase, ResampledBase, make_base
from .config import build_model, build_task, load_config, make_config
from .datasets import SyntheticTask, make_task, ood_sample
from .errors import (
    ConfigError,
    FlowtopoError,
    InvalidInputError,
    ModelFormatError,
    NumericError,
    StateError,
    TrainingAborted,
    UsageError,
)
from .flows import FlowStack, make_flow
from .grids import DensityGrid, render_acceptance_grid, render_density_grid
from .metrics import MetricReport, auroc, estimate_kld, ood_scores, tpr_at_fpr
from .model import FlowModel
from .rng import RngStream
from .serialize import load_model, save_model
from .training import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "ClassPrior", "GaussianBase", "MoGBase", "ResampledBase", "make_base",
    "build_model", "build_task", "load_config", "make_config",
    "SyntheticTask", "make_task", "ood_sample",
    "ConfigError", "FlowtopoError", "InvalidInputError", "ModelFormatError",
    "NumericError", "StateError", "TrainingAborted", "UsageError",
    "FlowStack", "make_flow",
    "DensityGrid", "render_acceptance_grid", "render_density_grid",
    "MetricReport", "auroc", "estimate_kld", "ood_scores", "tpr_at_fpr",
    "FlowModel", "RngStream",
    "load_model", "save_model",
    "TrainConfig", "TrainHistory", "train",
    "__version__",
]
