"""Unsupervised hyperspectral segmentation with a Dirichlet-process Gaussian mixture."""

__version__ = "0.1.0"

from .hsi_io import (BandStats, GroundTruth, HsiCube, load_cube, load_ground_truth,  # noqa: E402
                     render_pseudocolor, save_cube, standardize)
from .model import (ModelParams, UnconstrainedParams, constrain, data_nll,  # noqa: E402
                    log_mixture_likelihood, loss_gradient, predict, prior_nll,
                    responsibilities, total_loss)
from .trainer import FitConfig, FitReport, effective_components, fit  # noqa: E402

__all__ = [
    "BandStats", "GroundTruth", "HsiCube", "load_cube", "load_ground_truth",
    "render_pseudocolor", "save_cube", "standardize", "ModelParams",
    "UnconstrainedParams", "constrain", "data_nll", "log_mixture_likelihood",
    "loss_gradient", "predict", "prior_nll", "responsibilities", "total_loss",
    "FitConfig", "FitReport", "effective_components", "fit",
]
