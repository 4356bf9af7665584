"""Anomaly and precursor-of-anomaly detection for multivariate time series.

Windows of (possibly irregular) observations are interpolated into
continuous control paths; two co-evolving hidden states are integrated
along each path, one scoring the window itself for anomalies and one
scoring whether the observations that follow will contain any.  Training
combines a supervised anomaly loss with knowledge distillation from the
anomaly branch into the precursor branch.
"""

from .autodiff import Tape, Tensor, parameter
from .data import (AugmentSpec, BatchSample, RawSequence, SynthConfig, augment,
                   drop_observations, generate_synthetic, load_csv, make_batch_samples,
                   normalize, save_csv, window_split)
from .gradcheck import check_gradients, run_tiny_gradcheck
from .metrics import EvalReport, evaluate
from .model import (ModelConfig, ModelParameters, forward, forward_batch,
                    init_parameters, load_checkpoint, save_checkpoint)
from .solver import SolverConfig, integrate
from .spline import CubicSplinePath, TimeSeriesWindow, fit_natural_cubic_spline
from .training import AdamOptimizer, TrainConfig, fit, loss_anomaly, loss_kd, train_iteration

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer", "AugmentSpec", "BatchSample", "CubicSplinePath", "EvalReport",
    "ModelConfig", "ModelParameters", "RawSequence", "SolverConfig", "SynthConfig",
    "Tape", "Tensor", "TimeSeriesWindow", "TrainConfig", "augment", "check_gradients",
    "drop_observations", "evaluate", "fit", "fit_natural_cubic_spline", "forward",
    "forward_batch", "generate_synthetic", "init_parameters", "integrate", "load_csv",
    "load_checkpoint", "loss_anomaly", "loss_kd", "make_batch_samples", "normalize",
    "parameter", "run_tiny_gradcheck", "save_checkpoint", "save_csv", "train_iteration",
    "window_split",
]
