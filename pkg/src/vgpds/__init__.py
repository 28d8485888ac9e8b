"""Variational Gaussian process dynamical systems.

Bayesian training of a GP latent variable model whose latent coordinates
follow a temporal Gaussian process, via an analytic variational lower bound;
plus forecasting and missing-dimension reconstruction for high-dimensional
time series.

The environment variable ``VGPDS_THREADS`` caps the linear-algebra thread
pools used internally (default 1: the workload is dominated by small dense
factorizations where thread handoff costs more than it saves).
"""

import os as _os

_threads = _os.environ.get("VGPDS_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)
try:  # also cap pools that were created before this import
    import threadpoolctl as _threadpoolctl

    _thread_limiter = _threadpoolctl.threadpool_limits(limits=int(_threads))
except Exception:  # pragma: no cover - best effort only
    _thread_limiter = None

from .baselines import nn_baseline
from .bound_core import (
    BoundGradients,
    BoundReport,
    ObservationBlock,
    VariationalState,
    VgpdsModel,
    bound_gradients,
    bound_value_and_gradients,
    evaluate_bound,
    init_model,
    precompute_data_term,
)
from .datasets import TimeSeriesDataset, load_dataset, save_dataset, synth_generate
from .estimator import VGPDS
from .kernels import (
    ArdKernelParams,
    TemporalKernelSpec,
    ard_gram,
    gram_grad_hyper,
    temporal_gram,
)
from .metrics import MetricReport, evaluate
from .model_io import load_model, save_model
from .optimizer import GradCheckReport, TrainConfig, TrainResult, gradcheck, train
from .predictor import (
    LatentForecast,
    PredictiveMoments,
    forecast_latent,
    forecast_outputs,
    reconstruct_missing,
)
from .psi_stats import MomentSet, PsiBundle, psi0, psi1, psi2, psi_star
from .temporal_prior import SequenceLayout, TemporalPrior, build_prior, kl_q_p
from .validation import NumericalError, ParameterError, ShapeError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ArdKernelParams",
    "BoundGradients",
    "BoundReport",
    "GradCheckReport",
    "LatentForecast",
    "MetricReport",
    "MomentSet",
    "NumericalError",
    "ObservationBlock",
    "ParameterError",
    "PredictiveMoments",
    "PsiBundle",
    "SequenceLayout",
    "ShapeError",
    "TemporalKernelSpec",
    "TemporalPrior",
    "TimeSeriesDataset",
    "TrainConfig",
    "TrainResult",
    "VGPDS",
    "ValidationError",
    "VariationalState",
    "VgpdsModel",
    "ard_gram",
    "bound_gradients",
    "bound_value_and_gradients",
    "build_prior",
    "evaluate",
    "evaluate_bound",
    "forecast_latent",
    "forecast_outputs",
    "gradcheck",
    "gram_grad_hyper",
    "init_model",
    "kl_q_p",
    "load_dataset",
    "load_model",
    "nn_baseline",
    "precompute_data_term",
    "psi0",
    "psi1",
    "psi2",
    "psi_star",
    "reconstruct_missing",
    "save_dataset",
    "save_model",
    "synth_generate",
    "temporal_gram",
    "train",
]
