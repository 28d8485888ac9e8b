"""Scikit-learn style estimator facade.

Wraps model construction, training, and prediction behind the familiar
``fit`` / ``transform`` / ``predict`` surface so the model composes with
pipelines, ``get_params`` based search, and friends.  ``fit`` consumes the
data matrix (rows are time steps) plus optional ``t`` and ``seq`` keywords;
``transform`` returns the latent paths found for the training data;
``predict`` takes new time stamps.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import bound_core, optimizer, predictor
from .datasets import TimeSeriesDataset
from .kernels import TemporalKernelSpec
from .validation import ValidationError


def resolve_temporal_spec(value):
    """Accept a spec object, a JSON document, or a shorthand like ``rbf+white``."""
    if isinstance(value, TemporalKernelSpec):
        return value
    if isinstance(value, dict):
        return TemporalKernelSpec.from_json(value)
    if isinstance(value, str):
        if value.strip().startswith("{"):
            return TemporalKernelSpec.from_json(value)
        parts = [p.strip() for p in value.split("+") if p.strip()]
        defaults = {
            "rbf": TemporalKernelSpec.rbf(),
            "matern32": TemporalKernelSpec.matern32(),
            "periodic": TemporalKernelSpec.periodic(),
            "white": TemporalKernelSpec.white(0.1),
            "bias": TemporalKernelSpec.bias(0.1),
        }
        try:
            specs = [defaults[p] for p in parts]
        except KeyError as exc:
            raise ValidationError(
                f"unknown kernel shorthand {exc.args[0]!r}; "
                f"expected names from {sorted(defaults)} joined by '+'"
            ) from None
        return specs[0] if len(specs) == 1 else TemporalKernelSpec.sum_of(*specs)
    raise ValidationError(f"cannot interpret temporal kernel {value!r}")


class VGPDS(BaseEstimator, TransformerMixin):
    """Gaussian process dynamical system trained by variational inference.

    Parameters
    ----------
    n_latent : int
        Latent dimensionality; superfluous dimensions are switched off
        during training by the relevance weights.
    temporal_kernel : str, dict or TemporalKernelSpec
        Covariance over time, e.g. ``"rbf+white+bias"``.
    n_inducing : int or None
        Number of inducing points (default ``min(n, 50)``).
    warmup_iters, iters, tol : training schedule (see TrainConfig).
    lambda_init : float
        Starting value for the variational loadings.
    beta_init : float or None
        Starting noise precision; default is 100 over the output variance.
    freeze : tuple of str
        Parameter groups excluded from training.
    optimize_period : bool
        Free the period of periodic components.
    seed : int
        Controls initialization only; training itself is deterministic.

    Attributes
    ----------
    model_ : VgpdsModel
    result_ : TrainResult
    ard_weights_ : ndarray (n_latent,)
    active_dims_ : ndarray of latent dimensions with non-negligible weight
    bound_ : float, final value of the training objective
    """

    def __init__(
        self,
        n_latent=8,
        temporal_kernel="rbf+white+bias",
        n_inducing=None,
        warmup_iters=50,
        iters=200,
        tol=1e-6,
        lambda_init=0.5,
        beta_init=None,
        mapping_variance_init=1.0,
        freeze=(),
        optimize_period=False,
        seed=0,
        verbose=0,
    ):
        self.n_latent = n_latent
        self.temporal_kernel = temporal_kernel
        self.n_inducing = n_inducing
        self.warmup_iters = warmup_iters
        self.iters = iters
        self.tol = tol
        self.lambda_init = lambda_init
        self.beta_init = beta_init
        self.mapping_variance_init = mapping_variance_init
        self.freeze = freeze
        self.optimize_period = optimize_period
        self.seed = seed
        self.verbose = verbose

    def _config(self):
        return optimizer.TrainConfig(
            warmup_iters=self.warmup_iters,
            iters=self.iters,
            tol=self.tol,
            freeze=tuple(self.freeze),
            optimize_period=self.optimize_period,
        )

    def fit(self, X, y=None, t=None, seq=None):
        """Train on a data matrix whose rows are time steps.

        ``t`` and ``seq`` follow the dataset conventions (defaults: unit
        spacing, one sequence).
        """
        dataset = (
            X
            if isinstance(X, TimeSeriesDataset)
            else TimeSeriesDataset.from_outputs(np.asarray(X, dtype=float), t=t, seq_ids=seq)
        )
        spec = resolve_temporal_spec(self.temporal_kernel)
        model = bound_core.init_model(
            dataset.y,
            dataset.t,
            self.n_latent,
            spec,
            layout=dataset.layout,
            n_inducing=self.n_inducing,
            lambda_init=self.lambda_init,
            mapping_variance=self.mapping_variance_init,
            beta=self.beta_init,
            seed=self.seed,
            column_names=dataset.column_names,
        )
        result = optimizer.train(model, self._config())
        if self.verbose:
            print(
                f"trained: status={result.status} bound={result.trace[-1].value:.4f} "
                f"iterations={result.trace[-1].iteration}"
            )
        self.model_ = result.model
        self.result_ = result
        self.bound_ = result.trace[-1].value
        self.ard_weights_ = result.model.mapping.weights.copy()
        cutoff = 0.01 * self.ard_weights_.max()
        self.active_dims_ = np.flatnonzero(self.ard_weights_ >= cutoff)
        self.n_features_in_ = dataset.n_dims
        return self

    def transform(self, X=None):
        """Latent posterior means for the training rows.

        The latent space is tied to the training data, so ``X`` is accepted
        only for pipeline compatibility and must be the training matrix or
        ``None``.
        """
        check_is_fitted(self, "model_")
        model = self.model_
        return model.prior.covariance @ model.state.mu_bar

    def predict(self, T, continue_from=None):
        """Mean outputs at new time stamps."""
        check_is_fitted(self, "model_")
        return predictor.forecast_outputs(self.model_, T, continue_from=continue_from).mean

    def predict_moments(self, T, continue_from=None):
        """Full predictive moments at new time stamps."""
        check_is_fitted(self, "model_")
        return predictor.forecast_outputs(self.model_, T, continue_from=continue_from)

    def reconstruct(self, T, y_observed, observed_cols, iters=200, continue_from=None):
        """Fill in missing output dimensions of a partial test sequence."""
        check_is_fitted(self, "model_")
        return predictor.reconstruct_missing(
            self.model_,
            T,
            y_observed,
            observed_cols,
            iters=iters,
            continue_from=continue_from,
        )

    def score(self, X=None, y=None):
        """Final training objective (higher is better)."""
        check_is_fitted(self, "model_")
        return float(self.bound_)
