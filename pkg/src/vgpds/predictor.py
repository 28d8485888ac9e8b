"""Test-time inference: latent forecasts, output moments, reconstruction.

Given a trained model, three operations are available:

* :func:`forecast_latent` smooths the latent posterior to new time stamps,
  exactly as a GP regression posterior with pseudo-observations defined by
  the trained variational parameters.
* :func:`forecast_outputs` propagates the latent forecast through the
  mapping, giving output means and per-entry variances in closed form.
* :func:`reconstruct_missing` fills in unobserved output dimensions of a
  partially observed test sequence by optimizing a joint variational
  distribution over training and test latents; the training-side parameters
  are re-optimized because the two sets are coupled.

Test times are treated as a new independent sequence by default, or as a
continuation of one training sequence via ``continue_from``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import bound_core, kernels, optimizer, psi_stats, temporal_prior
from .bound_core import ObservationBlock, VariationalState
from .linalg import chol_inverse, inner_whitened, jittered_cholesky, plain_cholesky, symmetrize, tri_solve
from .psi_stats import MomentSet
from .validation import ShapeError, ValidationError, as_matrix, as_times, check_index_set


@dataclass(frozen=True)
class LatentForecast:
    """Marginal Gaussian moments of the latent paths at the test times."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class PredictiveMoments:
    """Output predictions: mean and variance of the noise-free outputs.

    ``variance`` refers to the latent function values; add
    ``noise_variance`` (done by :meth:`output_variance`) for observed
    outputs.  ``columns`` identifies which output dimensions the arrays
    cover (``None`` means all, in order).
    """

    mean: np.ndarray
    variance: np.ndarray
    noise_variance: float
    latent: LatentForecast
    columns: np.ndarray | None = None

    def output_variance(self):
        return self.variance + self.noise_variance


def forecast_latent(model, t_star, continue_from=None):
    """Latent posterior moments at new time stamps.

    Parameters
    ----------
    model : VgpdsModel
    t_star : array-like
        Test time stamps.
    continue_from : int, optional
        Index of the training sequence the test times extend.  ``None``
        treats them as an independent sequence, for which the forecast is
        the prior marginal.

    Returns
    -------
    LatentForecast
    """
    t_star = as_times(t_star, "t_star")
    prior = model.prior
    if continue_from is not None and not 0 <= continue_from < len(prior.groups):
        raise ValidationError(
            f"continue_from must name one of {len(prior.groups)} sequences"
        )
    k_cross = prior.cross_gram(t_star, continue_from)
    kdiag = prior.test_kdiag(t_star)

    state = model.state
    mean = k_cross @ state.mu_bar
    post = temporal_prior.implied_posterior(prior.covariance, state.mu_bar, state.lam)
    variance = np.empty_like(mean)
    for q in range(state.n_latent):
        smoothed = k_cross @ post.bhat[q]
        variance[:, q] = np.maximum(kdiag - np.sum(smoothed * k_cross, axis=1), 0.0)
    return LatentForecast(mean=mean, variance=variance)


def _predictive_weights(model, y, psi1_train, psi2_train):
    """Posterior weight matrix mapping test psi vectors to output means."""
    beta = model.beta
    kmm_raw = kernels.ard_gram(model.mapping, model.state.inducing)
    kmm, lmm, _ = jittered_cholesky(kmm_raw)
    m = kmm.shape[0]
    cp2c = inner_whitened(lmm, psi2_train)
    tmat = np.eye(m) + beta * cp2c
    ltm = plain_cholesky(symmetrize(tmat), "capacitance matrix")
    # (kmm + beta psi2)^{-1} = lmm^{-T} tmat^{-1} lmm^{-1}
    cmat = tri_solve(lmm, np.eye(m))
    reg_inv = symmetrize(cmat.T @ chol_inverse(ltm) @ cmat)
    weights = beta * reg_inv @ (psi1_train.T @ y)
    kmm_inv = symmetrize(cmat.T @ cmat)
    common = kmm_inv - reg_inv
    return weights, common


def _output_moments(model, weights, common, test_moments, columns, latent):
    star = psi_stats.psi_star(model.mapping, test_moments, model.state.inducing)
    mean = star.psi1_star.T @ weights
    n_star = test_moments.n
    variance = np.empty((n_star, weights.shape[1]))
    for i in range(n_star):
        p2i = star.psi2_per_point[i]
        p1i = star.psi1_star[:, i]
        cov_core = p2i - np.outer(p1i, p1i)
        shared = model.mapping.variance - float(np.sum(common * p2i))
        per_dim = np.einsum("md,mk,kd->d", weights, cov_core, weights)
        variance[i] = np.maximum(per_dim + shared, 0.0)
    return PredictiveMoments(
        mean=mean,
        variance=variance,
        noise_variance=1.0 / model.beta,
        latent=latent,
        columns=columns,
    )


def forecast_outputs(model, t_star, continue_from=None, y=None):
    """Predict outputs at new time stamps from the test times alone.

    ``y`` overrides the training outputs attached to the model (needed when
    the model was trained against a factor substitute of the data).

    Returns
    -------
    PredictiveMoments
    """
    y = model.y if y is None else as_matrix(y, "y")
    if y is None:
        raise ValidationError("output prediction needs the training outputs")
    latent = forecast_latent(model, t_star, continue_from)
    post = temporal_prior.implied_posterior(
        model.prior.covariance, model.state.mu_bar, model.state.lam
    )
    train_moments = MomentSet(post.means, post.var_diag)
    p1 = psi_stats.psi1(model.mapping, train_moments, model.state.inducing)
    p2 = psi_stats.psi2(model.mapping, train_moments, model.state.inducing)
    weights, common = _predictive_weights(model, y, p1, p2)
    test_moments = MomentSet(latent.mean, latent.variance)
    return _output_moments(model, weights, common, test_moments, None, latent)


@dataclass
class ReconstructionResult:
    """Moments over the missing dimensions plus optimization diagnostics."""

    moments: PredictiveMoments
    observed_columns: np.ndarray
    missing_columns: np.ndarray
    trace: list = field(default_factory=list)
    status: str = "converged"


def _extended_prior(prior, t_star, continue_from):
    n, n_star = prior.n, t_star.size
    groups = [g.copy() for g in prior.groups]
    test_rows = np.arange(n, n + n_star)
    if continue_from is None:
        groups.append(test_rows)
    else:
        groups[continue_from] = np.concatenate([groups[continue_from], test_rows])
    t_ext = np.concatenate([prior.t, t_star])
    return temporal_prior.TemporalPrior(prior.spec, t_ext, groups)


def reconstruct_missing(
    model,
    t_star,
    y_star_observed,
    observed_cols,
    iters=200,
    tol=1e-6,
    continue_from=None,
    lambda_init=0.5,
):
    """Reconstruct unobserved output dimensions of a partial test sequence.

    A joint variational distribution over training and test latents is
    re-optimized against three terms: the evidence of the unobserved
    training dimensions, the evidence of the observed dimensions over both
    training and test rows, and the divergence from the joint temporal
    prior.  Model hyperparameters and inducing inputs stay fixed.

    Parameters
    ----------
    model : VgpdsModel
    t_star : array-like of shape (n_star,)
    y_star_observed : ndarray (n_star, len(observed_cols))
    observed_cols : index list into the output dimensions
    iters : int
        With ``iters=0`` no optimization happens and the result equals
        :func:`forecast_outputs` restricted to the missing dimensions.

    Returns
    -------
    ReconstructionResult
    """
    if model.y is None:
        raise ValidationError("reconstruction needs the training outputs on the model")
    y = model.y
    n, d = y.shape
    t_star = as_times(t_star, "t_star")
    observed = check_index_set(observed_cols, d, "observed_cols")
    if observed.size == 0:
        raise ValidationError("at least one observed output dimension is required")
    missing = np.setdiff1d(np.arange(d), observed)
    y_star = as_matrix(y_star_observed, "y_star_observed")
    if y_star.shape != (t_star.size, observed.size):
        raise ShapeError(
            f"y_star_observed must be {(t_star.size, observed.size)}, got {y_star.shape}"
        )

    if missing.size == 0:
        latent = forecast_latent(model, t_star, continue_from)
        empty = PredictiveMoments(
            mean=np.zeros((t_star.size, 0)),
            variance=np.zeros((t_star.size, 0)),
            noise_variance=1.0 / model.beta,
            latent=latent,
            columns=missing,
        )
        return ReconstructionResult(empty, observed, missing, [], "nothing_missing")

    if iters == 0:
        full = forecast_outputs(model, t_star, continue_from)
        moments = PredictiveMoments(
            mean=full.mean[:, missing],
            variance=full.variance[:, missing],
            noise_variance=full.noise_variance,
            latent=full.latent,
            columns=missing,
        )
        return ReconstructionResult(moments, observed, missing, [], "no_iterations")

    prior_ext = _extended_prior(model.prior, t_star, continue_from)
    n_star = t_star.size
    state = model.state
    mu_bar_ext = np.vstack([state.mu_bar, np.zeros((n_star, state.n_latent))])
    lam_ext = np.vstack([state.lam, np.full((n_star, state.n_latent), lambda_init)])
    state_ext = VariationalState(mu_bar_ext, lam_ext, state.inducing)

    train_rows = np.arange(n)
    blocks = [
        ObservationBlock.from_outputs(y[:, missing], rows=train_rows),
        ObservationBlock.from_outputs(
            np.vstack([y[:, observed], y_star]), rows=None
        ),
    ]
    ext_model = bound_core.VgpdsModel(
        prior=prior_ext,
        mapping=model.mapping,
        beta=model.beta,
        state=state_ext,
        blocks=blocks,
    )
    config = optimizer.TrainConfig(
        warmup_iters=0,
        iters=iters,
        tol=tol,
        freeze=("inducing", "mapping_variance", "mapping_weights", "temporal", "beta"),
    )
    result = optimizer.train(ext_model, config)
    ext_model = result.model

    post = temporal_prior.implied_posterior(
        prior_ext.covariance, ext_model.state.mu_bar, ext_model.state.lam
    )
    train_moments = MomentSet(post.means[:n], post.var_diag[:n])
    test_moments = MomentSet(post.means[n:], post.var_diag[n:])
    latent = LatentForecast(mean=post.means[n:], variance=post.var_diag[n:])

    p1 = psi_stats.psi1(model.mapping, train_moments, state.inducing)
    p2 = psi_stats.psi2(model.mapping, train_moments, state.inducing)
    weights, common = _predictive_weights(model, y[:, missing], p1, p2)
    moments = _output_moments(model, weights, common, test_moments, missing, latent)
    return ReconstructionResult(moments, observed, missing, result.trace, result.status)
