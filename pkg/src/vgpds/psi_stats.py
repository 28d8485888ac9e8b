"""Closed-form expectations of the mapping kernel under a Gaussian q(X).

With a factorized Gaussian over latent points (diagonal marginal variances
``v``) and the exponentiated-quadratic mapping kernel, the three statistics

* ``psi0 = sum_n E[k(x_n, x_n)]``                          (scalar)
* ``psi1[n, m] = E[k(x_n, z_m)]``                          (n x m)
* ``psi2[m, m'] = sum_n E[k(z_m, x_n) k(x_n, z_m')]``      (m x m)

integrate in closed form:

    psi1[n, m] = variance * prod_q (w_q v_nq + 1)^{-1/2}
                 * exp(-0.5 * sum_q w_q (mu_nq - z_mq)^2 / (w_q v_nq + 1))

    psi2[m, m'] = variance^2 * sum_n prod_q (2 w_q v_nq + 1)^{-1/2}
                  * exp(-0.25 * sum_q w_q (z_mq - z_m'q)^2
                        - sum_q w_q (mu_nq - zbar_q)^2 / (2 w_q v_nq + 1))

with ``zbar = (z_m + z_m') / 2``.  These forms, and every analytic gradient
below, are locked in by Monte-Carlo and finite-difference oracle tests; do
not modify one side without the other.

Only the diagonal of each latent covariance enters, so callers pass marginal
moments.  Per-row contributions are summed in fixed order for reproducible
results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import ShapeError, ValidationError, as_matrix


@dataclass(frozen=True)
class MomentSet:
    """Marginal Gaussian moments of q(X): means and per-entry variances."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.means, "means")
        v = as_matrix(self.variances, "variances")
        if m.shape != v.shape:
            raise ShapeError(f"means {m.shape} and variances {v.shape} differ")
        if np.any(v < 0):
            raise ValidationError("variances must be non-negative")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n(self):
        return self.means.shape[0]

    @property
    def n_latent(self):
        return self.means.shape[1]

    def rows(self, idx):
        return MomentSet(self.means[idx], self.variances[idx])


@dataclass(frozen=True)
class PsiBundle:
    psi0: float
    psi1: np.ndarray
    psi2: np.ndarray


@dataclass(frozen=True)
class PsiStar:
    """Test-time statistics; ``psi1_star`` is oriented inducing-by-test."""

    psi0_star: float
    psi1_star: np.ndarray
    psi2_star: np.ndarray
    psi2_per_point: np.ndarray = field(repr=False)


def _check(params, moments, inducing):
    z = as_matrix(inducing, "inducing")
    if moments.n_latent != params.n_latent or z.shape[1] != params.n_latent:
        raise ShapeError(
            f"latent dimensions disagree: moments {moments.n_latent}, "
            f"inducing {z.shape[1]}, kernel {params.n_latent}"
        )
    return z


def psi0(params, moments):
    """Expected trace of the mapping gram over the data rows.

    The kernel diagonal is constant, so this is rows times variance and
    does not depend on the moments themselves.
    """
    return float(moments.n * params.variance)


def _psi1_parts(params, moments, z):
    w = params.weights
    denom = w[None, :] * moments.variances + 1.0  # (n, q)
    diff = moments.means[:, None, :] - z[None, :, :]  # (n, m, q)
    log_scale = -0.5 * np.sum(np.log(denom), axis=1)  # (n,)
    quad = 0.5 * np.einsum("nmq,nq->nm", diff ** 2, w[None, :] / denom)
    psi = params.variance * np.exp(log_scale[:, None] - quad)
    return psi, diff, denom


def psi1(params, moments, inducing):
    """Expected cross gram between data rows and inducing inputs, (n, m)."""
    z = _check(params, moments, inducing)
    return _psi1_parts(params, moments, z)[0]


def _psi2_parts(params, moments, z):
    w = params.weights
    denom = 2.0 * w[None, :] * moments.variances + 1.0  # (n, q)
    zdiff2 = (z[:, None, :] - z[None, :, :]) ** 2  # (m, m, q)
    zbar = 0.5 * (z[:, None, :] + z[None, :, :])  # (m, m, q)
    cross = 0.25 * np.einsum("ijq,q->ij", zdiff2, w)  # (m, m)
    log_scale = -0.5 * np.sum(np.log(denom), axis=1)  # (n,)
    # (mu_nq - zbar_ijq)^2 expanded to avoid a (n, m, m, q) temporary
    mu, wd = moments.means, w[None, :] / denom  # (n, q)
    quad = (
        np.einsum("nq,nq->n", mu ** 2, wd)[:, None, None]
        - 2.0 * np.einsum("nq,ijq->nij", mu * wd, zbar)
        + np.einsum("nq,ijq->nij", wd, zbar ** 2)
    )
    per_point = params.variance ** 2 * np.exp(
        log_scale[:, None, None] - cross[None, :, :] - quad
    )
    return per_point, zdiff2, zbar, denom


def psi2(params, moments, inducing, per_point=False):
    """Expected inner product of cross grams, (m, m) or per-row (n, m, m)."""
    z = _check(params, moments, inducing)
    pp = _psi2_parts(params, moments, z)[0]
    return pp if per_point else pp.sum(axis=0)


def psi_bundle(params, moments, inducing):
    return PsiBundle(
        psi0=psi0(params, moments),
        psi1=psi1(params, moments, inducing),
        psi2=psi2(params, moments, inducing),
    )


def psi_star(params, test_moments, inducing):
    """Statistics of q(X*) used at prediction time.

    Returns the scalar expected self-covariance summed over test rows, the
    inducing-by-test expected cross gram, the aggregated (m, m) second
    moment, and its per-test-row slices needed for predictive covariances.
    """
    z = _check(params, test_moments, inducing)
    p1 = psi1(params, test_moments, z)
    pp = psi2(params, test_moments, z, per_point=True)
    return PsiStar(
        psi0_star=psi0(params, test_moments),
        psi1_star=p1.T.copy(),
        psi2_star=pp.sum(axis=0),
        psi2_per_point=pp,
    )


# ----------------------------------------------------------------------
# gradients
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Psi1Grads:
    """Nonzero partials of psi1; entry [n, m, q] differentiates psi1[n, m]."""

    means: np.ndarray
    variances: np.ndarray
    inducing: np.ndarray
    weights: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class Psi2Grads:
    """Partials of the per-row psi2 contributions.

    ``means``/``variances``/``weights`` entries [n, i, j, q] differentiate
    the row-n contribution to psi2[i, j].  ``inducing_slot`` holds the
    derivative with respect to the first argument z_i only; the full
    derivative w.r.t. z_k follows by symmetry of psi2.  ``variance`` is the
    row-summed matrix partial.
    """

    means: np.ndarray
    variances: np.ndarray
    inducing_slot: np.ndarray
    weights: np.ndarray
    variance: np.ndarray


def psi1_grads(params, moments, inducing):
    z = _check(params, moments, inducing)
    w = params.weights
    psi, diff, denom = _psi1_parts(params, moments, z)
    ratio = w[None, None, :] / denom[:, None, :]  # (n, m, q) broadcastable
    d_means = psi[:, :, None] * (-ratio * diff)
    d_inducing = -d_means
    d_vars = psi[:, :, None] * (0.5 * ratio * (ratio * diff ** 2 - 1.0))
    # d/dw: -v/(2 denom) - diff^2 / (2 denom^2)
    v = moments.variances[:, None, :]
    d_w = psi[:, :, None] * (-0.5 * v / denom[:, None, :] - 0.5 * diff ** 2 / denom[:, None, :] ** 2)
    return Psi1Grads(
        means=d_means,
        variances=d_vars,
        inducing=d_inducing,
        weights=d_w,
        variance=psi / params.variance,
    )


def psi2_grads(params, moments, inducing):
    z = _check(params, moments, inducing)
    w = params.weights
    per_point, zdiff2, zbar, denom = _psi2_parts(params, moments, z)
    mu = moments.means
    v = moments.variances
    # centred[n, i, j, q] = mu_nq - zbar_ijq
    centred = mu[:, None, None, :] - zbar[None, :, :, :]
    ratio = (w / denom[:, :])[:, None, None, :]  # w_q / denom_nq
    d_means = per_point[..., None] * (-2.0 * ratio * centred)
    d_vars = per_point[..., None] * (-ratio + 2.0 * (ratio * centred) ** 2)
    d_w = per_point[..., None] * (
        -(v / denom)[:, None, None, :]
        - 0.25 * zdiff2[None, :, :, :]
        - centred ** 2 / (denom ** 2)[:, None, None, :]
    )
    zdelta = z[:, None, :] - z[None, :, :]  # (i, j, q)
    d_slot = per_point[..., None] * (
        -0.5 * w[None, None, None, :] * zdelta[None, :, :, :] + ratio * centred
    )
    return Psi2Grads(
        means=d_means,
        variances=d_vars,
        inducing_slot=d_slot,
        weights=d_w,
        variance=2.0 * per_point.sum(axis=0) / params.variance,
    )


@dataclass
class PsiGradContraction:
    """Gradients of ``w0*psi0 + sum(w1*psi1) + sum(w2*psi2)``."""

    means: np.ndarray
    variances: np.ndarray
    inducing: np.ndarray
    weights: np.ndarray
    variance: float


def contract_psi_grads(params, moments, inducing, w0, w1, w2):
    """Chain-rule contraction of all psi partials against fixed weights.

    Parameters
    ----------
    w0 : float
        Weight on psi0.
    w1 : ndarray (n, m)
        Weights on psi1 entries.
    w2 : ndarray (m, m)
        Weights on psi2 entries (symmetrized internally).

    Returns
    -------
    PsiGradContraction
    """
    z = _check(params, moments, inducing)
    w = params.weights
    mu, v = moments.means, moments.variances
    w2 = 0.5 * (w2 + w2.T)

    psi, diff, denom1 = _psi1_parts(params, moments, z)
    t1 = w1 * psi  # (n, m)
    r1 = w[None, :] / denom1  # (n, q)
    s1 = np.einsum("nm,nmq->nq", t1, diff)
    s1sq = np.einsum("nm,nmq->nq", t1, diff ** 2)
    t1row = t1.sum(axis=1)  # (n,)

    d_means = -r1 * s1
    d_vars = 0.5 * r1 ** 2 * s1sq - 0.5 * r1 * t1row[:, None]
    d_inducing = np.einsum("nm,nmq,nq->mq", t1, diff, r1)
    d_weights = (
        -0.5 * np.einsum("n,nq->q", t1row, v / denom1)
        - 0.5 * np.einsum("nm,nmq,nq->q", t1, diff ** 2, 1.0 / denom1 ** 2)
    )
    d_variance = float(t1.sum()) / params.variance + w0 * moments.n

    per_point, zdiff2, zbar, denom2 = _psi2_parts(params, moments, z)
    t2 = w2[None, :, :] * per_point  # (n, m, m)
    r2 = w[None, :] / denom2  # (n, q)
    s2 = t2.sum(axis=(1, 2))  # (n,)
    a1 = np.einsum("nij,ijq->nq", t2, zbar)
    a2 = np.einsum("nij,ijq->nq", t2, zbar ** 2)
    # sum over (i, j) of t2 * (mu - zbar): mu*s2 - a1, and of t2 * (mu - zbar)^2
    lin = mu * s2[:, None] - a1
    quad = mu ** 2 * s2[:, None] - 2.0 * mu * a1 + a2

    d_means += -2.0 * r2 * lin
    d_vars += -r2 * s2[:, None] + 2.0 * r2 ** 2 * quad
    d_weights += (
        -np.einsum("n,nq->q", s2, v / denom2)
        - 0.25 * np.einsum("nij,ijq->q", t2, zdiff2)
        - np.einsum("nq,nq->q", quad, 1.0 / denom2 ** 2)
    )
    d_variance += 2.0 * float(per_point.sum(axis=0).ravel() @ w2.ravel()) / params.variance

    # inducing: 2 * sum_{n,j} t2[n, k, j] * (first-slot partial of the
    # row-n kernel product), using symmetry of t2 in its last two axes
    t2sum = t2.sum(axis=0)  # (k, j)
    rowsum_n = t2.sum(axis=2)  # (n, k)
    tz = np.einsum("nkj,jq->nkq", t2, z)
    term_a = -w[None, :] * (z * t2sum.sum(axis=1)[:, None] - t2sum @ z)
    inner_b = (
        mu[:, None, :] * rowsum_n[:, :, None]
        - 0.5 * (z[None, :, :] * rowsum_n[:, :, None] + tz)
    )
    term_b = 2.0 * np.einsum("nq,nkq->kq", r2, inner_b)
    d_inducing += term_a + term_b

    return PsiGradContraction(
        means=d_means,
        variances=d_vars,
        inducing=d_inducing,
        weights=d_weights,
        variance=d_variance,
    )
