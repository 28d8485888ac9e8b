"""Temporal prior over latent trajectories and its divergence from q(X).

The prior covariance over all rows is assembled per independent sequence:
within-sequence entries come from the temporal kernel, entries between
different sequences are exactly zero.  The assembled matrix carries the
package jitter and is immutable after construction, together with its
Cholesky factor.

The posterior over each latent dimension is parameterized indirectly by a
length-N mean weight vector and a length-N non-negative precision-like
vector.  :func:`implied_posterior` maps those to the actual Gaussian moments
through the identity

    S = K - K R (I + R K R)^{-1} R K,      R = diag(sqrt(lam)),

whose inner matrix has eigenvalues bounded below by one, so the route is
stable for any ``lam >= 0`` and never inverts K itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .linalg import chol_inverse, chol_logdet, jittered_cholesky, plain_cholesky, symmetrize
from .validation import ShapeError, ValidationError, as_times


@dataclass(frozen=True)
class SequenceLayout:
    """Partition of the rows ``0..n-1`` into contiguous independent sequences.

    ``boundaries`` holds half-open ``(start, end)`` index pairs, ordered,
    disjoint, and jointly covering every row.
    """

    boundaries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.boundaries:
            raise ValidationError("layout needs at least one sequence")
        prev_end = 0
        for start, end in self.boundaries:
            if start != prev_end or end <= start:
                raise ValidationError(
                    f"sequence ranges must be contiguous and non-empty, got {self.boundaries}"
                )
            prev_end = end
        object.__setattr__(self, "boundaries", tuple((int(s), int(e)) for s, e in self.boundaries))

    @classmethod
    def single(cls, n):
        return cls(((0, int(n)),))

    @classmethod
    def from_ids(cls, seq_ids):
        """Build from a per-row sequence-id column (ids must be grouped)."""
        ids = np.asarray(seq_ids)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError("seq ids must be a non-empty 1-d array")
        change = np.flatnonzero(ids[1:] != ids[:-1]) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [ids.size]))
        if len(np.unique(ids)) != len(starts):
            raise ValidationError("sequence ids must be contiguous runs, found a repeated id")
        return cls(tuple(zip(starts.tolist(), ends.tolist())))

    @property
    def n(self):
        return self.boundaries[-1][1]

    @property
    def n_sequences(self):
        return len(self.boundaries)

    def groups(self):
        return [np.arange(s, e) for s, e in self.boundaries]

    def seq_ids(self):
        out = np.empty(self.n, dtype=int)
        for i, (s, e) in enumerate(self.boundaries):
            out[s:e] = i
        return out


class TemporalPrior:
    """Assembled prior covariance over all rows, with cached factorization.

    Use :func:`build_prior` for datasets (contiguous sequences); the
    ``groups`` constructor argument additionally accepts arbitrary index
    groups, which prediction code uses to weave test rows into an existing
    sequence.
    """

    def __init__(self, spec, t, groups, layout=None):
        self.spec = spec
        self.layout = layout
        self.t = as_times(t, "t")
        n = self.t.size
        self.groups = [np.asarray(g, dtype=int) for g in groups]
        flat = np.concatenate(self.groups)
        if sorted(flat.tolist()) != list(range(n)):
            raise ValidationError("groups must partition the row indices exactly")
        raw = np.zeros((n, n))
        for g in self.groups:
            tg = self.t[g]
            raw[np.ix_(g, g)] = kernels.temporal_gram(spec, tg, tg)
        raw = symmetrize(raw)
        self.covariance, self.chol, self.jitter = jittered_cholesky(raw)
        self.log_det = chol_logdet(self.chol)

    @property
    def n(self):
        return self.t.size

    def grad_hyper(self, name):
        """Derivative of the (jittered) prior covariance w.r.t. one hyperparameter."""
        n = self.n
        out = np.zeros((n, n))
        for g in self.groups:
            tg = self.t[g]
            out[np.ix_(g, g)] = kernels.temporal_gram_grad(self.spec, name, tg, tg)
        # The jitter is relative to the mean diagonal, so it moves with it.
        jit_grad = self.jitter / kernels.temporal_kdiag(self.spec, self.t).mean()
        jit_grad *= float(np.mean(np.diag(out)))
        out[np.diag_indices(n)] += jit_grad
        return symmetrize(out)

    def cross_gram(self, t_star, group_index=None):
        """Covariance between test times and training rows.

        Rows outside ``group_index`` are independent of the test times,
        hence zero; ``None`` treats the test times as a new sequence.
        """
        t_star = as_times(t_star, "t_star")
        out = np.zeros((t_star.size, self.n))
        if group_index is not None:
            g = self.groups[group_index]
            out[:, g] = kernels.temporal_gram(self.spec, t_star, self.t[g])
        return out

    def test_gram(self, t_star):
        t_star = as_times(t_star, "t_star")
        return kernels.temporal_gram(self.spec, t_star, t_star)

    def test_kdiag(self, t_star):
        return kernels.temporal_kdiag(self.spec, as_times(t_star, "t_star"))


def build_prior(spec, t, layout=None):
    """Assemble the temporal prior for a dataset.

    Parameters
    ----------
    spec : TemporalKernelSpec
    t : array-like of shape (n,)
    layout : SequenceLayout, optional
        Defaults to a single sequence covering all rows.
    """
    t = as_times(t, "t")
    layout = SequenceLayout.single(t.size) if layout is None else layout
    if layout.n != t.size:
        raise ShapeError(f"layout covers {layout.n} rows but t has {t.size}")
    return TemporalPrior(spec, t, layout.groups(), layout=layout)


# ----------------------------------------------------------------------
# posterior implied by the reparametrized variational state
# ----------------------------------------------------------------------

@dataclass
class ImpliedPosterior:
    """Per-latent-dimension Gaussian moments implied by (mu_bar, lam).

    ``means`` and ``var_diag`` are (n, q); full covariances, the smoothing
    matrices ``bhat[q] = R (I + R K R)^{-1} R`` and the stabilized log-dets
    and traces are kept per dimension for reuse by bound and gradient code.
    """

    means: np.ndarray
    var_diag: np.ndarray
    covariances: list = field(repr=False)
    bhat: list = field(repr=False)
    trace_inner_inv: np.ndarray = field(repr=False)
    logdet_inner: np.ndarray = field(repr=False)


def implied_posterior(covariance, mu_bar, lam):
    """Map reparametrized variational parameters to posterior moments.

    Parameters
    ----------
    covariance : ndarray (n, n)
        Prior covariance (jittered model matrix).
    mu_bar, lam : ndarray (n, q)
        Mean weights and non-negative diagonal loadings, one column per
        latent dimension.

    Returns
    -------
    ImpliedPosterior
    """
    k = covariance
    n, n_latent = mu_bar.shape
    if lam.shape != mu_bar.shape:
        raise ShapeError("mu_bar and lam must have identical shapes")
    if np.any(lam < 0):
        raise ValidationError("lam must be non-negative")
    means = k @ mu_bar
    var_diag = np.empty_like(means)
    covariances = []
    bhats = []
    tr_inner = np.empty(n_latent)
    ld_inner = np.empty(n_latent)
    eye = np.eye(n)
    for q in range(n_latent):
        root = np.sqrt(lam[:, q])
        inner = eye + root[:, None] * k * root[None, :]
        lower = plain_cholesky(symmetrize(inner), "I + R K R")
        inner_inv = chol_inverse(lower)
        bhat = root[:, None] * inner_inv * root[None, :]
        cov = symmetrize(k - k @ bhat @ k)
        covariances.append(cov)
        bhats.append(bhat)
        var_diag[:, q] = np.maximum(np.diag(cov), 0.0)
        tr_inner[q] = float(np.trace(inner_inv))
        ld_inner[q] = chol_logdet(lower)
    return ImpliedPosterior(
        means=means,
        var_diag=var_diag,
        covariances=covariances,
        bhat=bhats,
        trace_inner_inv=tr_inner,
        logdet_inner=ld_inner,
    )


def kl_components(covariance, mu_bar, lam, posterior=None):
    """Per-dimension divergence between the implied posterior and the prior.

    Evaluates ``0.5 * (tr(B^{-1}) + mu_bar' K mu_bar + log|B| - n)`` with
    ``B = I + R K R``, which equals the Gaussian divergence
    ``KL(N(mu, S) || N(0, K))`` without ever touching ``K^{-1}``.
    """
    post = implied_posterior(covariance, mu_bar, lam) if posterior is None else posterior
    n = covariance.shape[0]
    quad = np.einsum("nq,nq->q", mu_bar, covariance @ mu_bar)
    return 0.5 * (post.trace_inner_inv + quad + post.logdet_inner - n)


def kl_q_p(prior, mu_bar, lam):
    """Total divergence between q(X) and the temporal prior.

    Parameters
    ----------
    prior : TemporalPrior
    mu_bar, lam : ndarray (n, q)

    Returns
    -------
    float
        Non-negative; exactly zero when both arguments vanish.
    """
    mu_bar = np.asarray(mu_bar, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if mu_bar.ndim == 1:
        mu_bar = mu_bar[:, None]
    if lam.ndim == 1:
        lam = lam[:, None]
    if mu_bar.shape[0] != prior.n:
        raise ShapeError(f"mu_bar has {mu_bar.shape[0]} rows, prior covers {prior.n}")
    return float(np.sum(kl_components(prior.covariance, mu_bar, lam)))
