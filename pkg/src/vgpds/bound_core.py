"""Variational lower bound on the log marginal likelihood and its gradients.

The objective is ``data_fit - kl``: an inducing-point evidence term over the
observed outputs plus the divergence between q(X) and the temporal prior.
The data term touches the outputs only through their outer-product matrix,
so a model over a million output dimensions costs the same as one over a
handful once that matrix is cached (see :func:`precompute_data_term`).

Observations are organized into :class:`ObservationBlock` groups, each
holding a set of output dimensions together with the latent rows those
dimensions are observed on.  Ordinary training uses a single block spanning
everything; partially observed reconstruction adds a second block, and both
share this implementation.

All gradients are analytic and validated against central finite differences
of the value computed here; any change to one side must keep the other in
sync (run the gradient check suite).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, psi_stats, temporal_prior
from .kernels import ArdKernelParams
from .linalg import (
    chol_inverse,
    chol_logdet,
    chol_solve,
    inner_whitened,
    jittered_cholesky,
    plain_cholesky,
    symmetrize,
    tri_solve,
)
from .psi_stats import MomentSet
from .validation import (
    NumericalError,
    ParameterError,
    ShapeError,
    ValidationError,
    as_matrix,
    check_positive,
)

LOG_2PI = float(np.log(2.0 * np.pi))
LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class VariationalState:
    """Reparametrized variational parameters.

    ``mu_bar`` are the mean weight vectors (posterior means are the prior
    covariance times these), ``lam`` the non-negative diagonal loadings that
    determine posterior covariances, and ``inducing`` the pseudo-input
    locations shared across output dimensions.
    """

    mu_bar: np.ndarray
    lam: np.ndarray
    inducing: np.ndarray

    def __post_init__(self):
        mu_bar = as_matrix(self.mu_bar, "mu_bar")
        lam = as_matrix(self.lam, "lam")
        inducing = as_matrix(self.inducing, "inducing")
        if lam.shape != mu_bar.shape:
            raise ShapeError("mu_bar and lam must have identical shapes")
        if inducing.shape[1] != mu_bar.shape[1]:
            raise ShapeError("inducing inputs must have one column per latent dimension")
        if np.any(lam < 0):
            raise ValidationError("lam must be non-negative")
        object.__setattr__(self, "mu_bar", mu_bar)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "inducing", inducing)

    @property
    def n(self):
        return self.mu_bar.shape[0]

    @property
    def n_latent(self):
        return self.mu_bar.shape[1]

    @property
    def n_inducing(self):
        return self.inducing.shape[0]


@dataclass(frozen=True)
class ObservationBlock:
    """A group of output dimensions observed on a subset of latent rows.

    ``yy`` is the row-by-row outer-product matrix of the block's outputs,
    ``rows`` the latent row indices it covers (``None`` means all rows).
    """

    yy: np.ndarray
    trace_yy: float
    n_dims: int
    rows: np.ndarray | None = None

    @classmethod
    def from_outputs(cls, y, rows=None):
        y = as_matrix(y, "y")
        return cls(
            yy=symmetrize(y @ y.T),
            trace_yy=float(np.sum(y * y)),
            n_dims=y.shape[1],
            rows=None if rows is None else np.asarray(rows, dtype=int),
        )

    def row_indices(self, n):
        return np.arange(n) if self.rows is None else self.rows


@dataclass(frozen=True)
class DataTerm:
    """Cached output statistics: outer-product matrix, trace, optional factor.

    When there are more output dimensions than rows, ``factor`` is a square
    matrix with the same outer product as the data, which can stand in for
    the outputs everywhere the bound is concerned.
    """

    yy: np.ndarray
    trace: float
    factor: np.ndarray | None
    checksum: str
    n_dims: int


def data_checksum(y):
    digest = hashlib.sha256(np.ascontiguousarray(y, dtype=float).tobytes())
    return digest.hexdigest()


def precompute_data_term(y):
    """Precompute everything the bound needs from the raw outputs.

    Parameters
    ----------
    y : ndarray (n, d)

    Returns
    -------
    DataTerm
    """
    y = as_matrix(y, "y")
    n, d = y.shape
    yy = symmetrize(y @ y.T)
    factor = None
    if d > n:
        vals, vecs = np.linalg.eigh(yy)
        factor = vecs * np.sqrt(np.maximum(vals, 0.0))[None, :]
    return DataTerm(
        yy=yy,
        trace=float(np.sum(y * y)),
        factor=factor,
        checksum=data_checksum(y),
        n_dims=d,
    )


@dataclass
class VgpdsModel:
    """Model instance: prior, kernels, noise precision, variational state.

    Mutated only between bound evaluations (by the optimizer); evaluation
    itself is read-only.
    """

    prior: temporal_prior.TemporalPrior
    mapping: ArdKernelParams
    beta: float
    state: VariationalState
    blocks: list
    y: np.ndarray | None = None
    data_checksum: str | None = None
    column_names: tuple = ()

    def __post_init__(self):
        check_positive(self.beta, "beta")
        if self.state.n != self.prior.n:
            raise ShapeError(
                f"state covers {self.state.n} rows, prior covers {self.prior.n}"
            )
        if self.state.n_inducing > self.state.n:
            raise ValidationError(
                "more inducing points than data rows is never useful; "
                f"got {self.state.n_inducing} > {self.state.n}"
            )
        for block in self.blocks:
            rows = block.row_indices(self.state.n)
            if block.yy.shape != (rows.size, rows.size):
                raise ShapeError("observation block matrix does not match its row set")

    @property
    def n(self):
        return self.state.n

    @property
    def n_latent(self):
        return self.state.n_latent

    @property
    def n_inducing(self):
        return self.state.n_inducing

    @property
    def n_dims(self):
        return int(sum(b.n_dims for b in self.blocks))

    def with_state(self, state):
        return replace(self, state=state)


@dataclass(frozen=True)
class BoundReport:
    """Value of the bound with its two constituents and per-term diagnostics."""

    value: float
    data_fit: float
    kl: float
    diagnostics: dict = field(default_factory=dict, repr=False)


@dataclass
class BoundGradients:
    """Gradient of the bound on the natural (non-log) parameter scale."""

    mu_bar: np.ndarray
    lam: np.ndarray
    inducing: np.ndarray
    mapping_variance: float
    mapping_weights: np.ndarray
    temporal: dict
    beta: float


# ----------------------------------------------------------------------
# data-fit term for one observation block
# ----------------------------------------------------------------------

def _mapping_gram_factors(mapping, inducing):
    kmm_raw = kernels.ard_gram(mapping, inducing)
    kmm, lmm, jitter = jittered_cholesky(kmm_raw)
    return kmm_raw, kmm, lmm, jitter


def _block_value(mapping, beta, inducing, moments, block, lmm, want_caches):
    rows = block.row_indices(moments.n)
    sub = moments.rows(rows)
    r, d = sub.n, block.n_dims
    p0 = psi_stats.psi0(mapping, sub)
    p1 = psi_stats.psi1(mapping, sub, inducing)
    p2_pp = psi_stats.psi2(mapping, sub, inducing, per_point=True)
    p2 = p2_pp.sum(axis=0)

    cp2c = inner_whitened(lmm, p2)
    m = inducing.shape[0]
    tmat = np.eye(m) + beta * cp2c
    ltm = plain_cholesky(symmetrize(tmat), "capacitance matrix")
    logdet_t = chol_logdet(ltm)

    proj = tri_solve(lmm, p1.T)  # (m, r)
    white = tri_solve(ltm, proj)  # (m, r)
    white_yy = white @ block.yy
    quad = float(np.sum(white * white_yy))
    trace_cp2c = float(np.trace(cp2c))

    value = (
        d * (0.5 * r * (np.log(beta) - LOG_2PI) - 0.5 * logdet_t)
        - 0.5 * beta * block.trace_yy
        + 0.5 * beta ** 2 * quad
        - 0.5 * beta * d * p0
        + 0.5 * beta * d * trace_cp2c
    )
    if not np.isfinite(value):
        raise NumericalError("data-fit term is not finite; hyperparameters are degenerate")
    diag = {
        "logdet_capacitance": logdet_t,
        "quad_term": 0.5 * beta ** 2 * quad,
        "psi0": p0,
        "trace_term": 0.5 * beta * d * trace_cp2c,
    }
    caches = None
    if want_caches:
        caches = {
            "rows": rows, "sub": sub, "p0": p0, "p1": p1, "p2": p2,
            "ltm": ltm, "trace_cp2c": trace_cp2c,
        }
    return value, diag, caches


def _block_gradients(mapping, beta, inducing, block, kmm, lmm, caches):
    """Partial derivatives of one block's data-fit term.

    Returns per-row gradients w.r.t. the posterior moments (scattered by the
    caller), the weight matrices for the mapping-kernel chain, and the noise
    precision derivative.
    """
    rows, sub = caches["rows"], caches["sub"]
    p0, p1, p2 = caches["p0"], caches["p1"], caches["p2"]
    ltm, trace_cp2c = caches["ltm"], caches["trace_cp2c"]
    d = block.n_dims
    r = sub.n
    m = inducing.shape[0]

    tinv = chol_inverse(ltm)
    cmat = tri_solve(lmm, np.eye(m))  # lmm^{-1}
    kmm_inv = symmetrize(cmat.T @ cmat)
    ainv = beta * symmetrize(cmat.T @ tinv @ cmat)

    yyp = block.yy @ p1  # (r, m)
    e1 = beta * yyp @ ainv
    mid = symmetrize(p1.T @ yyp)
    q2 = symmetrize(ainv @ mid @ ainv)
    e2 = 0.5 * beta * (d * kmm_inv - (d / beta) * ainv - q2)
    ek = e2 / beta - 0.5 * beta * d * symmetrize(kmm_inv @ p2 @ kmm_inv)

    akma = ainv @ kmm @ ainv
    d_beta = (
        0.5 * d * ((r - m) / beta + trace_cp2c - p0 + float(np.sum(kmm * ainv)) / beta ** 2)
        - 0.5 * block.trace_yy
        + 0.5 * float(np.sum(ainv * mid))
        + 0.5 / beta * float(np.sum(akma * mid))
    )

    con = psi_stats.contract_psi_grads(
        mapping, sub, inducing, w0=-0.5 * beta * d, w1=e1, w2=e2
    )
    return rows, con, ek, d_beta


def _mapping_chain(mapping, inducing, kmm_raw, kmm, ek_total):
    """Gradients flowing through the inducing gram matrix."""
    z = inducing
    w = mapping.weights
    d_variance = float(np.sum(ek_total * kmm)) / mapping.variance
    zdiff = z[:, None, :] - z[None, :, :]
    ek_sym = ek_total + ek_total.T
    d_weights = -0.25 * np.einsum("ij,ijq,ij->q", ek_sym, zdiff ** 2, kmm_raw)
    d_inducing = -np.einsum("kj,kjq,kj->kq", ek_sym, zdiff, kmm_raw) * w[None, :]
    return d_variance, d_weights, d_inducing


# ----------------------------------------------------------------------
# public entry points
# ----------------------------------------------------------------------

def evaluate_bound(model):
    """Evaluate the lower bound for the current model.

    Returns
    -------
    BoundReport
        ``value == data_fit - kl`` exactly.
    """
    report, _ = _evaluate(model, want_gradients=False)
    return report


def bound_gradients(model):
    """Analytic gradient of the bound for the current model."""
    _, grads = _evaluate(model, want_gradients=True)
    return grads


def bound_value_and_gradients(model):
    """Value and gradient in one pass, sharing every factorization."""
    return _evaluate(model, want_gradients=True)


def _evaluate(model, want_gradients):
    prior = model.prior
    state = model.state
    k = prior.covariance
    n, n_latent = state.n, state.n_latent

    post = temporal_prior.implied_posterior(k, state.mu_bar, state.lam)
    moments = MomentSet(post.means, post.var_diag)
    kl_parts = temporal_prior.kl_components(k, state.mu_bar, state.lam, posterior=post)
    kl = float(np.sum(kl_parts))

    kmm_raw, kmm, lmm, _ = _mapping_gram_factors(model.mapping, state.inducing)

    data_fit = 0.0
    diagnostics = {"kl_components": kl_parts}
    caches = []
    for i, block in enumerate(model.blocks):
        value, diag, cache = _block_value(
            model.mapping, model.beta, state.inducing, moments, block, lmm,
            want_caches=want_gradients,
        )
        data_fit += value
        diagnostics[f"block{i}"] = diag
        caches.append(cache)

    value = data_fit - kl
    if not np.isfinite(value):
        raise NumericalError("bound is not finite")
    report = BoundReport(value=value, data_fit=data_fit, kl=kl, diagnostics=diagnostics)
    if not want_gradients:
        return report, None

    d_means = np.zeros((n, n_latent))
    d_vars = np.zeros((n, n_latent))
    d_inducing = np.zeros_like(state.inducing)
    d_weights = np.zeros(n_latent)
    d_variance = 0.0
    d_beta = 0.0
    ek_total = np.zeros((state.n_inducing, state.n_inducing))
    for block, cache in zip(model.blocks, caches):
        rows, con, ek, db = _block_gradients(
            model.mapping, model.beta, state.inducing, block, kmm, lmm, cache
        )
        d_means[rows] += con.means
        d_vars[rows] += con.variances
        d_inducing += con.inducing
        d_weights += con.weights
        d_variance += con.variance
        d_beta += db
        ek_total += ek
    dv, dw, dz = _mapping_chain(model.mapping, state.inducing, kmm_raw, kmm, ek_total)
    d_variance += dv
    d_weights += dw
    d_inducing += dz

    # variational parameters: push moment gradients through the prior chain
    g_mu_bar = k @ (d_means - state.mu_bar)
    g_lam = np.empty_like(state.lam)
    for q in range(n_latent):
        s_q = post.covariances[q]
        g_lam[:, q] = -(s_q * s_q) @ (d_vars[:, q] + 0.5 * state.lam[:, q])

    temporal_grads = {}
    names = prior.spec.hyperparameter_names()
    if names:
        g_total = np.zeros((n, n))
        eye = np.eye(n)
        for q in range(n_latent):
            bhat = post.bhat[q]
            bk = bhat @ k
            mu_bar_q = state.mu_bar[:, q]
            left = eye - bk
            g_total += -0.5 * (bhat @ k @ bhat + np.outer(mu_bar_q, mu_bar_q))
            g_total += (left * d_vars[:, q][None, :]) @ left.T
            g_total += np.outer(d_means[:, q], mu_bar_q)
        for name in names:
            temporal_grads[name] = float(np.sum(g_total * prior.grad_hyper(name)))

    grads = BoundGradients(
        mu_bar=g_mu_bar,
        lam=g_lam,
        inducing=d_inducing,
        mapping_variance=d_variance,
        mapping_weights=d_weights,
        temporal=temporal_grads,
        beta=d_beta,
    )
    return report, grads


# ----------------------------------------------------------------------
# initialization
# ----------------------------------------------------------------------

def init_model(
    y,
    t,
    n_latent,
    temporal_spec,
    layout=None,
    n_inducing=None,
    lambda_init=0.5,
    mapping_variance=1.0,
    beta=None,
    seed=0,
    column_names=(),
):
    """Build a model with data-driven starting values.

    Latent means start at the unit-scaled principal component scores of the
    outputs, mean weights at the prior solve of those means, loadings at a
    constant, inducing inputs at a random subset of latent means, relevance
    weights at the inverse squared per-component score spread, and the noise
    variance at one percent of the output variance.
    """
    y = as_matrix(y, "y")
    n, d = y.shape
    if n < 3:
        raise ValidationError(f"need at least 3 rows to fit, got {n}")
    if d < n_latent:
        raise ValidationError(
            f"latent dimension {n_latent} exceeds the {d} output dimensions"
        )
    if n_latent < 1:
        raise ValidationError("n_latent must be at least 1")
    n_inducing = min(n, 50) if n_inducing is None else int(n_inducing)
    if not 1 <= n_inducing <= n:
        raise ValidationError(f"n_inducing must be in [1, {n}], got {n_inducing}")

    rng = np.random.default_rng(seed)
    prior = temporal_prior.build_prior(temporal_spec, t, layout)
    if prior.n != n:
        raise ShapeError(f"t covers {prior.n} rows but y has {n}")

    centred = y - y.mean(axis=0, keepdims=True)
    u, s, _ = np.linalg.svd(centred, full_matrices=False)
    scores = u[:, :n_latent] * s[:n_latent][None, :]
    spread = scores.std(axis=0)
    if np.any(spread <= 0):
        raise ValidationError("outputs are degenerate along a principal direction")
    mu = scores / spread[None, :]

    mu_bar = chol_solve(prior.chol, mu)
    lam = np.full((n, n_latent), float(lambda_init))
    inducing = mu[rng.choice(n, size=n_inducing, replace=False)].copy()
    weights = 1.0 / spread ** 2
    mapping = ArdKernelParams(variance=float(mapping_variance), weights=weights)
    if beta is None:
        beta = 100.0 / float(np.var(y))

    state = VariationalState(mu_bar=mu_bar, lam=lam, inducing=inducing)
    term = precompute_data_term(y)
    block = ObservationBlock(yy=term.yy, trace_yy=term.trace, n_dims=d, rows=None)
    return VgpdsModel(
        prior=prior,
        mapping=mapping,
        beta=float(beta),
        state=state,
        blocks=[block],
        y=y,
        data_checksum=term.checksum,
        column_names=tuple(column_names),
    )
