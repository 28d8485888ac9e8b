"""Gradient-based training of the variational bound.

Optimization runs over one flat vector covering the variational parameters,
inducing inputs, kernel hyperparameters and the noise precision.  Positive
quantities (loadings, variances, lengthscales, weights, precision) travel in
log space so every coordinate is unconstrained.  Groups can be frozen by
name; the noise precision is additionally frozen during the warmup phase so
the variational distribution can settle before the noise level moves.

The engine is scipy's L-BFGS-B with analytic gradients.  Accepted iterates
are therefore monotone in the objective, and runs are deterministic for a
fixed starting model and configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from . import bound_core
from .bound_core import LAMBDA_FLOOR, VariationalState
from .kernels import ArdKernelParams
from .validation import NumericalError, ValidationError

PARAM_GROUPS = (
    "mu_bar",
    "lambda",
    "inducing",
    "mapping_variance",
    "mapping_weights",
    "temporal",
    "beta",
)

_PENALTY = 1e30
_CONSECUTIVE_SMALL_STEPS = 5


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule and stopping rule.

    ``iters`` may be a single count or a sequence of segment lengths run
    back to back (the optimizer restarts its curvature memory between
    segments).  Convergence is declared when the accepted objective moves by
    less than ``tol`` for five consecutive iterations.
    """

    warmup_iters: int = 50
    iters: int | tuple = 200
    tol: float = 1e-6
    max_linesearch: int = 25
    freeze: tuple = ()
    optimize_period: bool = False

    def __post_init__(self):
        if self.warmup_iters < 0:
            raise ValidationError("warmup_iters must be >= 0")
        segments = self.segments()
        if any(s < 0 for s in segments):
            raise ValidationError("iteration counts must be >= 0")
        if self.tol <= 0:
            raise ValidationError("tol must be > 0")
        unknown = set(self.freeze) - set(PARAM_GROUPS)
        if unknown:
            raise ValidationError(f"unknown freeze groups: {sorted(unknown)}")
        object.__setattr__(self, "freeze", tuple(self.freeze))

    def segments(self):
        if isinstance(self.iters, (int, np.integer)):
            return (int(self.iters),)
        return tuple(int(i) for i in self.iters)


@dataclass
class TracePoint:
    iteration: int
    value: float
    kl: float
    grad_norm: float


@dataclass
class TrainResult:
    model: bound_core.VgpdsModel
    trace: list
    status: str
    message: str
    n_evaluations: int
    clamp_events: int

    def trace_array(self):
        return np.array([[p.iteration, p.value, p.kl, p.grad_norm] for p in self.trace])


class ParamPack:
    """Maps between a model and one flat unconstrained vector."""

    def __init__(self, model, freeze=(), optimize_period=False):
        self.freeze = frozenset(freeze)
        self.temporal_names = model.prior.spec.free_hyperparameter_names(optimize_period)
        n, q, m = model.n, model.n_latent, model.n_inducing
        self.shapes = {}
        self.slices = {}
        offset = 0
        for group, size in (
            ("mu_bar", n * q),
            ("lambda", n * q),
            ("inducing", m * q),
            ("mapping_variance", 1),
            ("mapping_weights", q),
            ("temporal", len(self.temporal_names)),
            ("beta", 1),
        ):
            if group in self.freeze or size == 0:
                continue
            self.slices[group] = slice(offset, offset + size)
            offset += size
        self.size = offset
        self.clamp_events = 0

    def active(self, group):
        return group in self.slices

    def pack(self, model):
        x = np.empty(self.size)
        st = model.state
        if self.active("mu_bar"):
            x[self.slices["mu_bar"]] = st.mu_bar.ravel()
        if self.active("lambda"):
            x[self.slices["lambda"]] = np.log(np.maximum(st.lam, LAMBDA_FLOOR)).ravel()
        if self.active("inducing"):
            x[self.slices["inducing"]] = st.inducing.ravel()
        if self.active("mapping_variance"):
            x[self.slices["mapping_variance"]] = math.log(model.mapping.variance)
        if self.active("mapping_weights"):
            x[self.slices["mapping_weights"]] = np.log(
                np.maximum(model.mapping.weights, 1e-300)
            )
        if self.active("temporal"):
            x[self.slices["temporal"]] = model.prior.spec.log_params(self.temporal_names)
        if self.active("beta"):
            x[self.slices["beta"]] = math.log(model.beta)
        return x

    def unpack(self, model, x):
        st = model.state
        n, q = st.mu_bar.shape
        mu_bar, lam, inducing = st.mu_bar, st.lam, st.inducing
        if self.active("mu_bar"):
            mu_bar = x[self.slices["mu_bar"]].reshape(n, q)
        if self.active("lambda"):
            lam = np.exp(x[self.slices["lambda"]]).reshape(n, q)
            below = lam < LAMBDA_FLOOR
            if np.any(below):
                self.clamp_events += int(below.sum())
                lam = np.maximum(lam, LAMBDA_FLOOR)
        if self.active("inducing"):
            inducing = x[self.slices["inducing"]].reshape(-1, q)
        state = VariationalState(mu_bar=mu_bar, lam=lam, inducing=inducing)
        mapping = model.mapping
        if self.active("mapping_variance") or self.active("mapping_weights"):
            variance = (
                math.exp(float(x[self.slices["mapping_variance"]][0]))
                if self.active("mapping_variance")
                else mapping.variance
            )
            weights = (
                np.exp(x[self.slices["mapping_weights"]])
                if self.active("mapping_weights")
                else mapping.weights
            )
            mapping = ArdKernelParams(variance=variance, weights=weights)
        prior = model.prior
        if self.active("temporal"):
            spec = prior.spec.with_log_params(x[self.slices["temporal"]], self.temporal_names)
            prior = type(prior)(spec, prior.t, prior.groups, layout=prior.layout)
        beta = model.beta
        if self.active("beta"):
            beta = math.exp(float(x[self.slices["beta"]][0]))
        return replace(model, state=state, mapping=mapping, prior=prior, beta=beta)

    def bounds(self):
        """Box bounds: log-scale coordinates stay in [-30, 30] (means and
        inducing inputs are unbounded), keeping line searches float-safe."""
        out = [(None, None)] * self.size
        for group in ("mapping_variance", "mapping_weights", "temporal", "beta"):
            if self.active(group):
                s = self.slices[group]
                for i in range(s.start, s.stop):
                    out[i] = (-30.0, 30.0)
        if self.active("lambda"):
            s = self.slices["lambda"]
            lo = float(np.log(LAMBDA_FLOOR))
            for i in range(s.start, s.stop):
                out[i] = (lo, 30.0)
        return out

    def pack_gradient(self, model, grads):
        """Natural-scale gradients to flat log-scale gradient."""
        g = np.zeros(self.size)
        if self.active("mu_bar"):
            g[self.slices["mu_bar"]] = grads.mu_bar.ravel()
        if self.active("lambda"):
            g[self.slices["lambda"]] = (grads.lam * model.state.lam).ravel()
        if self.active("inducing"):
            g[self.slices["inducing"]] = grads.inducing.ravel()
        if self.active("mapping_variance"):
            g[self.slices["mapping_variance"]] = grads.mapping_variance * model.mapping.variance
        if self.active("mapping_weights"):
            g[self.slices["mapping_weights"]] = grads.mapping_weights * model.mapping.weights
        if self.active("temporal"):
            vals = [
                grads.temporal[name] * model.prior.spec.get_hyperparameter(name)
                for name in self.temporal_names
            ]
            g[self.slices["temporal"]] = vals
        if self.active("beta"):
            g[self.slices["beta"]] = grads.beta * model.beta
        return g


class _Objective:
    """Negated bound with gradient, tolerant of transient line-search failures."""

    def __init__(self, model, pack):
        self.model = model
        self.pack = pack
        self.n_evaluations = 0
        self.last_good = None  # (x, value, kl, grad_norm)

    def __call__(self, x):
        self.n_evaluations += 1
        try:
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                candidate = self.pack.unpack(self.model, x)
                report, grads = bound_core.bound_value_and_gradients(candidate)
        except (NumericalError, ValidationError, FloatingPointError, OverflowError,
                ZeroDivisionError, np.linalg.LinAlgError):
            # transient line-search excursion; a flat huge value forces backtracking
            return _PENALTY, np.zeros_like(x)
        g = self.pack.pack_gradient(candidate, grads)
        self.last_good = (x.copy(), report.value, report.kl, float(np.max(np.abs(g))))
        return -report.value, -g


def _run_phase(model, pack, maxiter, tol, max_linesearch, trace, offset):
    objective = _Objective(model, pack)
    x0 = pack.pack(model)
    if maxiter == 0:
        value, grad = objective(x0)
        if value >= _PENALTY:
            raise NumericalError("bound is not finite at the starting point")
        if not trace:
            trace.append(TracePoint(offset, -value, objective.last_good[2], float(np.max(np.abs(grad)))))
        return model, objective.n_evaluations, "converged", "no iterations requested"

    history = []
    hit_tol = [False]

    def callback(xk):
        value = objective.last_good[1] if objective.last_good is not None else np.nan
        kl = objective.last_good[2] if objective.last_good is not None else np.nan
        gn = objective.last_good[3] if objective.last_good is not None else np.nan
        trace.append(TracePoint(offset + len(history) + 1, value, kl, gn))
        history.append(value)
        if len(history) > _CONSECUTIVE_SMALL_STEPS:
            recent = np.abs(np.diff(history[-(_CONSECUTIVE_SMALL_STEPS + 1):]))
            if np.all(recent < tol):
                hit_tol[0] = True
                raise StopIteration

    value0, grad0 = objective(x0)
    if value0 >= _PENALTY:
        raise NumericalError("bound is not finite at the starting point")
    if not trace:
        trace.append(TracePoint(offset, -value0, objective.last_good[2], float(np.max(np.abs(grad0)))))

    # A failed line search far from convergence usually just means stale
    # curvature; restart with fresh memory from the best point and keep
    # going until the iteration budget is spent or no progress is made.
    x_cur = x0
    remaining = maxiter
    status, message = "max_iterations", ""
    while remaining > 0:
        result = scipy.optimize.minimize(
            objective,
            x_cur,
            jac=True,
            method="L-BFGS-B",
            bounds=pack.bounds(),
            callback=callback,
            options={
                "maxiter": remaining,
                "maxls": max_linesearch,
                "ftol": 1e-16,
                "gtol": 1e-10,
            },
        )
        message = result.message if isinstance(result.message, str) else result.message.decode()
        x_cur = result.x
        remaining -= max(result.nit, 1)
        if hit_tol[0]:
            status = "converged"
            break
        if "ABNORMAL" in message.upper():
            status = "linesearch_failed"
            if result.nit == 0:
                break  # no progress at all; restarting would loop forever
            continue
        if result.success:
            status = "converged"
            break
        status = "max_iterations"
        if result.nit == 0:
            break
    final_value, _ = objective(x_cur)
    if final_value >= _PENALTY:
        raise NumericalError("optimizer left the feasible region")
    model = pack.unpack(model, x_cur)
    return model, objective.n_evaluations, status, message


def train(model, config=None):
    """Maximize the bound under the two-phase schedule.

    Parameters
    ----------
    model : VgpdsModel
    config : TrainConfig, optional

    Returns
    -------
    TrainResult
        Trained model, per-iteration trace (iteration, bound, divergence,
        gradient sup-norm), and a status string.  A line-search failure
        returns the best point reached with status ``linesearch_failed``.
    """
    config = TrainConfig() if config is None else config
    trace = []
    n_evals = 0
    clamp_events = 0
    status, message = "converged", ""

    phases = []
    if config.warmup_iters:
        phases.append((config.warmup_iters, config.freeze + ("beta",)))
    segments = [s for s in config.segments() if s > 0]
    if not segments and not phases:
        pack = ParamPack(model, freeze=config.freeze, optimize_period=config.optimize_period)
        model, n_evals, status, message = _run_phase(
            model, pack, 0, config.tol, config.max_linesearch, trace, 0
        )
        return TrainResult(model, trace, status, message, n_evals, 0)
    phases.extend((s, config.freeze) for s in segments)

    for maxiter, freeze in phases:
        pack = ParamPack(model, freeze=sorted(set(freeze)), optimize_period=config.optimize_period)
        if pack.size == 0:
            raise ValidationError("every parameter group is frozen; nothing to train")
        offset = trace[-1].iteration if trace else 0
        model, evals, status, message = _run_phase(
            model, pack, maxiter, config.tol, config.max_linesearch, trace, offset
        )
        n_evals += evals
        clamp_events += pack.clamp_events
    return TrainResult(model, trace, status, message, n_evals, clamp_events)


# ----------------------------------------------------------------------
# finite-difference gradient verification
# ----------------------------------------------------------------------

@dataclass
class GradCheckReport:
    per_group: dict
    worst: float
    epsilon: float
    seed: int

    def __str__(self):
        lines = [f"gradient check (epsilon={self.epsilon:g}, seed={self.seed})"]
        for group, err in sorted(self.per_group.items()):
            lines.append(f"  {group:18s} max rel err {err:.3e}")
        lines.append(f"  worst: {self.worst:.3e}")
        return "\n".join(lines)


def gradcheck(model, epsilon=1e-6, seed=0, max_coords=40, freeze=(), optimize_period=False):
    """Compare analytic bound gradients against central finite differences.

    Differences are taken on the natural parameter scale with a relative
    step.  For large groups a seeded random subset of ``max_coords``
    coordinates is probed, so the report is deterministic given the seed.
    Frozen groups are excluded entirely.
    """
    pack = ParamPack(model, freeze=freeze, optimize_period=optimize_period)
    _, grads = bound_core.bound_value_and_gradients(model)
    rng = np.random.default_rng(seed)

    def natural_vector(group):
        if group == "mu_bar":
            return model.state.mu_bar.ravel().copy(), grads.mu_bar.ravel()
        if group == "lambda":
            return model.state.lam.ravel().copy(), grads.lam.ravel()
        if group == "inducing":
            return model.state.inducing.ravel().copy(), grads.inducing.ravel()
        if group == "mapping_variance":
            return np.array([model.mapping.variance]), np.array([grads.mapping_variance])
        if group == "mapping_weights":
            return model.mapping.weights.copy(), grads.mapping_weights.copy()
        if group == "temporal":
            vals = np.array([model.prior.spec.get_hyperparameter(n) for n in pack.temporal_names])
            return vals, np.array([grads.temporal[n] for n in pack.temporal_names])
        if group == "beta":
            return np.array([model.beta]), np.array([grads.beta])
        raise ValidationError(f"unknown group {group!r}")

    def rebuild(group, vec):
        st, mapping, prior, beta = model.state, model.mapping, model.prior, model.beta
        n, q = st.mu_bar.shape
        if group == "mu_bar":
            st = VariationalState(vec.reshape(n, q), st.lam, st.inducing)
        elif group == "lambda":
            st = VariationalState(st.mu_bar, vec.reshape(n, q), st.inducing)
        elif group == "inducing":
            st = VariationalState(st.mu_bar, st.lam, vec.reshape(-1, q))
        elif group == "mapping_variance":
            mapping = ArdKernelParams(float(vec[0]), mapping.weights)
        elif group == "mapping_weights":
            mapping = ArdKernelParams(mapping.variance, vec)
        elif group == "temporal":
            spec = prior.spec
            for name, val in zip(pack.temporal_names, vec):
                spec = spec.set_hyperparameter(name, float(val))
            prior = type(prior)(spec, prior.t, prior.groups, layout=prior.layout)
        elif group == "beta":
            beta = float(vec[0])
        return replace(model, state=st, mapping=mapping, prior=prior, beta=beta)

    per_group = {}
    for group in PARAM_GROUPS:
        if not pack.active(group):
            continue
        base, analytic = natural_vector(group)
        coords = np.arange(base.size)
        if base.size > max_coords:
            coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))
        fd = np.zeros(coords.size)
        for j, i in enumerate(coords):
            step = epsilon * max(1.0, abs(base[i]))
            hi, lo = base.copy(), base.copy()
            hi[i] += step
            lo[i] -= step
            fd[j] = (
                bound_core.evaluate_bound(rebuild(group, hi)).value
                - bound_core.evaluate_bound(rebuild(group, lo)).value
            ) / (2 * step)
        err = float(np.max(np.abs(analytic[coords] - fd)) / (1.0 + np.max(np.abs(fd))))
        per_group[group] = err
    worst = max(per_group.values()) if per_group else 0.0
    return GradCheckReport(per_group=per_group, worst=worst, epsilon=epsilon, seed=seed)
