"""Covariance functions for the temporal prior and the latent-to-data mapping.

Two kernel kinds live here:

* :class:`TemporalKernelSpec` describes covariance functions over scalar time
  stamps (squared-exponential, Matern 3/2, periodic, white, bias, and sums of
  those).  These govern how latent coordinates evolve over time.
* :class:`ArdKernelParams` describes the exponentiated-quadratic mapping
  kernel over latent points, with one relevance weight per latent dimension
  so that training can switch off unneeded dimensions by driving the
  corresponding weights toward zero.

All functions are pure and the parameter containers are immutable, so kernel
objects can be shared freely across threads.

Hyperparameters are strictly positive (weights may be zero) and are exposed
both on the natural scale and, for optimization, through the log-scale
helpers :func:`log_params` / :func:`with_log_params`.

The periodic covariance divides the squared sine by the *first* power of the
lengthscale; mind this when importing lengthscales tuned under the more
common squared-lengthscale convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .validation import ParameterError, ShapeError, as_matrix, as_times, check_non_negative, check_positive

SIMPLE_FAMILIES = ("rbf", "matern32", "periodic", "white", "bias")
TEMPORAL_FAMILIES = SIMPLE_FAMILIES + ("sum",)

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class TemporalKernelSpec:
    """Covariance function over time stamps.

    Parameters
    ----------
    family : str
        One of ``rbf``, ``matern32``, ``periodic``, ``white``, ``bias``
        or ``sum``.
    variance : float
        Signal variance.  Ignored for ``sum``.
    lengthscale : float, optional
        Required for ``rbf``, ``matern32`` and ``periodic``.
    period : float, optional
        Required for ``periodic``.  Fixed during optimization unless
        explicitly freed.
    components : tuple of TemporalKernelSpec
        Only for ``sum``; at least one component, none of which may itself
        be a sum.
    """

    family: str
    variance: float = 1.0
    lengthscale: float | None = None
    period: float | None = None
    components: tuple["TemporalKernelSpec", ...] = ()

    def __post_init__(self):
        if self.family not in TEMPORAL_FAMILIES:
            raise ParameterError(
                f"unknown temporal kernel family {self.family!r}; "
                f"expected one of {TEMPORAL_FAMILIES}"
            )
        if self.family == "sum":
            if len(self.components) < 1:
                raise ParameterError("sum kernel needs at least one component")
            for c in self.components:
                if c.family == "sum":
                    raise ParameterError("sum kernels must not be nested")
            object.__setattr__(self, "components", tuple(self.components))
            return
        check_positive(self.variance, f"{self.family} variance")
        if self.family in ("rbf", "matern32", "periodic"):
            if self.lengthscale is None:
                raise ParameterError(f"{self.family} kernel requires a lengthscale")
            check_positive(self.lengthscale, f"{self.family} lengthscale")
        if self.family == "periodic":
            if self.period is None:
                raise ParameterError("periodic kernel requires a period")
            check_positive(self.period, "period")

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def rbf(cls, variance=1.0, lengthscale=1.0):
        return cls("rbf", variance=variance, lengthscale=lengthscale)

    @classmethod
    def matern32(cls, variance=1.0, lengthscale=1.0):
        return cls("matern32", variance=variance, lengthscale=lengthscale)

    @classmethod
    def periodic(cls, variance=1.0, lengthscale=1.0, period=1.0):
        return cls("periodic", variance=variance, lengthscale=lengthscale, period=period)

    @classmethod
    def white(cls, variance=1.0):
        return cls("white", variance=variance)

    @classmethod
    def bias(cls, variance=1.0):
        return cls("bias", variance=variance)

    @classmethod
    def sum_of(cls, *components):
        return cls("sum", components=tuple(components))

    # ------------------------------------------------------------------
    # hyperparameter bookkeeping
    # ------------------------------------------------------------------
    def hyperparameter_names(self):
        """All hyperparameters in a fixed order, flattened across components."""
        if self.family == "sum":
            names = []
            for i, c in enumerate(self.components):
                names.extend(f"components[{i}].{n}" for n in c.hyperparameter_names())
            return tuple(names)
        if self.family in ("white", "bias"):
            return ("variance",)
        if self.family == "periodic":
            return ("variance", "lengthscale", "period")
        return ("variance", "lengthscale")

    def free_hyperparameter_names(self, optimize_period=False):
        """Hyperparameters exposed to the optimizer (periods are fixed by default)."""
        names = self.hyperparameter_names()
        if optimize_period:
            return names
        return tuple(n for n in names if not n.endswith("period"))

    def get_hyperparameter(self, name):
        spec, leaf = self._resolve(name)
        value = getattr(spec, leaf)
        if value is None:
            raise ParameterError(f"kernel {spec.family!r} has no hyperparameter {leaf!r}")
        return float(value)

    def set_hyperparameter(self, name, value):
        """Return a copy with one hyperparameter replaced."""
        if self.family == "sum" and name.startswith("components["):
            idx, rest = _split_component(name)
            comps = list(self.components)
            comps[idx] = comps[idx].set_hyperparameter(rest, value)
            return replace(self, components=tuple(comps))
        if name not in self.hyperparameter_names():
            raise ParameterError(f"unknown hyperparameter {name!r}")
        return replace(self, **{name: float(value)})

    def _resolve(self, name):
        if self.family == "sum":
            if not name.startswith("components["):
                raise ParameterError(f"unknown hyperparameter {name!r} for sum kernel")
            idx, rest = _split_component(name)
            if idx >= len(self.components):
                raise ParameterError(f"component index out of range in {name!r}")
            return self.components[idx]._resolve(rest)
        if name not in self.hyperparameter_names():
            raise ParameterError(f"unknown hyperparameter {name!r} for {self.family!r}")
        return self, name

    def log_params(self, names=None):
        names = self.hyperparameter_names() if names is None else names
        return np.array([math.log(self.get_hyperparameter(n)) for n in names])

    def with_log_params(self, values, names=None):
        names = self.hyperparameter_names() if names is None else names
        spec = self
        for name, value in zip(names, values):
            spec = spec.set_hyperparameter(name, math.exp(float(value)))
        return spec

    # ------------------------------------------------------------------
    # serialization (field names are part of the file format)
    # ------------------------------------------------------------------
    def to_json(self):
        if self.family == "sum":
            return {"family": "sum", "components": [c.to_json() for c in self.components]}
        doc = {"family": self.family, "variance": self.variance}
        if self.lengthscale is not None:
            doc["lengthscale"] = self.lengthscale
        if self.period is not None:
            doc["period"] = self.period
        return doc

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        if not isinstance(doc, dict) or "family" not in doc:
            raise ParameterError("kernel document must be an object with a 'family' field")
        family = doc["family"]
        if family == "sum":
            comps = doc.get("components", [])
            return cls.sum_of(*[cls.from_json(c) for c in comps])
        kwargs = {}
        for key in ("variance", "lengthscale", "period"):
            if key in doc:
                kwargs[key] = float(doc[key])
        return cls(family, **kwargs)


def _split_component(name):
    close = name.index("]")
    idx = int(name[len("components["):close])
    rest = name[close + 2:]  # skip "]."
    return idx, rest


@dataclass(frozen=True)
class ArdKernelParams:
    """Exponentiated-quadratic mapping kernel with per-dimension weights.

    ``k(x, x') = variance * exp(-0.5 * sum_q weights[q] * (x_q - x'_q)^2)``

    Weights are non-negative; a zero weight removes the corresponding latent
    dimension from the mapping entirely.
    """

    variance: float
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        check_positive(self.variance, "mapping variance")
        w = np.asarray(self.weights, dtype=float).copy()
        if w.ndim != 1:
            raise ShapeError("weights must be a 1-d array, one entry per latent dimension")
        for wq in w:
            check_non_negative(wq, "mapping weight")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_latent(self):
        return self.weights.shape[0]

    def hyperparameter_names(self):
        return ("variance",) + tuple(f"weights[{q}]" for q in range(self.n_latent))

    def to_json(self):
        return {"variance": self.variance, "weights": [float(w) for w in self.weights]}

    @classmethod
    def from_json(cls, doc):
        return cls(variance=float(doc["variance"]), weights=np.asarray(doc["weights"], dtype=float))


# ----------------------------------------------------------------------
# gram matrices
# ----------------------------------------------------------------------

def temporal_gram(spec, t_a, t_b=None):
    """Evaluate a temporal kernel on point sets.

    Parameters
    ----------
    spec : TemporalKernelSpec
    t_a, t_b : array-like
        Time stamp vectors.  ``t_b`` defaults to ``t_a``.

    Returns
    -------
    ndarray of shape ``(len(t_a), len(t_b))``
    """
    t_a = as_times(t_a, "t_a")
    t_b = t_a if t_b is None else as_times(t_b, "t_b")
    if spec.family == "sum":
        out = np.zeros((t_a.size, t_b.size))
        for c in spec.components:
            out += temporal_gram(c, t_a, t_b)
        return out
    diff = t_a[:, None] - t_b[None, :]
    v = spec.variance
    if spec.family == "rbf":
        return v * np.exp(-0.5 * (diff / spec.lengthscale) ** 2)
    if spec.family == "matern32":
        r = _SQRT3 * np.abs(diff) / spec.lengthscale
        return v * (1.0 + r) * np.exp(-r)
    if spec.family == "periodic":
        s2 = np.sin((2.0 * np.pi / spec.period) * diff) ** 2
        return v * np.exp(-0.5 * s2 / spec.lengthscale)
    if spec.family == "white":
        # Delta on equal time values; off-diagonal only for exact repeats.
        return v * (diff == 0.0)
    if spec.family == "bias":
        return np.full((t_a.size, t_b.size), v)
    raise ParameterError(f"unknown family {spec.family!r}")


def temporal_kdiag(spec, t):
    """Diagonal of ``temporal_gram(spec, t, t)`` without forming the matrix."""
    t = as_times(t, "t")
    if spec.family == "sum":
        return sum(temporal_kdiag(c, t) for c in spec.components)
    return np.full(t.size, spec.variance)


def temporal_gram_grad(spec, name, t_a, t_b=None):
    """Partial derivative of the temporal gram matrix w.r.t. one hyperparameter."""
    t_a = as_times(t_a, "t_a")
    t_b = t_a if t_b is None else as_times(t_b, "t_b")
    if spec.family == "sum":
        idx, rest = _split_component(name)
        grad = np.zeros((t_a.size, t_b.size))
        grad += temporal_gram_grad(spec.components[idx], rest, t_a, t_b)
        return grad
    diff = t_a[:, None] - t_b[None, :]
    v, ell = spec.variance, spec.lengthscale
    if name == "variance":
        return temporal_gram(spec, t_a, t_b) / v
    if spec.family == "rbf" and name == "lengthscale":
        k = temporal_gram(spec, t_a, t_b)
        return k * diff ** 2 / ell ** 3
    if spec.family == "matern32" and name == "lengthscale":
        r = _SQRT3 * np.abs(diff) / ell
        return v * (r ** 2 / ell) * np.exp(-r)
    if spec.family == "periodic":
        arg = (2.0 * np.pi / spec.period) * diff
        k = temporal_gram(spec, t_a, t_b)
        if name == "lengthscale":
            return k * 0.5 * np.sin(arg) ** 2 / ell ** 2
        if name == "period":
            return k * (np.pi * diff / (ell * spec.period ** 2)) * np.sin(2.0 * arg)
    raise ParameterError(f"kernel {spec.family!r} has no hyperparameter {name!r}")


def ard_gram(params, x_a, x_b=None):
    """Evaluate the mapping kernel on latent point sets.

    Parameters
    ----------
    params : ArdKernelParams
    x_a : ndarray of shape (n_a, n_latent)
    x_b : ndarray of shape (n_b, n_latent), optional

    Returns
    -------
    ndarray of shape ``(n_a, n_b)``
    """
    x_a = as_matrix(x_a, "x_a")
    x_b = x_a if x_b is None else as_matrix(x_b, "x_b")
    if x_a.shape[1] != params.n_latent or x_b.shape[1] != params.n_latent:
        raise ShapeError(
            f"latent points have {x_a.shape[1]}/{x_b.shape[1]} columns, "
            f"kernel expects {params.n_latent}"
        )
    diff = x_a[:, None, :] - x_b[None, :, :]
    sq = np.einsum("nmq,q->nm", diff ** 2, params.weights)
    return params.variance * np.exp(-0.5 * sq)


def ard_gram_grad(params, name, x_a, x_b=None):
    """Partial derivative of the mapping gram matrix w.r.t. one hyperparameter."""
    x_a = as_matrix(x_a, "x_a")
    x_b = x_a if x_b is None else as_matrix(x_b, "x_b")
    k = ard_gram(params, x_a, x_b)
    if name == "variance":
        return k / params.variance
    if name.startswith("weights["):
        q = int(name[len("weights["):-1])
        if not 0 <= q < params.n_latent:
            raise ParameterError(f"weight index out of range in {name!r}")
        d2 = (x_a[:, q][:, None] - x_b[:, q][None, :]) ** 2
        return -0.5 * d2 * k
    raise ParameterError(f"mapping kernel has no hyperparameter {name!r}")


def gram_grad_hyper(kernel, points_a, points_b=None, which=0):
    """Gram-matrix derivative dispatcher over both kernel kinds.

    ``which`` may be a hyperparameter name or an integer index into
    ``kernel.hyperparameter_names()``.
    """
    names = kernel.hyperparameter_names()
    if isinstance(which, (int, np.integer)):
        if not 0 <= which < len(names):
            raise ParameterError(f"hyperparameter index {which} out of range for {names}")
        which = names[int(which)]
    elif which not in names:
        raise ParameterError(f"unknown hyperparameter {which!r}; expected one of {names}")
    if isinstance(kernel, TemporalKernelSpec):
        return temporal_gram_grad(kernel, which, points_a, points_b)
    return ard_gram_grad(kernel, which, points_a, points_b)
