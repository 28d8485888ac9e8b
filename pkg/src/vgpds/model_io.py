"""Model checkpoints as a single JSON document.

Schema (``format: "vgpds-model", version: 1``):

* ``temporal_kernel`` / ``mapping_kernel`` -- kernel documents as produced
  by their ``to_json`` methods.
* ``beta`` -- noise precision.
* ``mu_bar``, ``lambda``, ``inducing`` -- variational parameters, row-major
  nested lists.
* ``layout`` -- sequence boundaries, list of ``[start, end)`` pairs.
* ``times`` -- training time stamps.
* ``dataset_checksum`` -- SHA-256 of the training outputs, verified when a
  dataset is supplied at load time.
* ``data`` -- optional embedded training outputs (with column names and
  sequence ids); required for reconstruction if no dataset file is given.
* ``predict_cache`` -- optional posterior weight matrix so that output
  prediction works without the training outputs.

Floats serialize via ``repr`` and round-trip exactly.
"""

from __future__ import annotations

import json

import numpy as np

from . import bound_core, kernels, psi_stats, temporal_prior
from .bound_core import ObservationBlock, VariationalState, VgpdsModel
from .predictor import _predictive_weights
from .psi_stats import MomentSet
from .temporal_prior import SequenceLayout
from .validation import ValidationError

FORMAT_NAME = "vgpds-model"
FORMAT_VERSION = 1


def _array(doc, key):
    return np.asarray(doc[key], dtype=float)


def save_model(model, path, embed_data=True, cache_prediction=True):
    """Write a model checkpoint.

    ``embed_data`` stores the training outputs inside the checkpoint so
    that reconstruction can run from this one file.  ``cache_prediction``
    stores the posterior weight matrix so output prediction works even
    without the data.
    """
    layout = model.prior.layout
    if layout is None:
        raise ValidationError("only models built from datasets (with a layout) can be saved")
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "temporal_kernel": model.prior.spec.to_json(),
        "mapping_kernel": model.mapping.to_json(),
        "beta": model.beta,
        "mu_bar": model.state.mu_bar.tolist(),
        "lambda": model.state.lam.tolist(),
        "inducing": model.state.inducing.tolist(),
        "layout": [list(b) for b in layout.boundaries],
        "times": model.prior.t.tolist(),
        "dataset_checksum": model.data_checksum,
        "column_names": list(model.column_names),
        "data": None,
        "predict_cache": None,
    }
    if embed_data and model.y is not None:
        doc["data"] = {"y": model.y.tolist()}
    if cache_prediction and model.y is not None:
        post = temporal_prior.implied_posterior(
            model.prior.covariance, model.state.mu_bar, model.state.lam
        )
        moments = MomentSet(post.means, post.var_diag)
        p1 = psi_stats.psi1(model.mapping, moments, model.state.inducing)
        p2 = psi_stats.psi2(model.mapping, moments, model.state.inducing)
        weights, _ = _predictive_weights(model, model.y, p1, p2)
        doc["predict_cache"] = {"weights": weights.tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path, y=None):
    """Load a checkpoint, optionally re-attaching the training outputs.

    If the checkpoint embeds its data, that is used; a ``y`` argument must
    then match the recorded checksum.

    Returns
    -------
    (VgpdsModel, dict)
        The model and the raw checkpoint document (for access to the
        prediction cache).
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_NAME:
        raise ValidationError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported version {doc.get('version')!r}")

    spec = kernels.TemporalKernelSpec.from_json(doc["temporal_kernel"])
    mapping = kernels.ArdKernelParams.from_json(doc["mapping_kernel"])
    layout = SequenceLayout(tuple(tuple(b) for b in doc["layout"]))
    prior = temporal_prior.build_prior(spec, _array(doc, "times"), layout)
    state = VariationalState(
        mu_bar=_array(doc, "mu_bar"),
        lam=_array(doc, "lambda"),
        inducing=_array(doc, "inducing"),
    )

    if y is None and doc.get("data") is not None:
        y = np.asarray(doc["data"]["y"], dtype=float)
    checksum = doc.get("dataset_checksum")
    if y is not None:
        actual = bound_core.data_checksum(y)
        if checksum is not None and actual != checksum:
            raise ValidationError(
                f"{path}: supplied outputs do not match the recorded dataset checksum"
            )
        blocks = [ObservationBlock.from_outputs(y)]
    else:
        # Placeholder block; the bound cannot be evaluated without data,
        # but prediction through the cache still works.
        n = state.n
        blocks = [ObservationBlock(yy=np.zeros((n, n)), trace_yy=0.0, n_dims=0, rows=None)]

    model = VgpdsModel(
        prior=prior,
        mapping=mapping,
        beta=float(doc["beta"]),
        state=state,
        blocks=blocks,
        y=y,
        data_checksum=checksum,
        column_names=tuple(doc.get("column_names", ())),
    )
    return model, doc
