"""Reconstruction error metrics.

All metrics are computed strictly over the missing entries handed in; the
caller slices those out.  Besides the per-entry mean squared error, two
motion-capture style summaries are available: a root mean squared error over
columns flagged as angles, and a weighted cumulative error, defined as the
mean over frames of the weighted sum of absolute per-dimension errors (the
weights encode each channel's physical scale and default to one).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import ShapeError, ValidationError, as_matrix


@dataclass(frozen=True)
class MetricReport:
    """Error summary over missing entries."""

    mse: float
    angle_rms: float | None = None
    weighted_cumulative: float | None = None
    n_entries: int = 0
    baseline: str | None = None
    k: int | None = None

    def to_json(self):
        return {
            "mse": self.mse,
            "angle_rms": self.angle_rms,
            "weighted_cumulative": self.weighted_cumulative,
            "n_entries": self.n_entries,
            "baseline": self.baseline,
            "k": self.k,
        }


def evaluate(recon, truth, angle_cols=None, weights=None, baseline=None, k=None):
    """Compare a reconstruction against the ground truth.

    Parameters
    ----------
    recon, truth : ndarray (n, d_missing)
        Aligned matrices covering exactly the missing entries.
    angle_cols : index list, optional
        Columns (within these matrices) measured in angle units; enables
        the angle-space root mean squared error.
    weights : ndarray (d_missing,), optional
        Per-column scale weights; enables the weighted cumulative error.
    baseline, k : metadata recorded in the report.

    Returns
    -------
    MetricReport
    """
    recon = as_matrix(recon, "recon")
    truth = as_matrix(truth, "truth")
    if recon.shape != truth.shape:
        raise ShapeError(f"recon {recon.shape} and truth {truth.shape} differ")
    err = recon - truth
    mse = float(np.mean(err ** 2))

    angle_rms = None
    if angle_cols is not None:
        idx = np.asarray(angle_cols, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= recon.shape[1]):
            raise ValidationError("angle_cols outside the reconstructed columns")
        if idx.size:
            angle_rms = float(np.sqrt(np.mean(err[:, idx] ** 2)))

    weighted_cumulative = None
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (recon.shape[1],):
            raise ShapeError(
                f"weights must have shape ({recon.shape[1]},), got {w.shape}"
            )
        if np.any(w < 0):
            raise ValidationError("weights must be non-negative")
        weighted_cumulative = float(np.mean(np.abs(err) @ w))

    return MetricReport(
        mse=mse,
        angle_rms=angle_rms,
        weighted_cumulative=weighted_cumulative,
        n_entries=int(err.size),
        baseline=baseline,
        k=k,
    )
