"""Nearest-neighbour reconstruction baseline.

Each partially observed test row is matched to its nearest training rows in
the observed-dimension subspace (Euclidean distance); the missing dimensions
are the average over the matched rows.  Distance ties resolve to the lowest
training row index, which keeps the result deterministic.
"""

from __future__ import annotations

import numpy as np

from .validation import ShapeError, ValidationError, as_matrix, check_index_set


def nn_baseline(y_train, y_star_observed, observed_cols, k=1):
    """Reconstruct missing test dimensions by k-nearest-neighbour averaging.

    Parameters
    ----------
    y_train : ndarray (n, d)
        Fully observed training rows.
    y_star_observed : ndarray (n_star, len(observed_cols))
        Observed slice of the test rows.
    observed_cols : index list into the d output dimensions
    k : int

    Returns
    -------
    ndarray (n_star, d - len(observed_cols))
        Averages over each test row's k nearest training rows, restricted
        to the missing dimensions.
    """
    y_train = as_matrix(y_train, "y_train")
    n, d = y_train.shape
    if n == 0:
        raise ValidationError("training set is empty")
    k = int(k)
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    observed = check_index_set(observed_cols, d, "observed_cols")
    missing = np.setdiff1d(np.arange(d), observed)
    y_star = as_matrix(y_star_observed, "y_star_observed")
    if y_star.shape[1] != observed.size:
        raise ShapeError(
            f"y_star_observed has {y_star.shape[1]} columns, expected {observed.size}"
        )

    diffs = y_star[:, None, :] - y_train[None, :, observed]
    dist = np.einsum("snj,snj->sn", diffs, diffs)
    # stable sort: equal distances keep ascending row order
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return y_train[:, missing][nearest].mean(axis=1)


def best_nn_baseline(y_train, y_star_observed, observed_cols, y_star_truth_missing, ks=range(1, 6)):
    """Run the baseline for several k and keep the best by mean squared error.

    Returns ``(reconstruction, k, mse)`` for the winning k.
    """
    truth = as_matrix(y_star_truth_missing, "y_star_truth_missing")
    best = None
    for k in ks:
        recon = nn_baseline(y_train, y_star_observed, observed_cols, k=k)
        mse = float(np.mean((recon - truth) ** 2))
        if best is None or mse < best[2]:
            best = (recon, int(k), mse)
    return best
