"""Cholesky helpers with the package-wide jitter policy.

Every covariance matrix is regularized with a *relative* jitter of 1e-6
times its mean diagonal before factorization; on failure a single retry at
1e-4 is attempted, after which a :class:`NumericalError` is raised.  The
jittered matrix, not the raw one, is the model matrix: downstream values and
gradients all refer to it, which keeps analytic derivatives consistent with
finite differences of the implementation.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .validation import NumericalError

JITTER_RELATIVE = 1e-6
JITTER_RETRY = 1e-4


def symmetrize(a):
    return 0.5 * (a + a.T)


def jitter_value(k, relative=JITTER_RELATIVE):
    """Jitter magnitude for a square matrix: ``relative`` times mean diagonal."""
    return relative * float(np.mean(np.diag(k)))


def add_jitter(k, relative=JITTER_RELATIVE):
    """Return ``k`` plus relative diagonal jitter, and the value added."""
    jit = jitter_value(k, relative)
    out = k.copy()
    out[np.diag_indices_from(out)] += jit
    return out, jit


def jittered_cholesky(k):
    """Jitter ``k`` and factor it.

    Returns ``(k_jittered, lower_factor, jitter_added)``.  Tries the standard
    relative jitter first, then the retry level, then raises.
    """
    for relative in (JITTER_RELATIVE, JITTER_RETRY):
        kj, jit = add_jitter(k, relative)
        try:
            lower = np.linalg.cholesky(kj)
        except np.linalg.LinAlgError:
            continue
        return kj, lower, jit
    raise NumericalError(
        f"Cholesky failed for a {k.shape[0]}x{k.shape[0]} covariance even "
        f"with relative jitter {JITTER_RETRY}"
    )


def plain_cholesky(k, what="matrix"):
    """Factor a matrix that is well conditioned by construction.

    Matrices of the form ``I + PSD`` have eigenvalues bounded below by one,
    but extreme scale factors can still break that at float precision; a
    jittered retry covers those rare events.
    """
    try:
        return np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        pass
    try:
        _, lower, _ = jittered_cholesky(k)
        return lower
    except NumericalError as exc:
        raise NumericalError(f"Cholesky of {what} failed even with jitter") from exc


def chol_logdet(lower):
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


def chol_solve(lower, b):
    return scipy.linalg.cho_solve((lower, True), b, check_finite=False)


def chol_inverse(lower):
    n = lower.shape[0]
    return chol_solve(lower, np.eye(n))


def tri_solve(lower, b, trans=False):
    return scipy.linalg.solve_triangular(
        lower, b, lower=True, trans=1 if trans else 0, check_finite=False
    )


def inner_whitened(lower, a):
    """Compute ``L^{-1} a L^{-T}`` for a lower factor ``L``."""
    tmp = tri_solve(lower, a)
    return symmetrize(tri_solve(lower, tmp.T).T)
