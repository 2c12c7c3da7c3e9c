"""
Hot numeric kernels for the expert pool.

Every routine exists twice: a loop-style version compiled with numba
``@njit`` and a vectorised numpy/scipy version.  The module-level names
(``sqexp_vec``, ``posterior`` ...) are bound to one of the two at import
time.  Set ``SKYGP_DISABLE_NUMBA=1`` to force the numpy path; it is also
used automatically when numba cannot be imported.

Both implementations take the same arguments and operate on the leading
``n`` rows/columns of preallocated buffers, so experts can grow in place
without reallocating.
"""

from __future__ import annotations

import os
import types

import numpy as np
from scipy.linalg import solve_triangular

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def _wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return _wrap


def _env_disabled() -> bool:
    return os.environ.get("SKYGP_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_sqexp_vec(x, X, n, inv_ls2, sf2):
    d = X[:n] - x
    return sf2 * np.exp(-0.5 * (d * d) @ inv_ls2)


def _np_sqexp_matrix(X, n, inv_ls2, sf2):
    Xs = X[:n] * np.sqrt(inv_ls2)
    sq = np.sum(Xs * Xs, axis=1)
    r2 = sq[:, None] + sq[None, :] - 2.0 * (Xs @ Xs.T)
    np.maximum(r2, 0.0, out=r2)
    np.fill_diagonal(r2, 0.0)
    return sf2 * np.exp(-0.5 * r2)


def _np_solve_lower(L, n, b):
    if n == 0:
        return np.zeros(0)
    return solve_triangular(L[:n, :n], b[:n], lower=True, check_finite=False)


def _np_solve_lower_t(L, n, b):
    if n == 0:
        return np.zeros(0)
    return solve_triangular(L[:n, :n], b[:n], lower=True, trans="T", check_finite=False)


def _np_cholesky(A):
    """Return (L, ok). ``ok`` is False on a non-positive pivot."""
    try:
        return np.linalg.cholesky(A), True
    except np.linalg.LinAlgError:
        return np.zeros_like(A), False


def _np_chol_append(L, n, kvec, diag):
    """Row that extends the n x n factor ``L``; returns (row, pivot^2)."""
    row = _np_solve_lower(L, n, kvec)
    return row, diag - row @ row


def _np_posterior(L, n, alpha, X, x, inv_ls2, sf2):
    k = _np_sqexp_vec(x, X, n, inv_ls2, sf2)
    v = _np_solve_lower(L, n, k)
    return k @ alpha[:n], sf2 - v @ v


def _np_centrality(X, n, c, inv_ls2, sf2):
    return _np_sqexp_vec(c, X, n, inv_ls2, sf2)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_sqexp_vec(x, X, n, inv_ls2, sf2):
    m = x.shape[0]
    out = np.empty(n)
    for s in range(n):
        acc = 0.0
        for j in range(m):
            d = X[s, j] - x[j]
            acc += d * d * inv_ls2[j]
        out[s] = sf2 * np.exp(-0.5 * acc)
    return out


@njit(cache=True)
def _nb_sqexp_matrix(X, n, inv_ls2, sf2):
    m = X.shape[1]
    K = np.empty((n, n))
    for a in range(n):
        K[a, a] = sf2
        for b in range(a):
            acc = 0.0
            for j in range(m):
                d = X[a, j] - X[b, j]
                acc += d * d * inv_ls2[j]
            v = sf2 * np.exp(-0.5 * acc)
            K[a, b] = v
            K[b, a] = v
    return K


@njit(cache=True)
def _nb_solve_lower(L, n, b):
    out = np.empty(n)
    for i in range(n):
        acc = b[i]
        for j in range(i):
            acc -= L[i, j] * out[j]
        out[i] = acc / L[i, i]
    return out


@njit(cache=True)
def _nb_solve_lower_t(L, n, b):
    out = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc -= L[j, i] * out[j]
        out[i] = acc / L[i, i]
    return out


@njit(cache=True)
def _nb_cholesky_impl(A):
    n = A.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return L, False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return L, True


def _nb_cholesky(A):
    return _nb_cholesky_impl(np.ascontiguousarray(A, dtype=np.float64))


@njit(cache=True)
def _nb_chol_append(L, n, kvec, diag):
    row = _nb_solve_lower(L, n, kvec)
    acc = diag
    for i in range(n):
        acc -= row[i] * row[i]
    return row, acc


@njit(cache=True)
def _nb_posterior(L, n, alpha, X, x, inv_ls2, sf2):
    k = _nb_sqexp_vec(x, X, n, inv_ls2, sf2)
    mean = 0.0
    for i in range(n):
        mean += k[i] * alpha[i]
    v = _nb_solve_lower(L, n, k)
    var = sf2
    for i in range(n):
        var -= v[i] * v[i]
    return mean, var


@njit(cache=True)
def _nb_centrality(X, n, c, inv_ls2, sf2):
    return _nb_sqexp_vec(c, X, n, inv_ls2, sf2)


_NAMES = (
    "sqexp_vec",
    "sqexp_matrix",
    "solve_lower",
    "solve_lower_t",
    "cholesky",
    "chol_append",
    "posterior",
    "centrality",
)

numpy_impl = types.SimpleNamespace(**{name: globals()[f"_np_{name}"] for name in _NAMES})
numba_impl = types.SimpleNamespace(**{name: globals()[f"_nb_{name}"] for name in _NAMES})

backend = numba_impl if USE_NUMBA else numpy_impl
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"

sqexp_vec = backend.sqexp_vec
sqexp_matrix = backend.sqexp_matrix
solve_lower = backend.solve_lower
solve_lower_t = backend.solve_lower_t
cholesky = backend.cholesky
chol_append = backend.chol_append
posterior = backend.posterior
centrality = backend.centrality
