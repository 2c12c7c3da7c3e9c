"""
Fast invariant suite run by ``skygp selfcheck``.

Each check compares the library against an independent computation
(batch factorisation, closed-form reductions, brute force) and returns a
pass flag with a short detail string.

Setting ``SKYGP_SELFCHECK_CORRUPT=<check name>`` perturbs that check's
reference value so the failure path can be exercised.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from skygp import _kernels
from skygp.aggregation import METHODS, aggregate, combine_precision
from skygp.control import closed_loop_matrix, lyapunov_residual, lyapunov_solve
from skygp.expert import Expert
from skygp.kernel import Hyperparameters, eval as k_eval, gram

CORRUPT_ENV = "SKYGP_SELFCHECK_CORRUPT"


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _corrupt(name: str) -> float:
    """Offset added to a reference value when the hook targets ``name``."""
    return 1.0 if os.environ.get(CORRUPT_ENV) == name else 0.0


def check_incremental_cholesky(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        n = int(rng.integers(2, 40))
        h = Hyperparameters(rng.uniform(0.3, 2.0, dim), rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.5))
        X = rng.normal(size=(n, dim))
        y = rng.normal(size=n)
        e = Expert(h, X[0], y[0], capacity=n)
        for i in range(1, n):
            e.append(X[i], y[i])
        K = gram(h, X) + np.diag(h.noise_var + e.jitter[:n])
        L = np.linalg.cholesky(K) + _corrupt("incremental_cholesky")
        worst = max(worst, float(np.max(np.abs(L - e.chol))))
        q = rng.normal(size=dim)
        kq = np.array([k_eval(h, q, xi) for xi in X])
        mean = kq @ np.linalg.solve(K, y)
        var = h.signal_var - kq @ np.linalg.solve(K, kq)
        m, v = e.predict_raw(q)
        worst = max(worst, abs(m - mean), abs(v - var))
    return worst <= 1e-8, f"max abs deviation {worst:.3e} (tol 1e-8)"


def check_aggregation_reductions(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for method in METHODS:
        mu, var = rng.normal(), rng.uniform(0.01, 2.0)
        p = aggregate(method, [mu], [var], [1.0], prior_var=4.0)
        worst = max(worst, abs(p.mean - mu), abs(p.variance - var))
    s = rng.uniform(0.1, 2.0)
    p = aggregate("poe", [0.3, -0.2], [s, s])
    worst = max(worst, abs(p.variance - s / 2.0))
    w = rng.random(4)
    w /= w.sum()
    mu, var = rng.normal(size=4), rng.uniform(0.1, 2.0, 4)
    a = combine_precision(mu, var, w)
    b = combine_precision(mu, var, w, (1.0 - w.sum()) / 3.0)
    worst = max(worst, abs(a[0] - b[0]), abs(a[1] - b[1])) + _corrupt("aggregation_reductions")
    return worst <= 1e-12, f"max abs deviation {worst:.3e} (tol 1e-12)"


def check_lyapunov_residual(rng: np.random.Generator) -> tuple[bool, str]:
    A = closed_loop_matrix(5.0, 10.0)
    Q = np.eye(2)
    P = lyapunov_solve(A, Q)
    expected = np.array([[1.3, 0.1], [0.1, 0.06]])
    expected[0, 0] += _corrupt("lyapunov_residual")
    res = lyapunov_residual(A, P, Q)
    dev = float(np.max(np.abs(P - expected)))
    return res <= 1e-10 and dev <= 1e-12, f"residual {res:.3e}, |P - P_ref| {dev:.3e}"


def brute_force_delta(e: Expert, x) -> float:
    """Trigger value by direct kernel evaluation over the held points."""
    h = e.h
    X, _ = e.data
    c = e.center
    vals = []
    for xs in X:
        d = k_eval(h, xs, c) - k_eval(h, x, c)
        if e.dropped_center is not None:
            d += -k_eval(h, xs, e.dropped_center) + k_eval(h, x, e.dropped_center)
        vals.append(d)
    return max(vals)


def check_delta_trigger(rng: np.random.Generator) -> tuple[bool, str]:
    agree = 0
    total = 100
    for _ in range(total):
        dim = int(rng.integers(1, 3))
        cap = int(rng.integers(2, 9))
        h = Hyperparameters(rng.uniform(0.3, 1.5, dim), 1.0, 0.1)
        X = rng.normal(size=(cap, dim))
        e = Expert(h, X[0], 0.0, capacity=cap)
        for xi in X[1:]:
            e.append(xi, 0.0)
        for _ in range(int(rng.integers(0, 3))):
            e.replace(rng.normal(size=dim) * 0.3, 0.0)
        x = rng.normal(size=dim) * float(rng.choice([0.1, 1.0]))
        expected = brute_force_delta(e, x) + _corrupt("delta_trigger") < 0.0
        agree += int(e.try_replace(x, 0.0) == expected)
    return agree == total, f"{agree}/{total} scenarios agree"


def check_backend_agreement(rng: np.random.Generator) -> tuple[bool, str]:
    if not _kernels.NUMBA_AVAILABLE:
        return True, "numba unavailable; skipped"
    n, dim = 25, 3
    X = rng.normal(size=(n, dim))
    inv_ls2 = rng.uniform(0.5, 2.0, dim)
    A = _kernels.numpy_impl.sqexp_matrix(X, n, inv_ls2, 1.3) + 0.1 * np.eye(n)
    L1, _ = _kernels.numpy_impl.cholesky(A)
    L2, _ = _kernels.numba_impl.cholesky(A)
    dev = float(np.max(np.abs(L1 - L2))) + _corrupt("backend_agreement")
    return dev <= 1e-10, f"numpy vs numba Cholesky deviation {dev:.3e}"


CHECKS: dict[str, Callable[[np.random.Generator], tuple[bool, str]]] = {
    "incremental_cholesky": check_incremental_cholesky,
    "aggregation_reductions": check_aggregation_reductions,
    "lyapunov_residual": check_lyapunov_residual,
    "delta_trigger": check_delta_trigger,
    "backend_agreement": check_backend_agreement,
}


def run_all(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [
        f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  [{r.seconds:.2f}s]"
        for r in results
    ]
    n_ok = sum(r.passed for r in results)
    lines.append(f"{n_ok}/{len(results)} checks passed")
    return "\n".join(lines)


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
