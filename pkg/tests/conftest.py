"""Shared independent oracles.

These deliberately avoid the package's own kernels: the covariance is
built with an explicit double loop and solved with a dense LU solve.
"""

import math

import numpy as np
import pytest


def se_kernel(lengthscales, signal_dev, a, b):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    r2 = sum(((ai - bi) / l) ** 2 for ai, bi, l in zip(a, b, lengthscales))
    return signal_dev**2 * math.exp(-0.5 * r2)


def batch_gp(h, X, y, Xq):
    """Exact GP posterior mean/variance by dense solves."""
    ls = np.asarray(h.lengthscales, dtype=float)
    X = np.atleast_2d(X)
    n = X.shape[0]
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = se_kernel(ls, h.signal_dev, X[i], X[j])
    K += h.noise_dev**2 * np.eye(n)
    means, variances = [], []
    for q in np.atleast_2d(Xq):
        k = np.array([se_kernel(ls, h.signal_dev, q, x) for x in X])
        means.append(k @ np.linalg.solve(K, y))
        variances.append(h.signal_dev**2 - k @ np.linalg.solve(K, k))
    return np.array(means), np.array(variances)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(cid: str, passed: bool, detail: str) -> str:
    line = f"criterion {cid:<3} {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
