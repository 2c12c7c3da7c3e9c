"""A single exact GP expert over a bounded data window."""

from __future__ import annotations

import numpy as np

from skygp import _kernels
from skygp.kernel import Hyperparameters, _vec

JITTER_BASE = 1e-8
JITTER_ATTEMPTS = 3
DEFAULT_VARIANCE_FLOOR = 1e-12


class NumericalDegeneracyError(ArithmeticError):
    """Cholesky factorisation hit a non-positive pivot even after jitter."""


class CapacityError(RuntimeError):
    """Append attempted on an expert that already holds ``capacity`` points."""


class PreconditionError(RuntimeError):
    pass


class Expert:
    """Exact GP on at most ``capacity`` points with an incrementally grown
    Cholesky factor of ``K + noise_var * I``.

    Storage is preallocated; only the leading ``n`` rows are live.  The
    center is the running mean of every point ever assigned to the expert,
    including points later cast off by :meth:`replace`.

    Parameters
    ----------
    h : Hyperparameters
    x, y : first training pair
    capacity : int
        Maximum number of held points.
    variance_floor : float
        Lower clamp on the predictive variance.
    uid : int
        Identifier assigned by the owning pool.
    """

    def __init__(self, h: Hyperparameters, x, y: float, capacity: int,
                 variance_floor: float = DEFAULT_VARIANCE_FLOOR, uid: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        x = _vec(h, x)
        m = h.dim
        self.h = h
        self.capacity = int(capacity)
        self.variance_floor = float(variance_floor)
        self.uid = uid
        self.X = np.zeros((capacity, m))
        self.y = np.zeros(capacity)
        self.L = np.zeros((capacity, capacity))
        self.alpha = np.zeros(capacity)
        # diagonal jitter actually added on top of noise_var, per held point
        self.jitter = np.zeros(capacity)
        self.n = 0
        self.center = x.copy()
        self.n_center = 1
        self.dropped_center: np.ndarray | None = None
        self.n_dropped = 0
        # time-aware factor; a pool attaches its decay clock on insertion
        self.clock = None
        self.theta_base = 1.0
        self.theta_stamp = 0
        self.version = 0
        self._push(x, float(y))

    # -- views ---------------------------------------------------------------

    @property
    def theta(self) -> float:
        """Time-aware factor, decayed by every pool decay event since it was set."""
        if self.clock is None:
            return self.theta_base
        return self.theta_base * self.clock.decay ** float(self.clock.count - self.theta_stamp)

    @theta.setter
    def theta(self, value: float) -> None:
        self.theta_base = float(value)
        self.theta_stamp = 0 if self.clock is None else self.clock.count

    @property
    def N(self) -> int:
        return self.n

    @property
    def full(self) -> bool:
        return self.n >= self.capacity

    @property
    def data(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[: self.n].copy(), self.y[: self.n].copy()

    @property
    def chol(self) -> np.ndarray:
        return self.L[: self.n, : self.n]

    @property
    def weights(self) -> np.ndarray:
        return self.alpha[: self.n]

    # -- internals -----------------------------------------------------------

    def _diag(self) -> float:
        return self.h.signal_var + self.h.noise_var

    def _push(self, x: np.ndarray, y: float) -> None:
        """Extend the factor by one row; O(n^2)."""
        n = self.n
        h = self.h
        kvec = _kernels.sqexp_vec(x, self.X, n, h.inv_ls2, h.signal_var)
        row, pivot2 = _kernels.chol_append(self.L, n, kvec, self._diag())
        extra = 0.0
        if not pivot2 > 0.0:
            for attempt in range(JITTER_ATTEMPTS):
                extra = JITTER_BASE * h.signal_var * 10.0**attempt
                if pivot2 + extra > 0.0:
                    break
            else:
                raise NumericalDegeneracyError(
                    f"non-positive Cholesky pivot {pivot2:.3e} after {JITTER_ATTEMPTS} jitter attempts"
                )
        self.L[n, :n] = row
        self.L[n, n] = np.sqrt(pivot2 + extra)
        self.jitter[n] = extra
        self.X[n] = x
        self.y[n] = y
        self.n = n + 1
        self._refresh_alpha()

    def _refresh_alpha(self) -> None:
        n = self.n
        tmp = _kernels.solve_lower(self.L, n, self.y)
        self.alpha[:n] = _kernels.solve_lower_t(self.L, n, tmp)
        self.version += 1

    def _rebuild(self) -> None:
        """Refactor from scratch; O(n^3)."""
        n = self.n
        h = self.h
        K = _kernels.sqexp_matrix(self.X, n, h.inv_ls2, h.signal_var)
        K[np.diag_indices(n)] += h.noise_var
        L, ok = _kernels.cholesky(K)
        extra = 0.0
        if not ok:
            for attempt in range(JITTER_ATTEMPTS):
                extra = JITTER_BASE * h.signal_var * 10.0**attempt
                Kj = K.copy()
                Kj[np.diag_indices(n)] += extra
                L, ok = _kernels.cholesky(Kj)
                if ok:
                    break
            else:
                raise NumericalDegeneracyError(
                    f"kernel matrix of size {n} not positive definite after jitter"
                )
        self.L[:n, :n] = L
        self.jitter[:n] = extra
        self._refresh_alpha()

    def _update_center(self, x: np.ndarray) -> None:
        k = self.n_center + 1
        self.center = (k - 1) * self.center / k + x / k
        self.n_center = k

    def _update_dropped_center(self, x: np.ndarray) -> None:
        k = self.n_dropped + 1
        if self.dropped_center is None:
            self.dropped_center = x.copy()
        else:
            self.dropped_center = (k - 1) * self.dropped_center / k + x / k
        self.n_dropped = k

    def _similarity_to(self, c: np.ndarray) -> np.ndarray:
        h = self.h
        return _kernels.centrality(self.X, self.n, c, h.inv_ls2, h.signal_var)

    # -- operations ----------------------------------------------------------

    def append(self, x, y: float) -> None:
        """Add one point with a rank-one extension of the Cholesky factor."""
        if self.full:
            raise CapacityError(f"expert {self.uid} already holds {self.capacity} points")
        x = _vec(self.h, x)
        self._push(x, float(y))
        self._update_center(x)

    def delta_trigger(self, x) -> float:
        """Largest replacement score over held points; replace iff negative.

        Before anything has been dropped the dropped-center terms are left
        out, which reduces the test to "x is more central than every held
        point".
        """
        x = _vec(self.h, x)
        h = self.h
        sim_c = self._similarity_to(self.center)
        k_xc = _kernels.sqexp_vec(self.center, x[None, :], 1, h.inv_ls2, h.signal_var)[0]
        delta = sim_c - k_xc
        if self.dropped_center is not None:
            sim_off = self._similarity_to(self.dropped_center)
            k_xoff = _kernels.sqexp_vec(self.dropped_center, x[None, :], 1, h.inv_ls2, h.signal_var)[0]
            delta = delta - sim_off + k_xoff
        return float(np.max(delta))

    def most_central_count(self, x) -> int:
        """Number of held points strictly more similar to the center than ``x``."""
        x = _vec(self.h, x)
        h = self.h
        sim_c = self._similarity_to(self.center)
        k_xc = _kernels.sqexp_vec(self.center, x[None, :], 1, h.inv_ls2, h.signal_var)[0]
        return int(np.count_nonzero(sim_c > k_xc))

    def replace(self, x, y: float) -> tuple[np.ndarray, float]:
        """Swap the point furthest from the center for ``(x, y)`` and refactor.

        The center absorbs ``x`` first; the held point least similar to the
        updated center is then cast off into the dropped set.  Returns the
        dropped pair.
        """
        if not self.full:
            raise PreconditionError("replace requires a full expert")
        x = _vec(self.h, x)
        self._update_center(x)
        k_off = int(np.argmin(self._similarity_to(self.center)))
        x_off = self.X[k_off].copy()
        y_off = float(self.y[k_off])
        self._update_dropped_center(x_off)
        self.X[k_off] = x
        self.y[k_off] = y
        self._rebuild()
        return x_off, y_off

    def try_replace(self, x, y: float) -> bool:
        """Event-triggered replacement: replace only when the trigger is negative."""
        if self.delta_trigger(x) < 0.0:
            self.replace(x, y)
            return True
        return False

    def predict(self, x) -> tuple[float, float]:
        h = self.h
        x = _vec(h, x)
        mean, var = _kernels.posterior(self.L, self.n, self.alpha, self.X, x, h.inv_ls2, h.signal_var)
        return float(mean), max(float(var), self.variance_floor)

    def predict_raw(self, x) -> tuple[float, float]:
        """Posterior mean and unclamped variance."""
        h = self.h
        x = _vec(h, x)
        mean, var = _kernels.posterior(self.L, self.n, self.alpha, self.X, x, h.inv_ls2, h.signal_var)
        return float(mean), float(var)

    def __repr__(self) -> str:
        return f"Expert(uid={self.uid}, n={self.n}/{self.capacity}, theta={self.theta:.3g})"


def new_expert(h: Hyperparameters, x, y: float, capacity: int,
               variance_floor: float = DEFAULT_VARIANCE_FLOOR, uid: int = 0) -> Expert:
    return Expert(h, x, y, capacity, variance_floor=variance_floor, uid=uid)
