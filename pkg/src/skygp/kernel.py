"""ARD squared-exponential kernel and the kernel-induced distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from skygp import _kernels


class DimensionError(ValueError):
    """Input dimensions do not match the kernel's lengthscales."""


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """ARD squared-exponential hyperparameters.

    Parameters
    ----------
    lengthscales : array_like, shape (m,)
        One positive lengthscale per input dimension.
    signal_dev : float
        Signal standard deviation; the prior variance is ``signal_dev**2``.
    noise_dev : float
        Observation-noise standard deviation.
    """

    lengthscales: np.ndarray
    signal_dev: float = 1.0
    noise_dev: float = 0.1
    inv_ls2: np.ndarray = field(init=False, repr=False, compare=False)
    signal_var: float = field(init=False, repr=False, compare=False)
    noise_var: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty vector")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.signal_dev > 0:
            raise ValueError(f"signal_dev must be positive, got {self.signal_dev}")
        if not self.noise_dev >= 0:
            raise ValueError(f"noise_dev must be non-negative, got {self.noise_dev}")
        ls.setflags(write=False)
        inv = 1.0 / (ls * ls)
        inv.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_dev", float(self.signal_dev))
        object.__setattr__(self, "noise_dev", float(self.noise_dev))
        object.__setattr__(self, "inv_ls2", inv)
        object.__setattr__(self, "signal_var", self.signal_dev**2)
        object.__setattr__(self, "noise_var", self.noise_dev**2)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hyperparameters):
            return NotImplemented
        return (
            np.array_equal(self.lengthscales, other.lengthscales)
            and self.signal_dev == other.signal_dev
            and self.noise_dev == other.noise_dev
        )

    def __hash__(self) -> int:
        return hash((self.lengthscales.tobytes(), self.signal_dev, self.noise_dev))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def to_dict(self) -> dict:
        return {
            "lengthscales": self.lengthscales.tolist(),
            "signal_dev": self.signal_dev,
            "noise_dev": self.noise_dev,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        return cls(
            lengthscales=d["lengthscales"],
            signal_dev=d.get("signal_dev", 1.0),
            noise_dev=d.get("noise_dev", 0.1),
        )


def _vec(h: Hyperparameters, x) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == np.float64 and x.shape == h.lengthscales.shape:
        return x
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (h.dim,):
        raise DimensionError(f"expected input of dimension {h.dim}, got shape {x.shape}")
    return x


class Kernel:
    """Stationary covariance function interface.

    Subclasses provide ``eval`` and ``eval_vec``; the pool only ever talks to
    a kernel through these two methods plus ``kernel_distance``.
    """

    def eval(self, h, x, x2):  # pragma: no cover - interface
        raise NotImplementedError

    def eval_vec(self, h, x, X):  # pragma: no cover - interface
        raise NotImplementedError

    def kernel_distance(self, h, c, x):
        return 1.0 / self.eval(h, c, x)


class ARDSquaredExponential(Kernel):
    """``sf^2 * exp(-0.5 * sum_j (x_j - x2_j)^2 / l_j^2)``"""

    def eval(self, h: Hyperparameters, x, x2) -> float:
        x = _vec(h, x)
        x2 = _vec(h, x2)
        d = x - x2
        return h.signal_var * float(np.exp(-0.5 * np.dot(d * d, h.inv_ls2)))

    def eval_vec(self, h: Hyperparameters, x, X) -> np.ndarray:
        x = _vec(h, x)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != h.dim:
            raise DimensionError(f"expected {h.dim} columns, got {X.shape[1]}")
        return _kernels.sqexp_vec(x, X, X.shape[0], h.inv_ls2, h.signal_var)


SE = ARDSquaredExponential()


def eval(h: Hyperparameters, x, x2) -> float:
    """Kernel value between two points, in ``(0, signal_dev**2]``."""
    return SE.eval(h, x, x2)


def eval_vec(h: Hyperparameters, x, X) -> np.ndarray:
    """Kernel values between ``x`` and every row of ``X``."""
    return SE.eval_vec(h, x, X)


def kernel_distance(h: Hyperparameters, c, x) -> float:
    """Reciprocal kernel similarity ``1 / k(c, x)``; at least ``1/signal_var``."""
    return SE.kernel_distance(h, c, x)


def gram(h: Hyperparameters, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != h.dim:
        raise DimensionError(f"expected {h.dim} columns, got {X.shape[1]}")
    return _kernels.sqexp_matrix(np.ascontiguousarray(X), X.shape[0], h.inv_ls2, h.signal_var)
