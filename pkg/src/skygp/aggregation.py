"""
Combination of per-expert posteriors into a single predictive distribution.

All rules share the template ``mean = sum_i omega_i * mu_i`` with method
specific weights:

* ``moe``  - mixture moments, weights sum to one
* ``poe``  - precision product, unit weights
* ``gpoe`` - precision product, normalised base weights
* ``bcm``  - precision product with prior correction, unit weights
* ``rbcm`` - BCM with differential-entropy weights computed per query

For the precision rules the mean weights are the normalised PoE weights
and the prior correction of the BCM family acts on the variance only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

METHODS = ("moe", "poe", "gpoe", "bcm", "rbcm")
WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ExpertPosterior:
    mean: float
    variance: float
    weight: float = 1.0
    uid: int = -1


@dataclass(slots=True)
class Contribution:
    uid: int
    mean: float
    variance: float
    mean_weight: float
    variance_weight: float

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "mean": self.mean,
            "variance": self.variance,
            "mean_weight": self.mean_weight,
            "variance_weight": self.variance_weight,
        }


@dataclass(slots=True)
class Prediction:
    """Aggregated predictive distribution at one query point."""

    mean: float
    variance: float
    contributions: list = field(default_factory=list)
    error_radius: float | None = None

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "error_radius": self.error_radius,
            "contributions": [c.to_dict() for c in self.contributions],
        }


# ---------------------------------------------------------------------------
# array-level rules: return (mean, variance, mean weights, variance weights)
# ---------------------------------------------------------------------------


def combine_moe(mu: np.ndarray, var: np.ndarray, w: np.ndarray):
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"MoE weights must sum to 1, got {w.sum():.12g}")
    if mu.size == 1:
        return float(mu[0]), float(var[0]), w, w
    mean = float(w @ mu)
    variance = max(float(w @ (var + mu * mu)) - mean * mean, 0.0)
    return mean, variance, w, w


def combine_precision(mu: np.ndarray, var: np.ndarray, w: np.ndarray, prior_correction: float = 0.0):
    """Precision-weighted combination.

    The mean weights are always the normalised product-of-experts weights
    ``w_i / var_i / sum_j w_j / var_j``; ``prior_correction`` only enters the
    variance.  If every weight is zero the mean falls back to the prior
    mean 0.
    """
    if not var.min() > 0:
        raise ValueError(f"expert variances must be positive, got {var}")
    if mu.size == 1 and w[0] == 1.0 and prior_correction == 0.0:
        one = np.ones(1)
        return float(mu[0]), float(var[0]), one, one
    prec = w / var
    evidence = float(prec.sum())
    total = evidence + prior_correction
    if not total > 0:
        raise ValueError("aggregated precision is not positive")
    variance = 1.0 / total
    if evidence > 0:
        omega = prec / evidence
        mean = float(omega @ mu)
    else:
        omega = np.zeros_like(prec)
        mean = 0.0
    return mean, variance, omega, prec * variance


def rbcm_weights(variances, prior_var: float) -> np.ndarray:
    """Differential entropy between prior and posterior, clamped at zero."""
    var = np.asarray(variances, dtype=float)
    return np.maximum(0.5 * (np.log(prior_var) - np.log(var)), 0.0)


def combine_rbcm(mu: np.ndarray, var: np.ndarray, prior_var: float):
    if not var.min() > 0:
        raise ValueError(f"expert variances must be positive, got {var}")
    if mu.size == 1:
        # the entropy weighting only has meaning for a committee
        one = np.ones(1)
        return float(mu[0]), float(var[0]), one, one
    w = rbcm_weights(var, prior_var)
    return combine_precision(mu, var, w, (1.0 - w.sum()) / prior_var)


def base_weights(similarities, scheme: str = "uniform", temperature: float = 1.0) -> np.ndarray:
    """Normalised base weights for an aggregation set."""
    s = np.asarray(similarities, dtype=float)
    if scheme == "uniform":
        return np.full(s.size, 1.0 / s.size)
    if scheme == "softmax":
        e = np.exp((s - s.max()) / temperature)
        return e / e.sum()
    raise ValueError(f"unknown weighting scheme {scheme!r}")


# ---------------------------------------------------------------------------
# posterior-list interface
# ---------------------------------------------------------------------------


def _arrays(posteriors: Sequence[ExpertPosterior]):
    if len(posteriors) == 0:
        raise ValueError("need at least one expert posterior")
    mu = np.array([p.mean for p in posteriors], dtype=float)
    var = np.array([p.variance for p in posteriors], dtype=float)
    w = np.array([p.weight for p in posteriors], dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return mu, var, w


def _prediction(uids, mu, var, combined, floor: float) -> Prediction:
    mean, variance, omega, varpi = combined
    contribs = [
        Contribution(int(u), float(m), float(v), float(o), float(p))
        for u, m, v, o, p in zip(uids, mu, var, omega, varpi)
    ]
    return Prediction(mean, max(variance, floor), contribs)


def aggregate_moe(posteriors, variance_floor: float = 0.0) -> Prediction:
    """Mixture of experts; variance ``sum_i w_i (var_i + mu_i^2) - mean^2``."""
    mu, var, w = _arrays(posteriors)
    return _prediction([p.uid for p in posteriors], mu, var, combine_moe(mu, var, w), variance_floor)


def aggregate_poe(posteriors, variance_floor: float = 0.0) -> Prediction:
    """Weighted product of experts; weights are taken as given."""
    mu, var, w = _arrays(posteriors)
    return _prediction([p.uid for p in posteriors], mu, var, combine_precision(mu, var, w), variance_floor)


def aggregate_bcm(posteriors, prior_var: float, variance_floor: float = 0.0) -> Prediction:
    """Bayesian committee machine: PoE precision plus ``(1 - sum w) / prior_var``."""
    if not prior_var > 0:
        raise ValueError("prior_var must be positive")
    mu, var, w = _arrays(posteriors)
    combined = combine_precision(mu, var, w, (1.0 - w.sum()) / prior_var)
    return _prediction([p.uid for p in posteriors], mu, var, combined, variance_floor)


def aggregate_rbcm(posteriors, prior_var: float, variance_floor: float = 0.0) -> Prediction:
    """Robust BCM. Incoming weights are ignored and recomputed from the
    variances; a lone expert is returned unchanged."""
    if not prior_var > 0:
        raise ValueError("prior_var must be positive")
    mu, var, _ = _arrays(posteriors)
    return _prediction([p.uid for p in posteriors], mu, var, combine_rbcm(mu, var, prior_var), variance_floor)


def aggregate(method: str, means, variances, similarities=None, uids=None,
              prior_var: float = 1.0, weighting: str = "uniform",
              variance_floor: float = 0.0) -> Prediction:
    """Aggregate with the weights the pool uses for ``method``.

    ``poe`` and ``bcm`` use unit weights, ``moe`` and ``gpoe`` normalised
    base weights (uniform or a softmax of the similarities), ``rbcm``
    entropy weights.
    """
    mu = np.asarray(means, dtype=float)
    var = np.asarray(variances, dtype=float)
    n = mu.size
    if uids is None:
        uids = range(n)
    if method == "poe":
        combined = combine_precision(mu, var, np.ones(n))
    elif method == "bcm":
        combined = combine_precision(mu, var, np.ones(n), (1.0 - n) / prior_var)
    elif method == "rbcm":
        combined = combine_rbcm(mu, var, prior_var)
    elif method in ("moe", "gpoe"):
        sims = np.zeros(n) if similarities is None else similarities
        w = base_weights(sims, weighting)
        combined = combine_moe(mu, var, w) if method == "moe" else combine_precision(mu, var, w)
    else:
        raise ValueError(f"unknown aggregation method {method!r}; choose from {METHODS}")
    return _prediction(uids, mu, var, combined, variance_floor)
