"""High-probability prediction-error radius for the aggregated posterior.

The radius is ``eta(x) = beta * sigma(x) + gamma(x)`` where ``sigma`` and
``gamma`` are the per-expert standard deviations and Lipschitz slack terms
averaged with the mean-aggregation weights.  With ``use_simplified`` the
slack is dropped in favour of ``2 * beta * sigma(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from skygp.aggregation import Prediction
from skygp.expert import Expert
from skygp.kernel import Hyperparameters


@dataclass
class BoundParams:
    """Constants of the error bound.

    Parameters
    ----------
    delta : float
        Per-expert failure probability; must satisfy ``0 < delta < 1/max_agg``.
    tau : float
        Grid factor of the covering argument.
    Gamma : float
        Bound on the RKHS norm of the target.
    domain_lo, domain_hi : array_like
        Box containing the inputs.
    L_kappa : float, optional
        Kernel Lipschitz constant; defaults to the analytic SE bound.
    L_mu, L_sigma : float, optional
        Override the per-expert Lipschitz estimates with one value each.
    beta_delta : float, optional
        Value whose square root scales ``L_sigma`` in the slack term;
        defaults to ``beta**2``.
    n_pairs : int
        Random finite-difference pairs used per expert when estimating
        Lipschitz constants.
    """

    delta: float = 0.05
    tau: float = 0.01
    Gamma: float = 1.0
    domain_lo: np.ndarray = field(default_factory=lambda: np.zeros(1))
    domain_hi: np.ndarray = field(default_factory=lambda: np.ones(1))
    L_kappa: float | None = None
    L_mu: float | None = None
    L_sigma: float | None = None
    beta_delta: float | None = None
    use_simplified: bool = False
    n_pairs: int = 256
    seed: int = 0

    def __post_init__(self):
        self.domain_lo = np.atleast_1d(np.asarray(self.domain_lo, dtype=float))
        self.domain_hi = np.atleast_1d(np.asarray(self.domain_hi, dtype=float))
        if self.domain_lo.shape != self.domain_hi.shape:
            raise ValueError("domain_lo and domain_hi must have the same shape")
        if np.any(self.domain_lo > self.domain_hi):
            raise ValueError("domain_lo must not exceed domain_hi")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not self.tau >= 0:
            raise ValueError("tau must be non-negative")
        if not self.Gamma >= 0:
            raise ValueError("Gamma must be non-negative")

    def check_agg(self, max_agg: int) -> None:
        if not self.delta < 1.0 / max_agg:
            raise ValueError(f"delta={self.delta} must be below 1/max_agg={1.0 / max_agg:.4g}")

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "tau": self.tau,
            "Gamma": self.Gamma,
            "domain_lo": self.domain_lo.tolist(),
            "domain_hi": self.domain_hi.tolist(),
            "L_kappa": self.L_kappa,
            "L_mu": self.L_mu,
            "L_sigma": self.L_sigma,
            "beta_delta": self.beta_delta,
            "use_simplified": self.use_simplified,
            "n_pairs": self.n_pairs,
            "seed": self.seed,
        }


def beta(p: BoundParams, n: int | None = None) -> float:
    """Scaling of the posterior standard deviation.

    ``2 * sqrt(2 * sum_j log ceil(sqrt(n) / (2 tau) * width_j) - 2 log(delta / n))``;
    a ceiling below one is treated as one so collapsed dimensions add nothing.
    """
    if n is None:
        n = p.domain_lo.size
    widths = p.domain_hi - p.domain_lo
    total = 0.0
    for w in widths:
        if p.tau == 0:
            cells = math.inf if w > 0 else 1.0
        else:
            cells = max(math.ceil(math.sqrt(n) / (2.0 * p.tau) * w), 1)
        total += math.log(cells)
    return 2.0 * math.sqrt(2.0 * total - 2.0 * math.log(p.delta / n))


def kernel_lipschitz(h: Hyperparameters) -> float:
    """Largest slope of the SE kernel along one coordinate: ``sf^2 e^{-1/2} / min(l)``."""
    return h.signal_var * float(np.max(1.0 / h.lengthscales)) * math.exp(-0.5)


def gamma_i(p: BoundParams, L_sigma: float, L_mu: float, beta_delta: float,
            L_kappa: float) -> float:
    """Slack ``(sqrt(beta_delta) L_sigma + Gamma sqrt(2 L_kappa) + L_mu) * tau``."""
    return (math.sqrt(beta_delta) * L_sigma + p.Gamma * math.sqrt(2.0 * L_kappa) + L_mu) * p.tau


def estimate_lipschitz(expert: Expert, lo, hi, n_pairs: int = 256,
                       rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Finite-difference slopes of the posterior mean and standard deviation.

    Pairs are a uniform point in the box and a nearby point at a small
    random offset, so each slope approximates a local gradient norm.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = np.where(hi > lo, hi - lo, 1.0)
    step = 1e-4 * float(np.min(width))
    L_mu = 0.0
    L_sigma = 0.0
    for _ in range(n_pairs):
        a = lo + rng.random(lo.size) * (hi - lo)
        u = rng.normal(size=lo.size)
        u /= np.linalg.norm(u)
        b = a + step * u
        ma, va = expert.predict_raw(a)
        mb, vb = expert.predict_raw(b)
        L_mu = max(L_mu, abs(ma - mb) / step)
        sa = math.sqrt(max(va, 0.0))
        sb = math.sqrt(max(vb, 0.0))
        L_sigma = max(L_sigma, abs(sa - sb) / step)
    return L_mu, L_sigma


def eta(p: BoundParams, pred: Prediction, beta_value: float, gammas=None) -> float:
    """Error radius from a prediction's per-expert contributions.

    ``gammas`` lists one slack term per contribution (zeros if omitted).
    """
    if not pred.contributions:
        raise ValueError("prediction carries no per-expert contributions")
    omega = np.array([c.mean_weight for c in pred.contributions])
    if not omega.sum() > 0:
        # no expert carries weight: the prediction is the prior
        s = math.sqrt(pred.variance)
        return (2.0 if p.use_simplified else 1.0) * beta_value * s
    sigma = np.sqrt(np.array([c.variance for c in pred.contributions]))
    s = float(omega @ sigma)
    if p.use_simplified:
        return 2.0 * beta_value * s
    g = 0.0 if gammas is None else float(omega @ np.asarray(gammas, dtype=float))
    return beta_value * s + g


class ErrorBound:
    """Evaluates the radius for predictions coming out of a pool.

    Per-expert Lipschitz estimates are cached against the expert's version
    counter, so they are only recomputed after the expert changes.
    """

    def __init__(self, params: BoundParams, h: Hyperparameters):
        self.params = params
        self.h = h
        self.beta = beta(params, h.dim)
        self.beta_delta = params.beta_delta if params.beta_delta is not None else self.beta**2
        self.L_kappa = params.L_kappa if params.L_kappa is not None else kernel_lipschitz(h)
        self._rng = np.random.default_rng(params.seed)
        self._cache: dict[int, tuple[int, float]] = {}

    def expert_gamma(self, expert: Expert) -> float:
        hit = self._cache.get(expert.uid)
        if hit is not None and hit[0] == expert.version:
            return hit[1]
        p = self.params
        if p.L_mu is not None and p.L_sigma is not None:
            L_mu, L_sigma = p.L_mu, p.L_sigma
        else:
            est_mu, est_sigma = estimate_lipschitz(expert, p.domain_lo, p.domain_hi, p.n_pairs, self._rng)
            L_mu = p.L_mu if p.L_mu is not None else est_mu
            L_sigma = p.L_sigma if p.L_sigma is not None else est_sigma
        g = gamma_i(p, L_sigma, L_mu, self.beta_delta, self.L_kappa)
        self._cache[expert.uid] = (expert.version, g)
        return g

    def radius(self, pool, pred: Prediction) -> float:
        """Compute the radius for ``pred`` and store it on the prediction."""
        if not pred.contributions:
            # prior prediction: the posterior standard deviation is the prior one
            r = (2.0 if self.params.use_simplified else 1.0) * self.beta * math.sqrt(pred.variance)
            pred.error_radius = r
            return r
        gammas = None
        if not self.params.use_simplified:
            gammas = [self.expert_gamma(pool.experts[c.uid]) for c in pred.contributions]
        r = eta(self.params, pred, self.beta, gammas)
        pred.error_radius = r
        return r
