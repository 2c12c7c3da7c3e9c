"""
Closed-loop tracking of a scalar Euler-Lagrange plant with a learned
disturbance model.

The plant is ``mass * qdd + damping * qd + gravity = u + mass * f(q, qd)``
with the default ``mass=1, damping=0, gravity=9.8``.  The controller is a
computed-torque law that cancels gravity and the learned disturbance
``mu(x)``, adds PD feedback on the tracking error ``z = x - x_d`` and a
Lyapunov damping term ``-[0, 1] P z / (2 eps)``.  The disturbance model is
an expert pool trained online on noisy acceleration measurements.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from skygp.error_bound import BoundParams, ErrorBound
from skygp.kernel import Hyperparameters
from skygp.pool import Pool, PoolConfig

DIVERGENCE_LIMIT = 1e6

# "zoh" holds u over each step; "continuous" re-evaluates the control law
# (and the disturbance model) at every Runge-Kutta stage.
HOLD_MODES = ("zoh", "continuous")


class LyapunovError(ValueError):
    """The Lyapunov equation has no positive-definite solution."""


class SimulationFailure(RuntimeError):
    pass


def true_f(x) -> float:
    """Unknown dynamics of the benchmark plant."""
    x1 = float(x[0])
    x2 = float(x[1])
    return (1.0 + x1 * x2 / 10.0 + math.cos(x2) / 2.0 - 10.0 * math.sin(5.0 * x1)
            + 0.5 / (1.0 + math.exp(-x2 / 10.0)))


def closed_loop_matrix(k_p: float, k_d: float) -> np.ndarray:
    """Error dynamics ``zdot = A z`` under PD feedback ``-k_p z1 - k_d z2``."""
    return np.array([[0.0, 1.0], [-k_p, -k_d]])


def is_hurwitz(A) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(A, dtype=float)).real < 0))


def lyapunov_solve(A, Q) -> np.ndarray:
    """Solve ``A^T P + P A = -Q`` for symmetric ``P`` (2 x 2 case).

    The three free entries of ``P`` satisfy a 3 x 3 linear system built
    column by column from the symmetric basis matrices.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if A.shape != (2, 2) or Q.shape != (2, 2):
        raise ValueError("lyapunov_solve handles 2 x 2 systems")
    if not np.allclose(Q, Q.T):
        raise ValueError("Q must be symmetric")
    if np.any(np.linalg.eigvalsh(Q) <= 0):
        raise ValueError("Q must be positive definite")
    if not is_hurwitz(A):
        raise LyapunovError(f"closed-loop matrix is not Hurwitz (eigenvalues {np.linalg.eigvals(A)})")
    basis = (
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[0.0, 1.0], [1.0, 0.0]]),
        np.array([[0.0, 0.0], [0.0, 1.0]]),
    )
    M = np.empty((3, 3))
    for col, E in enumerate(basis):
        R = A.T @ E + E @ A
        M[:, col] = (R[0, 0], R[0, 1], R[1, 1])
    rhs = -np.array([Q[0, 0], Q[0, 1], Q[1, 1]])
    try:
        p11, p12, p22 = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise LyapunovError("singular Lyapunov system") from exc
    P = np.array([[p11, p12], [p12, p22]])
    if np.any(np.linalg.eigvalsh(P) <= 0):
        raise LyapunovError("Lyapunov solution is not positive definite")
    return P


def lyapunov_residual(A, P, Q) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.linalg.norm(A.T @ P + P @ A + Q, "fro"))


@dataclass
class ControllerConfig:
    k_p: float = 5.0
    k_d: float = 10.0
    epsilon: float = 1.0
    a_r: float = 1.0
    w_r: float = 0.1
    Q: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    dt: float = 0.01
    duration: float = 100.0
    noise_dev: float = 0.01
    mass: float = 1.0
    damping: float = 0.0
    gravity: float = 9.8
    bound_radius: float = 10.0
    hold: str = "zoh"

    def __post_init__(self):
        if self.hold not in HOLD_MODES:
            raise ValueError(f"hold must be one of {HOLD_MODES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        self._P = None

    @property
    def A(self) -> np.ndarray:
        return closed_loop_matrix(self.k_p, self.k_d)

    @property
    def P(self) -> np.ndarray:
        if self._P is None:
            self._P = lyapunov_solve(self.A, np.asarray(self.Q, dtype=float))
        return self._P

    def ultimate_bound_gain(self) -> float:
        """``eps * max eig(P) / (min eig(Q) * min eig(P))``; multiply by eta_bar^2."""
        lp = np.linalg.eigvalsh(self.P)
        lq = np.linalg.eigvalsh(np.asarray(self.Q, dtype=float))
        return self.epsilon * lp[-1] / (lq[0] * lp[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_P", None)
        return d


def reference(t: float, cfg: ControllerConfig) -> tuple[float, float, float]:
    """Desired position, velocity and acceleration of ``a_r sin(w_r t)``."""
    s = math.sin(cfg.w_r * t)
    c = math.cos(cfg.w_r * t)
    return cfg.a_r * s, cfg.a_r * cfg.w_r * c, -cfg.a_r * cfg.w_r**2 * s


def control_law(t: float, x, mu_tilde: float, cfg: ControllerConfig, P=None) -> float:
    """Computed-torque law with the learned disturbance cancelled.

    For unit mass and no damping this is
    ``gravity - mu + qdd_d - k_p z1 - k_d z2 - (P[1] . z) / (2 eps)``.
    """
    P = cfg.P if P is None else P
    q_d, qd_d, qdd_d = reference(t, cfg)
    z1 = float(x[0]) - q_d
    z2 = float(x[1]) - qd_d
    lyap = (P[1, 0] * z1 + P[1, 1] * z2) / (cfg.mass * 2.0 * cfg.epsilon)
    return (cfg.damping * float(x[1]) + cfg.gravity
            + cfg.mass * (qdd_d - mu_tilde - cfg.k_p * z1 - cfg.k_d * z2) - lyap)


def plant_rhs(q: float, qd: float, u: float, cfg: ControllerConfig, f=true_f) -> tuple[float, float]:
    return qd, (u - cfg.damping * qd - cfg.gravity) / cfg.mass + f((q, qd))


def rk4_step(q: float, qd: float, u: float, dt: float, cfg: ControllerConfig, f=true_f):
    """One classical Runge-Kutta step with ``u`` held constant."""
    k1q, k1v = plant_rhs(q, qd, u, cfg, f)
    k2q, k2v = plant_rhs(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v, u, cfg, f)
    k3q, k3v = plant_rhs(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v, u, cfg, f)
    k4q, k4v = plant_rhs(q + dt * k3q, qd + dt * k3v, u, cfg, f)
    return (q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
            qd + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v))


def rk4_closed_loop(q: float, qd: float, t: float, dt: float, cfg: ControllerConfig,
                    mu_of, P=None, f=true_f):
    """One Runge-Kutta step with the control law evaluated at every stage.

    ``mu_of(q, qd)`` returns the disturbance estimate at a stage state.
    """
    P = cfg.P if P is None else P

    def rhs(tt, a, b):
        u = control_law(tt, (a, b), mu_of(a, b), cfg, P)
        return plant_rhs(a, b, u, cfg, f)

    h2 = 0.5 * dt
    k1q, k1v = rhs(t, q, qd)
    k2q, k2v = rhs(t + h2, q + h2 * k1q, qd + h2 * k1v)
    k3q, k3v = rhs(t + h2, q + h2 * k2q, qd + h2 * k2v)
    k4q, k4v = rhs(t + dt, q + dt * k3q, qd + dt * k3v)
    return (q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
            qd + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v))


@dataclass
class PlantState:
    q: float
    qdot: float
    t: float = 0.0


@dataclass
class TrialResult:
    max_tracking_err: float
    max_pred_err: float
    final_tracking_err: float
    tail_tracking_err: float
    ultimate_bound: float
    diverged: bool = False
    bounded: bool = True
    n_experts: int = 0
    stored_points: int = 0
    trajectory: np.ndarray | None = None

    @property
    def within_ultimate_bound(self) -> bool:
        return (not self.diverged) and self.tail_tracking_err <= self.ultimate_bound

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "trajectory"}
        d["within_ultimate_bound"] = self.within_ultimate_bound
        return d


TRAJECTORY_COLUMNS = ("t", "q", "q_d", "z1", "z2", "mu", "f", "sigma", "eta")

LEARNING_MODES = ("gp", "none", "oracle")


def simulate_trial(init: PlantState, cfg: ControllerConfig, pool_cfg: PoolConfig | None,
                   h: Hyperparameters | None, rng: np.random.Generator | None = None,
                   learning: str = "gp", bound: BoundParams | None = None,
                   record: bool = False, duration: float | None = None) -> TrialResult:
    """Run one closed-loop trial.

    Each control step predicts the disturbance at the current state, applies
    the control, advances the plant by one RK4 step and then trains the
    pool on ``(x, y)`` where ``y`` is the measured acceleration minus the
    known part of the dynamics.

    ``learning`` selects the disturbance model: ``"gp"`` (expert pool),
    ``"none"`` (``mu = 0``) or ``"oracle"`` (``mu = f``).
    """
    if learning not in LEARNING_MODES:
        raise ValueError(f"learning must be one of {LEARNING_MODES}")
    duration = cfg.duration if duration is None else duration
    if not duration > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    P = cfg.P
    dt = cfg.dt
    n_steps = int(round(duration / dt))
    tail_start = int(math.floor(0.8 * n_steps))

    pool = Pool(h, pool_cfg) if learning == "gp" else None
    eb = ErrorBound(bound, h) if (bound is not None and learning == "gp" and record) else None
    noise = rng.normal(0.0, cfg.noise_dev, size=n_steps) if cfg.noise_dev > 0 else np.zeros(n_steps)

    if learning == "gp":
        def stage_mu(a, b):
            return pool.predict_only(np.array([a, b])).mean
    elif learning == "oracle":
        def stage_mu(a, b):
            return true_f((a, b))
    else:
        def stage_mu(a, b):
            return 0.0

    q, qd = float(init.q), float(init.qdot)
    t = float(init.t)
    max_track = 0.0
    max_pred = 0.0
    tail = 0.0
    diverged = False
    rows = [] if record else None
    z_norm = 0.0

    for step in range(n_steps + 1):
        q_d, qd_d, _ = reference(t, cfg)
        z1 = q - q_d
        z2 = qd - qd_d
        z_norm = math.hypot(z1, z2)
        max_track = max(max_track, z_norm)
        if step >= tail_start:
            tail = max(tail, z_norm)
        if not (z_norm < DIVERGENCE_LIMIT and math.isfinite(z_norm)):
            diverged = True
            break
        if step == n_steps:
            if record:
                rows.append((t, q, q_d, z1, z2, math.nan, true_f((q, qd)), math.nan, math.nan))
            break

        x = np.array([q, qd])
        f_x = true_f((q, qd))
        sigma = 0.0
        radius = math.nan
        if learning == "gp":
            pred = pool.predict_only(x)
            mu = pred.mean
            sigma = math.sqrt(pred.variance)
            if eb is not None:
                radius = eb.radius(pool, pred)
        elif learning == "oracle":
            mu = f_x
        else:
            mu = 0.0
        max_pred = max(max_pred, abs(f_x - mu))
        if record:
            rows.append((t, q, q_d, z1, z2, mu, f_x, sigma, radius))

        u = control_law(t, (q, qd), mu, cfg, P)
        known = (u - cfg.damping * qd - cfg.gravity) / cfg.mass
        measured_acc = known + f_x + noise[step]
        if cfg.hold == "zoh":
            q, qd = rk4_step(q, qd, u, dt, cfg)
        else:
            q, qd = rk4_closed_loop(q, qd, t, dt, cfg, stage_mu, P)
        if pool is not None:
            pool.process(x, measured_acc - known)
        t += dt

    if diverged:
        max_track = math.inf
    gain = cfg.ultimate_bound_gain()
    return TrialResult(
        max_tracking_err=max_track,
        max_pred_err=max_pred,
        final_tracking_err=z_norm,
        tail_tracking_err=tail,
        ultimate_bound=gain * max_pred**2,
        diverged=diverged,
        bounded=(not diverged) and max_track < cfg.bound_radius,
        n_experts=pool.n_experts if pool is not None else 0,
        stored_points=pool.total_points if pool is not None else 0,
        trajectory=np.array(rows) if record else None,
    )


@dataclass
class MonteCarloSummary:
    trials: list
    learning: str
    variant: str
    seed: int

    def _stat(self, attr: str) -> dict:
        v = np.array([getattr(r, attr) for r in self.trials], dtype=float)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        return {"median": float(med), "q1": float(q1), "q3": float(q3),
                "mean": float(v.mean()), "max": float(v.max()), "min": float(v.min())}

    @property
    def median_tracking(self) -> float:
        return self._stat("max_tracking_err")["median"]

    @property
    def median_prediction(self) -> float:
        return self._stat("max_pred_err")["median"]

    @property
    def fraction_bounded(self) -> float:
        return float(np.mean([r.bounded for r in self.trials]))

    @property
    def fraction_within_ultimate_bound(self) -> float:
        return float(np.mean([r.within_ultimate_bound for r in self.trials]))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "learning": self.learning,
            "seed": self.seed,
            "n_trials": len(self.trials),
            "max_tracking_err": self._stat("max_tracking_err"),
            "max_pred_err": self._stat("max_pred_err"),
            "final_tracking_err": self._stat("final_tracking_err"),
            "fraction_bounded": self.fraction_bounded,
            "fraction_within_ultimate_bound": self.fraction_within_ultimate_bound,
            "trials": [r.to_dict() for r in self.trials],
        }


def trial_generators(seed: int, n_trials: int) -> list[np.random.Generator]:
    """Independent counter-based generators, one per trial."""
    children = np.random.SeedSequence(seed).spawn(n_trials)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def monte_carlo(n_trials: int, seed: int, cfg: ControllerConfig, pool_cfg: PoolConfig | None,
                h: Hyperparameters | None, learning: str = "gp", bound: BoundParams | None = None,
                record: bool = False, duration: float | None = None,
                on_trial=None) -> MonteCarloSummary:
    """Trials from initial states drawn uniformly in ``[0, 1]^2``.

    Trial ``i`` always uses the ``i``-th spawned generator of ``seed``, so
    results do not depend on execution order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    cfg.P  # fail fast on a non-Hurwitz configuration
    trials = []
    for i, rng in enumerate(trial_generators(seed, n_trials)):
        q0, qd0 = rng.uniform(0.0, 1.0, size=2)
        res = simulate_trial(PlantState(q0, qd0), cfg, pool_cfg, h, rng, learning,
                             bound=bound, record=record, duration=duration)
        trials.append(res)
        if on_trial is not None:
            on_trial(i, res)
    variant = pool_cfg.mode if (pool_cfg is not None and learning == "gp") else learning
    return MonteCarloSummary(trials, learning, variant, seed)
