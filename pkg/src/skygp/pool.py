"""
The expert pool: an ordered list of local exact GP experts.

Each call to :meth:`Pool.process` runs one predict-then-update step:

1. an adaptive search window around the previously used list position
   picks candidate experts (filtered by their time-aware factor),
2. the most similar candidates are aggregated into a prediction,
3. the sample is appended to the first non-full candidate, swapped in by
   event-triggered replacement (dense mode), or seeds a new expert that is
   inserted next to its nearest neighbour in the list.

Positions in the list are what the window slides over; experts keep a
stable ``uid`` independent of their position.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from skygp import _kernels
from skygp.aggregation import METHODS, Prediction, aggregate
from skygp.expert import DEFAULT_VARIANCE_FLOOR, Expert
from skygp.kernel import Hyperparameters, _vec

FAST = "fast"
DENSE = "dense"

APPENDED = "appended"
REPLACED = "replaced"
SPAWNED = "spawned"
REJECTED = "rejected"


@dataclass
class PoolConfig:
    """Pool settings.

    ``capacity`` is the per-expert point budget, ``max_agg`` the number of
    experts aggregated per query and ``max_window`` the largest search
    half-width.  ``max_experts`` optionally caps the number of experts; once
    reached, samples no expert accepts are discarded.
    """

    mode: str = FAST
    capacity: int = 50
    max_agg: int = 1
    max_window: int = 40
    window_scale: float = 1.0
    decay: float = 0.999
    theta_min: float = 0.05
    aggregation: str = "rbcm"
    prior_var: float | None = None
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    weighting: str = "uniform"
    decay_every_step: bool = False
    max_experts: int | None = None

    def __post_init__(self):
        self.mode = str(self.mode).lower()
        self.aggregation = str(self.aggregation).lower()
        if self.mode not in (FAST, DENSE):
            raise ValueError(f"mode must be 'fast' or 'dense', got {self.mode!r}")
        if self.aggregation not in METHODS:
            raise ValueError(f"aggregation must be one of {METHODS}, got {self.aggregation!r}")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.max_agg < 1:
            raise ValueError("max_agg must be >= 1")
        if self.max_window < 0:
            raise ValueError("max_window must be >= 0")
        if not self.window_scale > 0:
            raise ValueError("window_scale must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if not 0.0 <= self.theta_min < 1.0:
            raise ValueError("theta_min must lie in [0, 1)")
        if self.prior_var is not None and not self.prior_var > 0:
            raise ValueError("prior_var must be positive")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.weighting not in ("uniform", "softmax"):
            raise ValueError(f"weighting must be 'uniform' or 'softmax', got {self.weighting!r}")
        if self.max_experts is not None and self.max_experts < 1:
            raise ValueError("max_experts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Event:
    kind: str
    position: int
    uid: int


class DecayClock:
    """Number of decay events a pool has applied, shared with its experts."""

    __slots__ = ("decay", "count")

    def __init__(self, decay: float):
        self.decay = float(decay)
        self.count = 0


class Pool:
    """Streaming mixture of bounded exact GP experts.

    Parameters
    ----------
    h : Hyperparameters
        Shared kernel hyperparameters.
    config : PoolConfig, optional
    """

    def __init__(self, h: Hyperparameters, config: PoolConfig | None = None):
        self.h = h
        self.config = config if config is not None else PoolConfig()
        self.prior_var = self.config.prior_var if self.config.prior_var is not None else h.signal_var
        self.experts: dict[int, Expert] = {}
        self.order: list[int] = []
        self.nu_prev = 0
        self.last_x: np.ndarray | None = None
        self.k = 0
        self._next_uid = 0
        # centers and time-aware factors aligned with ``order``; a factor is
        # stored lazily as base * decay**(clock.count - stamp) so that decaying
        # every other expert costs O(1)
        self.clock = DecayClock(self.config.decay)
        self._centers = np.zeros((16, h.dim))
        self._theta_base = np.zeros(16)
        self._theta_stamp = np.zeros(16, dtype=np.int64)
        self._version = 0
        self._cache: tuple | None = None

    # -- inspection ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.order)

    @property
    def n_experts(self) -> int:
        return len(self.order)

    @property
    def total_points(self) -> int:
        return sum(e.n for e in self.experts.values())

    def expert_at(self, position: int) -> Expert:
        return self.experts[self.order[position]]

    def experts_in_order(self) -> list[Expert]:
        return [self.experts[u] for u in self.order]

    def centers(self) -> np.ndarray:
        return self._centers[: len(self.order)].copy()

    def thetas(self) -> np.ndarray:
        return self._thetas_between(0, len(self.order))

    def _thetas_between(self, lo: int, hi: int) -> np.ndarray:
        c = self.clock
        return self._theta_base[lo:hi] * c.decay ** (c.count - self._theta_stamp[lo:hi]).astype(float)

    def prior_prediction(self) -> Prediction:
        return Prediction(0.0, self.prior_var, [])

    # -- localisation --------------------------------------------------------

    def window_size(self, x) -> int:
        """Search half-width from the kernel distance to the previous input."""
        if self.last_x is None:
            return 0
        x = _vec(self.h, x)
        d = x - self.last_x
        k = self.h.signal_var * math.exp(-0.5 * float(np.dot(d * d, self.h.inv_ls2)))
        W = self.config.max_window
        if k <= 0.0:
            return W
        z = (1.0 / k) / self.config.window_scale
        if z > 700.0:
            return W
        return int(min(W, math.floor(math.exp(z))))

    def _similarity(self, x: np.ndarray, C: np.ndarray) -> np.ndarray:
        return _kernels.sqexp_vec(x, C, C.shape[0], self.h.inv_ls2, self.h.signal_var)

    def _candidates(self, x: np.ndarray):
        """Theta-filtered window positions and their similarity to ``x``."""
        W = self.window_size(x)
        E = len(self.order)
        if W == 0:
            cand = np.array([self.nu_prev])
        else:
            lo = max(0, self.nu_prev - W)
            hi = min(E - 1, self.nu_prev + W)
            idx = np.arange(lo, hi + 1)
            cand = idx[self._thetas_between(lo, hi + 1) > self.config.theta_min]
            if cand.size == 0:
                # starvation under the theta filter falls back to the last expert
                cand = np.array([self.nu_prev])
        sims = self._similarity(x, self._centers[cand])
        return cand, sims

    def localize(self, x) -> tuple[np.ndarray, int]:
        """Candidate positions and the nearest one; moves ``nu_prev``."""
        if not self.order:
            raise RuntimeError("pool is empty; process a sample to spawn the first expert")
        x = _vec(self.h, x)
        cand, sims = self._candidates(x)
        nu_nr = int(cand[int(np.argmax(sims))])
        self.nu_prev = nu_nr
        return cand, nu_nr

    def _rank(self, cand: np.ndarray, sims: np.ndarray):
        ranking = np.argsort(-sims, kind="stable")
        top = ranking[: self.config.max_agg]
        return cand[top], sims[top], int(cand[ranking[0]])

    def _aggregate(self, x: np.ndarray, agg_pos: np.ndarray, agg_sims: np.ndarray) -> Prediction:
        n = agg_pos.size
        means = np.empty(n)
        variances = np.empty(n)
        uids = []
        for j, pos in enumerate(agg_pos):
            e = self.experts[self.order[pos]]
            means[j], variances[j] = e.predict(x)
            uids.append(e.uid)
        return aggregate(
            self.config.aggregation, means, variances, agg_sims, uids,
            prior_var=self.prior_var, weighting=self.config.weighting,
            variance_floor=self.config.variance_floor,
        )

    def predict_only(self, x) -> Prediction:
        """Aggregated prediction without touching any pool state."""
        if not self.order:
            return self.prior_prediction()
        x = _vec(self.h, x)
        cand, sims = self._candidates(x)
        agg_pos, agg_sims, nu_nr = self._rank(cand, sims)
        pred = self._aggregate(x, agg_pos, agg_sims)
        # process() at the same x and state reuses this work
        self._cache = (x.tobytes(), self._version, pred, agg_pos, agg_sims, nu_nr)
        return pred

    def aggregation_set(self, x) -> list[int]:
        """Positions the next prediction at ``x`` would aggregate over."""
        if not self.order:
            return []
        x = _vec(self.h, x)
        cand, sims = self._candidates(x)
        return [int(p) for p in self._rank(cand, sims)[0]]

    # -- list maintenance ----------------------------------------------------

    def insertion_index(self, x, nu_nr: int) -> int:
        """List position for a new expert centred at ``x``.

        Goes right of ``nu_nr`` when the right neighbour is closer (in kernel
        distance) than the left one, otherwise takes the slot of ``nu_nr``.
        A missing neighbour counts as infinitely far; with no neighbours at
        all the new expert is appended on the right.
        """
        x = _vec(self.h, x)
        E = len(self.order)
        if E == 0:
            return 0
        has_left = nu_nr - 1 >= 0
        has_right = nu_nr + 1 < E
        if not has_left and not has_right:
            return nu_nr + 1
        with np.errstate(divide="ignore"):
            d_left = 1.0 / self._similarity(x, self._centers[nu_nr - 1: nu_nr])[0] if has_left else np.inf
            d_right = 1.0 / self._similarity(x, self._centers[nu_nr + 1: nu_nr + 2])[0] if has_right else np.inf
        return nu_nr + 1 if d_right < d_left else nu_nr

    def _grow(self):
        E = len(self.order)
        if E < self._theta_base.size:
            return
        size = 2 * self._theta_base.size
        C = np.zeros((size, self.h.dim))
        C[:E] = self._centers[:E]
        B = np.zeros(size)
        B[:E] = self._theta_base[:E]
        S = np.zeros(size, dtype=np.int64)
        S[:E] = self._theta_stamp[:E]
        self._centers, self._theta_base, self._theta_stamp = C, B, S

    def _insert(self, position: int, expert: Expert) -> None:
        self._grow()
        E = len(self.order)
        for arr in (self._centers, self._theta_base, self._theta_stamp):
            arr[position + 1: E + 1] = arr[position:E].copy()
        theta = expert.theta
        expert.clock = self.clock
        expert.theta = theta
        self._centers[position] = expert.center
        self._theta_base[position] = expert.theta_base
        self._theta_stamp[position] = expert.theta_stamp
        self.order.insert(position, expert.uid)
        self.experts[expert.uid] = expert

    def _spawn(self, x: np.ndarray, y: float, position: int) -> Expert:
        e = Expert(self.h, x, y, self.config.capacity,
                   variance_floor=self.config.variance_floor, uid=self._next_uid)
        self._next_uid += 1
        self._insert(position, e)
        return e

    def _set_theta(self, position: int, value: float) -> None:
        e = self.experts[self.order[position]]
        e.theta = value
        self._theta_base[position] = e.theta_base
        self._theta_stamp[position] = e.theta_stamp

    def _decay_except(self, keep: np.ndarray) -> None:
        held = [(int(pos), self.expert_at(int(pos)).theta) for pos in keep]
        self.clock.count += 1
        for pos, value in held:
            self._set_theta(pos, value)

    # -- streaming update ----------------------------------------------------

    def process(self, x, y: float) -> tuple[Prediction, Event]:
        """Predict at ``x`` with the current model, then learn ``(x, y)``."""
        x = _vec(self.h, x)
        y = float(y)
        if not self.order:
            e = self._spawn(x, y, 0)
            self.nu_prev = 0
            self._finish(x)
            return self.prior_prediction(), Event(SPAWNED, 0, e.uid)

        cached = self._cache
        if cached is not None and cached[1] == self._version and cached[0] == x.tobytes():
            pred, agg_pos, agg_sims, nu_nr = cached[2:]
        else:
            cand, sims = self._candidates(x)
            agg_pos, agg_sims, nu_nr = self._rank(cand, sims)
            pred = self._aggregate(x, agg_pos, agg_sims)
        self.nu_prev = nu_nr

        event = None
        dense = self.config.mode == DENSE
        for pos in agg_pos:
            pos = int(pos)
            self._set_theta(pos, 1.0)
            e = self.experts[self.order[pos]]
            if not e.full:
                e.append(x, y)
                self._centers[pos] = e.center
                event = Event(APPENDED, pos, e.uid)
                break
            if dense and e.most_central_count(x) == 0 and e.try_replace(x, y):
                self._centers[pos] = e.center
                event = Event(REPLACED, pos, e.uid)
                break

        if event is None:
            self._decay_except(agg_pos)
            budget = self.config.max_experts
            if budget is not None and len(self.order) >= budget:
                event = Event(REJECTED, nu_nr, -1)
            else:
                position = self.insertion_index(x, nu_nr)
                e = self._spawn(x, y, position)
                if position <= self.nu_prev:
                    self.nu_prev += 1
                event = Event(SPAWNED, position, e.uid)
        elif self.config.decay_every_step:
            self._decay_except(agg_pos)

        self._finish(x)
        return pred, event

    def _finish(self, x: np.ndarray) -> None:
        self.last_x = x.copy()
        self.k += 1
        self._version += 1
        self._cache = None

    def snapshot(self) -> dict:
        """Plain-data summary of the pool layout."""
        return {
            "k": self.k,
            "nu_prev": self.nu_prev,
            "order": list(self.order),
            "sizes": [self.experts[u].n for u in self.order],
            "thetas": self.thetas().tolist(),
            "centers": self.centers().tolist(),
        }
