"""
Sequential streaming-regression benchmark.

Every post-pretrain sample is first predicted with the current model and
only then learned.  SMSE is normalised by the pretrain target variance; MSLL
subtracts the loss of a Gaussian with the pretrain target mean and variance.
The predictive variance used in MSLL includes the observation noise.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from skygp.error_bound import BoundParams, ErrorBound
from skygp.expert import NumericalDegeneracyError
from skygp.kernel import Hyperparameters, gram
from skygp.pool import Pool, PoolConfig

SYNTHETIC_KINDS = ("sine", "rkhs_mixture", "piecewise")


class DataLoadError(ValueError):
    pass


class DegenerateNormalizerError(ValueError):
    """Pretrain targets have zero variance, so SMSE/MSLL are undefined."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    pretrain_count: int = 2
    truth: Callable | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("X and y have different numbers of rows")
        if not self.X.shape[0] > self.pretrain_count >= 2:
            raise ValueError(
                f"need N > pretrain_count >= 2, got N={self.X.shape[0]}, pretrain_count={self.pretrain_count}"
            )
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def head(self, n: int) -> "Dataset":
        return replace(self, X=self.X[:n], y=self.y[:n])


def load_csv(path, target_column: str = "y", normalize: bool = False,
             pretrain_count: int = 1000) -> Dataset:
    """Read a headered numeric CSV.

    Features are all non-target columns in file order.  With ``normalize``
    the features are z-scored with statistics of the pretrain rows only.
    ``pretrain_count`` is clipped so at least one sample remains for the
    stream.
    """
    path = Path(path)
    if not path.is_file():
        raise DataLoadError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataLoadError(f"{path}: empty file") from None
        if target_column not in header:
            raise DataLoadError(f"{path}: target column {target_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataLoadError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataLoadError(f"{path}: non-numeric value {cell!r} at row {lineno}, column {col!r}") from None
                if not math.isfinite(v):
                    raise DataLoadError(f"{path}: non-finite value {cell!r} at row {lineno}, column {col!r}")
                vals.append(v)
            rows.append(vals)
    if len(rows) < 3:
        raise DataLoadError(f"{path}: need at least 3 data rows, got {len(rows)}")
    data = np.array(rows)
    t = header.index(target_column)
    y = data[:, t]
    X = np.delete(data, t, axis=1)
    if X.shape[1] == 0:
        raise DataLoadError(f"{path}: no feature columns")
    pretrain = min(max(pretrain_count, 2), len(rows) - 1)
    meta = {"source": str(path), "target_column": target_column, "features": [h for h in header if h != target_column]}
    if normalize:
        mu = X[:pretrain].mean(axis=0)
        sd = X[:pretrain].std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
        meta.update(feature_mean=mu.tolist(), feature_std=sd.tolist())
    return Dataset(X, y, name=path.stem, pretrain_count=pretrain, meta=meta)


def _walk(rng: np.random.Generator, n: int, lo, hi, step: float) -> np.ndarray:
    """Reflected Gaussian random walk inside a box, mimicking a trajectory."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    out = np.empty((n, lo.size))
    x = lo + rng.random(lo.size) * width
    for i in range(n):
        x = x + rng.normal(0.0, step, lo.size) * width
        # reflect back into the box
        x = lo + np.abs(np.mod(x - lo + width, 2 * width) - width)
        out[i] = x
    return out


def rkhs_function(h: Hyperparameters, centers: np.ndarray, coef: np.ndarray) -> Callable:
    """``f(x) = sum_j coef_j k(x, center_j)``."""
    centers = np.atleast_2d(centers)

    def f(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = X[:, None, :] - centers[None, :, :]
        K = h.signal_var * np.exp(-0.5 * np.einsum("abj,j->ab", d * d, h.inv_ls2))
        return K @ coef

    return f


def rkhs_norm(h: Hyperparameters, centers, coef) -> float:
    coef = np.asarray(coef, dtype=float)
    return float(math.sqrt(max(coef @ gram(h, centers) @ coef, 0.0)))


def synthetic_stream(kind: str, n: int, seed: int = 0, noise_dev: float = 0.1,
                     dim: int | None = None, pretrain_count: int | None = None,
                     Gamma: float = 1.0, n_centers: int = 10,
                     h: Hyperparameters | None = None) -> Dataset:
    """Deterministic synthetic stream.

    Inputs follow a reflected random walk so that consecutive samples are
    close, like sensor data from a moving system.

    ``sine``         ``sum_j sin(2 x_j)`` on ``[-5, 5]^dim`` (default dim 1)
    ``rkhs_mixture`` finite kernel expansion with RKHS norm exactly ``Gamma``
                     on ``[0, 1]^dim`` (default dim 2)
    ``piecewise``    sine with a jump of +2 on ``x_0 > 0`` on ``[-5, 5]^dim``
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"kind must be one of {SYNTHETIC_KINDS}")
    if n < 10:
        raise ValueError("n must be >= 10")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    meta: dict = {"kind": kind, "seed": seed, "noise_dev": noise_dev}
    if kind == "rkhs_mixture":
        dim = 2 if dim is None else dim
        if h is None:
            h = Hyperparameters(np.full(dim, 0.2), 1.0, noise_dev if noise_dev > 0 else 0.01)
        lo, hi = np.zeros(dim), np.ones(dim)
        centers = rng.random((n_centers, dim))
        coef = rng.normal(size=n_centers)
        coef *= Gamma / rkhs_norm(h, centers, coef)
        truth = rkhs_function(h, centers, coef)
        X = _walk(rng, n, lo, hi, 0.02)
        meta.update(centers=centers.tolist(), coef=coef.tolist(), Gamma=Gamma,
                    hyperparameters=h.to_dict())
    else:
        dim = 1 if dim is None else dim
        lo, hi = np.full(dim, -5.0), np.full(dim, 5.0)
        X = _walk(rng, n, lo, hi, 0.02)
        if kind == "sine":
            def truth(X):
                return np.sin(2.0 * np.atleast_2d(X)).sum(axis=1)
        else:
            def truth(X):
                X = np.atleast_2d(X)
                return np.sin(2.0 * X).sum(axis=1) + 2.0 * (X[:, 0] > 0)
    meta.update(domain_lo=lo.tolist(), domain_hi=hi.tolist())
    f = truth(X)
    y = f + (rng.normal(0.0, noise_dev, n) if noise_dev > 0 else 0.0)
    if pretrain_count is None:
        pretrain_count = max(2, min(1000, n // 10))
    return Dataset(X, y, name=f"synthetic-{kind}", pretrain_count=pretrain_count, truth=truth, meta=meta)


@dataclass
class RunReport:
    smse: float
    msll: float
    mean_pred_time: float
    mean_update_time: float
    n_steps: int
    n_experts: int
    complete: bool = True
    error: str | None = None
    per_step: list | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self, include_steps: bool = False) -> dict:
        d = {
            "smse": self.smse,
            "msll": self.msll,
            "mean_pred_time": self.mean_pred_time,
            "mean_update_time": self.mean_update_time,
            "n_steps": self.n_steps,
            "n_experts": self.n_experts,
            "complete": self.complete,
            "error": self.error,
            "config": self.config,
        }
        if include_steps and self.per_step is not None:
            d["per_step"] = self.per_step
        return d


PER_STEP_COLUMNS = ("step", "mean", "variance", "y", "smse", "msll", "pred_ns", "update_ns", "n_experts", "eta")


def normalizers(ds: Dataset) -> tuple[float, float]:
    """Pretrain target mean and variance."""
    yp = ds.y[: ds.pretrain_count]
    var = float(yp.var())
    if not var > 0:
        raise DegenerateNormalizerError("pretrain targets have zero variance; SMSE/MSLL undefined")
    return float(yp.mean()), var


def sequential_losses(y, mean, variance, noise_var: float, y_mean: float, y_var: float):
    """Per-sample squared error and log-loss difference against the trivial model."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    s2 = np.asarray(variance, dtype=float) + noise_var
    r2 = (y - mean) ** 2
    nll = 0.5 * np.log(2.0 * np.pi * s2) + r2 / (2.0 * s2)
    nll0 = 0.5 * np.log(2.0 * np.pi * y_var) + (y - y_mean) ** 2 / (2.0 * y_var)
    return r2, nll - nll0


def run_stream(ds: Dataset, h: Hyperparameters, pool_cfg: PoolConfig,
               bound: BoundParams | None = None, per_step: bool = False,
               config_echo: dict | None = None) -> RunReport:
    """Predict-then-update over the post-pretrain part of ``ds``.

    Prediction time covers ``predict_only``; update time covers ``process``.
    Metric bookkeeping happens outside both timed regions.  A numerical
    failure stops the stream and returns the metrics gathered so far with
    ``complete=False``.
    """
    y_mean, y_var = normalizers(ds)
    warm_up(ds, h, pool_cfg)
    pool = Pool(h, pool_cfg)
    eb = ErrorBound(bound, h) if bound is not None else None
    start = ds.pretrain_count
    n = ds.n - start
    means = np.empty(n)
    variances = np.empty(n)
    pred_ns = np.empty(n, dtype=np.int64)
    up_ns = np.empty(n, dtype=np.int64)
    etas = np.full(n, np.nan)
    counts = np.empty(n, dtype=np.int64)
    error = None
    done = 0
    clock = time.perf_counter_ns
    X = np.ascontiguousarray(ds.X)
    for i in range(n):
        x = X[start + i]
        yi = ds.y[start + i]
        try:
            t0 = clock()
            pred = pool.predict_only(x)
            t1 = clock()
            pool.process(x, yi)
            t2 = clock()
        except NumericalDegeneracyError as exc:
            error = f"numerical degeneracy at step {i}: {exc}"
            break
        means[i] = pred.mean
        variances[i] = pred.variance
        pred_ns[i] = t1 - t0
        up_ns[i] = t2 - t1
        counts[i] = pool.n_experts
        if eb is not None:
            # bound of the model that made the prediction, i.e. before this update
            etas[i] = pred.error_radius if pred.error_radius is not None else np.nan
        done = i + 1
    if eb is not None:
        etas[:done] = _radii_before_update(ds, h, pool_cfg, eb, done)

    means, variances = means[:done], variances[:done]
    y = ds.y[start: start + done]
    if done:
        r2, dll = sequential_losses(y, means, variances, h.noise_var, y_mean, y_var)
        smse = float(r2.mean() / y_var)
        msll = float(dll.mean())
    else:
        smse = msll = math.nan
    rows = None
    if per_step and done:
        steps = np.arange(1, done + 1)
        cum_smse = np.cumsum(r2) / steps / y_var
        cum_msll = np.cumsum(dll) / steps
        rows = [
            {"step": int(s), "mean": float(m), "variance": float(v), "y": float(t),
             "smse": float(a), "msll": float(b), "pred_ns": int(p), "update_ns": int(u),
             "n_experts": int(c), "eta": float(e)}
            for s, m, v, t, a, b, p, u, c, e in zip(
                steps, means, variances, y, cum_smse, cum_msll, pred_ns, up_ns, counts, etas)
        ]
    return RunReport(
        smse=smse,
        msll=msll,
        mean_pred_time=float(pred_ns[:done].mean() * 1e-9) if done else math.nan,
        mean_update_time=float(up_ns[:done].mean() * 1e-9) if done else math.nan,
        n_steps=done,
        n_experts=pool.n_experts,
        complete=error is None,
        error=error,
        per_step=rows,
        config=config_echo or {"pool": pool_cfg.to_dict(), "hyperparameters": h.to_dict()},
    )


def warm_up(ds: Dataset, h: Hyperparameters, pool_cfg: PoolConfig, n: int = 12) -> None:
    """Exercise every code path once on a throwaway small-capacity pool so
    JIT compilation does not land in the first timed steps."""
    pool = Pool(h, replace(pool_cfg, capacity=2, max_experts=None))
    for i in range(min(n, ds.pretrain_count)):
        pool.predict_only(ds.X[i])
        pool.process(ds.X[i], ds.y[i])


def _radii_before_update(ds, h, pool_cfg, eb: ErrorBound, n: int) -> np.ndarray:
    """Replay the stream in a fresh pool and evaluate the error radius of
    each prediction.  Kept out of the timed loop because the Lipschitz
    estimates are expensive."""
    pool = Pool(h, pool_cfg)
    out = np.empty(n)
    start = ds.pretrain_count
    for i in range(n):
        x = ds.X[start + i]
        pred = pool.predict_only(x)
        out[i] = eb.radius(pool, pred)
        pool.process(x, ds.y[start + i])
    return out


VARIANTS = tuple((mode, agg) for mode in ("fast", "dense") for agg in (1, 2, 4))


def variant_name(mode: str, max_agg: int) -> str:
    return f"SkyGP-{mode[0].upper()}-{max_agg}"


def compare_modes(ds: Dataset, h: Hyperparameters, base_cfg: PoolConfig,
                  variants=VARIANTS) -> list[dict]:
    """Run every (mode, max_agg) variant on the same stream."""
    rows = []
    for mode, agg in variants:
        cfg = replace(base_cfg, mode=mode, max_agg=agg)
        rep = run_stream(ds, h, cfg)
        rows.append({
            "variant": variant_name(mode, agg),
            "smse": rep.smse,
            "msll": rep.msll,
            "t_pred": rep.mean_pred_time,
            "t_up": rep.mean_update_time,
            "n_experts": rep.n_experts,
        })
    return rows


TABLE_COLUMNS = ("variant", "smse", "msll", "t_pred", "t_up")


def format_table(rows: list[dict]) -> str:
    """Aligned plain-text table; times in milliseconds."""
    header = f"{'variant':<12} {'smse':>8} {'msll':>8} {'t_pred[ms]':>11} {'t_up[ms]':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['variant']:<12} {r['smse']:>8.4f} {r['msll']:>8.3f} "
            f"{r['t_pred'] * 1e3:>11.4f} {r['t_up'] * 1e3:>9.4f}"
        )
    return "\n".join(lines)


def write_table_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(TABLE_COLUMNS), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def write_per_step_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(PER_STEP_COLUMNS))
        w.writeheader()
        w.writerows(report.per_step or [])
