"""Compare the numba and numpy kernel backends.

Two measurements:

* micro: per-call time of each hot kernel at a typical expert size, both
  implementations called in the same process;
* stream: mean predict/update time of a full streaming run, each backend in
  its own interpreter selected through ``SKYGP_DISABLE_NUMBA``.

Usage::

    python benchmarks/bench_backends.py [--n 50] [--stream 5000] [--repeat 2000]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

STREAM_SCRIPT = """
import json, sys
from skygp import _kernels
from skygp.bench import synthetic_stream, run_stream
from skygp.kernel import Hyperparameters
from skygp.pool import PoolConfig
n, mode = int(sys.argv[1]), sys.argv[2]
ds = synthetic_stream("rkhs_mixture", n, seed=0, noise_dev=0.05)
h = Hyperparameters.from_dict(ds.meta["hyperparameters"])
r = run_stream(ds, h, PoolConfig(mode=mode, max_agg=2))
print(json.dumps({"backend": _kernels.BACKEND_NAME, "smse": r.smse,
                  "t_pred": r.mean_pred_time, "t_up": r.mean_update_time}))
"""


def micro(n: int, repeat: int) -> list[tuple[str, float, float]]:
    from skygp import _kernels

    if not _kernels.NUMBA_AVAILABLE:
        return []
    nb, npi = _kernels.numba_impl, _kernels.numpy_impl
    rng = np.random.default_rng(0)
    dim = 2
    X = rng.normal(size=(n, dim))
    inv_ls2 = np.array([4.0, 1.0])
    K = npi.sqexp_matrix(X, n, inv_ls2, 1.0) + 0.01 * np.eye(n)
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(K, rng.normal(size=n))
    x = rng.normal(size=dim)
    k = rng.normal(size=n)
    cases = {
        "sqexp_vec": lambda m: m.sqexp_vec(x, X, n, inv_ls2, 1.0),
        "sqexp_matrix": lambda m: m.sqexp_matrix(X, n, inv_ls2, 1.0),
        "solve_lower": lambda m: m.solve_lower(L, n, k),
        "cholesky": lambda m: m.cholesky(K),
        "chol_append": lambda m: m.chol_append(L, n - 1, k, 2.0),
        "posterior": lambda m: m.posterior(L, n, alpha, X, x, inv_ls2, 1.0),
    }
    rows = []
    for name, fn in cases.items():
        fn(nb)  # compile outside the timed region
        t_nb = min(timeit.repeat(lambda: fn(nb), number=repeat, repeat=3)) / repeat
        t_np = min(timeit.repeat(lambda: fn(npi), number=repeat, repeat=3)) / repeat
        rows.append((name, t_nb, t_np))
    return rows


def stream(n: int, mode: str, disable: bool) -> dict:
    env = dict(os.environ)
    env["SKYGP_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", STREAM_SCRIPT, str(n), mode], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50, help="expert size for the micro benchmark")
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--stream", type=int, default=5000, help="stream length")
    args = ap.parse_args(argv)

    rows = micro(args.n, args.repeat)
    if rows:
        print(f"micro benchmark, N={args.n} (microseconds per call)")
        print(f"{'kernel':<14} {'numba':>9} {'numpy':>9} {'speedup':>8}")
        for name, a, b in rows:
            print(f"{name:<14} {a * 1e6:>9.2f} {b * 1e6:>9.2f} {b / a:>7.1f}x")
    else:
        print("numba is not installed; micro benchmark skipped")

    print(f"\nstreaming run, rkhs_mixture n={args.stream}, max_agg=2 (microseconds per step)")
    print(f"{'mode':<6} {'backend':<7} {'t_pred':>8} {'t_up':>8} {'smse':>8}")
    for mode in ("fast", "dense"):
        for disable in (False, True):
            r = stream(args.stream, mode, disable)
            print(f"{mode:<6} {r['backend']:<7} {r['t_pred'] * 1e6:>8.1f} {r['t_up'] * 1e6:>8.1f} {r['smse']:>8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
