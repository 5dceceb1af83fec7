"""Compare the compiled and pure-Python kernels.

Times each kernel on identical random inputs, checks that both backends
agree, and runs the feature-solver convergence benchmark end to end
under each backend (selected through ``CONTACT_EST_BACKEND`` in a
subprocess, since the backend is fixed at import).

    python benchmarks/bench_backends.py [--queries 300] [--seed 0]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np
from scipy.spatial.transform import Rotation

from contact_est import shapes
from contact_est.kernels import available_backends


def _time(fn, args_list, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = [fn(*a) for a in args_list]
        best = min(best, time.perf_counter() - t0)
    return best / len(args_list) * 1e6, out


def kernel_cases(rng, n):
    A, B = shapes.mustard(), shapes.sponge()
    support = [(A.vertices, A.smoothness, rng.normal(size=3)) for _ in range(n)]
    growth = []
    for _ in range(n):
        Ri = Rotation.random(random_state=rng).as_matrix()
        Rj = Rotation.random(random_state=rng).as_matrix()
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        tj = d * rng.uniform(0.08, 0.2)
        growth.append((A.vertices, A.smoothness, Ri, np.zeros(3), B.vertices, B.smoothness, Rj, tj,
                       d, 1.0, 1e-10, 20, 1.0, 1e-14, 1e3, 0.05, 0.75, 0.25, 2.0, 0.25))
    pgs = []
    for _ in range(n // 10 or 1):
        m = int(rng.integers(1, 7))
        P = rng.normal(size=(3 * m + 3, 3 * m))
        H = P.T @ P + 1e-3 * np.eye(3 * m)
        b = rng.normal(size=3 * m)
        mu = rng.uniform(0.2, 1.2, m)
        f = np.zeros(3 * m)
        f[2::3] = 1e-4 / mu
        pgs.append((H, b, mu, 1e-8, np.arange(m), f, np.zeros(m), 1e-10, 1e-6))
    return {"support_eval": support, "growth_solve": growth, "pgs_sweep": pgs}


def _copy_args(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def compare_kernels(seed, n):
    cases = kernel_cases(np.random.default_rng(seed), n)
    backends = available_backends()
    rows = []
    for name, args_list in cases.items():
        results = {}
        for bname, mod in backends.items():
            fresh = [_copy_args(a) for a in args_list]
            us, out = _time(getattr(mod, name), fresh)
            if name == "pgs_sweep":
                out = [a[5] for a in fresh]  # forces updated in place
            results[bname] = (us, out)
        diff = float("nan")
        if len(results) == 2:
            (_, a), (_, b) = results["compiled"], results["python"]
            diff = max(float(np.max(np.abs(np.asarray(x[0] if isinstance(x, tuple) else x)
                                           - np.asarray(y[0] if isinstance(y, tuple) else y))))
                       for x, y in zip(a, b))
        rows.append({"kernel": name, **{f"{k}_us": v[0] for k, v in results.items()}, "max_abs_diff": diff})
    return rows


def end_to_end(queries, seed):
    out = {}
    for backend in available_backends():
        env = dict(os.environ, CONTACT_EST_BACKEND=backend)
        code = ("import json; from contact_est.benchmark import feature_benchmark; "
                "from contact_est import shapes; "
                "sh={k: f() for k, f in shapes.BENCHMARK_FIXTURES.items()}; "
                f"r=feature_benchmark(sh, {queries}, {seed}, (20,))[0]; print(json.dumps(r.to_dict()))")
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[backend] = json.loads(res.stdout.strip().splitlines()[-1])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--queries", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    print(f"{'kernel':<14s}{'compiled us':>13s}{'python us':>12s}{'speedup':>9s}{'max diff':>11s}")
    for r in compare_kernels(a.seed, a.queries):
        c, p = r.get("compiled_us", np.nan), r["python_us"]
        print(f"{r['kernel']:<14s}{c:>13.2f}{p:>12.2f}{p / c:>9.1f}{r['max_abs_diff']:>11.1e}")
    print()
    for backend, r in end_to_end(a.queries, a.seed).items():
        print(f"{backend:<9s} conv={r['converged_fraction']:.3f} MLR={r['mlr']:.3f} "
              f"iters={r['mean_iterations']:.2f} AT={r['mean_time_us']:.1f}us")


if __name__ == "__main__":
    main()
