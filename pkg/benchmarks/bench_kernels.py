"""Compare the compiled and NumPy Riccati kernels.

    python benchmarks/bench_kernels.py [--trials 500] [--horizon 300] [--repeat 5]

Times ``trace_trajectories`` (the Monte Carlo loop) and ``riccati_batch``
(the branching-tree step) on the bundled example systems and prints the
best of ``--repeat`` runs for each backend.
"""

import argparse
import timeit
from pathlib import Path

import numpy as np

from lossy_kalman import load_system
from lossy_kalman import _fallback, kernels
from lossy_kalman.filtering import draw_gammas

try:
    from lossy_kalman import _kernels
except ImportError:
    _kernels = None

SYSTEMS = Path(__file__).resolve().parents[1] / "examples_systems"


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--horizon", type=int, default=300)
    ap.add_argument("--batch", type=int, default=4096, help="matrices per riccati_batch call")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    impls = {"python": _fallback}
    if _kernels is not None:
        impls["cython"] = _kernels
    else:
        print("compiled extension not available; timing the NumPy fallback only")

    header = f"{'system':<20}{'kernel':<20}" + "".join(f"{k:>12}" for k in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)

    for name in ("scalar", "degenerate_pair", "four_dim"):
        sys_ = load_system(SYSTEMS / f"{name}.json")
        G = np.stack([draw_gammas(0.8, args.horizon, 1, t) for t in range(args.trials)])
        rng = np.random.default_rng(0)
        X = rng.normal(size=(args.batch, sys_.n, sys_.n))
        P = X @ np.swapaxes(X, 1, 2) + np.eye(sys_.n)
        g = rng.integers(0, 2, args.batch).astype(np.uint8)

        jobs = {
            "trace_trajectories": lambda impl: kernels.trace_trajectories(
                sys_, G, 1e8 * np.trace(sys_.Sigma0), impl=impl),
            "riccati_batch": lambda impl: kernels.riccati_batch(
                P, g, sys_.A, sys_.C, sys_.Q, sys_.R, impl=impl),
        }
        for kernel, call in jobs.items():
            times = {k: best_of(lambda: call(impl), args.repeat) for k, impl in impls.items()}
            line = f"{name:<20}{kernel:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
            if len(times) == 2:
                line += f"{times['python'] / times['cython']:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
