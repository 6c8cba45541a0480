"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trials N] [--repeat R]

Each kernel is run once per backend before timing so JIT compilation is
excluded. The last column is the numpy time divided by the numba time.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from fronthaul_sim import kernels


def _cases(n: int, rng: np.random.Generator) -> dict[str, tuple]:
    raw = rng.integers(0, 2**64, size=2 * n, dtype=np.uint64)
    sig = rng.exponential(5.0, size=(n, 2))
    spe = rng.uniform(0.5, 2.0, size=n)
    t = np.ascontiguousarray(sig + spe[:, None])
    scale = 1.0 / spe
    a = rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2))
    herm = np.ascontiguousarray(a @ np.conj(np.swapaxes(a, 1, 2)))
    return {
        "uniform_from_raw": (raw,),
        "cnormal_from_raw": (raw,),
        "sum_log2_1p": (t, scale),
        "row_log2_1p": (t, scale),
        "waterfill_sums": (t, spe, 3.0),
        "waterfill_rows": (t, spe, 3.0),
        "herm2_eigvalsh": (herm,),
    }


def run(trials: int, repeat: int) -> list[tuple[str, float, float | None]]:
    found = kernels.backends()
    cases = _cases(trials, np.random.default_rng(0))
    results = []
    for name, args in cases.items():
        timings = {}
        for label, module in found.items():
            fn = getattr(module, name)
            fn(*args)
            timings[label] = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))
        results.append((name, timings["numpy"], timings.get("numba")))
    return results


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=100_000, help="samples per kernel call")
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions (best is kept)")
    args = parser.parse_args(argv)
    rows = run(args.trials, args.repeat)
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speed-up':>9}")
    for name, t_np, t_nb in rows:
        nb = "n/a" if t_nb is None else f"{1e3 * t_nb:10.2f}"
        ratio = "n/a" if t_nb is None else f"{t_np / t_nb:8.1f}x"
        print(f"{name:<18} {1e3 * t_np:10.2f} {nb:>10} {ratio:>9}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
