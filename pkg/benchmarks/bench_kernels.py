"""Compare the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--rows 2000,8000] [--dims 4] [--chain 8]

Times the Pareto kernel on random integer criteria and a full mapper run
with each backend.  The numba column excludes JIT compilation.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fusemap import kernels
from fusemap.arch import toy_arch
from fusemap.ffm import SearchConfig, build_problem, map_problem
from fusemap.workload import make_chain


def best_of(fn, repeat: int = 3) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_pareto(rows: int, dims: int, seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    # anti-correlated first two columns give large frontiers, like energy vs latency
    a = rng.integers(0, 1000, rows)
    x = np.column_stack([a, 1000 - a + rng.integers(0, 50, rows)] +
                        [rng.integers(0, 64, rows) for _ in range(dims - 2)]).astype(np.int64)
    out = {}
    ref = None
    for backend in ("numpy", "numba"):
        if backend == "numba" and not kernels.HAVE_NUMBA:
            continue
        kernels.pareto_select(x[:16], backend=backend)          # compile
        keep = kernels.pareto_select(x, backend=backend)
        if ref is None:
            ref = keep
        assert np.array_equal(np.sort(ref), np.sort(keep)), "backends disagree"
        out[backend] = best_of(lambda: kernels.pareto_select(x, backend=backend))
    out["frontier"] = len(ref)
    return out


def bench_map(n: int) -> dict[str, float]:
    pb = build_problem(make_chain(n, 8, [(8, 8)]), toy_arch(256, 2), SearchConfig(max_loops=1, max_inner_copies=1))
    out = {}
    saved = kernels.BACKEND
    try:
        for backend in ("numpy", "numba"):
            if backend == "numba" and not kernels.HAVE_NUMBA:
                continue
            kernels.BACKEND = backend
            map_problem(pb, "edp", threads=1)
            out[backend] = best_of(lambda: map_problem(pb, "edp", threads=1))
    finally:
        kernels.BACKEND = saved
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", default="500,2000,8000")
    ap.add_argument("--dims", type=int, default=4)
    ap.add_argument("--chain", type=int, default=8)
    args = ap.parse_args()
    print(f"{'rows':>8} {'frontier':>9} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for rows in (int(r) for r in args.rows.split(",")):
        r = bench_pareto(rows, args.dims)
        nb = r.get("numba", float("nan"))
        print(f"{rows:>8} {r['frontier']:>9} {r['numpy'] * 1e3:>10.2f} {nb * 1e3:>10.2f} {r['numpy'] / nb:>7.1f}x")
    m = bench_map(args.chain)
    nb = m.get("numba", float("nan"))
    print(f"map, {args.chain}-Einsum chain: numpy {m['numpy'] * 1e3:.1f} ms, numba {nb * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
