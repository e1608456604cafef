"""Compare the numba and numpy stiffness-action kernels.

Usage::

    python benchmarks/bench_matvec.py [--dims 64,64 128,128 32,32,32] [--repeat 20]

For each grid and physics the script checks that both backends agree to
round-off, then reports the median time per matrix-vector product and the
speedup of numba over numpy.
"""

from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from unocg import _kernels
from unocg.datagen import gen_microstructure, make_spec
from unocg.physics import PhaseParams, matvec


def _time(fn, repeat: int) -> float:
    fn()  # warm-up (and JIT compilation)
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench(dims, kind: str, repeat: int) -> dict:
    params = PhaseParams.thermal(1.0, 0.2) if kind == "thermal" else PhaseParams.elastic_young(1.0, 0.0, 10.0, 0.3)
    spec = make_spec(kind, dims, "periodic", gen_microstructure(0, dims), params)
    u = np.random.default_rng(0).standard_normal(spec.dmap.ndof)
    out, times = {}, {}
    for name in ("numpy", "numba"):
        _kernels.set_backend(name)
        out[name] = matvec(spec, u)
        times[name] = _time(lambda: matvec(spec, u), repeat)
    err = float(np.abs(out["numba"] - out["numpy"]).max() / np.abs(out["numpy"]).max())
    return {"dims": "x".join(map(str, dims)), "physics": kind, "ndof": spec.dmap.ndof,
            "numpy_ms": 1e3 * times["numpy"], "numba_ms": 1e3 * times["numba"],
            "speedup": times["numpy"] / times["numba"], "max_rel_diff": err}


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", nargs="+", default=["64,64", "128,128", "32,32,32"])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", action="store_true", help="print JSON lines instead of a table")
    args = ap.parse_args(argv)
    previous = _kernels.backend()
    rows = []
    try:
        for text in args.dims:
            dims = tuple(int(t) for t in text.split(","))
            for kind in ("thermal", "elastic"):
                rows.append(bench(dims, kind, args.repeat))
    finally:
        _kernels.set_backend(previous)
    if args.json:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
        return
    print(f"{'grid':>10} {'physics':>8} {'ndof':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>9}")
    for r in rows:
        print(f"{r['dims']:>10} {r['physics']:>8} {r['ndof']:>8} {r['numpy_ms']:>10.3f} "
              f"{r['numba_ms']:>10.3f} {r['speedup']:>8.2f} {r['max_rel_diff']:>9.1e}")


if __name__ == "__main__":
    main()
