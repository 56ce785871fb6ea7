"""Compiled core against the NumPy fallback.

    python3 benchmarks/bench_sweep.py [--sizes 16 32 64] [--repeat 5] [--json out.json]

Times three kernels on both backends: a local Metropolis sweep over D_N, the
edge force used by the HMC move, and the weighted gather behind many-centre
circle averages.  Each timing is the best of ``--repeat`` runs.  The script
also reports the largest difference between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from glfield import _core
from glfield.harmonic import MEASURE_CACHE
from glfield.lattice import LatticeDomain, l1_radius_steps
from glfield.potential import dipole_gas
from glfield.sampler import SamplerConfig, initial_state, sweep


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_sweep(N, backend, repeat, n_sweeps=20):
    dom = LatticeDomain(N)
    p = dipole_gas(0.5)
    cfg = SamplerConfig(kernel="metropolis", proposal_std=1.0)

    def run():
        st = initial_state(dom, 1)
        sweep(st, p, cfg, n_sweeps=n_sweeps, backend=backend)
        return st.values.copy()

    t, out = best_of(run, repeat)
    return t / n_sweeps, out


def bench_force(N, backend, repeat, n_calls=50):
    force, _ = _core.get_force(backend)
    phi = np.random.default_rng(0).normal(size=(2 * N + 1, 2 * N + 1))
    out = np.zeros_like(phi)
    p = dipole_gas(0.5)
    kind, a = p.kind, p.kernel_params[0]

    def run():
        for _ in range(n_calls):
            force(phi, kind, a, 1.0, out)
        return out.copy()

    t, res = best_of(run, repeat)
    return t / n_calls, res


def bench_gather(N, backend, repeat, batch=16):
    gather = _core.get_gather(backend)
    S = 2 * N + 1
    flat = np.random.default_rng(0).normal(size=(batch, S * S))
    di, dj, hw = MEASURE_CACHE.get(l1_radius_steps(N / 4))
    off = (di * S + dj).astype(np.int64)
    c = np.arange(-N // 2, N // 2 + 1)
    pos = ((c[:, None] + N) * S + (c[None, :] + N)).ravel().astype(np.int64)
    out = np.empty((batch, pos.size))

    def run():
        gather(flat, pos, off, hw, out)
        return out.copy()

    return best_of(run, repeat)


KERNELS = {"sweep": bench_sweep, "force": bench_force, "gather": bench_gather}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results to this file")
    args = ap.parse_args(argv)
    if not _core.compiled_available():
        print("compiled core is not built; only the fallback can be timed", file=sys.stderr)
        return 1
    rows = []
    print(f"{'kernel':8} {'N':>4} {'compiled':>12} {'python':>12} {'speedup':>8} {'max diff':>10}")
    for name, fn in KERNELS.items():
        for N in args.sizes:
            tc, oc = fn(N, "compiled", args.repeat)
            tp, op = fn(N, "python", args.repeat)
            diff = float(np.max(np.abs(oc - op)))
            rows.append({"kernel": name, "N": N, "compiled_s": tc, "python_s": tp, "speedup": tp / tc,
                         "max_abs_diff": diff})
            print(f"{name:8} {N:>4} {tc * 1e3:>10.3f}ms {tp * 1e3:>10.3f}ms {tp / tc:>7.1f}x {diff:>10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"platform": {"backend": _core.BACKEND}, "rows": rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
