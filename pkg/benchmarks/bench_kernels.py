"""Compiled vs pure-Python kernels.

Times the hot kernels on both backends with identical inputs and reports
per-call cost, speedup and the largest relative disagreement between the
two (values below 1 in magnitude are compared absolutely).

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from raylbe import potentials as pt
from raylbe._backend import NAME, core, pycore


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    stretched = pt.make_stretched_exponential(1.0, 1.0)
    power = pt.make_power_law(4.0)
    rng = np.random.default_rng(0)
    n_theta = 200
    r = 6.0 * rng.random(n_theta)
    w = 0.5 + 3.0 * rng.random(n_theta)
    rho = np.geomspace(1e-2, 50.0, 20000)

    for name, p in (("stretched_exp", stretched), ("power_law_s4", power)):
        k = pt.pack(p)
        yield (f"theta[{name}] x{n_theta}", n_theta,
               lambda m, k=k: np.asarray(m.deviation_angles(k, r, w, 1e-10)[0]))
        k10 = pt.pack(pt.truncate(p, 10.0))
        yield (f"theta_R[{name}, R=10] x{n_theta}", n_theta,
               lambda m, k=k10: np.asarray(m.deviation_angles(k, r, w, 1e-10)[0]))
        yield (f"psi[{name}] x{len(rho)}", len(rho), lambda m, k=k: np.asarray(m.psi_array(k, rho)))

    # tagged particle among 40 neighbours for t in [0, 0.05], eps = 0.05
    eps = 0.05
    pR = pt.truncate(stretched, eps ** -0.25)
    k = pt.pack(pR)
    nb_x = 0.5 + 0.08 * (rng.random((40, 3)) - 0.5)
    nb_v = rng.standard_normal((40, 3))
    x0 = np.array([0.5, 0.5, 0.5])
    v0 = np.array([1.0, 0.2, -0.3])

    def seg(m):
        ts, xs, vs, _, st, _ = m.integrate_segment(k, eps, float(pR.cutoff), x0, v0, 0.0, 0.05, nb_x, nb_v,
                                                 0.0, 1e-9, 0.05, 200000, False, 0.0)
        return np.concatenate([np.ravel(xs[-1]), np.ravel(vs[-1])])

    yield "integrate_segment (40 neighbours)", 1, seg


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", default=None, help="write results as JSON")
    args = ap.parse_args(argv)
    if NAME != "cython":
        print("compiled extension not available; only the Python backend will be timed")
    rows = []
    print(f"{'kernel':42s} {'cython/call':>12s} {'python/call':>12s} {'speedup':>8s} {'max rel':>10s}")
    for label, n, fn in cases():
        tp, outp = _time(lambda: fn(pycore), args.repeat)
        if NAME == "cython":
            tc, outc = _time(lambda: fn(core), args.repeat)
            diff = float(np.max(np.abs(outc - outp) / np.maximum(np.abs(outp), 1.0)))
        else:
            tc, diff = float("nan"), 0.0
        rows.append({"kernel": label, "cython_s": tc / n, "python_s": tp / n, "speedup": tp / tc, "max_diff": diff})
        print(f"{label:42s} {tc / n:12.3e} {tp / n:12.3e} {tp / tc:8.1f} {diff:10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
