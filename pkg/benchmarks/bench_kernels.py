"""Time the numba kernels against their numpy twins.

Usage: python benchmarks/bench_kernels.py [--n 3 4 5 6] [--n-ts 48] [--repeat 5]

Each row reports the median wall time of one full gradient evaluation
(slot eigensystems, cumulative products, GRAPE gradient) per backend. The
numba path is warmed up first so compilation is not counted.
"""

import argparse
import statistics
import time

import numpy as np

from insitu import _accel, kernels
from insitu.system import SpinSystem, build_controls, build_drift

STAGES = ("slot_eigensystems", "cumulative_products", "grape_gradient")


def run(backend, h0, hc, amps, dt, coeff):
    eig = getattr(kernels, f"slot_eigensystems_{backend}")
    cum = getattr(kernels, f"cumulative_products_{backend}")
    grad = getattr(kernels, f"grape_gradient_{backend}")
    times = []
    t = time.perf_counter()
    ev, evec, props = eig(h0, hc, amps, dt)
    times.append(time.perf_counter() - t)
    t = time.perf_counter()
    fwd, bwd = cum(props)
    times.append(time.perf_counter() - t)
    t = time.perf_counter()
    g = grad(ev, evec, fwd, bwd, coeff, hc, dt)
    times.append(time.perf_counter() - t)
    return g, times


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[3, 4, 5, 6])
    ap.add_argument("--n-ts", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'n':>2} {'stage':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for n in args.n:
        sysm = SpinSystem(n, "chain", "ising")
        h0, hc = build_drift(sysm), build_controls(sysm)
        amps = rng.uniform(-1, 1, (sysm.n_ctrl, args.n_ts))
        coeff = rng.normal(size=(sysm.dim,) * 2) + 1j * rng.normal(size=(sysm.dim,) * 2)
        dt = 4 * np.pi / args.n_ts
        g_ref, _ = run("numba", h0, hc, amps, dt, coeff)  # compile
        timings = {}
        for backend in ("numpy", "numba"):
            samples = []
            for _ in range(args.repeat):
                g, t = run(backend, h0, hc, amps, dt, coeff)
                samples.append(t)
            np.testing.assert_allclose(g, g_ref, atol=1e-9)
            timings[backend] = [statistics.median(s[i] for s in samples) * 1e3 for i in range(3)]
        for i, stage in enumerate(STAGES):
            a, b = timings["numpy"][i], timings["numba"][i]
            print(f"{n:>2} {stage:<20} {a:>10.2f} {b:>10.2f} {a / b:>7.2f}x")


if __name__ == "__main__":
    main()
