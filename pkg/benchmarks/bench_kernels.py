"""Time the semi-global kernels: numpy fallback vs compiled extension.

    python3 benchmarks/bench_kernels.py [--tau 100] [--repeat 3]

Each case propagates a driven map over the full grid with both backends and
reports the best wall time, the speedup and the max deviation between them.
"""
import argparse
import time

import numpy as np

from thermogate import kernels
from thermogate.models import build_qubit_ancilla_model, build_two_qubit_model, guess_field
from thermogate.name_thermal import BathSpec, LiouvilleGenerator
from thermogate.propagator import PropagatorConfig, propagate_map


def cases(tau):
    q = build_qubit_ancilla_model(1, eps_uc_scale=2e-5)
    c = build_two_qubit_model(a_y=0.0)
    yield "qutrit closed", q, guess_field(q, tau=tau), BathSpec(0.0, 1.0), PropagatorConfig()
    yield "qutrit thermal", q, guess_field(q, tau=tau), BathSpec(1e-3, 0.5), PropagatorConfig()
    yield "two-qubit thermal M=K=9", c, guess_field(c, tau=tau), BathSpec(1e-4, 0.5), PropagatorConfig(M=9, K=9)


def bench(model, fld, bath, cfg, backend, repeat):
    gen = LiouvilleGenerator(model, fld, bath)
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = propagate_map(model, fld, bath, cfg, generator=gen, backend=backend).final
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tau", type=float, default=100.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = sorted(kernels.AVAILABLE)
    print(f"backends: {names}")
    print(f"{'case':28s} {'python s':>9s} {'cython s':>9s} {'speedup':>8s} {'max diff':>9s}")
    for label, model, fld, bath, cfg in cases(args.tau):
        tp, lp = bench(model, fld, bath, cfg, "python", args.repeat)
        if "cython" in kernels.AVAILABLE:
            tc, lc = bench(model, fld, bath, cfg, "cython", args.repeat)
            print(f"{label:28s} {tp:9.3f} {tc:9.3f} {tp / tc:8.2f} {np.max(np.abs(lp - lc)):9.1e}")
        else:
            print(f"{label:28s} {tp:9.3f} {'n/a':>9s}")


if __name__ == "__main__":
    main()
