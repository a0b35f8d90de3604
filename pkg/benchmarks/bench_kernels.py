"""Compiled vs pure-Python sampling kernels on identical random input.

    python benchmarks/bench_kernels.py [--steps N]
"""
import argparse
import time

import numpy as np

from cgmc import _backend, rng
from cgmc.cg import build_coarse_hamiltonian
from cgmc.lattice import LatticeGeometry, cell_log_prior
from cgmc.potentials import ModelSpec, h_long, h_short, kernel_offsets


def micro_case(mod, steps):
    model = ModelSpec.create(-1.0, 0.2, "triangular", 32)
    geo = LatticeGeometry(512, 8)
    g = rng.stream(1, 99)
    spins = np.where(g.random(geo.N) < 0.5, -1, 1).astype(np.int8)
    offs, wts = kernel_offsets(model, geo)
    state = np.array([h_short(spins, model, geo), h_long(spins, model, geo), float(spins.sum())])
    sites, u = g.integers(0, geo.N, steps), g.random(steps)
    out = np.zeros(steps)
    t = time.perf_counter()
    mod.micro_metropolis(spins, model.K, model.beta, offs, wts, sites, u, 0, 1, out, out.copy(),
                         np.zeros((0, geo.N), dtype=np.int8), False, state)
    return time.perf_counter() - t, spins


def cg_case(mod, steps):
    model = ModelSpec.create(-1.0, 0.2, "triangular", 32)
    geo = LatticeGeometry(512, 8)
    cgh = build_coarse_hamiltonian(model, geo)
    g = rng.stream(1, 98)
    n = g.binomial(geo.q, 0.5, geo.M).astype(np.int64)
    cells, dirs, u = g.integers(0, geo.M, steps), g.integers(0, 2, steps), g.random(steps)
    out = np.zeros(steps)
    t = time.perf_counter()
    mod.cg_metropolis(n, geo.q, model.beta, cell_log_prior(geo.q), cgh.one_body, cgh.v3, cgh.e1,
                      cgh.dv3, cgh.jprof, 0, cells, dirs, u, 0, 1, out, out.copy(), out.copy(),
                      np.zeros((0, geo.M), dtype=np.int64), False, np.zeros(3),
                      np.zeros(4, dtype=np.int64))
    return time.perf_counter() - t, n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=200_000)
    args = ap.parse_args()
    if _backend.compiled_kernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':<10}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for name, case in (("micro", micro_case), ("coarse", cg_case)):
        tp, sp = case(_backend.python_kernels, args.steps)
        tc, sc = case(_backend.compiled_kernels, args.steps)
        print(f"{name:<10}{tp:>12.3f}{tc:>12.4f}{tp / tc:>10.0f}  {np.array_equal(sp, sc)}")


if __name__ == "__main__":
    main()
