"""The compiled kernels and the pure-Python fallback must agree bit for bit."""
import numpy as np
import pytest

import cgmc.cg as cg_mod
import cgmc.sampler as sampler_mod
from cgmc import _backend
from cgmc.lattice import LatticeGeometry
from cgmc.oracle import BoundarySpec
from cgmc.potentials import ModelSpec
from cgmc.reconstruct import ReconstructionPlan, reconstruct_many
from cgmc.sampler import ChainConfig

needs_compiled = pytest.mark.skipif(_backend.compiled_kernels is None,
                                    reason="compiled kernels not built")


def _both(monkeypatch, fn):
    out = []
    for k in (_backend.compiled_kernels, _backend.python_kernels):
        monkeypatch.setattr(sampler_mod, "kernels", k)
        monkeypatch.setattr(cg_mod, "kernels", k)
        out.append(fn())
    return out


def test_backend_name():
    assert _backend.name in ("cython", "python")
    assert _backend.kernels is (_backend.compiled_kernels or _backend.python_kernels)


@needs_compiled
def test_micro_chain_identical(monkeypatch):
    geo = LatticeGeometry(16, 4)
    model = ModelSpec.create(K=-0.4, beta=0.7, kernel="triangular", L=5)
    cfg = ChainConfig(70_000, 100, 3, seed=12, observables=("magnetization", "energy", "state"))
    a, b = _both(monkeypatch, lambda: sampler_mod.run_micro_chain(model, geo, cfg))
    for k in a.series:
        np.testing.assert_array_equal(a.series[k], b.series[k])
    np.testing.assert_array_equal(a.final_state, b.final_state)
    assert a.acceptance_rate == b.acceptance_rate


@needs_compiled
@pytest.mark.parametrize("exchange", [False, True])
def test_cg_chain_identical(monkeypatch, exchange):
    geo = LatticeGeometry(24, 4)
    model = ModelSpec.create(K=0.5, beta=0.9, kernel="smooth", L=9)
    cgh = cg_mod.build_coarse_hamiltonian(model, geo)
    cfg = ChainConfig(70_000, 0, 2, seed=3, observables=("energy", "block_profile"))
    a, b = _both(monkeypatch, lambda: sampler_mod.run_cg_chain(cgh, geo, cfg, exchange=exchange))
    for k in a.series:
        np.testing.assert_array_equal(a.series[k], b.series[k])


@needs_compiled
def test_cell_tables_identical(monkeypatch):
    a, b = _both(monkeypatch, lambda: cg_mod.phi_tables_mc(6, 0.7, 1.1, steps=70_000, seed=5))
    assert a.to_text() == b.to_text()


@needs_compiled
def test_exchange_chain_identical(monkeypatch):
    model = ModelSpec.create(K=0.9)
    cfg = ChainConfig(70_000, 0, 7, seed=8)
    a, b = _both(monkeypatch, lambda: sampler_mod.run_constrained_cell_chain(
        8, 2, BoundarySpec(1, -1), model, cfg))
    np.testing.assert_array_equal(a, b)


@needs_compiled
def test_mcmc_reconstruction_identical(monkeypatch):
    geo = LatticeGeometry(16, 4)
    model = ModelSpec.create(K=0.4)
    plan = ReconstructionPlan(exactness="mcmc", cell_steps=200)
    eta = np.array([0, 2, -4, 2])
    a, b = _both(monkeypatch, lambda: reconstruct_many(eta, 5, model, geo, plan, seed=1))
    np.testing.assert_array_equal(a, b)
