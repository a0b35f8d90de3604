import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from cgmc import cg
from cgmc.errors import ConfigurationError
from cgmc.lattice import LatticeGeometry, all_coarse_configs, cell_configs
from cgmc.oracle import BoundarySpec, exact_gibbs_weights, transfer_matrix_energy
from cgmc.potentials import ModelSpec
from cgmc.sampler import (
    ChainConfig,
    batch_means_stderr,
    block_flip_proposal,
    detailed_balance_residual,
    exchange_proposal,
    integrated_autocorr_time,
    metropolis_matrix,
    run_cg_chain,
    run_constrained_cell_chain,
    run_micro_chain,
    stream_csv,
    summary_json,
)


def _chi2_p(counts, probs):
    keep = probs * counts.sum() > 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(probs[keep], probs[~keep].sum()) * counts.sum()
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    return sps.chisquare(obs, exp).pvalue


@pytest.mark.parametrize("kw", [dict(steps=0), dict(steps=10, burn_in=10), dict(steps=10, thin=0),
                                dict(steps=10, seed=-1), dict(steps=10, observables=("heat",))])
def test_chain_config_validation(kw):
    with pytest.raises(ConfigurationError):
        ChainConfig(**kw)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(0, 399), st.integers(1, 17))
def test_record_steps_rule(steps, burn, thin):
    if burn >= steps:
        burn = steps - 1
    cfg = ChainConfig(steps, burn, thin)
    ref = [g for g in range(steps) if g >= burn and (g - burn + 1) % thin == 0]
    assert cfg.record_steps().tolist() == ref
    assert cfg.n_samples == len(ref)


def test_uniform_target_accepts_everything():
    geo = LatticeGeometry(16, 4)
    st_ = run_micro_chain(ModelSpec.create(K=0.0), geo, ChainConfig(200_000, 1000, 4, seed=1))
    assert st_.acceptance_rate == 1.0
    m = st_["magnetization"]
    assert abs(m.mean) <= 3 * m.stderr


def test_micro_chain_deterministic_and_consistent(mixed_model):
    geo = LatticeGeometry(12, 3)
    cfg = ChainConfig(150_000, 500, 3, seed=7, observables=("magnetization", "energy", "state"))
    a = run_micro_chain(mixed_model, geo, cfg)
    b = run_micro_chain(mixed_model, geo, cfg)
    assert stream_csv(a) == stream_csv(b)
    c = run_micro_chain(mixed_model, geo, ChainConfig(150_000, 500, 3, seed=8))
    assert not np.array_equal(a.series["energy"], c.series["energy"])
    assert a.energy_drift < 1e-9
    assert a.n_samples == cfg.n_samples == len(a.series["state"])


def test_micro_energy_matches_transfer_matrix():
    geo = LatticeGeometry(10, 1)
    s = run_micro_chain(ModelSpec.create(K=0.5), geo, ChainConfig(2_000_000, 10_000, 10, seed=21))
    e = s["energy"]
    assert abs(e.mean - transfer_matrix_energy(0.5, 1.0, 10)) <= 3 * e.stderr


def test_micro_chain_chi_square_small_ring():
    geo = LatticeGeometry(6, 3)
    model = ModelSpec.create(K=0.4, beta=1.0, kernel="triangular", L=2)
    cfg = ChainConfig(2_000_000, 10_000, 8, seed=11, observables=("state",))
    s = run_micro_chain(model, geo, cfg)
    counts = np.bincount(s.series["state"], minlength=64)
    assert _chi2_p(counts, exact_gibbs_weights(model, geo)) > 0.001


def test_micro_extra_observables():
    geo = LatticeGeometry(8, 2)
    cfg = ChainConfig(5000, 0, 5, seed=2, observables=("block_profile", "two_point(1)", "energy"))
    s = run_micro_chain(ModelSpec.create(K=-1.0), geo, cfg)
    assert s.series["block_profile"].shape == (1000, 4)
    assert set(s.observables) == {"block_profile", "two_point(1)", "energy"}
    # with K=-1 and no kernel the energy per site is minus the nn correlation
    np.testing.assert_allclose(s.series["two_point(1)"], -s.series["energy"], atol=1e-12)


def test_micro_chain_respects_init():
    geo = LatticeGeometry(8, 2)
    init = np.ones(8)
    s = run_micro_chain(ModelSpec.create(K=-5.0, beta=5.0), geo, ChainConfig(8, 0, 1, seed=0), init=init)
    assert s.series["magnetization"][0] >= 0.75


@pytest.mark.parametrize("exchange", [False, True])
def test_cg_chain_chi_square(exchange):
    geo = LatticeGeometry(8, 2)
    model = ModelSpec.create(K=0.3)
    cgh = cg.build_coarse_hamiltonian(model, geo)
    etas = all_coarse_configs(geo)
    lw = cg.coarse_log_weights(cgh, geo, etas)
    init = np.array([2, 0, -2, 0]) if exchange else None
    cfg = ChainConfig(2_000_000, 10_000, 8, seed=5, observables=("state",))
    s = run_cg_chain(cgh, geo, cfg, init=init, exchange=exchange)
    counts = np.bincount(s.series["state"], minlength=len(etas))
    p = np.exp(lw - lw.max())
    if exchange:
        p = p * (etas.sum(axis=1) == 0)
        assert counts[etas.sum(axis=1) != 0].sum() == 0
    assert _chi2_p(counts, p / p.sum()) > 0.001
    assert s.energy_drift < 1e-9


def test_block_flip_kernel_detailed_balance():
    geo = LatticeGeometry(8, 2)
    cgh = cg.build_coarse_hamiltonian(ModelSpec.create(K=0.7, kernel="smooth", L=3), geo)
    etas = all_coarse_configs(geo)
    lw = cg.coarse_log_weights(cgh, geo, etas)
    P = metropolis_matrix(lw, block_flip_proposal(etas, 2))
    assert np.allclose(P.sum(axis=1), 1.0)
    assert P.min() >= 0
    assert detailed_balance_residual(lw, P) < 1e-15
    pi = np.exp(lw - lw.max())
    pi /= pi.sum()
    np.testing.assert_allclose(pi @ P, pi, atol=1e-14)


@pytest.mark.parametrize("q,eta", [(4, 0), (5, 1), (6, -2)])
def test_exchange_kernel_detailed_balance(q, eta):
    states = cell_configs(q, eta)
    K, beta = 0.8, 1.2
    s = states.astype(float)
    lt = -beta * K * (s[:, :-1] * s[:, 1:]).sum(axis=1) - beta * K * (1 * s[:, 0] - 1 * s[:, -1])
    P = metropolis_matrix(lt, exchange_proposal(states))
    assert detailed_balance_residual(lt, P) < 1e-15
    # the exchange move connects the whole slice
    reach = np.linalg.matrix_power((P > 0).astype(int), len(states))
    assert np.all(reach > 0)


@pytest.mark.parametrize("bc", [BoundarySpec(), BoundarySpec(1, -1), BoundarySpec(-1, None)])
def test_constrained_cell_chain_law(bc):
    q, eta, model = 6, 2, ModelSpec.create(K=0.6, beta=1.0)
    cfg = ChainConfig(400_000, 2000, 4, seed=3)
    out = run_constrained_cell_chain(q, eta, bc, model, cfg)
    assert np.all(out.sum(axis=1) == eta)
    states = cell_configs(q, eta)
    s = states.astype(float)
    e = model.K * (s[:, :-1] * s[:, 1:]).sum(axis=1)
    if bc.left is not None:
        e += model.K * bc.left * s[:, 0]
    if bc.right is not None:
        e += model.K * bc.right * s[:, -1]
    p = np.exp(-model.beta * e)
    lookup = {tuple(r): i for i, r in enumerate(states)}
    counts = np.bincount([lookup[tuple(r)] for r in out], minlength=len(states))
    assert _chi2_p(counts, p / p.sum()) > 0.001


def test_constrained_cell_chain_saturated():
    out = run_constrained_cell_chain(4, 4, BoundarySpec(), ModelSpec.create(K=1.0), ChainConfig(50))
    assert np.all(out == 1)


def test_autocorr_time_of_ar1():
    rho, n = 0.8, 400_000
    gen = np.random.default_rng(0)
    eps = gen.normal(size=n)
    x = np.empty(n)
    x[0] = 0
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    assert integrated_autocorr_time(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.1)
    assert integrated_autocorr_time(gen.normal(size=10_000)) == pytest.approx(1.0, abs=0.15)
    assert integrated_autocorr_time(np.ones(100)) == 1.0


def test_batch_means_iid():
    x = np.random.default_rng(1).normal(size=64_000)
    assert batch_means_stderr(x) == pytest.approx(1 / np.sqrt(64_000), rel=0.35)
    assert np.isnan(batch_means_stderr(np.ones(1)))


def test_outputs_format():
    geo = LatticeGeometry(8, 2)
    s = run_micro_chain(ModelSpec.create(K=0.2), geo, ChainConfig(100, 10, 9, seed=4))
    text = stream_csv(s, echo="[model]\nK = 0.2")
    lines = text.splitlines()
    assert lines[:2] == ["# [model]", "# K = 0.2"]
    assert lines[2] == "step,magnetization,energy"
    assert len(lines) == 3 + s.n_samples
    assert lines[3].startswith("18,")
    d = json.loads(summary_json(s, {"seed": 4}))
    assert d["config"] == {"seed": 4}
    assert d["n_samples"] == 10
    assert set(d["observables"]["energy"]) == {"mean", "stderr", "tau_int", "n"}
