"""Brute-force enumeration oracles for desk-scale systems.

Everything here is exact up to floating point and deliberately avoids the
closed forms used by :mod:`cgmc.cg`, so the two can check each other.
Averages of Boltzmann factors are taken in log space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, DomainError
from .lattice import (
    LatticeGeometry,
    all_coarse_configs,
    all_spin_configs,
    as_blocks,
    cell_configs,
    cell_log_prior,
)
from .potentials import ModelSpec, h_total, kernel_matrix, kernel_profile

MAX_SITES = 20
THREE_CELL_CAP = 12
_DIRECT_TRIPLE_LIMIT = 1 << 21
_CHUNK = 1 << 16


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary spins to the left/right of a cell; ``None`` means free."""

    left: Optional[int] = None
    right: Optional[int] = None

    def __post_init__(self):
        for v in (self.left, self.right):
            if v is not None and v not in (-1, 1):
                raise DomainError(f"fixed boundary spin must be -1 or +1, got {v}")


FREE = BoundarySpec()


def _check_sites(N: int, accept_large: bool):
    if N > MAX_SITES and not accept_large:
        raise CapacityError(
            f"exact enumeration over 2^{N} states exceeds the 2^{MAX_SITES} cap "
            "(pass accept_large=True to override)"
        )


def _cell_bond_energy(configs: np.ndarray, K: float) -> np.ndarray:
    c = configs.astype(np.int64)
    return K * (c[:, :-1] * c[:, 1:]).sum(axis=1)


def _boundary_energy(configs: np.ndarray, bc: BoundarySpec, K: float) -> np.ndarray:
    e = np.zeros(len(configs))
    if bc.left is not None:
        e += K * bc.left * configs[:, 0]
    if bc.right is not None:
        e += K * configs[:, -1] * bc.right
    return e


def _log_mean_exp(x: np.ndarray) -> float:
    return float(logsumexp(x) - np.log(x.size))


def log_cell_partition_function(eta: int, bc: BoundarySpec, model: ModelSpec, q: int,
                                cap: int | None = None) -> float:
    c = cell_configs(q, eta, cap)
    e = _cell_bond_energy(c, model.K) + _boundary_energy(c, bc, model.K)
    return _log_mean_exp(-model.beta * e)


def cell_partition_function(eta: int, bc: BoundarySpec, model: ModelSpec, q: int,
                            cap: int | None = None) -> float:
    """Constrained single-cell partition function with optional fixed neighbours.

    Averages ``exp(-beta (H_cell + W_left + W_right))`` uniformly over the
    cell configurations with block sum ``eta``.
    """
    return float(np.exp(log_cell_partition_function(eta, bc, model, q, cap)))


def _edge_table(eta: int, model: ModelSpec, q: int, cap) -> np.ndarray:
    """``A[a, b]`` = mean of ``exp(-beta H_cell) 1{first=a, last=b}``; index 0 is -1."""
    c = cell_configs(q, eta, cap)
    w = np.exp(-model.beta * _cell_bond_energy(c, model.K))
    a = (c[:, 0] + 1) // 2
    b = (c[:, -1] + 1) // 2
    out = np.zeros((2, 2))
    np.add.at(out, (a, b), w)
    return out / len(c)


def three_cell_partition_function(eta_left: int, eta_mid: int, eta_right: int,
                                  model: ModelSpec, q: int,
                                  cap: int | None = None) -> float:
    """Free-boundary partition function of three adjacent constrained cells."""
    cap = THREE_CELL_CAP if cap is None else cap
    if q > cap:
        raise CapacityError(f"three-cell enumeration with q={q} exceeds cap {cap}")
    cl, cm, cr = (cell_configs(q, e, cap) for e in (eta_left, eta_mid, eta_right))
    K, beta = model.K, model.beta
    if len(cl) * len(cm) * len(cr) <= _DIRECT_TRIPLE_LIMIT:
        el, em, er = (_cell_bond_energy(c, K) for c in (cl, cm, cr))
        # broadcast over (left, mid, right)
        e = (el[:, None, None] + em[None, :, None] + er[None, None, :]
             + K * cl[:, -1].astype(float)[:, None, None] * cm[:, 0][None, :, None]
             + K * cm[:, -1].astype(float)[None, :, None] * cr[:, 0][None, None, :])
        return float(np.exp(_log_mean_exp(-beta * e.ravel())))
    # large slices: contract over the edge spins, still exact
    al, am, ar = (_edge_table(e, model, q, cap) for e in (eta_left, eta_mid, eta_right))
    s = np.array([-1.0, 1.0])
    bond = np.exp(-beta * K * np.outer(s, s))
    left = al.sum(axis=0)
    right = ar.sum(axis=1)
    return float(left @ bond @ am @ bond @ right)


def f_short(eta: int, sigma_left: int, sigma_right: int, model: ModelSpec, q: int,
            cap: int | None = None) -> float:
    """Short-range smallness term: partition-function cross ratio minus one."""
    z = lambda l, r: log_cell_partition_function(eta, BoundarySpec(l, r), model, q, cap)
    return float(np.expm1(z(sigma_left, sigma_right) + z(None, None)
                          - z(None, sigma_right) - z(sigma_left, None)))


def _fiber(eta: np.ndarray, geo: LatticeGeometry) -> np.ndarray:
    """All microscopic configurations mapping onto ``eta``."""
    out = np.zeros((1, 0), dtype=np.int8)
    for k in range(geo.M):
        c = cell_configs(geo.q, int(eta[k]))
        out = np.concatenate(
            [np.repeat(out, len(c), axis=0), np.tile(c, (len(out), 1))], axis=1
        )
    return out


def exact_cg_hamiltonian(eta, model: ModelSpec, geo: LatticeGeometry,
                         accept_large: bool = False) -> float:
    """Exact coarse Hamiltonian: ``-1/beta log E[exp(-beta H_N) | eta]``."""
    _check_sites(geo.N, accept_large)
    eta = as_blocks(eta, geo)
    sig = _fiber(eta, geo)
    e = np.atleast_1d(h_total(sig, model, geo))
    return -_log_mean_exp(-model.beta * e) / model.beta


def _all_states_energy(model: ModelSpec, geo: LatticeGeometry, accept_large: bool):
    """Yield ``(spins, H_N)`` chunks over all ``2^N`` states."""
    _check_sites(geo.N, accept_large)
    jm = kernel_matrix(model, geo) if model.long is not None else None
    total = 2**geo.N
    for start in range(0, total, _CHUNK):
        s = all_spin_configs(geo.N, start, min(total, start + _CHUNK))
        si = s.astype(np.float64)
        e = model.K * (si * np.roll(si, -1, axis=1)).sum(axis=1)
        if jm is not None:
            e -= 0.5 * np.einsum("ix,ix->i", si @ jm, si)
        yield s, e


def exact_cg_table(model: ModelSpec, geo: LatticeGeometry, accept_large: bool = False):
    """Exact coarse Hamiltonian for every admissible ``eta`` in one pass.

    Returns ``(etas, hbar)`` with ``etas`` ordered as
    :func:`cgmc.lattice.all_coarse_configs`.
    """
    q, M = geo.q, geo.M
    acc = np.full((q + 1) ** M, -np.inf)
    weights = (q + 1) ** np.arange(M - 1, -1, -1, dtype=np.int64)
    for s, e in _all_states_energy(model, geo, accept_large):
        n = (s.reshape(-1, M, q).sum(axis=2, dtype=np.int64) + q) // 2
        np.logaddexp.at(acc, n @ weights, -model.beta * e)
    etas = all_coarse_configs(geo)
    n = (etas + q) // 2
    log_count = (cell_log_prior(q)[n] + q * np.log(2.0)).sum(axis=1)
    return etas, -(acc - log_count) / model.beta


def exact_partition_identity_check(model: ModelSpec, geo: LatticeGeometry,
                                   accept_large: bool = False):
    """Compare ``Z_N`` (sum over all states) with ``sum_eta exp(-beta Hbar) Pbar``.

    The coarse side evaluates :func:`exact_cg_hamiltonian` fibre by fibre, so
    the two sides share no intermediate quantities.
    Returns ``(Z_N, Zbar_M, relative_gap)``.
    """
    parts = [logsumexp(-model.beta * e) for _, e in _all_states_energy(model, geo, accept_large)]
    log_zn = float(logsumexp(parts) - geo.N * np.log(2.0))
    lp = cell_log_prior(geo.q)
    terms = []
    for eta in all_coarse_configs(geo):
        hb = exact_cg_hamiltonian(eta, model, geo, accept_large)
        terms.append(-model.beta * hb + lp[(eta + geo.q) // 2].sum())
    log_zb = float(logsumexp(terms))
    return float(np.exp(log_zn)), float(np.exp(log_zb)), float(abs(np.expm1(log_zb - log_zn)))


def pair_deviation_energy(sigma_j, sigma_k, j: int, k: int, model: ModelSpec,
                          geo: LatticeGeometry, kernel=None) -> float:
    """Deviation energy between cells ``j`` and ``k`` from their cell-averaged kernel.

    ``-1/2 sum_{x in C_j, y in C_k, y != x} (J(x-y) - Jbar(j,k)) s(x) s(y) (2 - delta_jk)``.
    """
    from .cg import build_coarse_kernel

    if kernel is None:
        kernel = build_coarse_kernel(model, geo)
    q = geo.q
    sj = np.asarray(sigma_j, dtype=float)
    sk = np.asarray(sigma_k, dtype=float)
    xs = (j % geo.M) * q + np.arange(q)
    ys = (k % geo.M) * q + np.arange(q)
    jxy = kernel_profile(model, geo)[geo.distance(xs[:, None], ys[None, :])]
    same = (j - k) % geo.M == 0
    dev = jxy - kernel.value(j, k)
    if same:
        np.fill_diagonal(dev, 0.0)
    return float(-0.5 * (2 - same) * (sj @ dev @ sk))


def f_long(sigma_j, sigma_k, j: int, k: int, model: ModelSpec, geo: LatticeGeometry,
           kernel=None) -> float:
    """Long-range smallness term ``exp(-beta * deviation) - 1`` for a cell pair."""
    return float(np.expm1(-model.beta * pair_deviation_energy(
        sigma_j, sigma_k, j, k, model, geo, kernel)))


Observable = Union[str, Callable[[np.ndarray], np.ndarray]]


def _observable_fn(observable: Observable, model: ModelSpec, geo: LatticeGeometry):
    if callable(observable):
        return observable
    if observable == "magnetization":
        return lambda s: s.sum(axis=1) / geo.N
    if observable == "energy":
        return lambda s: np.atleast_1d(h_total(s, model, geo)) / geo.N
    raise DomainError(f"unknown observable {observable!r}")


def exact_gibbs_weights(model: ModelSpec, geo: LatticeGeometry,
                        accept_large: bool = False) -> np.ndarray:
    """Gibbs probabilities of all ``2^N`` states in :func:`all_spin_configs` order."""
    lw = np.concatenate([-model.beta * e for _, e in _all_states_energy(model, geo, accept_large)])
    return np.exp(lw - logsumexp(lw))


def exact_gibbs_expectation(observable: Observable, model: ModelSpec, geo: LatticeGeometry,
                            accept_large: bool = False) -> float:
    """Exact Gibbs average of ``observable``.

    ``observable`` is ``"magnetization"`` or ``"energy"`` (both per site) or a
    callable mapping an ``(n, N)`` spin batch to ``n`` values.
    """
    fn = _observable_fn(observable, model, geo)
    p = exact_gibbs_weights(model, geo, accept_large)
    total = 0.0
    for start in range(0, p.size, _CHUNK):
        s = all_spin_configs(geo.N, start, min(p.size, start + _CHUNK))
        total += float(p[start:start + len(s)] @ fn(s))
    return total


def transfer_matrix_energy(K: float, beta: float, N: int) -> float:
    """Mean nearest-neighbour energy per site of a periodic ring, via ``tr T^N``."""
    s = np.array([-1.0, 1.0])
    ss = np.outer(s, s)
    T = np.exp(-beta * K * ss)
    dT = -K * ss * T
    tn1 = np.linalg.matrix_power(T, N - 1)
    return float(-np.trace(tn1 @ dT) / np.trace(tn1 @ T))

