"""First-order microscopic reconstruction from a coarse configuration.

Even cells are drawn first, each independently, from its short-range weight
dressed by the free energies of the two neighbouring cells seen through the
connecting bonds. Odd cells are then drawn with both neighbours fixed.
Every cell has its own random stream, so drawing a subset of cells (a
window) reproduces exactly what the full reconstruction puts there.

Only the nearest-neighbour part of the model enters; a long-range kernel is
ignored with a warning.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rng as _rng
from .cg import CorrelationTables, phi_tables_exact
from .errors import CapacityError, DomainError
from .lattice import (
    LatticeGeometry,
    all_coarse_configs,
    all_spin_configs,
    as_blocks,
    cell_configs,
    coarse_map,
)
from .oracle import (
    BoundarySpec,
    exact_gibbs_weights,
    log_cell_partition_function,
    three_cell_partition_function,
)
from .potentials import ModelSpec, h_short
from .sampler import ChainConfig, exchange_chain, run_cg_chain

EXACT_RECON_CAP = 12
ROUNDTRIP_MAX_SITES = 14


@dataclass(frozen=True)
class ReconstructionPlan:
    """``exactness`` is ``"exact"`` (slice enumeration, q <= 12) or ``"mcmc"``
    (exchange chain of ``cell_steps`` moves per cell)."""

    mode: str = "first_order"
    exactness: str = "exact"
    cell_steps: int = 2000
    accept_large: bool = False

    def __post_init__(self):
        if self.mode != "first_order":
            raise DomainError(f"only first_order reconstruction is available, got {self.mode!r}")
        if self.exactness not in ("exact", "mcmc"):
            raise DomainError(f"exactness must be 'exact' or 'mcmc', got {self.exactness!r}")
        if self.cell_steps < 1:
            raise DomainError("cell_steps must be positive")


def _short_only(model: ModelSpec) -> ModelSpec:
    if model.long is not None:
        warnings.warn("reconstruction ignores the long-range kernel", stacklevel=3)
        return model.with_(kernel=None)
    return model


# ---------------------------------------------------------------------------
# per-slice tables (exact mode)

@dataclass(frozen=True)
class _Slice:
    configs: np.ndarray     # (count, q) int8
    log_w: np.ndarray       # -beta * H_cell
    first: np.ndarray       # s_1 in {0, 1} as (s+1)//2
    last: np.ndarray


@lru_cache(maxsize=64)
def _slices(q: int, K: float, beta: float):
    out = []
    for n in range(q + 1):
        c = cell_configs(q, 2 * n - q, cap=q)
        ci = c.astype(np.int64)
        h = K * (ci[:, :-1] * ci[:, 1:]).sum(axis=1)
        out.append(_Slice(c, -beta * h, (ci[:, 0] + 1) // 2, (ci[:, -1] + 1) // 2))
    return tuple(out)


@lru_cache(maxsize=64)
def _edge_log_z(q: int, K: float, beta: float) -> np.ndarray:
    """``log Z(eta; free, s)`` indexed ``[n, (s+1)//2]``; equals the mirror ``(s, free)``."""
    m = ModelSpec.create(K, beta)
    return np.array([[log_cell_partition_function(2 * n - q, BoundarySpec(right=s), m, q, cap=q)
                      for s in (-1, 1)] for n in range(q + 1)])


def _check_exact(q: int, plan: ReconstructionPlan):
    if q > EXACT_RECON_CAP and not plan.accept_large:
        raise CapacityError(f"exact reconstruction with q={q} exceeds cap {EXACT_RECON_CAP}")


def even_cell_probabilities(eta_left: int, eta_mid: int, eta_right: int,
                            model: ModelSpec, q: int) -> tuple:
    """Slice configurations of an even cell, their probabilities, and the
    normalisation ``sum_c w(c) P(c) / Z3`` (one in exact arithmetic)."""
    K, beta = model.K, model.beta
    sl = _slices(q, K, beta)
    ez = _edge_log_z(q, K, beta)
    nl, nm, nr = ((e + q) // 2 for e in (eta_left, eta_mid, eta_right))
    s = sl[nm]
    lw = s.log_w + ez[nl, s.first] + ez[nr, s.last]
    z3 = three_cell_partition_function(eta_left, eta_mid, eta_right, model, q)
    norm = float(np.exp(lw - math.log(z3)).sum() / len(lw))
    p = np.exp(lw - lw.max())
    return s.configs, p / p.sum(), norm


def _draw(log_w: np.ndarray, u: np.ndarray) -> np.ndarray:
    p = np.exp(log_w - log_w.max())
    cdf = np.cumsum(p)
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(p) - 1)


def _even_exact(n: np.ndarray, k: int, geo, K, beta, u):
    """Draw cell ``k`` for every row of up-counts ``n``; returns slice indices."""
    q, M = geo.q, geo.M
    sl = _slices(q, K, beta)
    ez = _edge_log_z(q, K, beta)
    nl, nm, nr = n[:, (k - 1) % M], n[:, k], n[:, (k + 1) % M]
    out = np.zeros((len(n), q), dtype=np.int8)
    key = (nl * (q + 1) + nm) * (q + 1) + nr
    for kv in np.unique(key):
        rows = np.nonzero(key == kv)[0]
        s = sl[nm[rows[0]]]
        lw = s.log_w + ez[nl[rows[0]], s.first] + ez[nr[rows[0]], s.last]
        out[rows] = s.configs[_draw(lw, u[rows])]
    return out


def _odd_exact(n, k, left_last, right_first, geo, K, beta, u):
    q = geo.q
    sl = _slices(q, K, beta)
    nm = n[:, k]
    out = np.zeros((len(n), q), dtype=np.int8)
    key = (nm * 2 + (left_last > 0)) * 2 + (right_first > 0)
    for kv in np.unique(key):
        rows = np.nonzero(key == kv)[0]
        s = sl[nm[rows[0]]]
        a, b = int(left_last[rows[0]]), int(right_first[rows[0]])
        ci = s.configs.astype(np.int64)
        lw = s.log_w - beta * K * (a * ci[:, 0] + ci[:, -1] * b)
        out[rows] = s.configs[_draw(lw, u[rows])]
    return out


# ---------------------------------------------------------------------------
# mcmc mode

def _mcmc_draw(q: int, eta_k: int, gl: np.ndarray, gr: np.ndarray, K: float, beta: float,
               steps: int, gen: np.random.Generator) -> np.ndarray:
    spins = -np.ones(q, dtype=np.int8)
    spins[gen.permutation(q)[: (eta_k + q) // 2]] = 1
    cfg = ChainConfig(steps, steps - 1, 1, 0, ())
    return exchange_chain(spins, K, beta, gl, gr, cfg, gen)[-1]


def _neighbour_log_weights(phi1: float, lam: float) -> np.ndarray:
    """``log Z(eta; free, s) / Z(eta; free, free)`` up to a constant, for ``s = -1, +1``."""
    s = np.array([-1.0, 1.0])
    return np.log1p(-lam * s * phi1)


# ---------------------------------------------------------------------------
# drivers

def _plan_cells(geo: LatticeGeometry, window):
    M = geo.M
    if window is None:
        return list(range(0, M, 2)), list(range(1, M, 2))
    a, b = window
    cells = range(a, b + 1)
    odd = [k for k in cells if k % 2]
    even = sorted({k for k in cells if k % 2 == 0}
                  | {(k - 1) % M for k in odd} | {(k + 1) % M for k in odd})
    return even, odd


def _reconstruct_rows(etas: np.ndarray, model: ModelSpec, geo: LatticeGeometry,
                      plan: ReconstructionPlan, seed: int, window=None,
                      tables: CorrelationTables | None = None) -> np.ndarray:
    model = _short_only(model)
    q, M, K, beta = geo.q, geo.M, model.K, model.beta
    n = (etas + q) // 2
    S = len(etas)
    cells = np.zeros((S, M, q), dtype=np.int8)
    even, odd = _plan_cells(geo, window)
    if plan.exactness == "exact":
        _check_exact(q, plan)
        for k in even:
            u = _rng.stream(seed, _rng.RECON_EVEN, k).random(S)
            cells[:, k] = _even_exact(n, k, geo, K, beta, u)
        for k in odd:
            u = _rng.stream(seed, _rng.RECON_ODD, k).random(S)
            cells[:, k] = _odd_exact(n, k, cells[:, k - 1, -1], cells[:, (k + 1) % M, 0],
                                     geo, K, beta, u)
    else:
        if tables is None:
            tables = phi_tables_exact(q, K, beta)
        lam = math.tanh(beta * K)
        for k in even:
            gen = _rng.stream(seed, _rng.RECON_EVEN, k)
            for i in range(S):
                # left neighbour meets s_1, right neighbour meets s_q
                gl = _neighbour_log_weights(tables.phi1_at(int(etas[i, k - 1])), lam)
                gr = _neighbour_log_weights(tables.phi1_at(int(etas[i, (k + 1) % M])), lam)
                cells[i, k] = _mcmc_draw(q, int(etas[i, k]), gl, gr, K, beta,
                                         plan.cell_steps, gen)
        s = np.array([-1.0, 1.0])
        for k in odd:
            gen = _rng.stream(seed, _rng.RECON_ODD, k)
            for i in range(S):
                gl = -beta * K * cells[i, k - 1, -1] * s
                gr = -beta * K * cells[i, (k + 1) % M, 0] * s
                cells[i, k] = _mcmc_draw(q, int(etas[i, k]), gl, gr, K, beta,
                                         plan.cell_steps, gen)
    return cells.reshape(S, geo.N)


def reconstruct(eta, model: ModelSpec, geo: LatticeGeometry,
                plan: ReconstructionPlan = ReconstructionPlan(), seed: int = 0,
                tables: CorrelationTables | None = None) -> np.ndarray:
    """One microscopic configuration ``sigma`` with ``coarse_map(sigma) == eta``."""
    e = as_blocks(eta, geo)[None, :]
    return _reconstruct_rows(e, model, geo, plan, seed, tables=tables)[0]


def reconstruct_many(eta, n_draws: int, model: ModelSpec, geo: LatticeGeometry,
                     plan: ReconstructionPlan = ReconstructionPlan(), seed: int = 0,
                     tables: CorrelationTables | None = None) -> np.ndarray:
    """Independent reconstructions of one ``eta`` (row 0 equals :func:`reconstruct`)."""
    e = np.repeat(as_blocks(eta, geo)[None, :], n_draws, axis=0)
    return _reconstruct_rows(e, model, geo, plan, seed, tables=tables)


def reconstruct_batch(etas, model: ModelSpec, geo: LatticeGeometry,
                      plan: ReconstructionPlan = ReconstructionPlan(), seed: int = 0,
                      tables: CorrelationTables | None = None) -> np.ndarray:
    """One reconstruction per row of ``etas``."""
    e = as_blocks(etas, geo).reshape(-1, geo.M)
    return _reconstruct_rows(e, model, geo, plan, seed, tables=tables)


@dataclass(frozen=True)
class WindowConfiguration:
    start: int
    stop: int          # inclusive cell index
    spins: np.ndarray  # sites of cells start..stop

    def to_text(self) -> str:
        rows = self.spins.reshape(-1, self.spins.shape[-1])
        body = "\n".join(" ".join("+" if s > 0 else "-" for s in r) for r in rows)
        return f"# window {self.start}..{self.stop}\n{body}\n"


def _check_window(window, geo: LatticeGeometry):
    a, b = (int(x) for x in window)
    if not 0 <= a <= b < geo.M:
        raise DomainError(f"window {a}..{b} must lie within cells 0..{geo.M - 1}")
    width = b - a + 1
    if width < 3:
        raise DomainError(f"window {a}..{b} spans {width} cells; at least 3 are needed")
    if width != geo.M and width + 2 > geo.M:
        raise DomainError(f"window {a}..{b} plus its halo does not fit in {geo.M} cells")
    return a, b


def local_reconstruct(eta, window, model: ModelSpec, geo: LatticeGeometry,
                      plan: ReconstructionPlan = ReconstructionPlan(), seed: int = 0,
                      n_draws: int | None = None,
                      tables: CorrelationTables | None = None) -> WindowConfiguration:
    """Reconstruct cells ``window[0]..window[1]`` only, sampling even halo
    cells as needed. Matches :func:`reconstruct` on the window for the same seed."""
    a, b = _check_window(window, geo)
    e = as_blocks(eta, geo)[None, :]
    if n_draws is not None:
        e = np.repeat(e, n_draws, axis=0)
    full = _reconstruct_rows(e, model, geo, plan, seed, window=(a, b), tables=tables)
    part = full[:, a * geo.q:(b + 1) * geo.q]
    return WindowConfiguration(a, b, part[0] if n_draws is None else part)


# ---------------------------------------------------------------------------
# exact reference laws

def conditional_law(eta, model: ModelSpec, geo: LatticeGeometry) -> tuple:
    """Exact law of the two-pass scheme on the fibre of ``eta``.

    Built from the oracle partition functions, independently of the sampling
    code. Returns ``(configs, probabilities)``.
    """
    model = _short_only(model)
    e = as_blocks(eta, geo)
    q, M, K, beta = geo.q, geo.M, model.K, model.beta
    grids = np.meshgrid(*[np.arange(len(cell_configs(q, int(x)))) for x in e], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=-1)
    sigma = np.concatenate([cell_configs(q, int(e[k]))[idx[:, k]] for k in range(M)], axis=1)
    s = sigma.astype(np.int64).reshape(-1, M, q)
    logp = np.zeros(len(sigma))
    for k in range(0, M, 2):
        lft, rgt = (k - 1) % M, (k + 1) % M
        h = K * (s[:, k, :-1] * s[:, k, 1:]).sum(axis=1)
        zl = np.array([log_cell_partition_function(int(e[lft]), BoundarySpec(right=int(v)), model, q)
                       for v in s[:, k, 0]])
        zr = np.array([log_cell_partition_function(int(e[rgt]), BoundarySpec(left=int(v)), model, q)
                       for v in s[:, k, -1]])
        z3 = three_cell_partition_function(int(e[lft]), int(e[k]), int(e[rgt]), model, q)
        count = len(cell_configs(q, int(e[k])))
        logp += -beta * h + zl + zr - math.log(count) - math.log(z3)
    for k in range(1, M, 2):
        lft, rgt = s[:, k - 1, -1], s[:, (k + 1) % M, 0]
        h = K * (s[:, k, :-1] * s[:, k, 1:]).sum(axis=1) + K * (lft * s[:, k, 0] + s[:, k, -1] * rgt)
        bc = [log_cell_partition_function(int(e[k]), BoundarySpec(int(a), int(b)), model, q)
              for a, b in zip(lft, rgt)]
        count = len(cell_configs(q, int(e[k])))
        logp += -beta * h - math.log(count) - np.array(bc)
    return sigma, np.exp(logp)


def scheme_law(model: ModelSpec, geo: LatticeGeometry, coarse_probs: np.ndarray) -> np.ndarray:
    """Law over all ``2^N`` states of coarse sampling from ``coarse_probs``
    (aligned with :func:`all_coarse_configs`) followed by exact reconstruction."""
    etas = all_coarse_configs(geo)
    out = np.zeros(2**geo.N)
    w = np.int64(2) ** np.arange(geo.N - 1, -1, -1, dtype=np.int64)
    for eta, pe in zip(etas, coarse_probs):
        if pe == 0.0:
            continue
        sig, p = conditional_law(eta, model, geo)
        out[((1 - sig.astype(np.int64)) // 2) @ w] += pe * p
    return out


@dataclass
class RoundtripReport:
    tv: float               # empirical vs exact Gibbs
    tv_scheme: float        # exact law of the scheme vs exact Gibbs
    gaps: dict              # observable -> |empirical - exact|
    scheme_gaps: dict       # observable -> |scheme - exact|
    stderr: dict
    n_samples: int
    delta_prior: float      # a priori indicator: per-site Hamiltonian gap

    def within_bounds(self, k: float = 3.0) -> bool:
        return all(self.gaps[o] <= self.scheme_gaps[o] + k * self.stderr[o] for o in self.gaps)

    def to_dict(self) -> dict:
        return {"tv": self.tv, "tv_scheme": self.tv_scheme, "gaps": self.gaps,
                "scheme_gaps": self.scheme_gaps, "stderr": self.stderr,
                "n_samples": self.n_samples, "delta_prior": self.delta_prior}


def _observables(sig: np.ndarray, model: ModelSpec, geo: LatticeGeometry) -> dict:
    s = sig.astype(np.float64)
    return {"magnetization": s.mean(axis=1),
            "energy": np.asarray(h_short(sig, model, geo)) / geo.N,
            "nn_correlation": (s * np.roll(s, -1, axis=1)).mean(axis=1)}


def roundtrip_check(model: ModelSpec, geo: LatticeGeometry, plan: ReconstructionPlan,
                    cfg: ChainConfig, seed: int | None = None) -> RoundtripReport:
    """Coarse chain, then reconstruction of every retained sample, compared
    with the exact microscopic Gibbs law (short-range part only)."""
    from .cg import build_coarse_hamiltonian, coarse_log_weights
    from .diagnostics import hamiltonian_gap
    from .sampler import batch_means_stderr
    from scipy.special import softmax

    if geo.N > ROUNDTRIP_MAX_SITES:
        raise CapacityError(f"roundtrip reference needs N <= {ROUNDTRIP_MAX_SITES}")
    model = _short_only(model)
    seed = cfg.seed if seed is None else seed
    cgh = build_coarse_hamiltonian(model, geo)
    chain = run_cg_chain(cgh, geo, ChainConfig(cfg.steps, cfg.burn_in, cfg.thin, cfg.seed,
                                               ("state",)))
    etas = all_coarse_configs(geo)[chain.series["state"]]
    sig = _reconstruct_rows(etas, model, geo, plan, seed)
    w = np.int64(2) ** np.arange(geo.N - 1, -1, -1, dtype=np.int64)
    emp = np.bincount(((1 - sig.astype(np.int64)) // 2) @ w, minlength=2**geo.N) / len(sig)
    exact = exact_gibbs_weights(model, geo)
    all_etas = all_coarse_configs(geo)
    scheme = scheme_law(model, geo, softmax(coarse_log_weights(cgh, geo, all_etas)))
    states = all_spin_configs(geo.N)
    ref = {k: float(v @ exact) for k, v in _observables(states, model, geo).items()}
    sch = {k: float(v @ scheme) for k, v in _observables(states, model, geo).items()}
    obs = _observables(sig, model, geo)
    gaps = {k: abs(float(v.mean()) - ref[k]) for k, v in obs.items()}
    return RoundtripReport(
        tv=0.5 * float(np.abs(emp - exact).sum()),
        tv_scheme=0.5 * float(np.abs(scheme - exact).sum()),
        gaps=gaps,
        scheme_gaps={k: abs(sch[k] - ref[k]) for k in obs},
        stderr={k: batch_means_stderr(v) for k, v in obs.items()},
        n_samples=len(sig),
        delta_prior=hamiltonian_gap(model, geo)[1],
    )


def check_fibre(sigma, eta, geo: LatticeGeometry) -> bool:
    return bool(np.array_equal(coarse_map(sigma, geo), as_blocks(eta, geo)))


__all__ = [
    "ReconstructionPlan", "WindowConfiguration", "RoundtripReport", "reconstruct",
    "reconstruct_many", "reconstruct_batch", "local_reconstruct", "roundtrip_check",
    "conditional_law", "scheme_law", "even_cell_probabilities", "check_fibre",
]
