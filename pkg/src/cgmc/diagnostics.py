"""Error indicators for the coarse scheme.

Oracle-mode quantities (Hamiltonian gap, relative entropy) need full
enumeration and stay at N <= 20. The smallness terms and the kernel-sum
bound are local and run at any size.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import logsumexp

from .cg import (
    CoarseHamiltonian,
    CorrelationTables,
    build_coarse_hamiltonian,
    build_coarse_kernel,
    coarse_log_weights,
    h_cg0,
)
from .errors import ConfigurationError
from .lattice import LatticeGeometry, all_coarse_configs, all_spin_configs, cell_log_prior
from .oracle import exact_cg_table, f_short
from .potentials import ModelSpec, kernel_profile

EXACT_PAIR_SUP_MAX_Q = 12


# ---------------------------------------------------------------------------
# short-range indicator

def theta_indicator(eta_k: int, tables: CorrelationTables, lam: float) -> float:
    """``lam^2 |phi2 - phi1^2|`` from the tables (no constant prefactor)."""
    p1 = tables.phi1_at(eta_k)
    return lam * lam * abs(tables.phi2_at(eta_k) - p1 * p1)


def theta_analytic(eta_k: int, q: int, lam: float) -> float:
    """Leading-order closed form ``lam^2 (q^2 - eta^2) / (q^2 (q-1))``."""
    if abs(eta_k) > q:
        raise ConfigurationError(f"|eta|={abs(eta_k)} exceeds q={q}")
    if q == 1 or abs(eta_k) == q:
        return 0.0
    return lam * lam * (q * q - eta_k * eta_k) / (q * q * (q - 1))


def theta_envelope(eta_k: int, tables: CorrelationTables, lam: float) -> float:
    """Provable bound on ``|f_short(eta_k, ., .)|``: ``Theta / (1 - |lam|)^2``."""
    return theta_indicator(eta_k, tables, lam) / (1.0 - abs(lam)) ** 2


def theta_profile(tables: CorrelationTables, lam: float | None = None) -> dict:
    lam = tables.lam if lam is None else lam
    return {int(e): theta_indicator(int(e), tables, lam) for e in tables.etas}


# ---------------------------------------------------------------------------
# smallness terms

def delta0_short(model: ModelSpec, q: int) -> float:
    """Exact ``sup |f_short|`` over block values and both boundary spins."""
    best = 0.0
    for eta in range(-q, q + 1, 2):
        for sl in (-1, 1):
            for sr in (-1, 1):
                best = max(best, abs(f_short(eta, sl, sr, model, q)))
    return best


def scan_geometry(q: int, L: int, min_cells: int = 4) -> LatticeGeometry:
    """Ring large enough that no cell pair within range ``L`` wraps around."""
    M = max(min_cells, 2 * math.ceil(L / q) + 4)
    M += M % 2
    return LatticeGeometry.from_cells(M, q)


def _cell_patterns(q: int) -> np.ndarray:
    """Extremal single-cell configurations: aligned, alternating, split and
    one-defect patterns, with their global flips."""
    x = np.arange(q)
    base = [np.ones(q), np.where(x % 2, -1, 1)]
    for cut in sorted({q // 4, q // 2, (3 * q) // 4, 1, q - 1}):
        if 0 < cut < q:
            base.append(np.where(x < cut, 1, -1))
    pats = np.unique(np.array(base + [-b for b in base], dtype=float), axis=0)
    return pats


def _pair_patterns(q: int) -> np.ndarray:
    if q <= EXACT_PAIR_SUP_MAX_Q:
        return all_spin_configs(q).astype(float)
    return _cell_patterns(q)


def _deviation_matrix(model: ModelSpec, geo: LatticeGeometry, d: int, kernel=None) -> np.ndarray:
    """``-1/2 (2 - delta) (J(x-y) - Jbar)`` between cell 0 and cell ``d``."""
    if kernel is None:
        kernel = build_coarse_kernel(model, geo)
    q = geo.q
    xs = np.arange(q)
    ys = d * q + xs
    dev = kernel_profile(model, geo)[geo.distance(xs[:, None], ys[None, :])] - kernel.value(0, d)
    if d % geo.M == 0:
        np.fill_diagonal(dev, 0.0)
        return -0.5 * dev
    return -dev


def _cell_range(model: ModelSpec, q: int) -> int:
    return math.ceil(model.long.L / q) + 1


def delta1_long(model: ModelSpec, geo: LatticeGeometry) -> float:
    """``sup |f_long|`` over cell pairs; exact over all pair configurations for
    ``q <= 12``, otherwise over the extremal pattern set."""
    if model.long is None:
        return 0.0
    kernel = build_coarse_kernel(model, geo)
    S = _pair_patterns(geo.q)
    best = 0.0
    for d in range(0, min(_cell_range(model, geo.q), geo.M // 2) + 1):
        D = _deviation_matrix(model, geo, d, kernel)
        if not D.any():
            continue
        if d == 0:
            vals = np.einsum("ix,xy,iy->i", S, D, S)
        else:
            vals = (S @ D) @ S.T
        best = max(best, float(np.abs(np.expm1(-model.beta * np.array([vals.min(), vals.max()]))).max()))
    return best


@dataclass
class SmallnessRow:
    q: int
    L: int | None
    N: int
    delta0: float
    delta1: float


def smallness_scan(model: ModelSpec, geo: LatticeGeometry | None, q_list: Iterable[int],
                   L_list: Iterable[int | None]) -> list:
    """``(delta0, delta1)`` on a grid of cell sizes and kernel ranges.

    With ``geo`` given, every grid point uses a ring of ``geo.N`` sites;
    otherwise the smallest ring on which the kernel does not wrap.
    """
    rows = []
    for q in q_list:
        d0 = delta0_short(model, q)
        for L in L_list:
            m = model.with_(L=L) if (model.long is not None and L is not None) else model
            g = scan_geometry(q, L or 1) if geo is None else LatticeGeometry(geo.N, q)
            rows.append(SmallnessRow(q, L, g.N, d0, delta1_long(m, g)))
    return rows


# ---------------------------------------------------------------------------
# kernel-sum bound

@dataclass
class KernelBoundCheck:
    lhs: float
    rhs: float
    constant: float
    lhs_doubled_L: float
    ratio: float
    passed: bool


def kernel_deviation_sum(model: ModelSpec, geo: LatticeGeometry) -> float:
    """``sup_k sum_{l != k} |Delta_kl J(sigma)|`` over configurations where
    cell ``k`` holds one pattern and every other cell a second one (all
    pattern pairs when ``q <= 12``)."""
    if model.long is None:
        return 0.0
    kernel = build_coarse_kernel(model, geo)
    S = _pair_patterns(geo.q)
    total = np.zeros((len(S), len(S)))
    for d in range(1, geo.M):
        if min(d, geo.M - d) > _cell_range(model, geo.q):
            continue
        D = _deviation_matrix(model, geo, d, kernel)
        if D.any():
            total += np.abs((S @ D) @ S.T)
    return float(total.max())


def _doubled(geo: LatticeGeometry | None, q: int, L: int) -> tuple:
    """Geometry for range ``L`` and for ``2L``; a given ring is doubled with it."""
    if geo is None:
        return scan_geometry(q, L), scan_geometry(q, 2 * L)
    return geo, LatticeGeometry(2 * geo.N, geo.q)


def kernel_sum_bound_check(model: ModelSpec, geo: LatticeGeometry | None = None,
                           q: int | None = None, tol_factor: float = 1.5) -> KernelBoundCheck:
    """Compare the deviation sum with ``c q^2 / L * sup|V'|`` and check that
    doubling ``L`` (and the ring with it) halves it within ``tol_factor``."""
    if model.long is None:
        raise ConfigurationError("kernel_sum_bound_check needs a long-range kernel")
    q = geo.q if geo is not None else (q or 1)
    L = model.long.L
    g1, g2 = _doubled(geo, q, L)
    lhs = kernel_deviation_sum(model, g1)
    lhs2 = kernel_deviation_sum(model.with_(L=2 * L), g2)
    scale = q * q / L * model.long.grad_bound
    const = lhs / scale if scale > 0 else 0.0
    if lhs == 0.0:
        ratio, ok = float("nan"), True
    else:
        ratio = lhs / lhs2 if lhs2 > 0 else float("inf")
        ok = bool(np.isfinite(lhs) and 2.0 / tol_factor <= ratio <= 2.0 * tol_factor)
    return KernelBoundCheck(lhs, const * scale, const, lhs2, ratio, ok)


# ---------------------------------------------------------------------------
# oracle-mode comparisons

def _coarse_tables(model: ModelSpec, geo: LatticeGeometry, cgh: CoarseHamiltonian | None):
    cgh = build_coarse_hamiltonian(model, geo) if cgh is None else cgh
    etas, hbar = exact_cg_table(model, geo)
    return cgh, etas, hbar, np.asarray(h_cg0(etas, cgh, geo))


def hamiltonian_gap(model: ModelSpec, geo: LatticeGeometry,
                    cgh: CoarseHamiltonian | None = None) -> tuple:
    """``(max_eta |Hbar - H0|, same / N)`` by full enumeration."""
    _, _, hbar, h0 = _coarse_tables(model, geo, cgh)
    gap = float(np.abs(hbar - h0).max())
    return gap, gap / geo.N


def _coarse_measures(model, geo, cgh):
    cgh, etas, hbar, h0 = _coarse_tables(model, geo, cgh)
    lp = cell_log_prior(geo.q)[(etas + geo.q) // 2].sum(axis=1)
    log_mu = -model.beta * hbar + lp
    log_mu0 = coarse_log_weights(cgh, geo, etas)
    return etas, log_mu - logsumexp(log_mu), log_mu0 - logsumexp(log_mu0), hbar - h0


def relative_entropy_per_site(model: ModelSpec, geo: LatticeGeometry,
                              cgh: CoarseHamiltonian | None = None) -> float:
    """``sum mu0 log(mu0 / mu) / N`` with both coarse laws enumerated exactly."""
    _, log_mu, log_mu0, _ = _coarse_measures(model, geo, cgh)
    p0 = np.exp(log_mu0)
    return max(0.0, float(p0 @ (log_mu0 - log_mu))) / geo.N


def corollary_estimate(residuum: np.ndarray, beta: float, weights: np.ndarray | None = None) -> float:
    """``beta E[S] + log E[exp(-beta S)]`` over samples (or weighted states)."""
    S = np.asarray(residuum, dtype=float)
    if weights is None:
        return float(beta * S.mean() + logsumexp(-beta * S) - math.log(S.size))
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(beta * (w @ S) + logsumexp(-beta * S, b=w))


@dataclass
class OracleResiduum:
    """Residuum ``S(eta) = Hbar(eta) - H0(eta)`` looked up from the exact table."""

    model: ModelSpec
    geo: LatticeGeometry
    cgh: CoarseHamiltonian | None = None

    def __post_init__(self):
        _, _, _, gap = _coarse_measures(self.model, self.geo, self.cgh)
        self._gap = gap
        self._w = (self.geo.q + 1) ** np.arange(self.geo.M - 1, -1, -1, dtype=np.int64)

    def __call__(self, etas) -> np.ndarray:
        n = (np.asarray(etas, dtype=np.int64) + self.geo.q) // 2
        return self._gap[n @ self._w]


def aposteriori_corollary_estimate(samples, residuum_source: Callable, beta: float,
                                   geo: LatticeGeometry | None = None) -> float:
    """Residuum-based estimate of the relative entropy (not per site).

    ``samples`` is an array of coarse configurations or a coarse
    :class:`~cgmc.sampler.ChainStats` recorded with the ``state`` observable.
    """
    if hasattr(samples, "series"):
        if geo is None:
            raise ConfigurationError("geo is required to decode chain states")
        samples = all_coarse_configs(geo)[samples.series["state"]]
    return corollary_estimate(residuum_source(samples), beta)


def exact_corollary_estimate(model: ModelSpec, geo: LatticeGeometry,
                             cgh: CoarseHamiltonian | None = None) -> float:
    """Same estimate with the coarse law enumerated instead of sampled."""
    _, _, log_mu0, gap = _coarse_measures(model, geo, cgh)
    return corollary_estimate(gap, model.beta, np.exp(log_mu0))


# ---------------------------------------------------------------------------
# reports

@dataclass
class ErrorReport:
    max_abs_h_gap: float
    per_site_gap: float
    rel_entropy_per_site: float
    delta0_short: float
    delta1_long: float
    theta_profile: dict
    q: int
    L: int | None
    K: float
    beta: float
    kernel: str
    N: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_profile"] = {str(k): v for k, v in self.theta_profile.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def error_report(model: ModelSpec, geo: LatticeGeometry) -> ErrorReport:
    cgh = build_coarse_hamiltonian(model, geo)
    gap, per_site = hamiltonian_gap(model, geo, cgh)
    return ErrorReport(
        max_abs_h_gap=gap,
        per_site_gap=per_site,
        rel_entropy_per_site=relative_entropy_per_site(model, geo, cgh),
        delta0_short=delta0_short(model, geo.q),
        delta1_long=delta1_long(model, geo),
        theta_profile=theta_profile(cgh.tables),
        q=geo.q,
        L=model.long.L if model.long else None,
        K=model.K,
        beta=model.beta,
        kernel=model.long.kernel_shape if model.long else "none",
        N=geo.N,
    )


SWEEP_COLUMNS = ("q", "L", "K", "beta", "kernel", "max_gap", "per_site_gap",
                 "rel_entropy", "delta0", "delta1")


def sweep(model: ModelSpec, N: int, q_list: Iterable[int], L_list: Iterable[int | None]) -> list:
    """Error reports over a ``(q, L)`` grid at fixed ``N``; unusable ``q`` are skipped."""
    out = []
    for q in q_list:
        if N % q or (N // q) % 2:
            warnings.warn(f"skipping q={q}: N={N} does not split into an even number of cells")
            continue
        for L in L_list:
            m = model.with_(L=L) if (model.long is not None and L is not None) else model
            out.append(error_report(m, LatticeGeometry(N, q)))
    return out


def sweep_csv(reports: Iterable[ErrorReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in reports:
        w.writerow([r.q, "" if r.L is None else r.L, repr(r.K), repr(r.beta), r.kernel,
                    repr(r.max_abs_h_gap), repr(r.per_site_gap), repr(r.rel_entropy_per_site),
                    repr(r.delta0_short), repr(r.delta1_long)])
    return buf.getvalue()


__all__ = [
    "theta_indicator", "theta_analytic", "theta_envelope", "theta_profile",
    "delta0_short", "delta1_long", "smallness_scan", "scan_geometry",
    "kernel_deviation_sum", "kernel_sum_bound_check", "KernelBoundCheck",
    "hamiltonian_gap", "relative_entropy_per_site", "corollary_estimate",
    "aposteriori_corollary_estimate", "exact_corollary_estimate", "OracleResiduum",
    "ErrorReport", "error_report", "sweep", "sweep_csv", "SWEEP_COLUMNS", "SmallnessRow",
]
