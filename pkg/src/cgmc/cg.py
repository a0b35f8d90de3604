"""Zeroth-order coarse Hamiltonian.

The coarse energy is the sum of three pieces:

* the long-range quadratic form with cell-averaged couplings ``Jbar``,
  which equals the conditional prior mean of the microscopic long-range
  energy;
* a one-body term ``-1/beta log Z_cell(eta; free, free)`` on every cell;
* a three-body term on every even cell, reduced to boundary correlation
  functions ``phi1(eta) = <s_1>`` and ``phi2(eta) = <s_1 s_q>`` of a single
  constrained cell.

Correlation tables come either from exhaustive enumeration of one cell or
from an unconstrained single-cell Metropolis run histogrammed by block sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as _rng
from ._backend import kernels
from ._pykernels import _cg_delta
from .errors import (
    CapacityError,
    ConfigurationError,
    CoverageError,
    SingularityError,
)
from .lattice import (
    CELL_ENUMERATION_CAP,
    LatticeGeometry,
    all_spin_configs,
    as_blocks,
    cell_log_prior,
    check_block_value,
)
from .oracle import FREE, cell_partition_function, three_cell_partition_function
from .potentials import ModelSpec, kernel_profile

EXACT_TABLE_DEFAULT_MAX_Q = 16
PROVENANCE_EXACT = "exact-enumeration"
PROVENANCE_MC = "inverse-mc"


# ---------------------------------------------------------------------------
# long-range part

@dataclass(frozen=True)
class CoarseLongRangeKernel:
    """Cell-averaged kernel, stored as a profile over cell distance ``0..M//2``.

    ``profile[0]`` is the within-cell average over distinct site pairs.
    """

    profile: np.ndarray
    M: int
    q: int

    def value(self, k: int, l: int) -> float:
        d = abs(k - l) % self.M
        return float(self.profile[min(d, self.M - d)])

    @property
    def diag(self) -> np.ndarray:
        return np.full(self.M, self.profile[0])

    @property
    def offdiag(self) -> np.ndarray:
        k = np.arange(self.M)
        d = np.abs(k[:, None] - k[None, :]) % self.M
        out = self.profile[np.minimum(d, self.M - d)]
        np.fill_diagonal(out, 0.0)
        return out

    @property
    def support(self) -> int:
        nz = np.nonzero(self.profile[1:])[0]
        return int(nz[-1] + 1) if nz.size else 0

    def trimmed(self) -> np.ndarray:
        """Profile cut after the last nonzero entry, as fed to the kernels."""
        return np.ascontiguousarray(self.profile[: self.support + 1], dtype=np.float64)


def build_coarse_kernel(model: ModelSpec, geo: LatticeGeometry) -> CoarseLongRangeKernel:
    q, M = geo.q, geo.M
    prof = kernel_profile(model, geo)
    site = np.arange(q)
    out = np.zeros(M // 2 + 1)
    if q > 1:
        d0 = geo.distance(site[:, None], site[None, :])
        out[0] = prof[d0].sum() / (q * (q - 1))  # diagonal of d0 is distance 0, J(0)=0
    for d in range(1, M // 2 + 1):
        dist = geo.distance(site[:, None], d * q + site[None, :])
        out[d] = prof[dist].sum() / (q * q)
    return CoarseLongRangeKernel(out, M, q)


def h_cg_long(eta, kernel: CoarseLongRangeKernel, geo: LatticeGeometry):
    """Cell-averaged long-range energy (batch-aware)."""
    e = as_blocks(eta, geo).astype(np.float64)
    M, p = geo.M, kernel.profile
    total = -0.5 * p[0] * (e * e - geo.q).sum(axis=-1)
    for d in range(1, M):
        w = p[min(d, M - d)]
        if w != 0.0:
            total = total - 0.5 * w * (e * np.roll(e, -d, axis=-1)).sum(axis=-1)
    return float(total) if np.ndim(total) == 0 else total


# ---------------------------------------------------------------------------
# correlation tables

@dataclass
class CorrelationTables:
    """Single-cell boundary correlations indexed by up-count ``n = (eta+q)/2``.

    Besides ``phi1``/``phi2`` and their standard errors, the table carries the
    one-body potential, the mean cell energy and the beta-derivatives of the
    correlations (used by the coarse energy estimator). Bins never sampled
    hold NaN.
    """

    q: int
    K: float
    beta: float
    phi1: np.ndarray
    phi2: np.ndarray
    stderr1: np.ndarray
    stderr2: np.ndarray
    one_body: np.ndarray
    ecell: np.ndarray
    dphi1: np.ndarray
    dphi2: np.ndarray
    visits: np.ndarray
    provenance: str = PROVENANCE_EXACT
    steps: int = 0
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    COLUMNS = ("eta", "phi1", "phi2", "stderr1", "stderr2",
               "one_body", "ecell", "dphi1", "dphi2", "visits")

    @property
    def etas(self) -> np.ndarray:
        return np.arange(-self.q, self.q + 1, 2)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.phi1)

    @property
    def lam(self) -> float:
        return math.tanh(self.beta * self.K)

    def index(self, eta: int) -> int:
        eta = check_block_value(eta, self.q)
        n = (eta + self.q) // 2
        if not self.present[n]:
            raise CoverageError(f"correlation bin eta={eta} was never sampled", bins=(eta,))
        return n

    def phi1_at(self, eta: int) -> float:
        return float(self.phi1[self.index(eta)])

    def phi2_at(self, eta: int) -> float:
        return float(self.phi2[self.index(eta)])

    def write(self, path, config_echo: str | None = None):
        Path(path).write_text(self.to_text(config_echo))

    def to_text(self, config_echo: str | None = None) -> str:
        lines = ["# cgmc correlation table",
                 f"# q = {self.q}",
                 f"# K = {self.K!r}",
                 f"# beta = {self.beta!r}",
                 f"# provenance = {self.provenance}",
                 f"# steps = {self.steps}",
                 f"# seed = {'none' if self.seed is None else self.seed}"]
        if config_echo:
            lines += [f"# config {ln}" for ln in config_echo.splitlines()]
        lines.append(" ".join(self.COLUMNS))
        cols = [self.phi1, self.phi2, self.stderr1, self.stderr2,
                self.one_body, self.ecell, self.dphi1, self.dphi2, self.visits]
        for i, eta in enumerate(self.etas):
            vals = [repr(float(c[i])) for c in cols]
            lines.append(" ".join([str(int(eta))] + vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def read(cls, path) -> "CorrelationTables":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "CorrelationTables":
        header, rows = {}, []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body and not body.startswith("config"):
                    key, val = (s.strip() for s in body.split("=", 1))
                    header[key] = val
                continue
            parts = line.split()
            if parts[0] == "eta":
                if tuple(parts) != cls.COLUMNS:
                    raise ConfigurationError(f"line {lineno}: unexpected columns {parts}")
                continue
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise ConfigurationError(f"line {lineno}: {exc}") from None
        try:
            q = int(header["q"])
            K = float(header["K"])
            beta = float(header["beta"])
        except KeyError as exc:
            raise ConfigurationError(f"table header lacks {exc}") from None
        arr = np.array(rows, dtype=float)
        if arr.shape != (q + 1, len(cls.COLUMNS)):
            raise ConfigurationError(f"expected {q + 1} rows of {len(cls.COLUMNS)} columns")
        if not np.array_equal(arr[:, 0], np.arange(-q, q + 1, 2)):
            raise ConfigurationError("eta column must run -q..q in steps of 2")
        seed = header.get("seed", "none")
        return cls(q, K, beta, *(arr[:, i].copy() for i in range(1, len(cls.COLUMNS))),
                   provenance=header.get("provenance", PROVENANCE_EXACT),
                   steps=int(header.get("steps", 0)),
                   seed=None if seed == "none" else int(seed))


def _saturated(q: int, K: float):
    """Deterministic content of the bins ``eta = +-q``."""
    return {"phi1": (-1.0, 1.0), "phi2": 1.0, "energy": K * (q - 1)}


def phi_tables_exact(q: int, K: float, beta: float, cap: int | None = None) -> CorrelationTables:
    """Correlation tables by summing over all ``2^q`` cell configurations."""
    cap = CELL_ENUMERATION_CAP if cap is None else cap
    if q > cap:
        raise CapacityError(f"exact correlation tables for q={q} exceed cap {cap}")
    shift = beta * abs(K) * (q - 1)
    acc = np.zeros((6, q + 1))
    for start in range(0, 2**q, _rng.CHUNK):
        s = all_spin_configs(q, start, min(2**q, start + _rng.CHUNK)).astype(np.int64)
        h = K * (s[:, :-1] * s[:, 1:]).sum(axis=1)
        w = np.exp(-beta * h - shift)
        n = (s.sum(axis=1) + q) // 2
        s1 = s[:, 0].astype(float)
        s2 = (s[:, 0] * s[:, -1]).astype(float)
        for row, vals in enumerate((w, w * s1, w * s2, w * h, w * s1 * h, w * s2 * h)):
            acc[row] += np.bincount(n, weights=vals, minlength=q + 1)
    W = acc[0]
    phi1, phi2, ecell = acc[1] / W, acc[2] / W, acc[3] / W
    dphi1 = -(acc[4] / W - phi1 * ecell)
    dphi2 = -(acc[5] / W - phi2 * ecell)
    log_count = cell_log_prior(q) + q * math.log(2.0)
    one_body = -(np.log(W) + shift - log_count) / beta
    zeros = np.zeros(q + 1)
    return CorrelationTables(q, float(K), float(beta), phi1, phi2, zeros, zeros.copy(),
                             one_body, ecell, dphi1, dphi2, np.exp(log_count).round(),
                             provenance=PROVENANCE_EXACT)


def phi_tables_mc(q: int, K: float, beta: float, steps: int, seed: int,
                  burn_in: int | None = None, thin: int = 1, nbatch: int = 32) -> CorrelationTables:
    """Correlation tables from one free-boundary single-cell Metropolis chain.

    Samples are binned by block sum and pooled with their spin-flipped
    mirror bins. Standard errors are ratio-estimator batch means over
    ``nbatch`` consecutive batches. Bins never visited are NaN; the two
    saturated bins are filled with their deterministic values.
    """
    steps = int(steps)
    burn_in = steps // 10 if burn_in is None else int(burn_in)
    if burn_in < 0 or thin < 1:
        raise ConfigurationError("burn_in must be >= 0 and thin >= 1")
    if steps <= burn_in:
        raise ConfigurationError(f"steps={steps} must exceed burn_in={burn_in}")
    total = _rng.n_retained(steps, burn_in, thin)
    if total < 2 * nbatch:
        raise ConfigurationError(f"only {total} retained samples; need at least {2 * nbatch}")
    gen = _rng.stream(seed, _rng.CELL_MC, q)
    spins = np.where(gen.random(q) < 0.5, -1, 1).astype(np.int8)
    si = spins.astype(np.int64)
    state = np.array([K * float((si[:-1] * si[1:]).sum()), float(si.sum())])
    acc = np.zeros((6, nbatch, q + 1))
    done = rec = 0
    while done < steps:
        n = min(_rng.CHUNK, steps - done)
        sites = gen.integers(0, q, size=n)
        u = gen.random(n)
        first = _rng.record_offset(done, burn_in, thin)
        _, r = kernels.cell_metropolis(spins, float(K), float(beta), sites, u,
                                       first, thin, rec, total, acc, state)
        rec += r
        done += n
    mirror = acc[:, :, ::-1]
    sign = np.array([1, -1, 1, 1, -1, 1])[:, None, None]
    pooled = acc + sign * mirror
    C = pooled[0].sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tot = pooled.sum(axis=1)
        phi1, phi2, ecell = tot[1] / C, tot[2] / C, tot[3] / C
        dphi1 = -(tot[4] / C - phi1 * ecell)
        dphi2 = -(tot[5] / C - phi2 * ecell)

        def batch_err(row, est):
            resid = pooled[row] - est[None, :] * pooled[0]
            return np.sqrt(nbatch / (nbatch - 1) * (resid**2).sum(axis=0)) / C

        err1, err2 = batch_err(1, phi1), batch_err(2, phi2)
        frac = C / (2.0 * total)
        log_z = (q - 1) * math.log(math.cosh(beta * K)) + np.log(frac) - cell_log_prior(q)
        one_body = -log_z / beta
    for arr in (phi1, phi2, ecell, dphi1, dphi2, err1, err2, one_body):
        arr[C == 0] = np.nan
    sat = _saturated(q, K)
    for end, sign1 in ((0, -1.0), (q, 1.0)):
        phi1[end], phi2[end] = sign1, sat["phi2"]
        err1[end] = err2[end] = dphi1[end] = dphi2[end] = 0.0
        ecell[end] = sat["energy"]
        one_body[end] = sat["energy"]
    return CorrelationTables(q, float(K), float(beta), phi1, phi2, err1, err2, one_body,
                             ecell, dphi1, dphi2, C / 2.0, provenance=PROVENANCE_MC,
                             steps=steps, seed=int(seed),
                             extra={"burn_in": burn_in, "thin": thin, "nbatch": nbatch})


def default_tables(q: int, K: float, beta: float, steps: int | None = None,
                   seed: int = 0) -> CorrelationTables:
    """Exact tables up to ``q = 16``, inverse Monte Carlo above."""
    if q <= EXACT_TABLE_DEFAULT_MAX_Q:
        return phi_tables_exact(q, K, beta)
    return phi_tables_mc(q, K, beta, steps or 200_000 * q, seed)


# ---------------------------------------------------------------------------
# short-range potentials

def one_body_potential(eta: int, q: int, K: float, beta: float) -> float:
    """Free-boundary single-cell coarse energy ``-1/beta log Z_cell(eta; free, free)``."""
    z = cell_partition_function(eta, FREE, ModelSpec.create(K, beta), q)
    return -math.log(z) / beta


def _bracket(p_l, p_m, s_m, p_r, lam):
    return 1.0 - lam * p_l * p_m - lam * p_m * p_r + lam * lam * p_l * s_m * p_r


def three_body_potential(eta_left: int, eta_mid: int, eta_right: int,
                         tables: CorrelationTables, lam: float, a: float,
                         beta: float) -> float:
    """Interaction-only three-cell coarse potential from the correlation tables."""
    pl, pm, pr = (tables.phi1_at(e) for e in (eta_left, eta_mid, eta_right))
    sm = tables.phi2_at(eta_mid)
    br = _bracket(pl, pm, sm, pr, lam)
    if not br > 0.0:
        raise SingularityError(
            f"three-body log argument {br!r} <= 0 at eta=({eta_left}, {eta_mid}, {eta_right}), "
            f"lambda={lam!r}"
        )
    return -2.0 * math.log(a) / beta - math.log(br) / beta


def _three_body_tables(tables: CorrelationTables, lam: float, a: float, beta: float, K: float):
    """``V3`` and ``d(beta V3)/d beta`` over all up-count triples, flattened."""
    p1 = tables.phi1
    p2 = tables.phi2
    pl, pm, pr = p1[:, None, None], p1[None, :, None], p1[None, None, :]
    sm = p2[None, :, None]
    br = _bracket(pl, pm, sm, pr, lam)
    bad = br <= 0.0
    if np.any(bad):
        i, j, k = (int(x[0]) for x in np.nonzero(bad))
        q = tables.q
        raise SingularityError(
            f"three-body log argument <= 0 at eta=({2 * i - q}, {2 * j - q}, {2 * k - q})"
        )
    v3 = -2.0 * math.log(a) / beta - np.log(br) / beta
    d1 = tables.dphi1
    d2 = tables.dphi2
    dl, dm, dr = d1[:, None, None], d1[None, :, None], d1[None, None, :]
    dsm = d2[None, :, None]
    dlam = K * (1.0 - lam * lam)
    dbr = (-dlam * (pl * pm + pm * pr)
           - lam * (dl * pm + pl * dm + dm * pr + pm * dr)
           + 2.0 * lam * dlam * pl * sm * pr
           + lam * lam * (dl * sm * pr + pl * dsm * pr + pl * sm * dr))
    dv3 = -2.0 * K * lam - dbr / br
    return np.ascontiguousarray(v3.ravel()), np.ascontiguousarray(dv3.ravel())


@dataclass(frozen=True)
class CoarseHamiltonian:
    """Assembled zeroth-order coarse Hamiltonian (immutable, shareable)."""

    q: int
    K: float
    beta: float
    tables: CorrelationTables
    kernel: Optional[CoarseLongRangeKernel]
    lam: float
    a: float
    b: float  # sinh(beta K); does not enter the closed form
    one_body: np.ndarray
    v3: np.ndarray
    e1: np.ndarray
    dv3: np.ndarray

    @property
    def jprof(self) -> np.ndarray:
        if self.kernel is None:
            return np.zeros(0)
        return self.kernel.trimmed()


def build_coarse_hamiltonian(model: ModelSpec, geo: LatticeGeometry,
                             tables: CorrelationTables | None = None) -> CoarseHamiltonian:
    K, beta = model.K, model.beta
    if tables is None:
        tables = default_tables(geo.q, K, beta)
    if tables.q != geo.q or not (np.isclose(tables.K, K) and np.isclose(tables.beta, beta)):
        raise ConfigurationError(
            f"tables (q={tables.q}, K={tables.K}, beta={tables.beta}) do not match "
            f"the model (q={geo.q}, K={K}, beta={beta})"
        )
    lam, a, b = math.tanh(beta * K), math.cosh(beta * K), math.sinh(beta * K)
    v3, dv3 = _three_body_tables(tables, lam, a, beta, K)
    kernel = build_coarse_kernel(model, geo) if model.long is not None else None
    return CoarseHamiltonian(geo.q, K, beta, tables, kernel, lam, a, b,
                             np.ascontiguousarray(tables.one_body, dtype=float), v3,
                             np.ascontiguousarray(tables.ecell, dtype=float), dv3)


def _short_terms(n: np.ndarray, geo: LatticeGeometry, one: np.ndarray, tri: np.ndarray):
    q1 = geo.q + 1
    even = np.arange(0, geo.M, 2)
    idx = (n[..., (even - 1) % geo.M] * q1 + n[..., even]) * q1 + n[..., (even + 1) % geo.M]
    vals = tri[idx]
    ones = one[n]
    missing = np.isnan(vals).any() or np.isnan(ones).any()
    return ones.sum(axis=-1) + vals.sum(axis=-1), missing


def _raise_coverage(n: np.ndarray, cgh: CoarseHamiltonian):
    bad = sorted({int(2 * x - cgh.q) for x in np.unique(n) if not cgh.tables.present[x]})
    raise CoverageError(f"correlation bins {bad} were never sampled", bins=bad)


def h_cg0(eta, cgh: CoarseHamiltonian, geo: LatticeGeometry):
    """Zeroth-order coarse Hamiltonian: long-range form + one-body + even-cell three-body."""
    e = as_blocks(eta, geo)
    n = (e + geo.q) // 2
    total, missing = _short_terms(n, geo, cgh.one_body, cgh.v3)
    if missing:
        _raise_coverage(n, cgh)
    if cgh.kernel is not None:
        total = total + h_cg_long(e, cgh.kernel, geo)
    return float(total) if np.ndim(total) == 0 else total


def energy_estimator(eta, cgh: CoarseHamiltonian, geo: LatticeGeometry):
    """``d(beta H0)/d beta`` at fixed ``eta``.

    Its average under the coarse measure equals ``-d log Zbar0/d beta``, the
    coarse-level counterpart of the microscopic mean energy.
    """
    e = as_blocks(eta, geo)
    n = (e + geo.q) // 2
    total, missing = _short_terms(n, geo, cgh.e1, cgh.dv3)
    if missing:
        _raise_coverage(n, cgh)
    if cgh.kernel is not None:
        total = total + h_cg_long(e, cgh.kernel, geo)
    return float(total) if np.ndim(total) == 0 else total


def h_cg0_delta(eta, k: int, new_value: int, cgh: CoarseHamiltonian,
                geo: LatticeGeometry) -> float:
    """``h_cg0(eta') - h_cg0(eta)`` for a single-cell change, from local terms only."""
    e = as_blocks(eta, geo)
    k %= geo.M
    new_value = check_block_value(new_value, geo.q)
    n = np.ascontiguousarray((e + geo.q) // 2)
    err = np.zeros(4, dtype=np.int64)
    dh, _ = _cg_delta(n, geo.M, geo.q, k, (new_value + geo.q) // 2, cgh.one_body, cgh.v3,
                      cgh.e1, cgh.dv3, cgh.jprof, cgh.jprof.shape[0], err)
    if err[0]:
        _raise_coverage(np.append(n, (new_value + geo.q) // 2), cgh)
    return float(dh)


def h_cg0_three_cell_form(eta, model: ModelSpec, geo: LatticeGeometry) -> float:
    """Same short-range energy arranged as full three-cell free energies on
    even cells, straight from the enumeration oracle.

    Each odd cell sits in two even-centred triples, so its one-body term is
    subtracted once. Cross-check only; agrees with :func:`h_cg0` built from
    exact tables.
    """
    e = as_blocks(eta, geo)
    q, M, beta = geo.q, geo.M, model.beta
    total = 0.0
    for k in range(1, M, 2):
        total -= one_body_potential(int(e[k]), q, model.K, beta)
    for k in range(0, M, 2):
        z3 = three_cell_partition_function(int(e[k - 1]), int(e[k]), int(e[(k + 1) % M]), model, q)
        total += -math.log(z3) / beta
    if model.long is not None:
        total += h_cg_long(e, build_coarse_kernel(model, geo), geo)
    return total


def coarse_log_weights(cgh: CoarseHamiltonian, geo: LatticeGeometry, etas: np.ndarray) -> np.ndarray:
    """Unnormalised ``log(exp(-beta H0) Pbar)`` for a batch of coarse states."""
    lp = cell_log_prior(geo.q)
    return -cgh.beta * np.asarray(h_cg0(etas, cgh, geo)) + lp[(etas + geo.q) // 2].sum(axis=-1)


__all__ = [
    "CoarseLongRangeKernel", "CorrelationTables", "CoarseHamiltonian",
    "build_coarse_kernel", "h_cg_long", "phi_tables_exact", "phi_tables_mc",
    "default_tables", "one_body_potential", "three_body_potential",
    "build_coarse_hamiltonian", "h_cg0", "h_cg0_delta", "energy_estimator",
    "h_cg0_three_cell_form", "coarse_log_weights", "replace",
]
