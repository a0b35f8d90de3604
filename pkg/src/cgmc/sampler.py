"""Metropolis chains: microscopic spin flips, coarse block updates and the
sum-preserving exchange chain inside one cell.

Random numbers are drawn in chunks from a per-chain Philox stream and handed
to the kernels, so the compiled and pure-Python backends produce the same
chain bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as _rng
from ._backend import kernels
from .cg import CoarseHamiltonian, energy_estimator, h_cg0
from .errors import ConfigurationError, CoverageError
from .lattice import LatticeGeometry, as_blocks, as_spins, cell_log_prior, check_block_value
from .oracle import BoundarySpec
from .potentials import ModelSpec, h_long, h_short, kernel_offsets

BASE_OBSERVABLES = ("magnetization", "energy")
_TWO_POINT = re.compile(r"^two_point\((\d+)\)$")


@dataclass(frozen=True)
class ChainConfig:
    steps: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    observables: tuple = BASE_OBSERVABLES

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be positive, got {self.steps}")
        if not 0 <= self.burn_in < self.steps:
            raise ConfigurationError(f"need 0 <= burn_in < steps, got burn_in={self.burn_in}")
        if self.thin < 1:
            raise ConfigurationError(f"thin must be >= 1, got {self.thin}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "observables", tuple(self.observables))
        for name in self.observables:
            if name not in ("magnetization", "energy", "block_profile", "state") \
                    and not _TWO_POINT.match(name):
                raise ConfigurationError(f"unknown observable {name!r}")

    @property
    def n_samples(self) -> int:
        return _rng.n_retained(self.steps, self.burn_in, self.thin)

    def record_steps(self) -> np.ndarray:
        """Global step index of every retained sample."""
        return self.burn_in + self.thin - 1 + self.thin * np.arange(self.n_samples)

    def to_dict(self) -> dict:
        return {"steps": self.steps, "burn_in": self.burn_in, "thin": self.thin,
                "seed": int(self.seed), "observables": list(self.observables)}


@dataclass
class ObservableStats:
    mean: float
    stderr: float
    tau_int: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "tau_int": self.tau_int, "n": self.n}


@dataclass
class ChainStats:
    """Summary of one chain; ``series`` keeps the retained observable streams."""

    observables: dict
    acceptance_rate: float
    n_samples: int
    config: ChainConfig
    series: dict = field(default_factory=dict, repr=False)
    energy_drift: float = 0.0
    final_state: Optional[np.ndarray] = field(default=None, repr=False)
    kind: str = "micro"

    def __getitem__(self, name: str) -> ObservableStats:
        return self.observables[name]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "acceptance_rate": self.acceptance_rate,
                "n_samples": self.n_samples, "energy_drift": self.energy_drift,
                "chain": self.config.to_dict(),
                "observables": {k: v.to_dict() for k, v in self.observables.items()}}


# ---------------------------------------------------------------------------
# statistics

def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return 1.0
    y = x - x.mean()
    var = y @ y / n
    if var == 0.0:
        return 1.0
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * taus
    m = int(np.argmax(window)) if window.any() else n - 1
    return float(max(taus[m], 1.0))


def batch_means_stderr(x: np.ndarray, nbatch: int = 32) -> float:
    x = np.asarray(x, dtype=float)
    nbatch = min(nbatch, x.size)
    if nbatch < 2:
        return float("nan")
    size = x.size // nbatch
    means = x[: size * nbatch].reshape(nbatch, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(nbatch))


def summarize(x: np.ndarray) -> ObservableStats:
    x = np.asarray(x, dtype=float)
    if x.ndim > 1:  # vector observable: report the cell/site average
        x = x.mean(axis=1)
    return ObservableStats(float(x.mean()), batch_means_stderr(x),
                           integrated_autocorr_time(x), int(x.size))


def _two_point(x: np.ndarray, r: int) -> np.ndarray:
    x = x.astype(float)
    return (x * np.roll(x, -r, axis=1)).mean(axis=1)


def _micro_series(names, snaps: np.ndarray, geo: LatticeGeometry) -> dict:
    out = {}
    for name in names:
        m = _TWO_POINT.match(name)
        if name == "block_profile":
            out[name] = snaps.reshape(len(snaps), geo.M, geo.q).sum(axis=2).astype(float)
        elif name == "state":
            w = np.int64(2) ** np.arange(geo.N - 1, -1, -1, dtype=np.int64)
            out[name] = ((1 - snaps.astype(np.int64)) // 2) @ w
        elif m:
            out[name] = _two_point(snaps, int(m.group(1)))
    return out


def _coarse_series(names, nsnaps: np.ndarray, geo: LatticeGeometry) -> dict:
    eta = 2 * nsnaps - geo.q
    out = {}
    for name in names:
        m = _TWO_POINT.match(name)
        if name == "block_profile":
            out[name] = eta.astype(float)
        elif name == "state":
            w = np.int64(geo.q + 1) ** np.arange(geo.M - 1, -1, -1, dtype=np.int64)
            out[name] = nsnaps @ w
        elif m:
            out[name] = _two_point(eta, int(m.group(1)))
    return out


def _need_snaps(obs) -> bool:
    return any(o not in BASE_OBSERVABLES for o in obs)


def _finish(series: dict) -> dict:
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in series.items()}


# ---------------------------------------------------------------------------
# micro chain

def run_micro_chain(model: ModelSpec, geo: LatticeGeometry, cfg: ChainConfig,
                    init=None) -> ChainStats:
    """Single-spin-flip Metropolis on the full ring.

    Reported magnetization and energy are per site. Extra observables:
    ``block_profile`` (mean block sums), ``two_point(r)`` and ``state``
    (index into the lexicographic state table, small ``N`` only).
    """
    N = geo.N
    gen = _rng.stream(cfg.seed, _rng.MICRO_CHAIN)
    if init is None:
        spins = np.where(gen.random(N) < 0.5, -1, 1).astype(np.int8)
    else:
        spins = as_spins(init, geo).copy()
    offs, wts = kernel_offsets(model, geo)
    state = np.array([h_short(spins, model, geo), h_long(spins, model, geo), float(spins.sum())])
    e0 = state[0] + state[1]
    total = cfg.n_samples
    mag, en = np.zeros(total), np.zeros(total)
    take = _need_snaps(cfg.observables)
    extra = {o: [] for o in cfg.observables if o not in BASE_OBSERVABLES}
    acc = done = rec = 0
    while done < cfg.steps:
        n = min(_rng.CHUNK, cfg.steps - done)
        sites = gen.integers(0, N, size=n)
        u = gen.random(n)
        first = _rng.record_offset(done, cfg.burn_in, cfg.thin)
        cap = max(0, (n - 1 - first) // cfg.thin + 1) if first < n else 0
        snaps = np.zeros((cap if take else 0, N), dtype=np.int8)
        a, r = kernels.micro_metropolis(spins, float(model.K), float(model.beta), offs, wts,
                                        sites, u, first, cfg.thin, mag[rec:], en[rec:],
                                        snaps, take, state)
        if take:
            for k, v in _micro_series(extra, snaps[:r], geo).items():
                extra[k].append(v)
        acc += a
        rec += r
        done += n
    drift = abs((state[0] + state[1] - e0)
                - (h_short(spins, model, geo) + h_long(spins, model, geo) - e0))
    series = {"magnetization": mag / N, "energy": en / N}
    series.update(_finish(extra))
    return ChainStats({k: summarize(series[k]) for k in cfg.observables},
                      acc / cfg.steps, total, cfg, series, float(drift), spins, "micro")


# ---------------------------------------------------------------------------
# coarse chain

def _coverage_error(err, q):
    if err[0] == 1:
        bins = [int(2 * err[1] - q)]
    else:
        bins = sorted({int(2 * x - q) for x in err[1:4]})
    raise CoverageError(f"coarse chain hit unsampled correlation bin(s) eta={bins}", bins=bins)


def run_cg_chain(cgh: CoarseHamiltonian, geo: LatticeGeometry, cfg: ChainConfig,
                 init=None, exchange: bool = False) -> ChainStats:
    """Metropolis chain targeting ``exp(-beta H0(eta)) * prior(eta)``.

    Default moves change one block by +-2; ``exchange=True`` moves two units
    between neighbouring cells and preserves the total. ``energy`` is the
    ``d(beta H0)/d beta`` estimator per site, ``h`` the coarse energy per site.
    """
    q, M, beta = geo.q, geo.M, cgh.beta
    gen = _rng.stream(cfg.seed, _rng.CG_CHAIN)
    if init is None:
        n = gen.binomial(q, 0.5, size=M).astype(np.int64)
    else:
        n = (as_blocks(init, geo) + q) // 2
    n = np.ascontiguousarray(n, dtype=np.int64)
    eta0 = 2 * n - q
    state = np.array([h_cg0(eta0, cgh, geo), energy_estimator(eta0, cgh, geo), float(eta0.sum())])
    h_start = state[0]
    logprior = np.ascontiguousarray(cell_log_prior(q))
    jprof = cgh.jprof
    total = cfg.n_samples
    mag, hh, est = np.zeros(total), np.zeros(total), np.zeros(total)
    take = _need_snaps(cfg.observables)
    extra = {o: [] for o in cfg.observables if o not in BASE_OBSERVABLES}
    err = np.zeros(4, dtype=np.int64)
    acc = done = rec = 0
    while done < cfg.steps:
        m = min(_rng.CHUNK, cfg.steps - done)
        cells = gen.integers(0, M, size=m)
        dirs = gen.integers(0, 2, size=m)
        u = gen.random(m)
        first = _rng.record_offset(done, cfg.burn_in, cfg.thin)
        cap = max(0, (m - 1 - first) // cfg.thin + 1) if first < m else 0
        snaps = np.zeros((cap if take else 0, M), dtype=np.int64)
        a, r, did = kernels.cg_metropolis(n, q, float(beta), logprior, cgh.one_body, cgh.v3,
                                          cgh.e1, cgh.dv3, jprof, 1 if exchange else 0,
                                          cells, dirs, u, first, cfg.thin, mag[rec:], hh[rec:],
                                          est[rec:], snaps, take, state, err)
        if err[0]:
            _coverage_error(err, q)
        if take:
            for k, v in _coarse_series(extra, snaps[:r], geo).items():
                extra[k].append(v)
        acc += a
        rec += r
        done += m
    eta = 2 * n - q
    drift = abs((state[0] - h_start) - (h_cg0(eta, cgh, geo) - h_start))
    series = {"magnetization": mag / geo.N, "energy": est / geo.N, "h": hh / geo.N}
    series.update(_finish(extra))
    names = tuple(cfg.observables) + ("h",)
    return ChainStats({k: summarize(series[k]) for k in names}, acc / cfg.steps,
                      total, cfg, series, float(drift), eta, "cg")


# ---------------------------------------------------------------------------
# constrained single-cell chain

def boundary_log_weights(bc: BoundarySpec, K: float, beta: float):
    """End weights ``g[(s+1)/2] = -beta K b s`` for a fixed neighbour spin ``b``."""
    s = np.array([-1.0, 1.0])
    gl = np.zeros(2) if bc.left is None else -beta * K * bc.left * s
    gr = np.zeros(2) if bc.right is None else -beta * K * bc.right * s
    return gl, gr


def exchange_chain(spins: np.ndarray, K: float, beta: float, gl, gr, cfg: ChainConfig,
                   gen: np.random.Generator) -> np.ndarray:
    """Run the exchange kernel on ``spins`` in place; returns retained snapshots."""
    q = spins.shape[0]
    gl = np.ascontiguousarray(gl, dtype=float)
    gr = np.ascontiguousarray(gr, dtype=float)
    out = np.zeros((cfg.n_samples, q), dtype=np.int8)
    done = rec = 0
    while done < cfg.steps:
        n = min(_rng.CHUNK, cfg.steps - done)
        ua, ub, u = gen.random(n), gen.random(n), gen.random(n)
        first = _rng.record_offset(done, cfg.burn_in, cfg.thin)
        _, r = kernels.kawasaki_cell(spins, float(K), float(beta), gl, gr, ua, ub, u,
                                     first, cfg.thin, out[rec:])
        rec += r
        done += n
    return out


def run_constrained_cell_chain(q: int, eta: int, bc: BoundarySpec, model: ModelSpec,
                               cfg: ChainConfig) -> np.ndarray:
    """Samples of one cell with fixed block sum ``eta``, shape ``(n_samples, q)``.

    Targets ``exp(-beta [H_cell + W_left + W_right])`` on the slice. At
    ``eta = +-q`` the slice is a single configuration.
    """
    eta = check_block_value(eta, q)
    gen = _rng.stream(cfg.seed, _rng.CELL_EXCHANGE, q, eta + q)
    spins = -np.ones(q, dtype=np.int8)
    spins[gen.permutation(q)[: (eta + q) // 2]] = 1
    gl, gr = boundary_log_weights(bc, model.K, model.beta)
    return exchange_chain(spins, model.K, model.beta, gl, gr, cfg, gen)


# ---------------------------------------------------------------------------
# exact transition matrices for detailed-balance checks

def metropolis_matrix(log_target: np.ndarray, proposal: np.ndarray) -> np.ndarray:
    """Metropolis kernel for a symmetric proposal matrix; rejections on the diagonal."""
    lt = np.asarray(log_target, dtype=float)
    ratio = np.exp(np.minimum(0.0, lt[None, :] - lt[:, None]))
    P = proposal * ratio
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices_from(P)] = 1.0 - P.sum(axis=1)
    return P


def exchange_proposal(states: np.ndarray) -> np.ndarray:
    """Proposal matrix of the exchange move on a list of slice configurations."""
    states = np.asarray(states)
    n = len(states)
    npl = (states[0] > 0).sum()
    nmi = states.shape[1] - npl
    P = np.zeros((n, n))
    if npl == 0 or nmi == 0:
        return np.eye(n)
    diff = (states[:, None, :] != states[None, :, :]).sum(axis=2)
    P[diff == 2] = 1.0 / (npl * nmi)
    return P


def block_flip_proposal(etas: np.ndarray, q: int) -> np.ndarray:
    """Proposal matrix of the +-2 block move, out-of-range moves folded into the diagonal."""
    etas = np.asarray(etas)
    M = etas.shape[1]
    d = etas[None, :, :] - etas[:, None, :]
    one = (np.abs(d).sum(axis=2) == 2) & ((d != 0).sum(axis=2) == 1)
    P = one / (2.0 * M)
    P[np.diag_indices_from(P)] += 1.0 - P.sum(axis=1)
    return P


def detailed_balance_residual(log_target: np.ndarray, P: np.ndarray) -> float:
    pi = np.exp(log_target - np.max(log_target))
    pi /= pi.sum()
    F = pi[:, None] * P
    return float(np.abs(F - F.T).max())


# ---------------------------------------------------------------------------
# output

def config_echo_lines(echo: str | None):
    return [f"# {ln}" for ln in (echo or "").splitlines()]


def stream_csv(stats: ChainStats, echo: str | None = None) -> str:
    """Retained scalar streams as CSV text (``step`` plus one column per observable)."""
    buf = io.StringIO()
    for ln in config_echo_lines(echo):
        buf.write(ln + "\n")
    names = [k for k in stats.series if np.ndim(stats.series[k]) == 1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + names)
    steps = stats.config.record_steps()
    cols = [stats.series[k] for k in names]
    for i, s in enumerate(steps):
        w.writerow([int(s)] + [repr(float(c[i])) if c.dtype.kind == "f" else int(c[i])
                               for c in cols])
    return buf.getvalue()


def summary_json(stats: ChainStats, echo: dict | None = None) -> str:
    d = stats.to_dict()
    if echo is not None:
        d["config"] = echo
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


__all__ = [
    "ChainConfig", "ChainStats", "ObservableStats", "run_micro_chain", "run_cg_chain",
    "run_constrained_cell_chain", "exchange_chain", "boundary_log_weights",
    "integrated_autocorr_time", "batch_means_stderr", "summarize",
    "metropolis_matrix", "exchange_proposal", "block_flip_proposal",
    "detailed_balance_residual", "stream_csv", "summary_json",
]
