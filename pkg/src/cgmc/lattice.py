"""Periodic 1-D lattice, coarse cells and the block-sum map.

Sites are ``0..N-1``; cell ``k`` holds sites ``k*q .. k*q+q-1``. Block
variables are stored either as block sums ``eta`` (values ``-q..q`` step 2)
or as up-spin counts ``n = (eta + q) // 2``; the latter is what the kernels
use as table indices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy.special import gammaln

from .errors import CapacityError, ConfigurationError, DomainError

CELL_ENUMERATION_CAP = 24


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic chain of ``N`` sites split into ``M`` cells of ``q`` sites."""

    N: int
    q: int
    M: int = field(init=False)

    def __post_init__(self):
        N, q = int(self.N), int(self.q)
        if N <= 0 or q <= 0:
            raise ConfigurationError(f"N and q must be positive, got N={N}, q={q}")
        if N % q:
            raise ConfigurationError(f"N={N} is not a multiple of q={q}")
        M = N // q
        if M % 2:
            raise ConfigurationError(
                f"number of cells M=N/q={M} must be even (odd/even cell split)"
            )
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "M", M)

    @classmethod
    def from_cells(cls, M: int, q: int) -> "LatticeGeometry":
        return cls(M * q, q)

    @property
    def Q(self) -> int:
        return self.q

    def cell(self, k: int) -> slice:
        k %= self.M
        return slice(k * self.q, (k + 1) * self.q)

    def distance(self, x, y):
        """Minimal-image distance between sites (vectorised)."""
        d = np.abs(np.asarray(x) - np.asarray(y)) % self.N
        return np.minimum(d, self.N - d)


def as_spins(sigma, geo: LatticeGeometry) -> np.ndarray:
    """Validate a spin configuration (or a batch of them) as an int8 array."""
    s = np.asarray(sigma)
    if s.shape[-1:] != (geo.N,):
        raise ConfigurationError(f"expected {geo.N} spins, got shape {s.shape}")
    if not np.all((s == 1) | (s == -1)):
        raise DomainError("spins must be exactly -1 or +1")
    return s.astype(np.int8, copy=False)


def as_blocks(eta, geo: LatticeGeometry) -> np.ndarray:
    """Validate a coarse configuration (or batch) and return it as int64."""
    e = np.asarray(eta)
    if e.shape[-1:] != (geo.M,):
        raise ConfigurationError(f"expected {geo.M} block values, got shape {e.shape}")
    if not np.issubdtype(e.dtype, np.integer):
        if not np.all(e == np.round(e)):
            raise DomainError("block values must be integers")
    e = e.astype(np.int64)
    q = geo.q
    if np.any(np.abs(e) > q) or np.any((e + q) % 2):
        raise DomainError(f"block values must lie in {{-{q}, -{q}+2, ..., {q}}}, got {e}")
    return e


def check_block_value(eta: int, q: int) -> int:
    eta = int(eta)
    if abs(eta) > q or (eta + q) % 2:
        raise DomainError(f"block value {eta} not admissible for q={q}")
    return eta


def coarse_map(sigma, geo: LatticeGeometry) -> np.ndarray:
    """Block sums ``eta(k)`` over each cell; accepts a batch along axis 0."""
    s = as_spins(sigma, geo)
    return s.reshape(s.shape[:-1] + (geo.M, geo.q)).sum(axis=-1, dtype=np.int64)


def block_values(q: int) -> np.ndarray:
    return np.arange(-q, q + 1, 2)


def cell_log_prior(q: int) -> np.ndarray:
    """``log P_k(eta)`` indexed by up-count ``n = (eta + q)/2``."""
    n = np.arange(q + 1)
    return gammaln(q + 1) - gammaln(n + 1) - gammaln(q - n + 1) - q * np.log(2.0)


def coarse_prior_log_weight(eta, geo: LatticeGeometry):
    """Natural log of the product binomial prior of ``eta`` (batch-aware)."""
    e = as_blocks(eta, geo)
    lp = cell_log_prior(geo.q)
    out = lp[(e + geo.q) // 2].sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _check_cap(q: int, cap: int | None):
    cap = CELL_ENUMERATION_CAP if cap is None else cap
    if q > cap:
        raise CapacityError(f"cell enumeration with q={q} exceeds cap {cap}")


def enumerate_cell_configs(q: int, eta: int, cap: int | None = None) -> Iterator[tuple]:
    """Yield every length-``q`` spin tuple whose sum is ``eta``."""
    _check_cap(q, cap)
    eta = check_block_value(eta, q)
    n_down = (q - eta) // 2
    for pos in itertools.combinations(range(q), n_down):
        s = [1] * q
        for p in pos:
            s[p] = -1
        yield tuple(s)


@lru_cache(maxsize=256)
def _cell_configs_cached(q: int, eta: int) -> np.ndarray:
    arr = np.array(list(enumerate_cell_configs(q, eta, cap=q)), dtype=np.int8)
    arr.setflags(write=False)
    return arr.reshape(-1, q)


def cell_configs(q: int, eta: int, cap: int | None = None) -> np.ndarray:
    """All constrained cell configurations as a read-only ``(count, q)`` array."""
    _check_cap(q, cap)
    return _cell_configs_cached(int(q), check_block_value(eta, q))


def all_spin_configs(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows ``start..stop-1`` of the lexicographic table of ``{-1,+1}^n``.

    Row ``i`` has spin ``+1`` at site ``j`` when bit ``n-1-j`` of ``i`` is 0,
    so row 0 is all ``+1``.
    """
    stop = 2**n if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1, dtype=np.int64)) & 1
    return (1 - 2 * bits).astype(np.int8)


def all_coarse_configs(geo: LatticeGeometry) -> np.ndarray:
    """Every admissible ``eta`` as an ``((q+1)^M, M)`` array."""
    vals = block_values(geo.q)
    grids = np.meshgrid(*([vals] * geo.M), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)
