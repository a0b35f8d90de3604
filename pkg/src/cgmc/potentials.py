"""Microscopic Hamiltonian: nearest-neighbour part plus a Kac-type kernel.

Sign convention: the short-range energy is ``+K * sum sigma(x) sigma(x+1)``,
so ``K < 0`` is ferromagnetic. The long-range energy is
``-1/2 sum_x sum_{y != x} J(|x-y|) sigma(x) sigma(y)`` with
``J(r) = V(r/L)/L`` on the minimal-image distance. Energies are stored
without the inverse temperature; ``beta`` only enters Boltzmann factors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .lattice import LatticeGeometry, as_spins

KERNEL_SHAPES = ("constant", "triangular", "smooth")


def _v_constant(r):
    return np.where(r <= 1.0, 1.0, 0.0)


def _v_triangular(r):
    return np.where(r <= 1.0, 1.0 - r, 0.0)


def _v_smooth(r):
    return np.where(r <= 1.0, (1.0 - r * r) ** 2, 0.0)


_SHAPES = {
    "constant": (_v_constant, 0.0),
    "triangular": (_v_triangular, 1.0),
    # |d/dr (1-r^2)^2| = 4r(1-r^2), maximal at r = 1/sqrt(3)
    "smooth": (_v_smooth, 8.0 / (3.0 * math.sqrt(3.0))),
}


@dataclass(frozen=True)
class ShortRangeModel:
    K: float
    S: int = 1

    def __post_init__(self):
        if self.S != 1:
            raise ConfigurationError("only nearest-neighbour coupling (S=1) is supported")
        object.__setattr__(self, "K", float(self.K))

    @property
    def norm(self) -> float:
        return abs(self.K)


@dataclass(frozen=True)
class LongRangeModel:
    kernel_shape: str
    L: int

    def __post_init__(self):
        if self.kernel_shape not in _SHAPES:
            raise ConfigurationError(
                f"unknown kernel shape {self.kernel_shape!r}; choose from {KERNEL_SHAPES}"
            )
        if int(self.L) < 1:
            raise ConfigurationError(f"kernel range L must be >= 1, got {self.L}")
        object.__setattr__(self, "L", int(self.L))

    @property
    def grad_bound(self) -> float:
        """Analytic ``sup |V'|`` on the support."""
        return _SHAPES[self.kernel_shape][1]

    def V(self, r):
        return _SHAPES[self.kernel_shape][0](np.asarray(r, dtype=float))

    def J(self, r):
        """Pair coupling at integer distance ``r``; zero at ``r = 0`` and beyond ``L``."""
        r = np.asarray(r, dtype=float)
        out = self.V(r / self.L) / self.L
        return np.where((r >= 1) & (r <= self.L), out, 0.0)


@dataclass(frozen=True)
class ModelSpec:
    short: ShortRangeModel
    long: Optional[LongRangeModel] = None
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def create(cls, K: float, beta: float = 1.0, kernel: str | None = None,
               L: int | None = None) -> "ModelSpec":
        long = None
        if kernel not in (None, "none"):
            if L is None:
                raise ConfigurationError("a long-range kernel needs a range L")
            long = LongRangeModel(kernel, L)
        return cls(ShortRangeModel(K), long, beta)

    @property
    def K(self) -> float:
        return self.short.K

    def with_(self, **kw) -> "ModelSpec":
        """Copy with ``K``, ``beta``, ``kernel`` or ``L`` replaced."""
        K = kw.pop("K", self.K)
        beta = kw.pop("beta", self.beta)
        kernel = kw.pop("kernel", self.long.kernel_shape if self.long else None)
        L = kw.pop("L", self.long.L if self.long else None)
        if kw:
            raise TypeError(f"unexpected fields {sorted(kw)}")
        return ModelSpec.create(K, beta, kernel, L)


def kernel_profile(model: ModelSpec, geo: LatticeGeometry) -> np.ndarray:
    """``J`` at minimal-image distances ``0..N//2`` (zeros without a kernel)."""
    r = np.arange(geo.N // 2 + 1)
    if model.long is None:
        return np.zeros(r.size)
    return model.long.J(r)


def kernel_matrix(model: ModelSpec, geo: LatticeGeometry) -> np.ndarray:
    x = np.arange(geo.N)
    return kernel_profile(model, geo)[geo.distance(x[:, None], x[None, :])]


def kernel_offsets(model: ModelSpec, geo: LatticeGeometry):
    """Signed site offsets with nonzero coupling, and their weights.

    Each other site ``y`` appears exactly once, so the antipode at ``N/2``
    is listed a single time.
    """
    prof = kernel_profile(model, geo)
    offs, wts = [], []
    for d in range(1, geo.N // 2 + 1):
        if prof[d] == 0.0:
            continue
        offs.append(d)
        wts.append(prof[d])
        if 2 * d != geo.N:
            offs.append(-d)
            wts.append(prof[d])
    return np.array(offs, dtype=np.int64), np.array(wts, dtype=np.float64)


def h_short(sigma, model: ModelSpec, geo: LatticeGeometry):
    s = as_spins(sigma, geo).astype(np.int64)
    out = model.K * (s * np.roll(s, -1, axis=-1)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def h_long(sigma, model: ModelSpec, geo: LatticeGeometry):
    s = as_spins(sigma, geo).astype(np.float64)
    if model.long is None:
        out = np.zeros(s.shape[:-1])
    else:
        out = -0.5 * np.einsum("...x,...x->...", s @ kernel_matrix(model, geo), s)
    return float(out) if np.ndim(out) == 0 else out


def h_total(sigma, model: ModelSpec, geo: LatticeGeometry):
    return h_short(sigma, model, geo) + h_long(sigma, model, geo)


def cell_energy(sigma, k: int, model: ModelSpec, geo: LatticeGeometry):
    """Energy of the ``q-1`` bonds inside cell ``k`` (free boundaries)."""
    s = as_spins(sigma, geo)[..., geo.cell(k)].astype(np.int64)
    out = model.K * (s[..., :-1] * s[..., 1:]).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def interface_energy(sigma, k: int, model: ModelSpec, geo: LatticeGeometry):
    """The single bond joining the last site of cell ``k`` to cell ``k+1``."""
    s = as_spins(sigma, geo).astype(np.int64)
    x = (k % geo.M) * geo.q + geo.q - 1
    out = model.K * s[..., x] * s[..., (x + 1) % geo.N]
    return float(out) if np.ndim(out) == 0 else out


def split_kernel(total_kernel, cutoff_radius: float):
    """Split a distance profile into ``r <= cutoff`` and ``r > cutoff`` parts.

    ``total_kernel`` is indexed by integer distance (e.g. the output of
    :func:`kernel_profile`). The two parts sum back to the input exactly.
    """
    if cutoff_radius < 0:
        raise ConfigurationError("cutoff radius must be nonnegative")
    total = np.asarray(total_kernel, dtype=float)
    r = np.arange(total.shape[-1])
    near = r <= cutoff_radius
    return np.where(near, total, 0.0), np.where(near, 0.0, total)
