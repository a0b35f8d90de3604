import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgmc.errors import CapacityError, ConfigurationError, DomainError
from cgmc.lattice import (
    LatticeGeometry,
    all_coarse_configs,
    all_spin_configs,
    as_blocks,
    as_spins,
    cell_configs,
    cell_log_prior,
    coarse_map,
    coarse_prior_log_weight,
    enumerate_cell_configs,
)


@pytest.mark.parametrize("N,q", [(0, 1), (8, 0), (9, 2), (6, 2), (12, 4)])
def test_geometry_rejects_bad_shapes(N, q):
    with pytest.raises(ConfigurationError):
        LatticeGeometry(N, q)


def test_geometry_cells_and_distance():
    geo = LatticeGeometry(12, 3)
    assert geo.M == 4
    assert geo.cell(1) == slice(3, 6)
    assert geo.cell(5) == geo.cell(1)
    assert geo.distance(0, 11) == 1
    assert geo.distance(2, 8) == 6
    assert LatticeGeometry.from_cells(4, 3) == geo


def test_as_spins_validates():
    geo = LatticeGeometry(4, 2)
    with pytest.raises(DomainError):
        as_spins([1, 0, 1, -1], geo)
    with pytest.raises(ConfigurationError):
        as_spins([1, 1, 1], geo)
    assert as_spins([1, -1, 1, -1], geo).dtype == np.int8


def test_as_blocks_validates():
    geo = LatticeGeometry(8, 2)
    with pytest.raises(DomainError):
        as_blocks([1, 0, 0, 0], geo)
    with pytest.raises(DomainError):
        as_blocks([4, 0, 0, 0], geo)
    with pytest.raises(DomainError):
        as_blocks([0.5, 0, 0, 0], geo)
    assert as_blocks([2.0, 0, -2, 0], geo).tolist() == [2, 0, -2, 0]


@pytest.mark.parametrize("q", range(1, 8))
def test_cell_configs_count_and_sum(q):
    for eta in range(-q, q + 1, 2):
        c = cell_configs(q, eta)
        assert len(c) == math.comb(q, (q + eta) // 2)
        assert np.all(c.sum(axis=1) == eta)
        assert len({tuple(r) for r in c}) == len(c)
        assert [tuple(r) for r in c] == list(enumerate_cell_configs(q, eta))


def test_cell_configs_cap():
    with pytest.raises(CapacityError):
        cell_configs(6, 0, cap=5)


def test_cell_log_prior_is_binomial():
    for q in (1, 3, 6):
        p = np.exp(cell_log_prior(q))
        assert p.sum() == pytest.approx(1.0, abs=1e-14)
        assert p[1] == pytest.approx(q / 2**q)


def test_all_spin_configs_order():
    s = all_spin_configs(3)
    assert s[0].tolist() == [1, 1, 1]
    assert s[1].tolist() == [1, 1, -1]
    assert s[-1].tolist() == [-1, -1, -1]
    assert np.array_equal(all_spin_configs(5, 7, 12), all_spin_configs(5)[7:12])


def test_all_coarse_configs_cover_prior():
    geo = LatticeGeometry(8, 2)
    etas = all_coarse_configs(geo)
    assert etas.shape == (81, 4)
    w = np.exp(coarse_prior_log_weight(etas, geo))
    assert w.sum() == pytest.approx(1.0, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([(8, 2), (12, 3), (16, 4), (12, 2)]), st.data())
def test_coarse_map_pushes_uniform_to_prior(shape, data):
    N, q = shape
    geo = LatticeGeometry(N, q)
    sigma = np.array(data.draw(st.lists(st.sampled_from([-1, 1]), min_size=N, max_size=N)))
    eta = coarse_map(sigma, geo)
    assert eta.shape == (geo.M,)
    assert eta.sum() == sigma.sum()
    assert np.all(np.abs(eta) <= q)
    assert np.array_equal(coarse_map(-sigma, geo), -eta)


def test_coarse_map_law_matches_prior():
    geo = LatticeGeometry(8, 2)
    eta = coarse_map(all_spin_configs(8), geo)
    idx = ((eta + 2) // 2) @ (3 ** np.arange(3, -1, -1))
    emp = np.bincount(idx, minlength=81) / 256
    ref = np.exp(coarse_prior_log_weight(all_coarse_configs(geo), geo))
    np.testing.assert_allclose(emp, ref, atol=1e-15)
