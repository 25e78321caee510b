"""Truth-set generators: structure, perturbation bookkeeping, reproducibility."""

import numpy as np
import pytest

from grangervae.errors import ConfigurationError
from grangervae.graphgen import (
    gen_linear_var, gen_lorenz96, gen_lv, gen_nonlinear_var, gen_springs,
    nonlinear_parent_sets,
)


def spectral_radius(a):
    return np.max(np.abs(np.linalg.eigvals(a)))


# -- linear VAR ------------------------------------------------------------------

def test_linear_var_spectral_radius_exact():
    ts = gen_linear_var(10, 5, rho=0.5, rng=np.random.default_rng(0))
    for mat in [ts.common] + ts.entities:
        assert abs(spectral_radius(mat) - 0.5) < 1e-9


def test_linear_var_zero_relocation_identical_entities():
    ts = gen_linear_var(8, 4, relocate_frac=0.0, rng=np.random.default_rng(1))
    for z in ts.entities:
        assert np.array_equal(z, ts.entities[0])
    assert np.array_equal(ts.common, ts.entities[0])


def test_linear_var_relocation_bookkeeping():
    ts = gen_linear_var(10, 5, density=0.2, relocate_frac=0.2,
                        rng=np.random.default_rng(2))
    moved = ts.meta["relocated"]
    assert len(moved) > 0
    for (i, j) in moved:
        assert ts.common[i, j] == 0.0
        for z in ts.entities:
            assert z[i, j] == 0.0
    # relocated mass shows up somewhere off the original support
    base_support = np.abs(ts.common) > 0
    for z in ts.entities:
        extra = (np.abs(z) > 0) & ~base_support
        assert extra.sum() == len(moved)


def test_linear_var_support_relation():
    ts = gen_linear_var(10, 5, density=0.15, rng=np.random.default_rng(3))
    common_support = np.abs(ts.common) > 0
    for z in ts.entities:
        on_common = (np.abs(z) > 0) & common_support
        assert np.array_equal(on_common, common_support)  # backbone kept


def test_linear_var_reproducible():
    a = gen_linear_var(8, 3, rng=np.random.default_rng(42))
    b = gen_linear_var(8, 3, rng=np.random.default_rng(42))
    assert np.array_equal(a.common, b.common)
    for x, y in zip(a.entities, b.entities):
        assert np.array_equal(x, y)


def test_linear_var_rejects_bad_params():
    with pytest.raises(ConfigurationError):
        gen_linear_var(5, 2, density=0.0)
    with pytest.raises(ConfigurationError):
        gen_linear_var(5, 2, rho=1.5)


# -- nonlinear VAR ----------------------------------------------------------------

def test_nonlinear_var_row_structure():
    ts = gen_nonlinear_var(10, 5, rng=np.random.default_rng(4))
    for z in ts.entities:
        for i in range(1, 9):
            assert z[i].sum() == 3          # interior rows: 3 parents
            assert z[i, i] == 1.0
        assert z[0].sum() == 2 and z[0, 0] == 1 and z[0, 1] == 1
        assert z[9].sum() == 2 and z[9, 9] == 1 and z[9, 8] == 1


def test_nonlinear_var_fix_everything_homogeneous():
    ts = gen_nonlinear_var(10, 4, fix_rule="all", rng=np.random.default_rng(5))
    for z in ts.entities:
        assert np.array_equal(z, ts.entities[0])
    assert np.array_equal(ts.common, ts.entities[0])


def test_nonlinear_var_fixed_rows_keep_band():
    ts = gen_nonlinear_var(12, 6, fix_rule="every_third_row",
                           rng=np.random.default_rng(6))
    for z in ts.entities:
        for i in (2, 5, 8):  # rows 3, 6, 9 one-indexed
            assert z[i, i - 1] == 1 and z[i, i] == 1 and z[i, i + 1] == 1


def test_nonlinear_var_common_is_intersection():
    ts = gen_nonlinear_var(12, 6, rng=np.random.default_rng(7))
    inter = np.ones_like(ts.common)
    for z in ts.entities:
        inter = inter * z
    assert np.array_equal(ts.common, inter)


def test_nonlinear_parent_sets_ordering():
    ts = gen_nonlinear_var(8, 1, rng=np.random.default_rng(8))
    parents = nonlinear_parent_sets(ts.entities[0])
    for i in range(1, 7):
        k1, k2, k3 = parents[i]
        assert k1 < k2 == i < k3


def test_nonlinear_parent_sets_rejects_malformed():
    z = np.zeros((6, 6))
    z[0, 0] = z[0, 1] = 1
    z[5, 5] = z[5, 4] = 1
    for i in range(1, 5):
        z[i, i] = 1.0   # missing off-diagonal parents
    with pytest.raises(ConfigurationError):
        nonlinear_parent_sets(z)


def test_nonlinear_var_needs_four_nodes():
    with pytest.raises(ConfigurationError):
        gen_nonlinear_var(3, 2)


# -- Lotka-Volterra -----------------------------------------------------------------

def test_lv_block_structure():
    ts = gen_lv(20, 10, extra_edges=0, rng=np.random.default_rng(9))
    for z in ts.entities:
        assert np.array_equal(z, ts.common)
    # 5 decoupled blocks of 2 preys + 2 predators
    assert ts.meta["blocks"] == 5
    half = 10
    for b in range(5):
        for i in (2 * b, 2 * b + 1):
            parents = np.flatnonzero(ts.common[i])
            assert set(parents) == {i, half + 2 * b, half + 2 * b + 1}


def test_lv_extra_edges_symmetric_cross_block():
    ts = gen_lv(20, 6, extra_edges=3, rng=np.random.default_rng(10))
    half = 10
    for z in ts.entities:
        extra = (z - ts.common)
        assert extra.min() >= 0
        assert np.array_equal(extra, extra.T)   # prey/predator correspondence
        assert extra.sum() == 2 * 3
        for (i, j) in zip(*np.nonzero(extra)):
            if i < half:
                assert j >= half
                assert i // 2 != (j - half) // 2    # crosses blocks


def test_lv_rejects_bad_p():
    with pytest.raises(ConfigurationError):
        gen_lv(18, 3)


# -- Lorenz96 -------------------------------------------------------------------------

def test_lorenz96_cyclic_skeleton():
    ts = gen_lorenz96(8, [10.0, 17.5])
    for i in range(8):
        expected = {(i - 2) % 8, (i - 1) % 8, i, (i + 1) % 8}
        assert set(np.flatnonzero(ts.common[i])) == expected
    assert len(ts.entities) == 2
    assert np.array_equal(ts.entities[0], ts.entities[1])
    assert ts.meta["forcing"] == [10.0, 17.5]


# -- springs ----------------------------------------------------------------------------

def test_springs_symmetry_and_diagonal():
    ts = gen_springs(5, 10, rng=np.random.default_rng(11))
    assert np.array_equal(ts.common, ts.common.T)
    assert np.allclose(np.diag(ts.common), 0.0)
    for z in ts.entities:
        assert np.array_equal(z, z.T)
        assert set(np.unique(z)) <= {0.0, 1.0}
        assert np.allclose(np.diag(z), 0.0)


def test_springs_entity_frequency_matches_common():
    ts = gen_springs(4, 10_000, rng=np.random.default_rng(12))
    freq = np.mean([z for z in ts.entities], axis=0)
    iu = np.triu_indices(4, k=1)
    assert np.max(np.abs(freq[iu] - ts.common[iu])) < 0.02


def test_generators_reproducible_from_seed():
    for gen in (lambda r: gen_nonlinear_var(8, 3, rng=r),
                lambda r: gen_lv(8, 3, extra_edges=1, rng=r),
                lambda r: gen_springs(5, 3, rng=r)):
        a = gen(np.random.default_rng(77))
        b = gen(np.random.default_rng(77))
        assert np.array_equal(a.common, b.common)
        for x, y in zip(a.entities, b.entities):
            assert np.array_equal(x, y)
