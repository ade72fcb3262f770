import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from ls2d.entries import accessor, build_context
from ls2d.hodlr import (RankCapExceeded, build_ordering, compress_block, dense_solve, factor,
                        sampled_residual, solve)
from ls2d.tree import BoxGeom, build_uniform_tree

from conftest import gaussian_q


def _kernel_accessor(pts, kappa=5.0, shift=1.0):
    """Dense-free accessor of ``shift * I + smooth Helmholtz-like kernel``."""
    def get(rows, cols):
        d = np.hypot(*(pts[rows][:, None, :] - pts[cols][None, :, :]).transpose(2, 0, 1))
        K = 0.01 * special.hankel1(0, kappa * np.maximum(d, 1e-3))
        K[rows[:, None] == cols[None, :]] += shift
        return K
    return get


def _leaf_points(n_side, pp=4):
    """Points grouped in fake leaves of ``pp`` points each."""
    h = 1.0 / n_side
    c = (np.stack(np.meshgrid(np.arange(n_side), np.arange(n_side)), -1).reshape(-1, 2) + 0.5) * h
    off = np.array([[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]])[:pp] * h
    return c, (c[:, None, :] + off[None]).reshape(-1, 2)


def test_ordering_is_a_permutation_keeping_leaves_together():
    centers, pts = _leaf_points(16)
    o = build_ordering(centers, 4, n_leaf=32)
    assert sorted(o.perm) == list(range(len(pts)))
    assert np.all(o.perm.reshape(-1, 4) % 4 == np.arange(4))
    for c in o.clusters:
        if c.children is not None:
            a, b = (o.clusters[k] for k in c.children)
            assert (a.start, b.stop) == (c.start, c.stop) and a.stop == b.start
        else:
            assert c.size <= 32
    assert o.depth >= 4


def test_cross_approximation_of_separated_block():
    centers, pts = _leaf_points(16)
    get = _kernel_accessor(pts)
    rows = np.nonzero(pts[:, 0] < 0.3)[0]
    cols = np.nonzero(pts[:, 0] > 0.7)[0]
    A = get(rows, cols)
    for eps in (1e-4, 1e-8, 1e-12):
        U, V, r = compress_block(get, rows, cols, eps)
        err = np.linalg.norm(A - U @ V.T) / np.linalg.norm(A)
        assert err <= 10 * eps
        assert r < min(len(rows), len(cols)) // 4


def test_rank_cap_is_enforced():
    rng = np.random.default_rng(0)
    R = rng.standard_normal((80, 80))
    get = lambda r, c: R[np.ix_(r, c)]
    with pytest.raises(RankCapExceeded):
        compress_block(get, np.arange(80), np.arange(80), 1e-12, max_rank=10)


def test_zero_block_has_rank_zero():
    get = lambda r, c: np.zeros((len(r), len(c)))
    U, V, r = compress_block(get, np.arange(50), np.arange(60), 1e-10)
    assert r == 0 and U.shape == (50, 0)


def test_factor_matches_dense_on_kernel_matrix():
    centers, pts = _leaf_points(24)
    get = _kernel_accessor(pts)
    n = len(pts)
    rng = np.random.default_rng(1)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    F = factor(get, build_ordering(centers, 4, n_leaf=64), 1e-10)
    x = solve(F, b)
    xd = dense_solve(get, n, b)
    assert np.linalg.norm(x - xd) <= 1e-8 * np.linalg.norm(xd)
    assert sampled_residual(get, x, b) <= 1e-8
    # several right-hand sides at once
    B = rng.standard_normal((n, 3))
    np.testing.assert_allclose(solve(F, B)[:, 1], dense_solve(get, n, B[:, 1]), rtol=1e-7)
    assert F.max_rank() > 0 and F.memory_bytes() < n * n * 16


def test_factor_matches_dense_on_scattering_system():
    kappa = 20.0
    tree = build_uniform_tree(BoxGeom((0, 0), 1.0, 0), 4, kappa=kappa)
    ctx = build_context(tree, kappa, gaussian_q)
    get = accessor(ctx)
    F = factor(get, build_ordering(ctx.leaf_center, ctx.pp, 128), 1e-10)
    x = solve(F, ctx.f)
    xd = dense_solve(get, ctx.n, ctx.f)
    assert np.max(np.abs(x - xd)) <= 1e-8 * np.max(np.abs(xd))
    assert sampled_residual(get, x, ctx.f) <= 1e-9


def test_dense_guard_and_bad_rhs():
    get = lambda r, c: np.eye(10)[np.ix_(r, c)]
    with pytest.raises(MemoryError):
        dense_solve(get, 30_000, np.ones(30_000))
    F = factor(get, build_ordering(np.zeros((10, 2)) + np.arange(10)[:, None], 1, 4), 1e-10)
    with pytest.raises(ValueError):
        solve(F, np.ones(11))


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 12), st.floats(0.5, 4.0), st.integers(0, 1000))
def test_factor_inverts_random_well_conditioned_systems(n_side, shift, seed):
    centers, pts = _leaf_points(n_side)
    rng = np.random.default_rng(seed)
    get = _kernel_accessor(pts, kappa=rng.uniform(1, 10), shift=shift)
    b = rng.standard_normal(len(pts))
    F = factor(get, build_ordering(centers, 4, n_leaf=16), 1e-12)
    x = solve(F, b)
    assert np.allclose(get(np.arange(len(pts)), np.arange(len(pts))) @ x, b, atol=1e-9)
