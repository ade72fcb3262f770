import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ls2d.interp import (BasisSpec, basis_eval, basis_exponents, basis_matrix, build_interp,
                         chebyshev_nodes, grid_1d, tensor_cheb_interp, unit_grid)


def test_graded_lex_order():
    assert basis_exponents(4) == ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0),
                                  (0, 3), (1, 2), (2, 1), (3, 0))
    for p in (4, 6, 8):
        assert len(basis_exponents(p)) == p * (p + 1) // 2


def test_default_basis_kinds():
    assert BasisSpec(4).kind == "monomial" and BasisSpec(4).grid_kind == "uniform"
    assert BasisSpec(6).kind == "chebyshev" and BasisSpec(6).grid_kind == "chebyshev"
    with pytest.raises(ValueError):
        BasisSpec(4, "legendre")


def test_grid_strictly_interior():
    for p in (4, 6, 8):
        g = grid_1d(p)
        assert np.all(np.abs(g) < 0.5) and np.all(np.diff(g) > 0)
    np.testing.assert_allclose(grid_1d(4), [-0.375, -0.125, 0.125, 0.375])
    ug = unit_grid(4)
    assert ug[1, 0] > ug[0, 0] and ug[1, 1] == ug[0, 1]


@pytest.mark.parametrize("p", [4, 6, 8])
def test_pseudoinverse_is_left_inverse(p):
    op = build_interp(BasisSpec(p))
    np.testing.assert_allclose(op.Qdag @ op.Q, np.eye(op.n_basis), atol=1e-12)
    assert op.sigma_min > 1e-3 * op.sigma_max


def test_rank_deficient_grid_refused():
    grid = np.zeros((16, 2))
    with pytest.raises(np.linalg.LinAlgError):
        build_interp(BasisSpec(4), grid)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 8).filter(lambda p: p % 2 == 0),
       st.lists(st.floats(-2, 2), min_size=36, max_size=36))
def test_polynomials_of_low_degree_are_reproduced(p, c):
    spec = BasisSpec(p)
    op = build_interp(spec)
    coef = np.array(c[:spec.n_basis])
    g = op.grid
    # evaluate the polynomial independently through its monomial exponents
    vals = sum(ci * g[:, 0] ** a * g[:, 1] ** b
               for ci, (a, b) in zip(coef, basis_exponents(p))) if spec.kind == "monomial" \
        else basis_matrix(spec, g[:, 0], g[:, 1]) @ coef
    np.testing.assert_allclose(op.coefficients(vals), coef, atol=1e-10)


def test_chebyshev_basis_definition():
    spec = BasisSpec(6)
    x, y = 0.2, -0.35
    # index of exponent (2, 1) is T_2(2x) T_1(2y)
    l = basis_exponents(6).index((2, 1))
    assert basis_eval(spec, l, x, y) == pytest.approx((2 * (2 * x) ** 2 - 1) * (2 * y))
    with pytest.raises(IndexError):
        basis_eval(spec, 21, x, y)


def test_smooth_function_converges_with_order():
    # least-squares fit of exp(x+y) on a box of side h: error falls like h^p
    errs = []
    for h in (0.4, 0.2, 0.1):
        op = build_interp(BasisSpec(4))
        g = op.grid
        vals = np.exp(h * (g[:, 0] + g[:, 1]))
        coef = op.coefficients(vals)
        t = np.random.default_rng(1).uniform(-0.5, 0.5, (200, 2))
        approx = basis_matrix(op.spec, t[:, 0], t[:, 1]) @ coef
        errs.append(np.max(np.abs(approx - np.exp(h * (t[:, 0] + t[:, 1])))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.7)
    for p in (6, 8):
        op = build_interp(BasisSpec(p))
        g = op.grid
        coef = op.coefficients(np.exp(g[:, 0] + g[:, 1]))
        t = np.random.default_rng(2).uniform(-0.5, 0.5, (200, 2))
        approx = basis_matrix(op.spec, t[:, 0], t[:, 1]) @ coef
        assert np.max(np.abs(approx - np.exp(t.sum(1)))) < 10.0 ** (-p + 2)


def test_tensor_chebyshev_interpolation_exact_on_nodes():
    p = 5
    nodes = chebyshev_nodes(p)
    X, Y = np.meshgrid(nodes, nodes, indexing="xy")
    vals = np.cos(X + 2 * Y).ravel()
    np.testing.assert_allclose(tensor_cheb_interp(vals, p, X.ravel(), Y.ravel()), vals, atol=1e-13)
    f = lambda x, y: x ** 3 * y ** 2 - x + 0.5
    pts = np.random.default_rng(3).uniform(-0.5, 0.5, (50, 2))
    np.testing.assert_allclose(tensor_cheb_interp(f(X, Y).ravel(), p, pts[:, 0], pts[:, 1]),
                               f(pts[:, 0], pts[:, 1]), atol=1e-13)
