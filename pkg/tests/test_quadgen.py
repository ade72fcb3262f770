import numpy as np
import pytest
from scipy import special

from ls2d.interp import BasisSpec, basis_matrix, build_interp
from ls2d.oracle import brute_unit_integrals
from ls2d.quadgen import (CHILD_CENTERS, QuadratureError, adaptive_quad_2d, box_moments,
                          build_far_moments, build_near_table, load_or_build_table,
                          multipole_eval, near_entry, read_table, table_filename,
                          table_targets, write_table)
from ls2d.specfun import series_coeffs

SPEC = BasisSpec(4)
INTERP = build_interp(SPEC)


def test_log_singularity_at_corner():
    # int_[0,1]^2 log(x^2 + y^2) = log 2 - 3 + pi/2
    val = adaptive_quad_2d(lambda x, y: 0.5 * np.log(x * x + y * y), (0, 1, 0, 1),
                           tol=1e-13, singular_point=(0, 0))
    assert val == pytest.approx(0.5 * (np.log(2) - 3 + np.pi / 2), abs=1e-13)


def test_quadrature_budget_exhaustion():
    with pytest.raises(QuadratureError):
        adaptive_quad_2d(lambda x, y: np.abs(x - 0.3137) ** -0.9, (0, 1, 0, 1), tol=1e-15,
                         max_panels=200)


def test_table_target_counts():
    assert len(table_targets("colleague", 4)) == 144
    assert len(table_targets("coarse", 4)) == 192
    assert len(table_targets("fine", 4)) == 192
    # no coarse or fine target lies inside the source box
    for rel in ("coarse", "fine"):
        assert np.all(np.max(np.abs(table_targets(rel, 4)), axis=1) > 0.5)


@pytest.mark.parametrize("t", [(0.125, -0.375), (0.5, 0.5), (1.25, 0.3), (-0.6, -0.1)])
def test_moments_match_brute_quadrature(t):
    t = np.array(t)
    pw, lg = box_moments(SPEC, t[None], (-0.5, 0.5, -0.5, 0.5), 1.0, pmax=6)

    def f(x, y):
        h = 0.5 * np.hypot(x - t[0], y - t[1])
        powers = (h[..., None] ** 2) ** np.arange(7)
        b = basis_matrix(SPEC, x, y)
        lh = np.log(np.where(h > 0, h, 1.0))
        return np.concatenate([b[..., :, None] * powers[..., None, :],
                               (b * lh[..., None])[..., :, None] * powers[..., None, :]], axis=-1)

    ref = adaptive_quad_2d(f, (-0.5, 0.5, -0.5, 0.5), tol=1e-14, singular_point=t)
    np.testing.assert_allclose(pw[0], ref[:, :7], atol=1e-13)
    np.testing.assert_allclose(lg[0], ref[:, 7:], atol=1e-13)


def test_child_split_moments_sum_to_parent_for_power_zero():
    tab = build_near_table("colleague", 4, pmax=4, child_split=False)
    spl = build_near_table("colleague", 4, pmax=4, child_split=True)
    # m = 0 power moments are plain integrals of the basis: scale independent
    summed = spl.power[:, :, 0].reshape(-1, 4, SPEC.n_basis).sum(axis=1)
    np.testing.assert_allclose(summed, tab.power[:, :, 0], atol=1e-14)


def test_table_round_trip_and_corruption(tmp_path):
    tab = build_near_table("fine", 4, pmax=8, child_split=True)
    path = tmp_path / table_filename("fine", 4, 8, True)
    write_table(tab, path)
    back = read_table(path)
    assert back.power.tobytes() == tab.power.tobytes()
    assert back.logpow.tobytes() == tab.logpow.tobytes()
    assert (back.relation, back.child_split, back.p, back.pmax) == ("fine", True, 4, 8)
    raw = bytearray(path.read_bytes())
    raw[200] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        read_table(path)
    # the cache loader rebuilds a corrupt file
    again = load_or_build_table("fine", 4, 8, True, tmp_path)
    assert again.power.tobytes() == tab.power.tobytes()
    assert read_table(path).power.tobytes() == tab.power.tobytes()


def test_far_moments_negative_index_symmetry():
    far = build_far_moments(2.0, 20, INTERP)
    for key in ((), (2,), (1, 3)):
        C = far.C[key]
        n = np.arange(1, 21)
        np.testing.assert_allclose(C[20 - n], ((-1.0) ** n)[:, None] * np.conj(C[20 + n]),
                                   atol=1e-15)


def test_multipole_matches_brute_integral():
    z = 3.0
    far = build_far_moments(z, 45, INTERP)
    t = np.array([[1.6, 0.2], [-1.0, 2.1], [3.0, -3.0]])
    got = multipole_eval(far, (), t)
    for k in range(len(t)):
        ref = brute_unit_integrals(SPEC, z, t[k])
        np.testing.assert_allclose(got[k], ref, atol=1e-12)


@pytest.mark.parametrize("relation,z", [("colleague", 0.7), ("coarse", 2.4), ("fine", 4.0),
                                        ("colleague", 6.5), ("coarse", 8.0), ("fine", 5.0)])
def test_near_entry_matches_brute(relation, z, table_cache):
    split = z > 4
    tab = load_or_build_table(relation, 4, 60, split, table_cache)
    far = build_far_moments(z, 45, INTERP)
    rng = np.random.default_rng(7)
    for ti in rng.choice(tab.n_targets, 6, replace=False):
        I = brute_unit_integrals(SPEC, z, tab.targets[ti])
        for l in (0, 4, 9):
            got = near_entry(tab, int(ti), l, z, far=far)
            assert abs(got - 0.25j * I[l]) <= 1e-12


def test_near_entry_guards(table_cache):
    tab = load_or_build_table("colleague", 4, 60, False, table_cache)
    with pytest.raises(ValueError):
        near_entry(tab, 0, 0, 5.0)
    with pytest.raises(ValueError):
        near_entry(tab, 0, 0, 9.0)
    # the series coefficients may be passed in precomputed
    centre = 4 * 16 + 5                  # self-interaction slot of the colleague table
    a = near_entry(tab, centre, 2, 1.5)
    b = near_entry(tab, centre, 2, 1.5, series_coeffs(1.5, 60))
    with pytest.raises(ValueError, match="far moments"):
        near_entry(tab, 0, 2, 1.5)
    assert a == b


def test_child_centres_tile_the_box():
    assert sorted(map(tuple, CHILD_CENTERS)) == [(-0.25, -0.25), (-0.25, 0.25),
                                                (0.25, -0.25), (0.25, 0.25)]


def test_kernel_is_hankel():
    # the integrand convention: H0 of the first kind, outgoing
    z, t = 1.0, np.array([4.0, 0.0])
    I = brute_unit_integrals(SPEC, z, t, tol=1e-10)
    assert abs(I[0] - special.hankel1(0, 4.0)) < 0.05
