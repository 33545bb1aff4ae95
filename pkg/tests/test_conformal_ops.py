import numpy as np
import pytest
from fractions import Fraction

from qlab.conformal_ops import (CurvatureData, DimensionTooSmallError,
                                NonpositiveFieldError, ZeroVolumeError,
                                bilaplacian, conformal_laplacian_flat,
                                equation_constant, exponents,
                                grid_bilaplacian_stencil, laplacian,
                                paneitz_functional, paneitz_functional_radial,
                                q_curvature_flatbg, q_curvature_tensorial,
                                round_sphere_data, sampled_equation_residual,
                                scalar_curvature_flatbg,
                                _trapezoid_axis_weights)
from qlab.grids import (GridField, GridTooSmallError, RadialField,
                        load_field, radial_bilaplacian, radial_laplacian,
                        save_field)
from qlab.stereographic import bubble, unit_q_bubble


@pytest.mark.parametrize("n,a,q,p,s", [
    (5, 4, 9, 10, 3),
    (6, 2, 5, 6, 2),
    (8, 1, 3, 4, Fraction(3, 2)),
])
def test_exponent_family(n, a, q, p, s):
    e = exponents(n)
    assert (e.a, e.q, e.p, e.s) == (a, q, p, s)
    d = n - 4
    assert e.q * d == n + 4 and e.a * d == 4 and e.p * d == 2 * n \
        and e.s * d == n - 2
    assert e.q > 1


def test_exponents_reject_low_dimension():
    for n in (4, 3, 0, -2):
        with pytest.raises(DimensionTooSmallError):
            exponents(n)


def test_laplacian_polynomials_exact():
    f = GridField.from_function(lambda x: np.sum(x ** 2, axis=-1), 3, -1, 1, 11)
    lap = laplacian(f)
    assert np.nanmax(np.abs(lap.values - 6.0)) < 1e-12
    const = GridField.from_function(lambda x: np.full(x.shape[:-1], 4.2),
                                    3, -1, 1, 11)
    assert np.nanmax(np.abs(laplacian(const).values)) < 1e-12


def test_laplacian_bubble_origin_matches_radial_closed_form():
    # 1-d radial oracle: lap U = U'' + (n-1)/r U' of the closed profile
    U = bubble(6)
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 401)
    lap = radial_laplacian(prof, 6)
    assert abs(lap.values[0] + 24.0) < 1e-6
    assert abs(U.laplacian(np.zeros(6)) + 24.0) < 1e-12


def test_bilaplacian_quartic_exact():
    n = 6
    f = GridField.from_function(lambda x: np.sum(x ** 2, axis=-1) ** 2,
                                n, -1, 1, 9)
    bl = bilaplacian(f)
    assert abs(bl.interior().flat[0] - 8 * n * (n + 2)) < 1e-9
    f2 = GridField.from_function(lambda x: np.sum(x ** 2, axis=-1), 3, -1, 1, 11)
    assert np.nanmax(np.abs(bilaplacian(f2).values)) < 1e-9


def test_bilaplacian_bubble_origin():
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 401)
    bl = radial_bilaplacian(prof, 6)
    # 768 = K_6 * U(0)^5 with K_6 = 24 and U(0) = 2
    assert abs(bl.values[0] - 768.0) / 768.0 < 1e-6


def test_grid_too_small():
    f = GridField.from_function(lambda x: np.sum(x ** 2, axis=-1), 2, -1, 1, 5)
    lap = laplacian(f)  # 5 nodes can host one pass
    with pytest.raises(GridTooSmallError):
        laplacian(lap)


def test_q_curvature_flatbg_radial():
    e = exponents(6)
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 401)
    Q = q_curvature_flatbg(prof, e)
    assert abs(Q.values[0] - 24.0) / 24.0 < 1e-6
    fin = np.isfinite(Q.values)
    assert np.max(np.abs(Q.values[fin] - 24.0)) / 24.0 < 1e-4


def test_q_curvature_grid_and_flat_and_dilate():
    e = exponents(5)
    U = bubble(5)
    g = GridField.from_function(U, 5, -1.0, 1.0, 17)
    Q = q_curvature_flatbg(g, e)
    K = float(equation_constant(5))
    assert np.nanmax(np.abs(Q.values - K)) / K < 1e-2
    flat = GridField.from_function(lambda x: np.ones(x.shape[:-1]), 5, -1, 1, 17)
    assert np.nanmax(np.abs(q_curvature_flatbg(flat, e).values)) < 1e-10
    # dilated bubble: conformal invariance of the family
    U2 = bubble(5, lam=1.7)
    g2 = GridField.from_function(U2, 5, -0.6, 0.6, 17)
    Q2 = q_curvature_flatbg(g2, e)
    assert np.nanmax(np.abs(Q2.values - K)) / K < 1e-2


def test_q_curvature_homogeneity():
    # replacing v by c v multiplies Q by c^(1-q) = c^(-8/(n-4))
    e = exponents(6)
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 401)
    Q1 = q_curvature_flatbg(prof, e)
    for c in (0.5, 2.0):
        Qc = q_curvature_flatbg(RadialField(prof.radii, c * prof.values), e)
        fin = np.isfinite(Qc.values)
        ratio = Qc.values[fin] / Q1.values[fin]
        assert np.max(np.abs(ratio - c ** (1.0 - 5.0))) < 1e-8


def test_q_curvature_rejects_nonpositive():
    e = exponents(6)
    prof = RadialField.from_profile(lambda r: 1.0 - r, 2.0, 101)
    with pytest.raises(NonpositiveFieldError):
        q_curvature_flatbg(prof, e)


def test_tensorial_modes_on_round_s6():
    d = round_sphere_data(6)
    assert q_curvature_tensorial(d, 6, "as-printed") == Fraction(21, 4)
    assert q_curvature_tensorial(d, 6, "covariance-consistent") == 24


def test_tensorial_flat_zero():
    assert q_curvature_tensorial(CurvatureData(0, 0, 0), 7, "as-printed") == 0
    assert q_curvature_tensorial(CurvatureData(0, 0, 0), 7) == 0


@pytest.mark.parametrize("n", range(5, 11))
def test_covariance_mode_matches_flat_reduction(n):
    # the unique Ricci coefficient matching the bubble computation gives
    # exactly the equation constant on the round sphere, every dimension
    assert q_curvature_tensorial(round_sphere_data(n), n) == equation_constant(n)


def test_tensorial_rejects_bad_ricci():
    with pytest.raises(ValueError):
        q_curvature_tensorial(CurvatureData(6, 0, 1), 6)


def test_scalar_curvature_on_bubble():
    e = exponents(6)
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 401)
    R = scalar_curvature_flatbg(prof, e)
    fin = np.isfinite(R.values)
    assert np.max(np.abs(R.values[fin] - 30.0)) < 1e-5
    flat = RadialField.from_profile(lambda r: np.ones_like(r), 2.0, 401)
    Rf = scalar_curvature_flatbg(flat, e)
    assert np.nanmax(np.abs(Rf.values)) < 1e-9


def test_first_order_identity_residual_on_bubble():
    # -lap v = ((n-4)/(n-2)) Rhat v^(n/(n-4)) + (2/(n-4)) |grad v|^2 / v
    # with Rhat = (n-2)/(4(n-1)) R; finite differences both sides
    n = 6
    e = exponents(n)
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 801)
    r = prof.radii
    v = prof.values
    lap_v = radial_laplacian(prof, n).values
    R = scalar_curvature_flatbg(prof, e).values
    rhat = (n - 2.0) / (4.0 * (n - 1.0)) * R
    dv = np.gradient(v, r)
    rhs = (n - 4.0) / (n - 2.0) * rhat * v ** (n / (n - 4.0)) \
        + 2.0 / (n - 4.0) * dv ** 2 / v
    fin = np.isfinite(lap_v) & np.isfinite(rhs)
    resid = np.max(np.abs(-lap_v[fin] - rhs[fin]))
    assert resid < 5e-3  # np.gradient is second order; the identity is exact


def test_positivity_bridge():
    # with Rhat > 0 the gradient term makes -lap v >= (n-4)/(n-2) Rhat v^(n/(n-4))
    n = 6
    e = exponents(n)
    prof = RadialField.from_profile(lambda r: 2.0 / (1.0 + r ** 2), 2.0, 401)
    lap_v = radial_laplacian(prof, n).values
    R = scalar_curvature_flatbg(prof, e).values
    rhat = (n - 2.0) / (4.0 * (n - 1.0)) * R
    fin = np.isfinite(lap_v) & np.isfinite(R)
    lower = (n - 4.0) / (n - 2.0) * rhat[fin] * prof.values[fin] ** (n / (n - 4.0))
    assert np.all(-lap_v[fin] >= lower - 1e-8)


def test_conformal_laplacian_examples():
    n = 6
    flat = GridField.from_function(lambda x: np.ones(x.shape[:-1]), 3, -1, 1, 11)
    assert np.nanmax(np.abs(conformal_laplacian_flat(flat, n).values)) < 1e-12
    sq = RadialField.from_profile(lambda r: r ** 2, 2.0, 101)
    L = conformal_laplacian_flat(sq, n)
    expect = -8.0 * n * (n - 1) / (n - 2)  # lap |x|^2 = 2n
    assert np.nanmax(np.abs(L.values - expect)) < 1e-9


def test_conformal_laplacian_yamabe_bubble():
    # u = (2/(1+r^2))^((n-2)/2) solves L u = n(n-1) u^((n+2)/(n-2))
    n = 6
    prof = RadialField.from_profile(lambda r: (2.0 / (1.0 + r ** 2)) ** 2,
                                    2.0, 401)
    L = conformal_laplacian_flat(prof, n)
    target = n * (n - 1) * prof.values ** ((n + 2.0) / (n - 2.0))
    fin = np.isfinite(L.values)
    assert np.max(np.abs(L.values[fin] - target[fin])) / np.max(target) < 1e-6


def test_paneitz_functional_radial_unit_bubble():
    # closed-form target: K_6 (vol S^6)^(4/6), vol S^6 = 16 pi^3 / 15
    e = exponents(6)
    ub = unit_q_bubble(6)

    def profile(r):
        return ub(np.stack([r] + [np.zeros_like(r)] * 5, axis=-1))

    val = paneitz_functional_radial(profile, e, 50.0, 4096)
    target = 24.0 * (16.0 * np.pi ** 3 / 15.0) ** (2.0 / 3.0)
    assert abs(val - target) / target < 1e-2


def test_paneitz_functional_grid_identity():
    # when Q == 1 the functional equals (int v^p)^(4/n) over the same region
    e = exponents(5)
    g = GridField.from_function(unit_q_bubble(5), 5, -3.0, 3.0, 21)
    val = paneitz_functional(g, e)
    k = 4
    w = _trapezoid_axis_weights(21, k) * g.h
    wts = w
    for _ in range(4):
        wts = np.multiply.outer(wts, w)
    vol = float(np.sum(g.interior(extra=k) ** float(e.p) * wts))
    assert abs(val - vol ** 0.8) / vol ** 0.8 < 2e-2


def test_paneitz_functional_flat_is_zero():
    e = exponents(5)
    flat = GridField.from_function(lambda x: np.ones(x.shape[:-1]), 5, -1, 1, 17)
    assert abs(paneitz_functional(flat, e)) < 1e-9


def test_paneitz_rejects_nonpositive():
    e = exponents(5)
    g = GridField.from_function(lambda x: x[..., 0], 5, -1, 1, 17)
    with pytest.raises(NonpositiveFieldError):
        paneitz_functional(g, e)


def test_stencil_convergence_order():
    # sampled-node residual of the bubble equation drops at 4th order
    U = bubble(6)
    K = float(equation_constant(6))
    rng = np.random.default_rng(7)

    def residual(m):
        h = 2.0 / (m - 1)
        idx = rng.integers(4, m - 4, size=(2000, 6))
        pts = -1.0 + np.unique(idx, axis=0) * h
        return sampled_equation_residual(U, lambda x: K * U(x) ** 5, 6, h, pts)

    r17, r33 = residual(17), residual(33)
    assert r17 < 1e-2
    assert np.log2(r17 / r33) >= 2.0


def test_bilaplacian_stencil_consistency():
    # the explicit offset map reproduces the two-pass operator on a grid
    f = GridField.from_function(lambda x: np.exp(-np.sum(x ** 2, axis=-1)),
                                2, -1, 1, 33)
    two_pass = bilaplacian(f)
    stencil = grid_bilaplacian_stencil(2, f.h)
    i = j = 16
    x0 = np.array([f.axis()[i], f.axis()[j]])
    val = sum(w * np.exp(-np.sum((x0 + f.h * np.array(o)) ** 2))
              for o, w in stencil.items())
    assert abs(val - two_pass.values[i, j]) < 1e-9


def test_grid_field_serialization_roundtrip(tmp_path):
    g = GridField.from_function(lambda x: np.sum(x ** 2, axis=-1), 3, -1, 1, 9)
    for fmt in ("csv", "bin"):
        save_field(g, tmp_path / f"grid_{fmt}", fmt=fmt)
        back = load_field(tmp_path / f"grid_{fmt}")
        assert back.n == 3 and back.m == 9 and back.h == g.h
        assert np.array_equal(back.values, g.values)
    r = RadialField.from_profile(lambda t: np.cos(t), 2.0, 33)
    save_field(r, tmp_path / "radial", fmt="csv")
    back = load_field(tmp_path / "radial")
    assert np.allclose(back.radii, r.radii) and np.array_equal(back.values, r.values)
