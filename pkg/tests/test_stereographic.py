import numpy as np
import pytest

from qlab.conformal_ops import equation_constant, exponents, \
    sampled_equation_residual
from qlab.mobius import sphere_volume
from qlab.stereographic import (Bubble, NonpositiveScaleError,
                                PointAtInfinityError, bubble, chart,
                                chart_factor, project, pull_back_function,
                                unit_q_bubble, unproject)


def test_origin_maps_to_south_pole():
    ch = chart(6)
    assert np.allclose(project(ch, np.zeros(6)), [0, 0, 0, 0, 0, 0, -1])


def test_image_on_sphere_and_roundtrip():
    ch = chart(5)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 5)) * np.exp(rng.uniform(-6, 13.8, (300, 1)))
    y = project(ch, x)
    assert np.max(np.abs(np.linalg.norm(y, axis=1) - 1.0)) < 1e-12
    back = unproject(ch, y)
    rel = np.abs(back - x) / np.maximum(1.0, np.abs(x))
    assert rel.max() < 1e-12  # holds out to |x| = 1e6


def test_unproject_base_point_raises():
    ch = chart(4)
    north = np.zeros(5)
    north[-1] = 1.0
    with pytest.raises(PointAtInfinityError):
        unproject(ch, north)


def test_rotated_chart_roundtrip():
    p0 = np.ones(6) / np.sqrt(6.0)
    ch = chart(5, p0)
    x = np.array([[0.3, -1.2, 0.0, 4.0, 2.0]])
    assert np.allclose(unproject(ch, project(ch, x)), x, atol=1e-12)


def test_chart_factor_is_jacobian():
    # every singular value of the differential equals 2/(1+|x|^2)
    ch = chart(4)
    x0 = np.array([0.7, -0.3, 1.1, 0.4])
    h = 1e-6
    J = np.zeros((5, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        J[:, i] = (project(ch, x0 + e) - project(ch, x0 - e)) / (2 * h)
    s = np.linalg.svd(J, compute_uv=False)
    assert np.max(np.abs(s - chart_factor(x0))) < 1e-8


def test_pull_back_of_one_is_the_unit_bubble():
    e = exponents(6)
    ch = chart(6)
    pb = pull_back_function(ch, lambda s: np.ones(s.shape[:-1]), e)
    U = bubble(6)
    pts = np.random.default_rng(1).normal(size=(60, 6))
    assert np.max(np.abs(pb(pts) - U(pts))) < 1e-14


def test_pullback_change_of_variables_identity():
    # Monte Carlo both sides: int_U vhat^q dx = int over psi(U) of
    # vtil^q (2/(1+|x|^2))^(-(n-4)/2) dv_sphere, realized by mapping
    # sphere-uniform samples back through the chart
    n = 5
    e = exponents(n)
    ch = chart(n)

    def v_sphere(s):
        return 1.0 + 0.5 * s[..., 0] ** 2

    pb = pull_back_function(ch, v_sphere, e)
    q = float(e.q)
    rng = np.random.default_rng(42)
    R = 2.0
    # chart side: uniform on the ball |x| <= R
    N = 200_000
    g = rng.standard_normal((N, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    xs = g * (rng.random((N, 1)) ** (1.0 / n)) * R
    ball_vol = np.pi ** (n / 2.0) / np.math.gamma(n / 2.0 + 1.0) * R ** n \
        if hasattr(np, "math") else None
    from scipy.special import gamma as _gamma
    ball_vol = np.pi ** (n / 2.0) / _gamma(n / 2.0 + 1.0) * R ** n
    lhs = ball_vol * np.mean(pb(xs) ** q)
    lhs_se = ball_vol * np.std(pb(xs) ** q) / np.sqrt(N)
    # sphere side: uniform on S^n, restricted to psi(ball)
    gs = rng.standard_normal((N, n + 1))
    gs /= np.linalg.norm(gs, axis=1, keepdims=True)
    t = gs[:, -1]
    keep = np.abs(1.0 - t) > 1e-12
    gs = gs[keep]
    xb = unproject(ch, gs)
    inside = np.sum(xb * xb, axis=1) <= R * R
    integrand = np.zeros(len(gs))
    integrand[inside] = v_sphere(gs[inside]) ** q \
        * chart_factor(xb[inside]) ** (-(n - 4) / 2.0)
    rhs = sphere_volume(n) * np.mean(integrand)
    rhs_se = sphere_volume(n) * np.std(integrand) / np.sqrt(len(gs))
    assert abs(lhs - rhs) < 4.0 * np.hypot(lhs_se, rhs_se)


def test_pullback_rotation_equivariance():
    # a rotation fixing the base point permutes the chart by the induced
    # orthogonal map; sampled-norm comparison on a centered ball
    n = 5
    e = exponents(n)
    ch = chart(n)
    perm = np.eye(n + 1)
    perm[[0, 1]] = perm[[1, 0]]  # swap two equatorial axes, fixes the pole

    def v_sphere(s):
        return np.exp(s[..., 0] - 0.3 * s[..., 1])

    pb_rot = pull_back_function(ch, lambda s: v_sphere(s @ perm.T), e)
    pb = pull_back_function(ch, v_sphere, e)
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(500, n))
    rotated_pts = pts.copy()
    rotated_pts[:, [0, 1]] = rotated_pts[:, [1, 0]]
    assert np.allclose(pb_rot(pts), pb(rotated_pts), rtol=1e-12)
    # L^p norms on the centered ball agree
    ball = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    assert abs(np.mean(pb_rot(ball) ** 2) - np.mean(pb(ball) ** 2)) \
        < 1e-12 * np.mean(pb(ball) ** 2)


def test_bubble_values_and_constant():
    U = bubble(6)
    z = np.zeros(6)
    assert abs(U(z) - 2.0) < 1e-14
    assert abs(U.bilaplacian(z) - 768.0) < 1e-10
    assert float(U.K) == 24.0
    assert float(equation_constant(5)) == 5 * 1 * 21 / 16


def test_bubble_gradients_match_finite_differences():
    U = bubble(6, lam=1.3, center=np.array([0.2, 0, -0.1, 0, 0.3, 0]))
    rng = np.random.default_rng(5)
    x = rng.normal(size=(20, 6))
    h = 1e-6
    for fn, grad in ((U.__call__, U.grad), (U.laplacian, U.laplacian_grad)):
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fd = (fn(x + e) - fn(x - e)) / (2 * h)
            assert np.max(np.abs(fd - grad(x)[:, i])) < 1e-6


def test_far_field_coefficient():
    U = bubble(7, lam=2.5)
    r = 1e5
    x = np.zeros(7)
    x[0] = r
    assert abs(U(x) * r ** 3 - (2.0 / 2.5) ** 1.5) < 1e-8
    assert abs(U.far_field_coefficient() - (2.0 / 2.5) ** 1.5) < 1e-15


def test_family_closure():
    # U_{lam, x0}(x) = lam^((n-4)/2) U_{1,0}(lam (x - x0))
    n = 5
    lam, x0 = 1.9, np.array([0.4, -1.0, 0.2, 0.0, 0.7])
    U = bubble(n, lam, x0)
    U1 = bubble(n)
    pts = np.random.default_rng(8).normal(size=(100, n))
    lhs = U(pts)
    rhs = lam ** ((n - 4) / 2.0) * U1(lam * (pts - x0))
    assert np.max(np.abs(lhs - rhs)) < 1e-13


def test_unit_q_normalization():
    # scaled bubble satisfies the equation with constant exactly one
    for n in (5, 6, 8):
        ub = unit_q_bubble(n, lam=0.7)
        assert abs(ub.q_constant - 1.0) < 1e-12


def test_equation_residual_converges_over_family():
    U_cases = [(1.0, 0.0), (0.5, 0.3), (2.0, -0.2)]
    rng = np.random.default_rng(11)
    for lam, off in U_cases:
        c = np.full(6, off)
        U = bubble(6, lam, c)
        K = float(U.K)
        q = 5.0

        def resid(m):
            h = 1.6 / (m - 1)
            idx = rng.integers(4, m - 4, size=(800, 6))
            pts = c - 0.8 + np.unique(idx, axis=0) * h
            return sampled_equation_residual(
                U, lambda x: K * U(x) ** q, 6, h, pts)

        r1, r2 = resid(17), resid(33)
        assert r2 < r1 / 4.0  # at least second order, measured fourth


def test_bubble_rejects_nonpositive_scale():
    with pytest.raises(NonpositiveScaleError):
        bubble(6, lam=-1.0)
    with pytest.raises(NonpositiveScaleError):
        Bubble(6, 0.0, np.zeros(6))
