"""Reflection comparisons, far-field fits, the critical plane, convexity.

The scan machinery works on evaluable fields (callables on points of shape
(..., n)); grids enter by interpolation upstream.  The reflected pair
(v^L, w^L) satisfies the same two-component system as (v, w), so comparing a
field with its reflection across a sliding plane extracts the critical
height Lambda*, and the boundary normal-derivative sign diagnoses geodesic
convexity of round balls in the conformal metric.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .grids import GridField
from .mobius import MobiusMap, Similarity, SphereInversion


class IllConditionedFitError(RuntimeError):
    pass


class VerificationFailureError(RuntimeError):
    """A sampled sign check failed; the report is attached, not enlarged away."""


class ScanExhaustedError(RuntimeError):
    """No plane in the requested range passes the reflection comparison."""


class BoundaryOutsideDomainError(ValueError):
    pass


def reflect(x, lam, axis=-1):
    """Reflection across the hyperplane {x_axis = lam}."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[..., axis] = 2.0 * lam - x[..., axis]
    return out


def reflect_field(v, lam, axis=-1):
    """Reflected field v^L(x) = v(x^L).

    Callables reflect exactly; a GridField reflects by array flip, which
    requires the plane to be the box midplane (node-to-node reflection).
    """
    if isinstance(v, GridField):
        mid = 0.5 * (v.lo + v.hi)
        if abs(lam - mid) > 1e-12 * max(1.0, abs(mid)):
            raise ValueError("grid reflection needs lam at the box midplane")
        return v.like(np.flip(v.values, axis=axis))
    return lambda x: v(reflect(x, lam, axis=axis))


# ---------------------------------------------------------------------------
# far-field expansion


@dataclass
class FarFieldExpansion:
    """Fitted coefficients of v = |x|^(4-n) (a0 + a_i x_i/|x|^2 + a_ij x_i x_j/|x|^4 + ...)."""

    n: int
    a0: float
    ai: np.ndarray
    aij: np.ndarray
    annulus: tuple
    residual: float
    cond: float


def _annulus_points(n, annulus, budget, seed):
    r1, r2 = annulus
    h = qmc.Halton(d=n + 1, scramble=True, seed=seed)
    u = h.random(budget)
    radii = np.exp(np.log(r1) + u[:, 0] * (np.log(r2) - np.log(r1)))
    from scipy.special import ndtri
    g = ndtri(np.clip(u[:, 1:], 1e-12, 1.0 - 1e-12))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return radii[:, None] * dirs


def fit_far_field(v, n, annulus=(100.0, 1000.0), budget=4096, seed=0,
                  check_positive=True):
    """Weighted least-squares fit of the decay expansion on an annulus.

    Rows are weighted by |x|^(n-4) so the leading column is O(1); columns
    are norm-rescaled before the solve, and the condition number of the
    rescaled system is reported.
    """
    pts = _annulus_points(n, annulus, budget, seed)
    r = np.linalg.norm(pts, axis=1)
    w = r ** (n - 4)
    cols = [np.ones_like(r)]
    names = [("a0",)]
    for i in range(n):
        cols.append(pts[:, i] / r ** 2)
        names.append(("ai", i))
    for i in range(n):
        for j in range(i, n):
            fac = 1.0 if i == j else 2.0
            cols.append(fac * pts[:, i] * pts[:, j] / r ** 4)
            names.append(("aij", i, j))
    A = np.stack(cols, axis=-1)
    y = np.asarray(v(pts)) * w
    scale = np.linalg.norm(A, axis=0)
    sol, res, rank, sv = np.linalg.lstsq(A / scale, y, rcond=None)
    cond = sv[0] / sv[-1]
    if cond > 1e10 or rank < A.shape[1]:
        raise IllConditionedFitError(f"condition number {cond:.3g}; widen the annulus")
    sol = sol / scale
    a0 = float(sol[0])
    ai = np.array(sol[1:n + 1])
    aij = np.zeros((n, n))
    k = n + 1
    for i in range(n):
        for j in range(i, n):
            aij[i, j] = aij[j, i] = sol[k]
            k += 1
    resid = float(np.sqrt(np.mean((A @ sol - y) ** 2)))
    if check_positive and a0 <= 0.0:
        raise VerificationFailureError(
            f"leading coefficient a0 = {a0} <= 0 for a claimed-positive field")
    return FarFieldExpansion(n, a0, ai, aij, tuple(annulus), resid, float(cond))


# ---------------------------------------------------------------------------
# finite differences on evaluable fields


def partial_derivative(f, x, axis, h=None):
    """Central difference along one coordinate, step scaled to |x|."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if h is None:
        h = 1e-5 * np.maximum(1.0, np.linalg.norm(x, axis=-1))
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape[:-1])
    xp, xm = x.copy(), x.copy()
    xp[..., axis] += h
    xm[..., axis] -= h
    return (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)


def directional_derivative(f, x, direction, h=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    if h is None:
        h = 1e-5 * np.maximum(1.0, np.linalg.norm(x, axis=-1))
    h = np.asarray(h, dtype=float)[..., None]
    return (np.asarray(f(x + h * d)) - np.asarray(f(x - h * d))) / (2.0 * h[..., 0])


# ---------------------------------------------------------------------------
# the asymptotic sign region


@dataclass
class AsymptoticRegion:
    """Region {y_n >= C0/|y|, |y| >= C1} in coordinates recentered so the
    linear far-field coefficients vanish."""

    C0: float
    C1: float
    center: np.ndarray

    def contains(self, x, axis=-1):
        y = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(y, axis=-1)
        return (r >= self.C1) & (y[..., axis] * r >= self.C0)


def asymptotic_sign_region(v, expansion, w, axis=-1, verify_points=64):
    """Constants making the leading derivative terms dominate, then verified.

    The origin is shifted by a_i/((n-4) a0), which kills the linear
    coefficients, so on the region both x_n-derivatives are sign-definite up
    to the fitted quadratic and remainder scales.  Every returned region has
    been sampled; a wrong sign raises instead of silently enlarging.
    """
    n = expansion.n
    a0 = expansion.a0
    shift = expansion.ai / ((n - 4) * a0)
    quad = np.linalg.norm(expansion.aij) + abs(a0) * np.dot(shift, shift)
    c0 = 4.0 * (1.0 + 2.0 * quad) / ((n - 4) * a0)
    c1 = max(10.0, math.sqrt(8.0 * (n * (quad + 1.0)) / ((n - 4) * a0)),
             4.0 * np.linalg.norm(shift))
    region = AsymptoticRegion(c0, c1, shift.copy())
    pts = _region_samples(region, n, axis, verify_points)
    dv = partial_derivative(v, pts, axis)
    dw = partial_derivative(w, pts, axis)
    bad = int(np.sum(dv >= 0.0) + np.sum(dw >= 0.0))
    if bad:
        raise VerificationFailureError(
            f"{bad} sampled region points have a non-negative derivative")
    return region, pts


def _region_samples(region, n, axis, count):
    rng = np.random.Generator(np.random.Philox(key=np.array([7, 3], dtype=np.uint64)))
    pts = []
    radii = region.C1 * np.array([1.0, 2.0, 4.0, 8.0])
    per = max(1, count // len(radii))
    while len(pts) < count:
        for R in radii:
            g = rng.standard_normal((4 * per, n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            y = R * g
            keep = y[:, axis] * R >= region.C0
            y = y[keep][:per]
            pts.extend(region.center + y)
            if len(pts) >= count:
                break
    return np.array(pts[:count])


# ---------------------------------------------------------------------------
# the moving plane scan


@dataclass
class MovingPlaneReport:
    lambda0: float
    lambda_star: float
    symmetric: bool
    exhausted_below: bool
    derivative_trace: list
    eps: float
    axis: int
    sample_budget: int


def _ball_mask(points, balls, eps):
    """True where a point is at least eps away from every listed ball."""
    ok = np.ones(len(points), dtype=bool)
    for c, r in balls:
        d = np.linalg.norm(points - np.asarray(c, dtype=float), axis=1)
        ok &= d > r + eps
    return ok


def find_lambda_star(v, w, dim, singular_balls, lam_range, step, eps=1e-3,
                     axis=-1, r_check=8.0, sample_budget=512, seed=0,
                     bisect_tol=None, sym_tol=1e-9):
    """Decreasing scan for the critical reflection plane.

    At each plane Lambda the comparison v(x^L) > v(x), w(x^L) > w(x) is
    checked on a deterministic low-discrepancy sample of the half-space
    slab above the plane, minus the eps-neighborhoods of the singular balls
    and their reflections.  Lambda* refines the first failing plane by
    bisection; the x_n-derivative of v at each tested plane is recorded and
    must be negative above Lambda*.
    """
    lam_lo, lam_hi = min(lam_range), max(lam_range)
    if bisect_tol is None:
        bisect_tol = 1e-4 * (lam_hi - lam_lo)
    ax = axis % dim
    perp_cols = [c for c in range(dim) if c != ax]

    def plane_samples(lam):
        h = qmc.Halton(d=dim, scramble=True, seed=seed)
        u = h.random(sample_budget)
        pts = np.empty((sample_budget, dim))
        pts[:, perp_cols] = (u[:, : dim - 1] - 0.5) * 2.0 * r_check
        pts[:, ax] = lam + 1e-3 * r_check + u[:, dim - 1] * r_check
        return pts

    def check(lam):
        pts = plane_samples(lam)
        refl = reflect(pts, lam, axis=ax)
        if singular_balls:
            keep = _ball_mask(pts, singular_balls, eps) & \
                _ball_mask(refl, singular_balls, eps)
            pts, refl = pts[keep], refl[keep]
        va, vb = np.asarray(v(pts)), np.asarray(v(refl))
        wa, wb = np.asarray(w(pts)), np.asarray(w(refl))
        scale = max(np.max(np.abs(va)), 1e-300)
        symmetric = (np.max(np.abs(vb - va)) < sym_tol * scale)
        ok = bool(np.min(vb - va) > 0.0 and np.min(wb - wa) > 0.0)
        return ok, symmetric

    trace = []

    def plane_derivative(lam):
        h = qmc.Halton(d=dim - 1, scramble=True, seed=seed + 1)
        u = h.random(64)
        pts = np.empty((64, dim))
        pts[:, perp_cols] = (u - 0.5) * 2.0 * r_check
        pts[:, ax] = lam
        if singular_balls:
            pts = pts[_ball_mask(pts, singular_balls, eps)]
        return float(np.max(partial_derivative(v, pts, ax)))

    lam = lam_hi
    ok, symmetric = check(lam)
    if symmetric:
        return MovingPlaneReport(lam, lam, True, False, trace, eps, ax,
                                 sample_budget)
    if not ok:
        raise ScanExhaustedError(
            f"the top plane {lam} already fails the comparison")
    lambda0 = lam
    trace.append((lam, plane_derivative(lam)))
    lam_fail = None
    lam_pass = lam
    while lam - step >= lam_lo - 1e-12:
        lam = lam - step
        ok, symmetric = check(lam)
        if ok and not symmetric:
            trace.append((lam, plane_derivative(lam)))
            lam_pass = lam
            continue
        lam_fail = lam
        break
    if lam_fail is None:
        return MovingPlaneReport(lambda0, lam_pass, False, True, trace, eps,
                                 ax, sample_budget)
    lo, hi = lam_fail, lam_pass
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        ok, symmetric = check(mid)
        if ok and not symmetric:
            hi = mid
        else:
            lo = mid
    lam_star = 0.5 * (lo + hi)

    def mismatch(lam):
        pts = plane_samples(lam)
        refl = reflect(pts, lam, axis=ax)
        if singular_balls:
            keep = _ball_mask(pts, singular_balls, eps) & \
                _ball_mask(refl, singular_balls, eps)
            pts, refl = pts[keep], refl[keep]
        return float(np.max(np.abs(np.asarray(v(refl)) - np.asarray(v(pts)))))

    # mirror symmetry at the limit plane: the reflection mismatch vanishes
    # linearly as lam approaches lam_star, unlike a singular-set stop
    delta = max(10.0 * bisect_tol, 1e-3 * (lam_hi - lam_lo))
    s0, s1 = mismatch(lam_star), mismatch(lam_star + delta)
    symmetric = s1 > 0.0 and s0 < 0.05 * s1
    return MovingPlaneReport(lambda0, lam_star, symmetric, False, trace, eps,
                             ax, sample_budget)


# ---------------------------------------------------------------------------
# ball convexity


@dataclass
class ConvexityReport:
    verdict: str
    h_values: np.ndarray
    margin: float
    mode: str


def _boundary_frame(n, count, seed=11):
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [seed, 0], dtype=np.uint64)))
    g = rng.standard_normal((count, n))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    t = rng.standard_normal((count, n))
    t -= np.sum(t * dirs, axis=1, keepdims=True) * dirs
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return dirs, t


def ball_convexity(v, center, radius, exp, mode="mean-curvature",
                   boundary_samples=32, grad=None, marginal_tol=1e-6):
    """Sign diagnostic for geodesic convexity of a round ball in g_v.

    mean-curvature mode evaluates, at sampled boundary points with outward
    normal nu,  H = v^(-2/(n-4)) ((n-1)/R + (2(n-1)/(n-4)) v^(-1) dv/dnu);
    the ball is convex when H is uniformly positive, concave when uniformly
    negative (boundaries are umbilic in a conformally flat metric, so the
    mean curvature sign is the full second-fundamental-form sign).

    chart mode moves a boundary point to infinity with an inversion, turning
    the boundary into the plane {x_n = 0} with the ball mapped to
    {x_n > 0}, and reads the sign of the transformed field's x_n-derivative
    on the plane (negative = convex).
    """
    n = exp.n
    center = np.asarray(center, dtype=float).reshape(n)
    if mode == "chart":
        return _chart_convexity(v, center, radius, exp, boundary_samples)
    dirs, _ = _boundary_frame(n, boundary_samples)
    pts = center[None, :] + radius * dirs
    vals = np.asarray(v(pts))
    if np.any(~np.isfinite(vals)):
        raise BoundaryOutsideDomainError("boundary leaves the field's domain")
    if grad is not None:
        dn = np.sum(np.asarray(grad(pts)) * dirs, axis=-1)
    else:
        dn = directional_derivative(v, pts, dirs, h=1e-6 * radius)
    hvals = vals ** (-2.0 / (n - 4)) * (
        (n - 1.0) / radius + (2.0 * (n - 1.0) / (n - 4.0)) * dn / vals)
    scale = float(np.max(np.abs(hvals))) + (n - 1.0) / radius
    margin = float(np.min(np.abs(hvals)) / scale)
    if np.all(hvals > 0) and margin > marginal_tol:
        verdict = "convex"
    elif np.all(hvals < 0) and margin > marginal_tol:
        verdict = "concave"
    elif margin <= marginal_tol:
        verdict = "marginal"
    else:
        verdict = "mixed"
    return ConvexityReport(verdict, hvals, margin, "mean-curvature")


def boundary_plane_chart(center, radius, n, boundary_index=0):
    """Mobius map sending a chosen boundary point of the ball to infinity,
    the boundary sphere to {x_n = 0}, and the interior to {x_n > 0}."""
    center = np.asarray(center, dtype=float).reshape(n)
    dirs, _ = _boundary_frame(n, max(4, boundary_index + 1))
    p = center + radius * dirs[boundary_index]
    inv = SphereInversion(p, 2.0 * radius)
    antipode = 2.0 * center - p
    z0 = inv.apply(antipode)
    zc = inv.apply(center)
    e = zc - z0
    e = e / np.linalg.norm(e)
    en = np.zeros(n)
    en[-1] = 1.0
    wvec = e - en
    nw = np.linalg.norm(wvec)
    # the Householder reflection through (e - en) maps e to en exactly
    rot = np.eye(n) if nw < 1e-14 else np.eye(n) - 2.0 * np.outer(wvec, wvec) / nw ** 2
    shift = -(rot @ z0)
    aff = Similarity(1.0, rot, shift)
    return MobiusMap(n, (inv, aff))


def transformed_factor(v, chart_map, exp):
    """Conformal factor of the pushed-forward metric in the new chart:
    vt(y) = v(Phi^-1 y) |(Phi^-1)'(y)|^((n-4)/2)."""
    inv = chart_map.inverse()
    wexp = (exp.n - 4) / 2.0

    def vt(y):
        x, logd = inv.apply_with_log_derivative(np.asarray(y, dtype=float))
        return np.asarray(v(x)) * np.exp(wexp * logd)

    return vt


def _chart_convexity(v, center, radius, exp, boundary_samples):
    n = exp.n
    chart_map = boundary_plane_chart(center, radius, n)
    vt = transformed_factor(v, chart_map, exp)
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [13, 1], dtype=np.uint64)))
    pts = np.zeros((boundary_samples, n))
    pts[:, :-1] = (rng.random((boundary_samples, n - 1)) - 0.5) * 4.0 * radius
    dn = partial_derivative(vt, pts, n - 1, h=1e-6 * radius)
    scale = float(np.max(np.abs(dn))) + 1e-300
    margin = float(np.min(np.abs(dn)) / scale)
    if np.all(dn < 0):
        verdict = "convex"
    elif np.all(dn > 0):
        verdict = "concave"
    else:
        verdict = "marginal" if margin < 1e-6 else "mixed"
    return ConvexityReport(verdict, dn, margin, "chart")


# ---------------------------------------------------------------------------
# geodesic shooting oracle


def conformal_geodesic_rhs(grad_log_conformal):
    """Right side of the geodesic equation for g = e^(2f) g0:
    x'' = -2 (grad f . x') x' + |x'|^2 grad f."""

    def rhs(t, state):
        k = len(state) // 2
        x, xd = state[:k], state[k:]
        gf = grad_log_conformal(x)
        return np.concatenate([
            xd, -2.0 * float(np.dot(gf, xd)) * xd + float(np.dot(xd, xd)) * gf])

    return rhs


def tangent_geodesic_sign(v, grad_v, exp, center, radius, point, direction,
                          span=0.2, rtol=1e-9):
    """Shoot a geodesic of g_v tangent to the ball boundary and report which
    side it curves to: +1 (leaves the ball, boundary convex there) or
    -1 (dives inside, concave).  Independent of the curvature formulas: it
    only integrates the geodesic ODE."""
    from scipy.integrate import solve_ivp
    n = exp.n
    center = np.asarray(center, dtype=float)
    factor = 2.0 / (n - 4.0)

    def grad_log(x):
        return factor * np.asarray(grad_v(x)) / float(v(x))

    rhs = conformal_geodesic_rhs(grad_log)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    state0 = np.concatenate([np.asarray(point, dtype=float), direction])
    tau = span * radius
    sol = solve_ivp(rhs, (0.0, tau), state0, rtol=rtol, atol=1e-12,
                    dense_output=True)
    ts = np.linspace(0.4 * tau, tau, 8)
    s = np.array([np.linalg.norm(sol.sol(t)[:n] - center) - radius for t in ts])
    return 1 if np.mean(s) > 0 else -1
