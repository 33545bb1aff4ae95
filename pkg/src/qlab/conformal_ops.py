"""Exponent bookkeeping, discrete Laplacians, and curvature evaluators.

Everything here is about metrics of the form g_v = v^(4/(n-4)) g0 on a flat
background: the covariance-defined Q-curvature v^(-q) (-Delta)^2 v, the
tensorial Q formula (kept in two coefficient modes as an audit), the scalar
curvature through the bridge u = v^((n-2)/(n-4)), and the normalized total
Q-curvature functional.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grids import GridField, GridTooSmallError, RadialField, radial_bilaplacian


class DimensionTooSmallError(ValueError):
    """The exponent family degenerates at n = 4 and below."""


class NonpositiveFieldError(ValueError):
    """Conformal factors must be strictly positive."""


@dataclass(frozen=True)
class ConformalExponents:
    """The dimension-derived exponent family, exact in rational arithmetic.

    a = 4/(n-4)        metric exponent
    q = (n+4)/(n-4)    nonlinearity exponent
    p = 2n/(n-4)       volume exponent
    s = (n-2)/(n-4)    scalar-curvature bridge exponent
    """

    n: int
    a: Fraction
    q: Fraction
    p: Fraction
    s: Fraction


def exponents(n):
    n = int(n)
    if n <= 4:
        raise DimensionTooSmallError(f"need n >= 5, got n = {n}")
    d = n - 4
    return ConformalExponents(n, Fraction(4, d), Fraction(n + 4, d),
                              Fraction(2 * n, d), Fraction(n - 2, d))


def equation_constant(n):
    """n(n-4)(n^2-4)/16, the constant in (-Delta)^2 U = K U^q for the bubble."""
    return Fraction(n * (n - 4) * (n * n - 4), 16)


# fourth-order central second-difference weights at offsets -2..2
_LAP_W = (-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0)


def laplacian(f):
    """Fourth-order central-difference Laplacian of a GridField.

    Consumes two nodes per side; the new margin is NaN-filled.
    """
    need = 2 * (f.margin + 2) + 1
    if f.m < need:
        raise GridTooSmallError(f"m = {f.m} < {need} needed for the stencil")
    v = f.values
    h2 = f.h ** 2
    out = v * (f.n * _LAP_W[2] / h2)
    core = (slice(2, f.m - 2),)
    for axis in range(f.n):
        pre = (slice(None),) * axis
        dst = pre + core
        for k, w in ((-2, _LAP_W[0]), (-1, _LAP_W[1]), (1, _LAP_W[3]), (2, _LAP_W[4])):
            src = pre + (slice(2 + k, f.m - 2 + k),)
            out[dst] += (w / h2) * v[src]
    res = f.like(out, margin=f.margin + 2)
    _blank_margin(res)
    return res


def bilaplacian(f):
    """(-Delta)^2 f, i.e. the Laplacian applied twice (the sign squares away)."""
    return laplacian(laplacian(f))


def _blank_margin(f):
    if f.margin == 0:
        return
    k = f.margin
    for axis in range(f.n):
        pre = (slice(None),) * axis
        f.values[pre + (slice(0, k),)] = np.nan
        f.values[pre + (slice(f.m - k, f.m),)] = np.nan


def q_curvature_flatbg(v, exp):
    """Covariance-defined Q-curvature of g_v: Q = v^(-q) (-Delta)^2 v."""
    _require_positive(v.interior() if isinstance(v, GridField) else v.values)
    q = float(exp.q)
    with np.errstate(invalid="ignore", divide="ignore"):
        if isinstance(v, GridField):
            lap2 = bilaplacian(v)
            return lap2.like(lap2.values * np.power(v.values, -q))
        lap2 = radial_bilaplacian(v, exp.n)
        return RadialField(v.radii, lap2.values * np.power(v.values, -q))


def _require_positive(values):
    if not np.all(values[np.isfinite(values)] > 0.0):
        raise NonpositiveFieldError("conformal factor must be > 0")


@dataclass(frozen=True)
class CurvatureData:
    """Pointwise curvature input for the tensorial Q formula.

    R is the scalar curvature, lapR its Laplacian, ric2 the squared norm of
    the Ricci tensor; ric2 >= R^2/n by Cauchy-Schwarz.  Ints and Fractions
    stay exact through q_curvature_tensorial.
    """

    R: float
    lapR: float
    ric2: float


def q_curvature_tensorial(c, n, mode="covariance-consistent"):
    """Tensorial Q-curvature from (R, Delta R, |Ric|^2).

    mode "as-printed" uses the Ricci coefficient 2(n-4)/(n-2)^2; mode
    "covariance-consistent" halves it to (n-4)/(n-2)^2, the unique choice
    that agrees with q_curvature_flatbg on the round sphere.  Exact inputs
    (ints or Fractions) give an exact rational result.
    """
    if n <= 4:
        raise DimensionTooSmallError(f"need n >= 5, got n = {n}")
    exact = all(isinstance(x, (int, Fraction)) for x in (c.R, c.lapR, c.ric2))
    F = Fraction if exact else float
    R, lapR, ric2 = F(c.R), F(c.lapR), F(c.ric2)
    if ric2 < 0 or n * ric2 < R * R:
        raise ValueError("|Ric|^2 must satisfy ric2 >= 0 and ric2 >= R^2/n")
    lap_term = -F(Fraction(n - 4, 4 * (n - 1))) * lapR
    r2_coeff = Fraction((n - 4) * (n ** 3 - 4 * n ** 2 + 16 * n - 16),
                        16 * (n - 1) ** 2 * (n - 2) ** 2)
    if mode == "as-printed":
        ric_coeff = Fraction(2 * (n - 4), (n - 2) ** 2)
    elif mode == "covariance-consistent":
        ric_coeff = Fraction(n - 4, (n - 2) ** 2)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return lap_term + F(r2_coeff) * R * R - F(ric_coeff) * ric2


def round_sphere_data(n):
    """CurvatureData of the unit round n-sphere: R = n(n-1), |Ric|^2 = n(n-1)^2."""
    return CurvatureData(R=n * (n - 1), lapR=0, ric2=n * (n - 1) ** 2)


def scalar_curvature_flatbg(v, exp):
    """Scalar curvature of g_v via the bridge u = v^s, s = (n-2)/(n-4).

    R = (4(n-1)/(n-2)) u^(-(n+2)/(n-2)) (-Delta u).  This is the true scalar
    curvature; the hatted variant of the first-order identity equals
    (n-2)/(4(n-1)) times it.
    """
    n = exp.n
    s = float(exp.s)
    pw = (n + 2) / (n - 2)
    c = 4.0 * (n - 1) / (n - 2)
    if isinstance(v, GridField):
        _require_positive(v.interior())
        u = v.like(np.power(v.values, s))
        lap_u = laplacian(u)
        return lap_u.like(-c * lap_u.values * np.power(u.values, -pw))
    _require_positive(v.values)
    from .grids import radial_laplacian
    u = RadialField(v.radii, np.power(v.values, s))
    lap_u = radial_laplacian(u, n)
    return RadialField(v.radii, -c * lap_u.values * np.power(u.values, -pw))


def conformal_laplacian_flat(u, n):
    """L[g0] u = -(4(n-1)/(n-2)) Delta u on the flat background."""
    c = 4.0 * (n - 1) / (n - 2)
    if isinstance(u, GridField):
        lap = laplacian(u)
        return lap.like(-c * lap.values)
    from .grids import radial_laplacian
    lap = radial_laplacian(u, n)
    return RadialField(u.radii, -c * lap.values)


class ZeroVolumeError(ValueError):
    """The conformal volume integral vanished."""


def paneitz_functional(v, exp):
    """Normalized total Q-curvature of g_v over the valid interior box.

    Returns  integral(Q[g_v] v^p dx) / (integral(v^p dx))^((n-4)/n)  with
    both integrals over the same interior region (trapezoid weights), so the
    Q == 1 normalization identity holds up to quadrature error.
    """
    n = exp.n
    Q = q_curvature_flatbg(v, exp)
    k = Q.margin
    w1 = _trapezoid_axis_weights(v.m, k) * v.h
    vol_el = v.interior(extra=k - v.margin) ** float(exp.p)
    q_int = Q.interior()
    weights = w1
    for _ in range(n - 1):
        weights = np.multiply.outer(weights, w1)
    denom = float(np.sum(vol_el * weights))
    if denom <= 0.0:
        raise ZeroVolumeError("conformal volume integral is zero")
    numer = float(np.sum(q_int * vol_el * weights))
    return numer / denom ** ((n - 4) / n)


def _trapezoid_axis_weights(m, k):
    w = np.ones(m - 2 * k)
    w[0] = w[-1] = 0.5
    return w


def paneitz_functional_radial(profile, exp, r_max, nodes=4096):
    """High-accuracy radial version of the functional for radial factors.

    ``profile`` is a callable radial profile v(r).  Q is computed with the
    fourth-order radial bilaplacian; the integrals run over the ball of
    radius r_max.  The grid is padded by four nodes so the stencil is valid
    on all of [0, r_max].
    """
    h = r_max / (nodes - 1)
    r = np.linspace(0.0, r_max + 4 * h, nodes + 4)
    v = RadialField(r, profile(r))
    _require_positive(v.values)
    Q = q_curvature_flatbg(v, exp)
    n = exp.n
    sphere_area = 2.0 * np.pi ** (n / 2) / _gamma_half(n)
    vol_el = v.values[:nodes] ** float(exp.p) * r[:nodes] ** (n - 1)
    denom = sphere_area * np.trapezoid(vol_el, r[:nodes])
    if denom <= 0.0:
        raise ZeroVolumeError("conformal volume integral is zero")
    numer = sphere_area * np.trapezoid(Q.values[:nodes] * vol_el, r[:nodes])
    return numer / denom ** ((n - 4) / n)


def _gamma_half(n):
    from scipy.special import gamma
    return gamma(n / 2)


def grid_laplacian_stencil(n, h):
    """The fourth-order Laplacian as an explicit offset -> weight map."""
    stencil = {}
    for axis in range(n):
        for k, w in zip((-2, -1, 0, 1, 2), _LAP_W):
            off = [0] * n
            off[axis] = k
            key = tuple(off)
            stencil[key] = stencil.get(key, 0.0) + w / h ** 2
    return stencil


def grid_bilaplacian_stencil(n, h):
    """Composition of the Laplacian stencil with itself."""
    lap = grid_laplacian_stencil(n, h)
    out = {}
    for o1, w1 in lap.items():
        for o2, w2 in lap.items():
            key = tuple(a + b for a, b in zip(o1, o2))
            out[key] = out.get(key, 0.0) + w1 * w2
    return {k: w for k, w in out.items() if w != 0.0}


def apply_stencil_at(fn, stencil, h, points):
    """Evaluate a finite-difference stencil of ``fn`` at scattered grid nodes.

    ``stencil`` maps integer node offsets to weights (spacing already folded
    into the weights); ``h`` converts offsets to physical displacements.
    This is how residuals on fine six-dimensional grids are sampled without
    materializing the full node array: only (chunk, #stencil, n) coordinate
    blocks exist at any time.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    offs = np.array(list(stencil.keys()), dtype=float) * h
    wts = np.array(list(stencil.values()))
    n = points.shape[1]
    out = np.empty(len(points))
    chunk = max(1, 20_000_000 // max(1, len(offs) * n))
    for i in range(0, len(points), chunk):
        blk = points[i:i + chunk]
        coords = blk[:, None, :] + offs[None, :, :]
        out[i:i + chunk] = fn(coords) @ wts
    return out


def sampled_equation_residual(fn, rhs_fn, n, h, points):
    """Relative sup-residual of (-Delta_h)^2 fn - rhs at scattered grid nodes."""
    stencil = grid_bilaplacian_stencil(n, h)
    lhs = apply_stencil_at(fn, stencil, h, points)
    rhs = rhs_fn(np.atleast_2d(points))
    scale = np.max(np.abs(rhs))
    return float(np.max(np.abs(lhs - rhs)) / scale)
