"""Spherical averages and the iterated radial lower-bound certificate.

The engine drives the sign-contradiction machinery: a field w >= 0 with
(-Delta)^2 w = w^q and a hypothetical u(0) = -Delta w(0) < 0 forces the
spherical average of w to grow like c_k r^(sigma_k) with sigma_k exploding
geometrically, which no finite field can sustain.  Everything here is the
concrete quadrature and bookkeeping for that chain.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .conformal_ops import exponents
from .grids import GridField, RadialField, SphereExitsDomainError


class NegativeSourceError(ValueError):
    pass


class NegativeSampleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spherical quadrature


_RULE_CACHE = {}


def spherical_rule(n, level=4, mc_nodes=8192, seed=1234):
    """Quadrature rule on the unit sphere S^(n-1): (directions, weights).

    For n <= 6, a product rule: Gauss-Jacobi in each polar cosine (exact to
    polynomial degree 2*level - 1 per angle) and a uniform azimuthal grid of
    2*level points.  For n > 6, fixed-seed Monte Carlo directions.  Weights
    are normalized to sum to one, so averaging a constant is exact.
    """
    key = (n, level, mc_nodes, seed)
    if key in _RULE_CACHE:
        return _RULE_CACHE[key]
    if n < 2:
        raise ValueError("need n >= 2 for a sphere rule")
    if n > 6:
        rng = np.random.Generator(np.random.Philox(key=np.array(
            [seed, 0], dtype=np.uint64)))
        g = rng.standard_normal((mc_nodes, n))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
        w = np.full(mc_nodes, 1.0 / mc_nodes)
        _RULE_CACHE[key] = (dirs, w)
        return dirs, w
    from scipy.special import roots_jacobi
    axes_nodes, axes_weights = [], []
    for i in range(1, n - 1):
        m = n - 1 - i
        t, w = roots_jacobi(level, (m - 1) / 2.0, (m - 1) / 2.0)
        axes_nodes.append(t)
        axes_weights.append(w)
    k_phi = max(4, 2 * level)
    phi = 2.0 * np.pi * np.arange(k_phi) / k_phi
    axes_nodes.append(phi)
    axes_weights.append(np.full(k_phi, 1.0 / k_phi))
    grids = np.meshgrid(*axes_nodes, indexing="ij")
    wgrids = np.meshgrid(*axes_weights, indexing="ij")
    weights = np.ones_like(grids[0])
    for wg in wgrids:
        weights = weights * wg
    sin_running = np.ones_like(grids[0])
    comps = []
    for i in range(n - 2):
        t = grids[i]
        comps.append(sin_running * t)
        sin_running = sin_running * np.sqrt(np.maximum(0.0, 1.0 - t * t))
    comps.append(sin_running * np.cos(grids[-1]))
    comps.append(sin_running * np.sin(grids[-1]))
    dirs = np.stack([c.ravel() for c in comps], axis=-1)
    w = weights.ravel()
    w = w / np.sum(w)
    _RULE_CACHE[key] = (dirs, w)
    return dirs, w


def spherical_average(f, center, radii, n=None, level=4, chunk=256):
    """Mean of f over spheres |x - center| = r for each requested radius."""
    if isinstance(f, GridField):
        n = f.n
        fn = _grid_evaluator(f, center, max(radii))
    else:
        if n is None:
            raise ValueError("n is required for callable fields")
        fn = f
    center = np.asarray(center, dtype=float).reshape(n)
    radii = np.asarray(radii, dtype=float)
    if radii[0] != 0.0:
        raise ValueError("radii must start at 0 (RadialField contract)")
    dirs, w = spherical_rule(n, level=level)
    out = np.empty(len(radii))
    for i in range(0, len(radii), chunk):
        r = radii[i:i + chunk]
        pts = center[None, None, :] + r[:, None, None] * dirs[None, :, :]
        out[i:i + chunk] = fn(pts) @ w
    return RadialField(radii, out)


def _grid_evaluator(f, center, r_max):
    from scipy.interpolate import RegularGridInterpolator
    k = f.margin
    ax = f.axis()[k:f.m - k] if k else f.axis()
    vals = f.interior()
    lo, hi = ax[0], ax[-1]
    center = np.asarray(center, dtype=float)
    if np.any(center - r_max < lo) or np.any(center + r_max > hi):
        raise SphereExitsDomainError(
            f"sphere of radius {r_max} leaves the valid box [{lo}, {hi}]^n")
    interp = RegularGridInterpolator((ax,) * f.n, vals)

    def fn(pts):
        return interp(pts.reshape(-1, f.n)).reshape(pts.shape[:-1])

    return fn


# ---------------------------------------------------------------------------
# the nested radial integrals


def _cumulative_weighted(radii, values, n):
    """cum[i] = integral_0^{r_i} t^(n-1) f(t) dt, exact for piecewise-linear f.

    The t^(n-1) weight is integrated in closed form on every cell, which is
    what keeps the subsequent s^(1-n) division regular down to r = 0.
    """
    r0, r1 = radii[:-1], radii[1:]
    f0, f1 = values[:-1], values[1:]
    t1 = (r1 ** n - r0 ** n) / n
    t2 = (r1 ** (n + 1) - r0 ** (n + 1)) / (n + 1)
    slope = (f1 - f0) / (r1 - r0)
    cells = f0 * t1 + slope * (t2 - r0 * t1)
    return np.concatenate([[0.0], np.cumsum(cells)])


def invert_radial_laplacian(radii, rhs, n, value_at_zero):
    """u with -Delta u = rhs (radial), u(0) given:
    u(r) = u(0) - int_0^r s^(1-n) int_0^s t^(n-1) rhs(t) dt ds."""
    inner = _cumulative_weighted(radii, rhs, n)
    g = np.zeros_like(radii)
    g[1:] = radii[1:] ** (1 - n) * inner[1:]
    outer = cumulative_trapezoid(g, radii, initial=0.0)
    return value_at_zero - outer


@dataclass
class RadialState:
    """The averaged pair: wbar with -Delta wbar = ubar, ubar with
    -Delta ubar = source."""

    radii: np.ndarray
    wbar: RadialField
    ubar: RadialField
    n: int
    q: Fraction


def integrate_radial_system(w0, u0, source, n):
    """Integrate the averaged system from a nonnegative source profile."""
    if np.any(source.values < 0.0):
        raise NegativeSourceError("source must be nonnegative")
    radii = source.radii
    ubar = invert_radial_laplacian(radii, source.values, n, u0)
    wbar = invert_radial_laplacian(radii, ubar, n, w0)
    return RadialState(radii, RadialField(radii, wbar),
                       RadialField(radii, ubar), n, exponents(n).q)


# ---------------------------------------------------------------------------
# the exponent sequence and the certificate


def sigma_sequence(n, k_max):
    """sigma_0 = 2, sigma_k = q sigma_{k-1} + 4, exact rationals.

    The closed form 2 q^k + (4/(q-1)) q^k - 4/(q-1) is asserted against the
    recurrence on every call.
    """
    q = exponents(n).q
    seq = [Fraction(2)]
    for _ in range(k_max):
        seq.append(q * seq[-1] + 4)
    c = Fraction(4) / (q - 1)
    for k, s in enumerate(seq):
        assert s == 2 * q ** k + c * q ** k - c, "closed form disagrees"
    return seq


@dataclass
class CertificateEntry:
    k: int
    sigma: Fraction
    log_coeff: float          # exact four-factor chain
    coeff: float              # exp(log_coeff), 0.0 on underflow
    log_coeff_product: float  # the (n + sigma_j)^(-4 q^(k-j)) product form
    coeff_product: float


@dataclass
class IterationCertificate:
    """Certified pointwise lower bounds wbar(r) >= c_k r^(sigma_k).

    entries[k] carries the exact iteration coefficient (its k = 1 value is
    the explicit two-denominator pair of the first iteration) and the weaker
    product-form coefficient; (c1, c2) collapse the whole family into
    wbar(r) >= c1 (c2 r)^(sigma_k), which diverges in k wherever c2 r > 1.
    """

    n: int
    u0: float
    q: Fraction
    entries: list
    log_c1: float
    log_c2: float
    c1: float
    c2: float
    divergence_radius: float

    def log_bound(self, k, r):
        """log of c_k r^(sigma_k) (exact chain), safe for huge sigma."""
        e = self.entries[k]
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return e.log_coeff + float(e.sigma) * np.log(r)

    def bound(self, k, r):
        with np.errstate(over="ignore"):
            return np.exp(self.log_bound(k, r))


def _safe_exp(x):
    return float(np.exp(x)) if x < 700.0 else math.inf


def iterate_lower_bounds(n, u0, k_max, radii=None):
    """Run the lower-bound iteration for a hypothetical u(0) = u0 < 0.

    All coefficients are carried in log space; the collapsed pair uses the
    exactly-summed series  S = sum_j q^(-j) log(n + sigma_j)  so that
    log c2 = (log(-u0/(2n)) - 4 S)/(2 + 4/(q-1)) and c1 = c2^(4/(q-1)),
    valid for every n >= 5 and independent of k.
    """
    if u0 >= 0.0:
        raise ValueError("the iteration needs u0 < 0")
    q = exponents(n).q
    qf = float(q)
    sig = sigma_sequence(n, k_max)
    log_c0 = math.log(-u0 / (2.0 * n))
    entries = [CertificateEntry(0, sig[0], log_c0, math.exp(log_c0),
                                log_c0, math.exp(log_c0))]
    log_exact, log_prod = log_c0, log_c0
    for k in range(1, k_max + 1):
        qs = q * sig[k - 1]
        factors = (n + qs) * (qs + 2) * (n + 2 + qs) * (qs + 4)
        log_exact = qf * log_exact - math.log(float(factors))
        log_prod = qf * log_prod - 4.0 * math.log(float(n + sig[k]))
        entries.append(CertificateEntry(
            k, sig[k], log_exact,
            math.exp(log_exact) if log_exact > -745.0 else 0.0,
            log_prod,
            math.exp(log_prod) if log_prod > -745.0 else 0.0))
    b = 2.0 + 4.0 / (qf - 1.0)
    s_series = _log_sigma_series(n, qf)
    log_c2 = (log_c0 - 4.0 * s_series) / b
    log_c1 = (4.0 / (qf - 1.0)) * log_c2
    c2 = math.exp(log_c2)
    div_r = 1.0 / c2
    if radii is not None:
        r = np.asarray(radii, dtype=float)
        above = r[r * c2 > 1.0]
        div_r = float(above[0]) if len(above) else math.inf
    return IterationCertificate(n, u0, q, entries, log_c1, log_c2,
                                math.exp(log_c1), c2, div_r)


def _log_sigma_series(n, qf):
    """sum_{j>=1} q^(-j) log(n + sigma_j), evaluated to machine precision."""
    lq = math.log(qf)
    log_b = math.log(2.0 + 4.0 / (qf - 1.0))
    sigma = 2.0
    total = 0.0
    j = 0
    while True:
        j += 1
        if sigma < 1e280:
            sigma = qf * sigma + 4.0
            log_term = math.log(n + sigma)
        else:
            log_term = log_b + j * lq
        term = qf ** (-j) * log_term
        total += term
        if term < 1e-17 * max(total, 1.0) and j > 4:
            return total
        if j > 100_000:
            raise RuntimeError("series failed to converge")


def certificate_simulation(n, u0, k_max, radii):
    """Drive the averaged system with the self-reinforcing source bounds.

    Step k feeds the k-1 bound through the mean-power inequality:
    source_k(r) = (c_{k-1} r^(sigma_{k-1}))^q, then integrates the system
    with w(0) = 0.  The resulting wbar dominates c_k r^(sigma_k) plus the
    seeding quadratic term, so every certificate entry can be checked
    against an actual quadrature run.  Returns the list of simulated wbar
    fields for k = 1..k_max.
    """
    cert = iterate_lower_bounds(n, u0, k_max)
    radii = np.asarray(radii, dtype=float)
    sims = []
    with np.errstate(divide="ignore", over="ignore"):
        logr = np.log(radii, out=np.full_like(radii, -np.inf), where=radii > 0)
    qf = float(cert.q)
    for k in range(1, k_max + 1):
        prev = cert.entries[k - 1]
        log_src = qf * (prev.log_coeff + float(prev.sigma) * logr)
        source = RadialField(radii, np.exp(np.minimum(log_src, 700.0)))
        state = integrate_radial_system(0.0, u0, source, n)
        sims.append(state)
    return cert, sims


# ---------------------------------------------------------------------------
# the mean-power inequality


def jensen_check(samples, q):
    """(mean w)^q <= mean(w^q) for nonnegative samples; returns (ok, slack)."""
    w = np.asarray(samples, dtype=float)
    if np.any(w < 0.0):
        raise NegativeSampleError("samples must be nonnegative")
    if q <= 1.0:
        raise ValueError("the inequality direction needs q > 1")
    lhs = float(np.mean(w)) ** q
    rhs = float(np.mean(w ** q))
    slack = rhs - lhs
    scale = max(abs(lhs), abs(rhs), 1.0)
    return slack >= -1e-12 * scale, slack
