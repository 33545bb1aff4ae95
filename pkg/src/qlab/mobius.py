"""Mobius transformations of R^n u {inf}, Schottky groups, Poincare series.

Maps are stored as chains of primitives (similarities and sphere inversions)
and never reduced to a normal form; composition is chain concatenation and
equality is only ever tested by sampled action.  The conformal derivative in
the round metric is obtained from the Euclidean one through the chart factor:
|g'_S(x)| = |g'(x)| (1+|x|^2)/(1+|g x|^2).
"""

import math
from dataclasses import dataclass

import numpy as np


class PoleHitError(ArithmeticError):
    """A point coincided with the pole of a sphere inversion."""


class DepthOverflowError(RuntimeError):
    """Word enumeration would exceed the configured budget."""


class TileLookupError(LookupError):
    """Query point is not inside any covered group tile."""


class NonconvergentRatioError(RuntimeError):
    """Shell ratios too unsettled to estimate the exponent."""


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Similarity:
    """x -> scale * (rot @ x) + shift with rot orthogonal (None = identity)."""

    scale: float
    rot: object
    shift: np.ndarray

    def apply(self, x):
        if self.rot is not None:
            x = x @ self.rot.T
        return self.scale * x + self.shift

    def log_deriv(self, x):
        return math.log(self.scale)

    def inverse(self):
        inv_rot = None if self.rot is None else self.rot.T
        shift = -np.asarray(self.shift) / self.scale
        if inv_rot is not None:
            shift = shift @ inv_rot.T
        return Similarity(1.0 / self.scale, inv_rot, shift)


@dataclass(frozen=True)
class SphereInversion:
    """x -> c + r^2 (x - c)/|x - c|^2, an involution fixing the sphere."""

    center: np.ndarray
    radius: float

    def apply(self, x):
        d = x - self.center
        rho2 = np.sum(d * d, axis=-1, keepdims=True)
        if np.any(rho2 == 0.0):
            raise PoleHitError("point at the inversion center")
        return self.center + self.radius ** 2 * d / rho2

    def log_deriv(self, x):
        d = x - self.center
        rho2 = np.sum(d * d, axis=-1)
        if np.any(rho2 == 0.0):
            raise PoleHitError("point at the inversion center")
        return 2.0 * math.log(self.radius) - np.log(rho2)

    def inverse(self):
        return self


@dataclass(frozen=True)
class MobiusMap:
    """Composition chain; steps[0] acts first."""

    dim: int
    steps: tuple

    @classmethod
    def identity(cls, dim):
        return cls(dim, ())

    def __call__(self, x):
        return self.apply(x)

    def apply(self, x):
        y = np.asarray(x, dtype=float)
        for s in self.steps:
            y = s.apply(y)
        return y

    def apply_with_log_derivative(self, x):
        """Image point and log of the Euclidean conformal derivative."""
        y = np.asarray(x, dtype=float)
        logd = np.zeros(y.shape[:-1])
        for s in self.steps:
            logd = logd + s.log_deriv(y)
            y = s.apply(y)
        return y, logd

    def conformal_derivative(self, x):
        _, logd = self.apply_with_log_derivative(x)
        return np.exp(logd)

    def inverse(self):
        return MobiusMap(self.dim, tuple(s.inverse() for s in reversed(self.steps)))

    def compose(self, other):
        """self o other: apply ``other`` first."""
        return MobiusMap(self.dim, other.steps + self.steps)


def compose(gamma, sigma):
    return gamma.compose(sigma)


def sphere_conformal_derivative(gamma, x):
    """|gamma'| in the round metric via the chart factor (fixed chart)."""
    x = np.asarray(x, dtype=float)
    y, logd = gamma.apply_with_log_derivative(x)
    return np.exp(_sphere_log_factor(x, y, logd))


def _sphere_log_factor(x, y, logd_euclidean):
    x2 = np.sum(x * x, axis=-1)
    y2 = np.sum(y * y, axis=-1)
    return logd_euclidean + np.log1p(x2) - np.log1p(y2)


def similarity(dim, scale=1.0, rot=None, shift=None):
    if shift is None:
        shift = np.zeros(dim)
    if rot is not None:
        rot = np.asarray(rot, dtype=float)
    return MobiusMap(dim, (Similarity(float(scale), rot, np.asarray(shift, float)),))


def inversion(center, radius):
    center = np.asarray(center, dtype=float)
    return MobiusMap(len(center), (SphereInversion(center, float(radius)),))


# ---------------------------------------------------------------------------
# spheres and their Mobius images


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def contains(self, x, pad=0.0):
        d = np.asarray(x, dtype=float) - self.center
        return np.sum(d * d, axis=-1) <= (self.radius + pad) ** 2


def map_sphere(gamma, sphere):
    """Image of a sphere under a Mobius map (spheres map to spheres).

    Raises if the sphere passes through an inversion pole along the chain;
    the Schottky combinatorics used here never trigger that case.
    """
    c = np.asarray(sphere.center, dtype=float)
    r = float(sphere.radius)
    for s in gamma.steps:
        if isinstance(s, Similarity):
            c = s.apply(c)
            r = s.scale * r
        else:
            d = c - s.center
            denom = float(np.dot(d, d)) - r * r
            if abs(denom) < 1e-14 * (r * r + np.dot(d, d)):
                raise ValueError("sphere passes through an inversion pole")
            c = s.center + s.radius ** 2 * d / denom
            r = s.radius ** 2 * r / abs(denom)
    return Sphere(c, r)


# ---------------------------------------------------------------------------
# Schottky groups


def schottky_generator(sa, sb):
    """Mobius map sending the exterior of sphere ``sa`` onto the interior of
    ``sb`` with sa itself landing exactly on sb.

    Built as (similarity sa -> sb) o (inversion in sa) o (reflection through
    the axis plane); the extra reflection keeps the composition orientation
    preserving.
    """
    a, b = np.asarray(sa.center, float), np.asarray(sb.center, float)
    dim = len(a)
    axis = b - a
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise ValueError("pairing spheres must have distinct centers")
    e = axis / norm
    house = np.eye(dim) - 2.0 * np.outer(e, e)
    reflect = Similarity(1.0, house, a - house @ a)
    invert = SphereInversion(a, sa.radius)
    ratio = sb.radius / sa.radius
    move = Similarity(ratio, None, b - ratio * a)
    return MobiusMap(dim, (reflect, invert, move))


class SchottkyGroup:
    """Free group generated by sphere pairings.

    ``spheres`` holds the 2g pairing spheres; pairing (i, j) means generator
    g_k maps ext(spheres[i]) onto int(spheres[j]).  Letters are nonzero ints:
    +k for g_k, -k for its inverse (k = 1..g).
    """

    def __init__(self, dim, spheres, pairings, verify=True):
        self.dim = dim
        self.spheres = [Sphere(np.asarray(s.center, float), float(s.radius))
                        for s in spheres]
        self.pairings = [tuple(p) for p in pairings]
        used = [i for p in self.pairings for i in p]
        if sorted(used) != list(range(len(self.spheres))):
            raise ValueError("pairings must use each sphere exactly once")
        self.generators = [schottky_generator(self.spheres[i], self.spheres[j])
                           for i, j in self.pairings]
        if verify:
            self._verify_disjoint()
            self._verify_pairing()

    @property
    def rank(self):
        return len(self.pairings)

    def letters(self):
        return [k for k in range(1, self.rank + 1)] + \
               [-k for k in range(1, self.rank + 1)]

    def generator(self, letter):
        g = self.generators[abs(letter) - 1]
        return g if letter > 0 else g.inverse()

    def target_sphere_index(self, letter):
        i, j = self.pairings[abs(letter) - 1]
        return j if letter > 0 else i

    def word_map(self, word):
        """Composition for a letter tuple; word (a, b) acts as g_a o g_b."""
        m = MobiusMap.identity(self.dim)
        for letter in word:
            m = m.compose(self.generator(letter))
        return m

    def in_fundamental_domain(self, x, pad=0.0):
        """Outside all 2g closed pairing balls (vectorized over points)."""
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape[:-1], dtype=bool)
        for s in self.spheres:
            inside |= s.contains(x, pad=pad)
        return ~inside

    def fundamental_point(self):
        """A deterministic point of the fundamental domain."""
        if not self.spheres:
            return np.zeros(self.dim)
        scale = 3.0 * max(np.linalg.norm(s.center) + s.radius for s in self.spheres)
        candidates = [np.zeros(self.dim)]
        for axis in range(self.dim):
            for sign in (1.0, -1.0):
                p = np.zeros(self.dim)
                p[axis] = sign * scale
                candidates.append(p)
        margin = 0.1 * min(s.radius for s in self.spheres)
        for p in candidates:
            if self.in_fundamental_domain(p, pad=margin):
                return p
        raise ValueError("no fundamental-domain point among the candidates")

    def _verify_disjoint(self):
        for i in range(len(self.spheres)):
            for j in range(i + 1, len(self.spheres)):
                si, sj = self.spheres[i], self.spheres[j]
                gap = np.linalg.norm(si.center - sj.center) - si.radius - sj.radius
                if gap <= 0.0:
                    raise ValueError(
                        f"pairing spheres {i} and {j} are not separated (gap {gap})")

    def _verify_pairing(self):
        dirs = np.vstack([np.eye(self.dim), -np.eye(self.dim)])
        for k, (i, j) in enumerate(self.pairings):
            src, dst = self.spheres[i], self.spheres[j]
            for fac in (1.0 + 1e-9, 1.5, 4.0):
                pts = src.center + fac * src.radius * dirs
                img = self.generators[k].apply(pts)
                if not np.all(dst.contains(img, pad=1e-9)):
                    raise ValueError(f"generator {k} does not map exterior "
                                     f"samples into its target ball")


def two_generator_group(n, separation=6.0, radius=1.0):
    """Strongly separated rank-2 Schottky group: pairing balls on two axes."""
    e1, e2 = np.zeros(n), np.zeros(n)
    e1[0] = 1.0
    e2[1] = 1.0
    spheres = [Sphere(-separation * e1, radius), Sphere(separation * e1, radius),
               Sphere(-separation * e2, radius), Sphere(separation * e2, radius)]
    return SchottkyGroup(n, spheres, [(0, 1), (2, 3)])


def cyclic_loxodromic_group(n, ratio=4.0, rho=0.5):
    """Rank-1 group generated by a dilation conjugated into sphere pairs.

    The generator is J o (x -> ratio x) o J with J the inversion in the unit
    sphere about e_1; it pairs the J-images of |x| = rho and |x| = ratio*rho.
    """
    e1 = np.zeros(n)
    e1[0] = 1.0
    J = inversion(e1, 1.0)
    dil = similarity(n, scale=ratio)
    gen = J.compose(dil).compose(J)
    s_in = map_sphere(J, Sphere(np.zeros(n), rho))
    s_out = map_sphere(J, Sphere(np.zeros(n), ratio * rho))
    group = SchottkyGroup.__new__(SchottkyGroup)
    group.dim = n
    group.spheres = [s_in, s_out]
    group.pairings = [(0, 1)]
    group.generators = [gen]
    group._verify_disjoint()
    group._verify_pairing()
    return group


# ---------------------------------------------------------------------------
# word enumeration


def word_count(rank, length):
    """1 + sum_{k<=L} 2g (2g-1)^(k-1), the reduced-word count of a rank-g
    free group."""
    g2 = 2 * rank
    total = 1
    for k in range(1, length + 1):
        total += g2 * (g2 - 1) ** (k - 1)
    return total


def enumerate_words(group, length, max_words=500_000):
    """All reduced words of length <= L with their composed maps."""
    if length < 0:
        raise ValueError("length must be >= 0")
    if word_count(group.rank, length) > max_words:
        raise DepthOverflowError(
            f"{word_count(group.rank, length)} words exceed budget {max_words}")
    out = [((), MobiusMap.identity(group.dim))]
    frontier = [((), MobiusMap.identity(group.dim))]
    for _ in range(length):
        nxt = []
        for word, gmap in frontier:
            for letter in group.letters():
                if word and word[-1] == -letter:
                    continue
                nxt.append((word + (letter,), gmap.compose(group.generator(letter))))
        out.extend(nxt)
        frontier = nxt
    return out


# ---------------------------------------------------------------------------
# Poincare series


class ShellScan:
    """Per-word-length log spherical derivatives at a base point.

    shells[k] is the array of log |gamma'_S(x)| over the reduced words of
    length k; every shell sum and ratio is a cheap function of delta.
    """

    def __init__(self, shells, base_point):
        self.shells = shells
        self.base_point = base_point

    @property
    def depth(self):
        return len(self.shells) - 1

    def shell_sums(self, delta):
        return np.array([np.sum(np.exp(delta * s)) for s in self.shells])

    def partial_sum(self, delta):
        return float(np.sum(self.shell_sums(delta)))

    def shell_ratios(self, delta):
        sums = self.shell_sums(delta)
        return sums[2:] / sums[1:-1]

    def tail_ratio(self, delta, use=3):
        ratios = self.shell_ratios(delta)
        if len(ratios) < use:
            raise NonconvergentRatioError("not enough shells for a tail ratio")
        return float(np.mean(ratios[-use:]))


def poincare_shell_scan(group, length, x=None):
    """Scan all reduced words of length <= L, left-extending a frontier of
    (image, log-derivative) arrays; cost is O(words) vector operations."""
    if x is None:
        x = group.fundamental_point()
    x = np.asarray(x, dtype=float)
    x2 = float(np.dot(x, x))
    if group.rank == 0:
        # only the identity term survives
        return ShellScan([np.zeros(1)] + [np.empty(0)] * length, x)
    shells = [np.zeros(1)]
    frontier = {}
    for letter in group.letters():
        g = group.generator(letter)
        y, logd = g.apply_with_log_derivative(x[None, :])
        frontier[letter] = (y, logd)
    shells.append(_collect_shell(frontier, x2))
    for _ in range(2, length + 1):
        nxt = {}
        for letter in group.letters():
            blocks_y = [frontier[l][0] for l in group.letters() if l != -letter]
            blocks_d = [frontier[l][1] for l in group.letters() if l != -letter]
            Y = np.concatenate(blocks_y, axis=0)
            D = np.concatenate(blocks_d, axis=0)
            g = group.generator(letter)
            Y2, step = g.apply_with_log_derivative(Y)
            nxt[letter] = (Y2, D + step)
        frontier = nxt
        shells.append(_collect_shell(frontier, x2))
    return ShellScan(shells[: length + 1], x)


def _collect_shell(frontier, x2):
    parts = []
    for y, logd in frontier.values():
        y2 = np.sum(y * y, axis=-1)
        parts.append(logd + math.log1p(x2) - np.log1p(y2))
    return np.concatenate(parts)


def poincare_partial_sum(group, delta, length, x=None):
    """Sum of |gamma'_S(x)|^delta over reduced words of length <= L, with
    the per-length shell subtotals."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    scan = poincare_shell_scan(group, length, x)
    sums = scan.shell_sums(delta)
    return float(np.sum(sums)), sums


@dataclass(frozen=True)
class ExponentEstimate:
    """Bisection estimate of the Poincare exponent (a heuristic deep-shell
    estimator, not a rigorous bound)."""

    delta_hat: float
    shell_sums: np.ndarray
    ratios: np.ndarray
    depth: int
    gate: bool
    threshold: float


def estimate_poincare_exponent(group, depth=10, tol=1e-4, x=None, use=3):
    """delta such that the deep-shell ratio crosses 1, by bisection.

    The gate records whether the estimate clears (n-4)/2, the convergence
    threshold the series arguments need.
    """
    if group.rank < 1:
        raise ValueError("group must have at least one generator")
    scan = poincare_shell_scan(group, depth, x)
    threshold = (group.dim - 4) / 2.0

    def f(delta):
        return scan.tail_ratio(delta, use=use) - 1.0

    lo, hi = 0.0, 1.0
    if f(lo) <= 0.0:
        delta_hat = 0.0
    else:
        while f(hi) > 0.0:
            hi *= 2.0
            if hi > 64.0:
                raise NonconvergentRatioError(
                    "shell ratios never drop below 1; scan deeper")
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if f(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        delta_hat = 0.5 * (lo + hi)
    ratios = scan.shell_ratios(delta_hat)
    spread = np.max(np.abs(ratios[-use:] - np.mean(ratios[-use:])))
    if spread > 0.75 * max(np.mean(ratios[-use:]), 1e-12):
        raise NonconvergentRatioError(
            f"tail shell ratios too unsettled (spread {spread:.3g})")
    return ExponentEstimate(delta_hat, scan.shell_sums(delta_hat), ratios,
                            depth, bool(delta_hat < threshold), threshold)


# ---------------------------------------------------------------------------
# automorphic extension


def limit_ball_cover(group, depth):
    """Covering of the limit set by word images of the pairing balls."""
    items = [(letter, group.spheres[group.target_sphere_index(letter)])
             for letter in group.letters()]
    for _ in range(depth - 1):
        nxt = []
        for letter in group.letters():
            g = group.generator(letter)
            for first, sph in items:
                if first == -letter:
                    continue
                nxt.append((letter, map_sphere(g, sph)))
        items = nxt
    return [sph for _, sph in items]


class AutomorphicField:
    """Field on the union of group tiles, defined by the weight cocycle:
    value(gamma x) = value(x) * |gamma'_S(x)|^(-(n-4)/2) for x in F.

    Queries locate the tile by ping-pong descent (strip the determined first
    letter until the point lands in F); each reduced word is used exactly
    once, so the extension is well defined.  Points needing more than
    ``max_depth`` strips, or lying within ``eps`` of the depth cover of the
    limit set, are rejected.
    """

    def __init__(self, base, group, max_depth=8, eps=1e-3, weight=None):
        self.base = base
        self.group = group
        self.max_depth = max_depth
        self.eps = eps
        self.weight = (group.dim - 4) / 2.0 if weight is None else weight
        self._cover = limit_ball_cover(group, min(max_depth, 6))

    def locate(self, y):
        """(word, point in F, log |gamma'_S| at that point) for y = gamma(x)."""
        y = np.asarray(y, dtype=float)
        # pad scales with each cover ball: deep tiles shrink geometrically,
        # so an absolute margin would swallow whole tiles
        for sph in self._cover:
            if sph.contains(y, pad=self.eps * sph.radius):
                raise TileLookupError("point is within eps of the limit-set cover")
        letters = []
        log_inv = 0.0
        cur = y
        for _ in range(self.max_depth + 1):
            if self.group.in_fundamental_domain(cur):
                gamma_logd = -log_inv
                return tuple(letters), cur, gamma_logd
            hit = None
            for letter in self.group.letters():
                idx = self.group.target_sphere_index(letter)
                if self.group.spheres[idx].contains(cur):
                    hit = letter
                    break
            if hit is None:
                raise TileLookupError("point is on a tile boundary")
            ginv = self.group.generator(-hit)
            nxt, step = ginv.apply_with_log_derivative(cur)
            log_inv += float(_sphere_log_factor(cur, nxt, step))
            cur = nxt
            letters.append(hit)
        raise TileLookupError(f"descent exceeded max depth {self.max_depth}")

    def __call__(self, y):
        word, x, gamma_logd = self.locate(y)
        return float(self.base(x)) * math.exp(-self.weight * gamma_logd)


def automorphic_extend(v, group, length, eps=1e-3):
    """Extension of v from F to the tiles of words of length <= L."""
    return AutomorphicField(v, group, max_depth=length, eps=eps)


def poincare_series_field(group, length, weight=None, max_words=500_000):
    """Vectorized truncated Poincare-series field.

    F(x) = sum over reduced words |w| <= L of |gamma'_S(x)|^weight.  For
    weight (n-4)/2 this is the canonical positive function blowing up on the
    limit set and obeying the extension cocycle up to truncation error.

    Frontier blocks have shape (words, points, n) so the whole scan is a
    handful of array operations per level.
    """
    if weight is None:
        weight = (group.dim - 4) / 2.0
    if word_count(group.rank, length) > max_words:
        raise DepthOverflowError("word budget exceeded")

    def field(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        x2 = np.sum(pts * pts, axis=-1)
        total = np.ones(len(pts))  # identity word
        frontier = {}
        for letter in group.letters():
            g = group.generator(letter)
            y, logd = g.apply_with_log_derivative(pts[None, :, :])
            frontier[letter] = (y, logd)
            total += _weight_sum(y, logd, x2, weight)
        for _ in range(2, length + 1):
            nxt = {}
            for letter in group.letters():
                Y = np.concatenate([frontier[l][0] for l in group.letters()
                                    if l != -letter], axis=0)
                D = np.concatenate([frontier[l][1] for l in group.letters()
                                    if l != -letter], axis=0)
                g = group.generator(letter)
                Y2, step = g.apply_with_log_derivative(Y)
                nxt[letter] = (Y2, D + step)
                total += _weight_sum(Y2, D + step, x2, weight)
            frontier = nxt
        return total[0] if single else total

    return field


def _weight_sum(y, logd, x2, weight):
    """Sum of |gamma'_S|^weight over the word axis of one frontier block."""
    y2 = np.sum(y * y, axis=-1)
    logs = logd + np.log1p(x2)[None, :] - np.log1p(y2)
    return np.sum(np.exp(weight * logs), axis=0)


def poincare_chart_field(group, length, weight=None, max_words=500_000):
    """Chart realization of the truncated series: the series times the
    chart factor (2/(1+|x|^2))^weight.

    This is the canonical positive field with the decay of a function
    smooth at the chart's infinity point and singularities on the limit
    set; weight (n-4)/2 plays the conformal-factor role, weight (n-2)/2
    the role of its second-order companion.
    """
    if weight is None:
        weight = (group.dim - 4) / 2.0
    series = poincare_series_field(group, length, weight=weight,
                                   max_words=max_words)

    def field(x):
        x = np.asarray(x, dtype=float)
        x2 = np.sum(x * x, axis=-1)
        return series(x) * (2.0 / (1.0 + x2)) ** weight

    return field


# ---------------------------------------------------------------------------
# orbit integrals (change of variables across tiles)


def sphere_volume(n):
    """Total measure of the unit round S^n in R^(n+1)."""
    from scipy.special import gamma
    return 2.0 * np.pi ** ((n + 1) / 2.0) / gamma((n + 1) / 2.0)


def _philox(seed, word_index, side):
    bit = np.random.Philox(key=np.array(
        [seed % (1 << 64), (2 * word_index + side) % (1 << 64)], dtype=np.uint64))
    return np.random.Generator(bit)


def sample_chart_points(n, rng, size):
    """Chart points distributed like the round measure (uniform on S^n,
    pushed through the chart; the base-point fiber has measure zero)."""
    g = rng.standard_normal((size, n + 1))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    t = g[:, -1]
    keep = np.abs(1.0 - t) > 1e-12
    return g[keep, :-1] / (1.0 - t[keep, None])


@dataclass
class WordIntegral:
    word: tuple
    direct: float
    direct_se: float
    pulled: float
    pulled_se: float


@dataclass
class OrbitIntegralReport:
    words: list
    shell_sums: dict
    cumulative: list
    samples: int
    seed: int


class SamplingFailureError(RuntimeError):
    pass


def word_cover_ball(group, word):
    """The pairing-ball image that bounds the tile of a reduced word."""
    if not word:
        raise ValueError("the identity tile is not inside a ball")
    target = group.spheres[group.target_sphere_index(word[-1])]
    return map_sphere(group.word_map(word[:-1]), target)


def _fd_round_jacobian(gmap, x, y):
    """Round-metric Jacobian determinant of a map by central differences.

    Deliberately ignorant of the chain-rule conformal derivative: this is
    the independent side of the change-of-variables check.
    """
    npts, n = x.shape
    h = 1e-6 * (1.0 + np.linalg.norm(x, axis=1))
    J = np.empty((npts, n, n))
    for i in range(n):
        step = np.zeros((npts, n))
        step[:, i] = h
        J[:, :, i] = (gmap.apply(x + step) - gmap.apply(x - step)) / (2.0 * h[:, None])
    det = np.abs(np.linalg.det(J))
    x2 = np.sum(x * x, axis=1)
    y2 = np.sum(y * y, axis=1)
    return det * ((1.0 + x2) / (1.0 + y2)) ** n


def orbit_integral(v, group, length, samples=20_000, seed=0, q_exponent=None,
                   threads=1):
    """Both sides of the tile change-of-variables identity, per word.

    direct: Monte Carlo of  integral over gamma(F) of vtil^q dvol_round,
    with the tile parametrized through the map but weighted by the numeric
    (finite-difference) round Jacobian, so the estimate never consults the
    chain-rule conformal derivative.
    pulled: Monte Carlo of  integral over F of v^q |gamma'_S|^((n-4)/2),
    the analytic pulled-back form.

    Counter-based streams are keyed by (seed, word index, side), so the
    per-word tasks are order-independent and safe to run on a thread pool.
    The pulled estimates, grouped by word length, realize the shell partial
    sums whose convergence the exponent gate controls.
    """
    n = group.dim
    weight = (n - 4) / 2.0
    vol = sphere_volume(n)
    q = (n + 4.0) / (n - 4.0) if q_exponent is None else float(q_exponent)

    def one_word(task):
        idx, (word, gmap) = task
        Xa = sample_chart_points(n, _philox(seed, idx, 0), samples)
        mask_a = group.in_fundamental_domain(Xa)
        if not np.any(mask_a):
            raise SamplingFailureError("fundamental domain missed by sampling")
        integrand_a = np.zeros(len(Xa))
        xb = Xa[mask_a]
        yb, logd = gmap.apply_with_log_derivative(xb)
        logd_s = _sphere_log_factor(xb, yb, logd)
        vtil_at_image = np.asarray(v(xb)) * np.exp(-weight * logd_s)
        jac = _fd_round_jacobian(gmap, xb, yb)
        integrand_a[mask_a] = vtil_at_image ** q * jac
        direct = vol * float(np.mean(integrand_a))
        direct_se = vol * float(np.std(integrand_a) / math.sqrt(len(integrand_a)))
        # pulled-back side, sampled over F
        Xb = sample_chart_points(n, _philox(seed, idx, 1), samples)
        mask_b = group.in_fundamental_domain(Xb)
        integrand_b = np.zeros(len(Xb))
        xf = Xb[mask_b]
        yf, logdf = gmap.apply_with_log_derivative(xf)
        logd_sf = _sphere_log_factor(xf, yf, logdf)
        integrand_b[mask_b] = np.asarray(v(xf)) ** q * np.exp(weight * logd_sf)
        pulled = vol * float(np.mean(integrand_b))
        pulled_se = vol * float(np.std(integrand_b) / math.sqrt(len(integrand_b)))
        return WordIntegral(word, direct, direct_se, pulled, pulled_se)

    tasks = list(enumerate(enumerate_words(group, length)))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_word, tasks))
    else:
        results = [one_word(t) for t in tasks]
    shell_sums = {}
    for wi in results:
        shell_sums[len(wi.word)] = shell_sums.get(len(wi.word), 0.0) + wi.pulled
    cumulative = []
    running = 0.0
    for k in sorted(shell_sums):
        running += shell_sums[k]
        cumulative.append(running)
    return OrbitIntegralReport(results, shell_sums, cumulative, samples, seed)
