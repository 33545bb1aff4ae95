"""Stereographic projection, conformal pullback, and the bubble family.

The chart convention is fixed once: the base point (sent to infinity) is the
north pole of S^n in R^(n+1), and the origin of R^n maps to the south pole.
Other base points are reached by a deterministic Householder rotation.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .conformal_ops import equation_constant
from .grids import RadialField, radial_bilaplacian


class PointAtInfinityError(ValueError):
    """unproject was asked for the chart's base point."""


class NonpositiveScaleError(ValueError):
    pass


@dataclass(frozen=True)
class StereoChart:
    """Chart data: dimension and the unit base point in R^(n+1)."""

    n: int
    base_point: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.base_point, dtype=float)
        if bp.shape != (self.n + 1,):
            raise ValueError("base point must live in R^(n+1)")
        if abs(np.linalg.norm(bp) - 1.0) > 1e-12:
            raise ValueError("base point must be a unit vector")
        object.__setattr__(self, "base_point", bp)
        object.__setattr__(self, "_rot", _rotation_to(bp))


def _rotation_to(p0):
    """Orthogonal matrix taking the north pole e_{n+1} to p0 (Householder)."""
    k = len(p0)
    north = np.zeros(k)
    north[-1] = 1.0
    w = p0 - north
    nw = np.linalg.norm(w)
    if nw < 1e-15:
        return np.eye(k)
    w = w / nw
    return np.eye(k) - 2.0 * np.outer(w, w)


def chart(n, base_point=None):
    if base_point is None:
        base_point = np.zeros(n + 1)
        base_point[-1] = 1.0
    return StereoChart(n, np.asarray(base_point, dtype=float))


def project(ch, x):
    """Map chart points to S^n: psi(x) = (2x, |x|^2 - 1)/(1 + |x|^2)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    top = np.concatenate([2.0 * x, r2 - 1.0], axis=-1)
    y = top / (1.0 + r2)
    return y @ ch._rot.T


def unproject(ch, y):
    """Inverse chart map; raises at the base point (the image of infinity).

    Near the base point 1 - t cancels catastrophically, so the equivalent
    form u (1+t)/|u|^2 (exact on the sphere, where |u|^2 = 1 - t^2) is used
    on the t > 0 hemisphere.
    """
    y = np.asarray(y, dtype=float) @ ch._rot
    t = y[..., -1]
    u = y[..., :-1]
    u2 = np.sum(u * u, axis=-1)
    if np.any(u2 < 1e-300) and np.any(t[u2 < 1e-300] > 0):
        raise PointAtInfinityError("point is (numerically) the chart base point")
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = (u * (1.0 + t)[..., None]) / u2[..., None]
        plain = u / (1.0 - t)[..., None]
    return np.where(t[..., None] > 0.0, stable, plain)


def chart_factor(x):
    """Conformal factor of the chart: |d psi| = 2/(1 + |x|^2)."""
    x = np.asarray(x, dtype=float)
    return 2.0 / (1.0 + np.sum(x * x, axis=-1))


def pull_back_function(ch, v_sphere, exp):
    """Chart realization of a function on S^n with the (n-4)/2 weight.

    Returns the callable  x -> v_sphere(psi(x)) * (2/(1+|x|^2))^((n-4)/2);
    feed it to GridField.from_function to land on a grid.
    """
    w = (exp.n - 4) / 2.0

    def pulled(x):
        return np.asarray(v_sphere(project(ch, x))) * chart_factor(x) ** w

    return pulled


_KN_AUDITED = set()


def _audit_equation_constant(n):
    """Debug-build guard: recover K_n from the radial bilaplacian of the
    unit bubble and compare with the closed form.

    h ~ 4e-3 balances fourth-order truncation against the 1/h^4 roundoff
    amplification of the doubled stencil.
    """
    prof = RadialField.from_profile(
        lambda r: (2.0 / (1.0 + r * r)) ** ((n - 4) / 2.0), 2.0, 501)
    lap2 = radial_bilaplacian(prof, n)
    k_est = lap2.values[0] / prof.values[0] ** ((n + 4.0) / (n - 4.0))
    k_true = float(equation_constant(n))
    assert abs(k_est - k_true) < 1e-6 * k_true, (
        f"radial oracle K_{n} = {k_est} vs closed form {k_true}")


@dataclass(frozen=True)
class Bubble:
    """The entire positive solution (amp * (2 lam / (1 + lam^2 |x-x0|^2))^((n-4)/2).

    With amp = 1 it satisfies (-Delta)^2 U = K_n U^((n+4)/(n-4)) where
    K_n = n(n-4)(n^2-4)/16; scaling by amp multiplies the equation constant
    by amp^(1-q), so amp = K_n^((n-4)/8) normalizes the constant to 1.
    """

    n: int
    lam: float
    center: np.ndarray
    amp: float = 1.0
    K: Fraction = field(init=False)

    def __post_init__(self):
        if self.lam <= 0:
            raise NonpositiveScaleError(f"scale must be positive, got {self.lam}")
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float).reshape(self.n))
        object.__setattr__(self, "K", equation_constant(self.n))
        if __debug__ and self.n not in _KN_AUDITED:
            _audit_equation_constant(self.n)
            _KN_AUDITED.add(self.n)

    @property
    def m(self):
        return (self.n - 4) / 2.0

    @property
    def q_constant(self):
        """Constant in (-Delta)^2 U = const * U^q for this amplitude."""
        q = (self.n + 4.0) / (self.n - 4.0)
        return float(self.K) * self.amp ** (1.0 - q)

    def _t(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return 1.0 + self.lam ** 2 * np.sum(d * d, axis=-1), d

    def __call__(self, x):
        t, _ = self._t(x)
        return self.amp * (2.0 * self.lam / t) ** self.m

    def grad(self, x):
        t, d = self._t(x)
        u = self.amp * (2.0 * self.lam / t) ** self.m
        return (-2.0 * self.m * self.lam ** 2 * u / t)[..., None] * d

    def laplacian(self, x):
        t, d = self._t(x)
        rho2 = np.sum(d * d, axis=-1)
        c = (self.n - 4.0) * self.lam ** 2 * (2.0 * self.lam) ** self.m
        return -self.amp * c * t ** (-self.m - 2.0) * (self.n + 2.0 * self.lam ** 2 * rho2)

    def laplacian_grad(self, x):
        """Gradient of Delta U (radial closed form differentiated once more)."""
        t, d = self._t(x)
        rho2 = np.sum(d * d, axis=-1)
        c = (self.n - 4.0) * self.lam ** 2 * (2.0 * self.lam) ** self.m
        # d/d(rho^2) of  -c t^(-m-2) (n + 2 lam^2 rho^2), times 2 d
        lam2 = self.lam ** 2
        dd = (-c) * ((-self.m - 2.0) * lam2 * t ** (-self.m - 3.0)
                     * (self.n + 2.0 * lam2 * rho2)
                     + t ** (-self.m - 2.0) * 2.0 * lam2)
        return self.amp * (2.0 * dd)[..., None] * d

    def bilaplacian(self, x):
        """(-Delta)^2 U, via the equation the family satisfies."""
        q = (self.n + 4.0) / (self.n - 4.0)
        return self.q_constant * self(x) ** q

    def far_field_coefficient(self):
        """Limit of U(x) |x|^(n-4) as |x| -> infinity: amp (2/lam)^((n-4)/2)."""
        return self.amp * (2.0 / self.lam) ** self.m


def bubble(n, lam=1.0, center=None, amp=1.0):
    if center is None:
        center = np.zeros(n)
    return Bubble(n, float(lam), center, float(amp))


def unit_q_bubble(n, lam=1.0, center=None):
    """Bubble normalized so that (-Delta)^2 U = U^((n+4)/(n-4)) exactly."""
    amp = float(equation_constant(n)) ** ((n - 4) / 8.0)
    return bubble(n, lam, center, amp)
