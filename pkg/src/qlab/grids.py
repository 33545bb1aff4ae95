"""Scalar fields on uniform Cartesian boxes and on 1-D radius grids.

A GridField lives on the box [lo, hi]^n with m nodes per axis.  Stencil
operators consume nodes at the boundary; the consumed band is recorded in
``margin`` and filled with NaN, so downstream code can never silently use
one-sided values.
"""

import json

import numpy as np


class GridTooSmallError(ValueError):
    """Grid has too few valid nodes for the requested stencil."""


class SphereExitsDomainError(ValueError):
    """A requested sampling sphere leaves the region where the field is valid."""


class GridField:
    """Scalar field sampled on the uniform tensor grid of [lo, hi]^n."""

    def __init__(self, lo, hi, m, values, margin=0):
        values = np.asarray(values, dtype=float)
        if values.ndim < 1:
            raise ValueError("values must be an n-dimensional array")
        if any(s != values.shape[0] for s in values.shape):
            raise ValueError("values must be cubical (m nodes per axis)")
        if values.shape[0] != m:
            raise ValueError(f"shape {values.shape} does not match m={m}")
        if not hi > lo:
            raise ValueError("need hi > lo")
        self.lo = float(lo)
        self.hi = float(hi)
        self.m = int(m)
        self.values = values
        self.margin = int(margin)

    @property
    def n(self):
        return self.values.ndim

    @property
    def h(self):
        return (self.hi - self.lo) / (self.m - 1)

    def axis(self):
        """Node coordinates along one axis (all axes are identical)."""
        return np.linspace(self.lo, self.hi, self.m)

    @classmethod
    def from_function(cls, fn, n, lo, hi, m):
        """Sample ``fn`` (vectorized over points of shape (..., n)) on the grid.

        The grid is filled one hyperplane at a time so that an n = 6, m = 17
        grid never materializes the full (m^n, n) coordinate array.
        """
        ax = np.linspace(lo, hi, m)
        values = np.empty((m,) * n)
        rest = np.meshgrid(*([ax] * (n - 1)), indexing="ij") if n > 1 else []
        plane = np.stack(rest, axis=-1) if n > 1 else np.zeros((0,))
        for i in range(m):
            if n == 1:
                values[i] = fn(np.array([ax[i]]))
            else:
                coords = np.concatenate(
                    [np.full(plane.shape[:-1] + (1,), ax[i]), plane], axis=-1
                )
                values[i] = fn(coords)
        return cls(lo, hi, m, values)

    def interior(self, extra=0):
        """View of the valid interior, shrunk by ``extra`` more nodes per side."""
        k = self.margin + extra
        if 2 * k >= self.m:
            raise GridTooSmallError(f"margin {k} leaves no interior at m={self.m}")
        sl = (slice(k, self.m - k),) * self.n if k > 0 else (slice(None),) * self.n
        return self.values[sl]

    def like(self, values, margin=None):
        return GridField(self.lo, self.hi, self.m, values,
                         self.margin if margin is None else margin)


class RadialField:
    """Scalar profile on a radius grid starting at r = 0."""

    def __init__(self, radii, values):
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape:
            raise ValueError("radii and values must be matching 1-d arrays")
        if radii[0] != 0.0:
            raise ValueError("radii must start at 0")
        if np.any(np.diff(radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        self.radii = radii
        self.values = values

    @classmethod
    def from_profile(cls, profile, r_max, nodes):
        r = np.linspace(0.0, r_max, nodes)
        return cls(r, profile(r))

    @property
    def spacing(self):
        """Uniform spacing, or None when the grid is graded."""
        d = np.diff(self.radii)
        h = d[0]
        return h if np.allclose(d, h, rtol=1e-12, atol=0.0) else None

    def __len__(self):
        return len(self.radii)


# 5-point, fourth-order central difference weights for f'' and f'.
_D2_W = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1_W = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def radial_laplacian(field, n):
    """Laplacian of a radial profile: f'' + (n-1) f'/r, fourth order.

    The profile is extended evenly through r = 0 (radial smoothness), so the
    origin is an interior node.  The origin uses a dedicated stencil whose
    h^4 error coefficient equals the r -> 0 limit of the generic formula's;
    without that matching the one-node error mismatch turns into an O(h^2)
    defect when the operator is applied twice.  The last two nodes have no
    stencil support and come back NaN.
    """
    h = field.spacing
    if h is None:
        raise ValueError("radial_laplacian needs a uniform radius grid")
    if len(field) < 7:
        raise GridTooSmallError("need at least 7 radial nodes")
    f = field.values
    # ghost nodes f(-h), f(-2h) from even symmetry
    ext = np.concatenate([f[2:0:-1], f])
    d2 = (_D2_W[0] * ext[:-4] + _D2_W[1] * ext[1:-3] + _D2_W[2] * ext[2:-2]
          + _D2_W[3] * ext[3:-1] + _D2_W[4] * ext[4:]) / h ** 2
    d1 = (_D1_W[0] * ext[:-4] + _D1_W[1] * ext[1:-3]
          + _D1_W[3] * ext[3:-1] + _D1_W[4] * ext[4:]) / h
    # d2[j], d1[j] sit at radius index j for j = 0 .. N-3
    out = np.full_like(f, np.nan)
    r = field.radii
    out[1:-2] = d2[1:] + (n - 1) * d1[1:] / r[1:-2]
    # origin: exact on 1, r^2, r^4; error on r^6 matched to the generic limit
    u0 = -(37.0 * n + 8.0) / 18.0
    u1 = 2.0 * (3.0 * n + 1.0) / 3.0
    u2 = (3.0 * n - 8.0) / 30.0
    u3 = -2.0 * (n - 1.0) / 45.0
    out[0] = (u0 * f[0] + u1 * f[1] + u2 * f[2] + u3 * f[3]) / h ** 2
    return RadialField(field.radii, out)


def radial_bilaplacian(field, n):
    """(-Delta)^2 of a radial profile; four trailing nodes are NaN."""
    lap = radial_laplacian(field, n)
    inner = RadialField(lap.radii[:-2], lap.values[:-2])
    lap2 = radial_laplacian(inner, n)
    out = np.full_like(field.values, np.nan)
    out[: len(lap2.values)] = lap2.values
    return RadialField(field.radii, out)


def save_field(field, path, fmt="csv"):
    """Write a field as a JSON header plus a flat value array.

    GridField header: {kind, n, box: [lo, hi], m, spacing}.  RadialField
    header: {kind, r_max, count, spacing} (uniform radius grids only).
    The CSV carries one (row-major node index, value) pair per line; the
    binary variant is a raw little-endian float64 dump in the same order.
    """
    path = str(path)
    if isinstance(field, GridField):
        header = {"kind": "grid", "n": field.n, "box": [field.lo, field.hi],
                  "m": field.m, "spacing": field.h, "margin": field.margin,
                  "format": fmt}
        flat = field.values.ravel()
    elif isinstance(field, RadialField):
        if field.spacing is None:
            raise ValueError("only uniform radius grids serialize")
        header = {"kind": "radial", "r_max": float(field.radii[-1]),
                  "count": len(field), "spacing": float(field.spacing),
                  "format": fmt}
        flat = field.values
    else:
        raise TypeError(f"cannot serialize {type(field).__name__}")
    with open(path + ".json", "w") as fh:
        json.dump(header, fh, indent=1)
        fh.write("\n")
    if fmt == "csv":
        with open(path + ".csv", "w") as fh:
            fh.write("index,value\n")
            for i, v in enumerate(flat):
                fh.write(f"{i},{float(v)!r}\n")
    elif fmt == "bin":
        flat.astype("<f8").tofile(path + ".bin")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_field(path):
    path = str(path)
    with open(path + ".json") as fh:
        header = json.load(fh)
    fmt = header.get("format", "csv")
    if fmt == "csv":
        data = np.loadtxt(path + ".csv", delimiter=",", skiprows=1, ndmin=2)
        flat = data[:, 1]
    else:
        flat = np.fromfile(path + ".bin", dtype="<f8")
    if header["kind"] == "grid":
        n, m = header["n"], header["m"]
        lo, hi = header["box"]
        return GridField(lo, hi, m, flat.reshape((m,) * n),
                         margin=header.get("margin", 0))
    radii = np.linspace(0.0, header["r_max"], header["count"])
    return RadialField(radii, flat)
