"""Uniform rectangular grids and sampled scalar fields.

Everything downstream (Hamiltonians, Berry connections, factorizations) is
built on the four primitives defined here: a second-order Laplacian with zero
Dirichlet boundaries, central-difference gradients, Riemann-sum quadrature,
and quadrature-weighted inner products.  All functions are pure; fields are
never mutated in place.

Axis order convention: electron-only fields are (x, y); full fields are
(x, y, X, Y) with the nuclear coordinates last.  Arrays are C-ordered, so the
flat layout is row-major in that axis order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid.

    Parameters
    ----------
    dims : tuple of int
        Points per axis; every axis needs at least 3 points so that the
        central stencils have an interior.
    spacing : tuple of float
        Positive grid step per axis, atomic units of length.
    origin : tuple of float
        Coordinate of the first grid point on each axis.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if not (len(dims) == len(spacing) == len(origin)):
            raise ValueError("dims, spacing and origin must have equal length")
        if len(dims) == 0:
            raise ValueError("grid needs at least one axis")
        if any(d < 3 for d in dims):
            raise ValueError(f"every axis needs >= 3 points, got dims={dims}")
        if any(h <= 0 for h in spacing):
            raise ValueError(f"spacings must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered(cls, extents, points) -> "Grid":
        """Grid covering [-e, e] per axis with the given odd-or-even point count.

        With an odd point count the coordinate 0 is an exact grid line, which
        the mirror-symmetry machinery relies on.
        """
        extents = tuple(float(e) for e in np.atleast_1d(extents))
        points = tuple(int(n) for n in np.atleast_1d(points))
        if len(extents) == 1:
            extents = extents * len(points)
        if len(points) == 1:
            points = points * len(extents)
        spacing = tuple(2 * e / (n - 1) for e, n in zip(extents, points))
        origin = tuple(-e for e in extents)
        return cls(points, spacing, origin)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.dims))

    def axis_coords(self, axis: int) -> np.ndarray:
        """Coordinates of the grid lines along one axis."""
        self._check_axis(axis)
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def cell_volume(self, axes=None) -> float:
        """Product of spacings over the requested axes (all by default)."""
        axes = self._normalize_axes(axes)
        vol = 1.0
        for ax in axes:
            vol *= self.spacing[ax]
        return vol

    def subgrid(self, axes) -> "Grid":
        """Grid restricted to the given axes (order preserved)."""
        axes = self._normalize_axes(axes)
        return Grid(
            tuple(self.dims[a] for a in axes),
            tuple(self.spacing[a] for a in axes),
            tuple(self.origin[a] for a in axes),
        )

    def is_symmetric(self, axis: int, tol: float = 1e-12) -> bool:
        """True if the axis coordinates are mirror-symmetric about 0."""
        self._check_axis(axis)
        n, h, o = self.dims[axis], self.spacing[axis], self.origin[axis]
        return abs(o + (n - 1) * h / 2) <= tol * max(1.0, abs(o))

    def _check_axis(self, axis: int):
        if not 0 <= axis < self.ndim:
            raise ValueError(f"axis {axis} out of range for {self.ndim}-d grid")

    def _normalize_axes(self, axes):
        if axes is None:
            return tuple(range(self.ndim))
        if np.isscalar(axes):
            axes = (axes,)
        axes = tuple(int(a) for a in axes)
        if len(axes) == 0:
            raise ValueError("empty axis set")
        if len(set(axes)) != len(axes):
            raise ValueError(f"repeated axis in {axes}")
        for a in axes:
            self._check_axis(a)
        return axes


class ScalarField:
    """Real or complex samples on a :class:`Grid`.

    ``values`` is stored with shape ``grid.dims`` in C order, so
    ``field.ravel()`` is the canonical row-major flat layout.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values)
        if values.size != grid.npoints:
            raise ValueError(
                f"value count {values.size} does not match grid with {grid.npoints} points"
            )
        self.grid = grid
        self.values = values.reshape(grid.dims)

    def ravel(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def conj(self) -> "ScalarField":
        return ScalarField(self.grid, np.conj(self.values))

    def reflected(self, axes) -> "ScalarField":
        """Field with the given axes reversed (mirror through 0).

        Only meaningful when the grid is symmetric about 0 on those axes.
        """
        axes = self.grid._normalize_axes(axes)
        for ax in axes:
            if not self.grid.is_symmetric(ax):
                raise ValueError(f"axis {ax} is not symmetric about 0")
        return ScalarField(self.grid, np.flip(self.values, axis=axes))

    def __repr__(self):
        kind = "complex" if self.is_complex else "real"
        return f"ScalarField(dims={self.grid.dims}, {kind})"


def _check_same_grid(f: ScalarField, g: ScalarField):
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")


# -- array-level kernels -----------------------------------------------------
#
# The operator modules apply these directly to ndarrays inside eigensolver
# matvecs; the ScalarField wrappers below are the public face.

def laplacian_values(values: np.ndarray, spacing, axes) -> np.ndarray:
    """Sum of second differences over ``axes`` with zero Dirichlet boundaries.

    The 3-point stencil (f[i-1] - 2 f[i] + f[i+1]) / h**2 treats samples just
    outside the grid as zero.
    """
    diag = sum(-2.0 / spacing[ax] ** 2 for ax in axes)
    out = values * diag
    nd = values.ndim
    for ax in axes:
        w = 1.0 / spacing[ax] ** 2
        lo = [slice(None)] * nd
        hi = [slice(None)] * nd
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        out[lo] += w * values[hi]
        out[hi] += w * values[lo]
    return out


def gradient_values(values: np.ndarray, spacing, axis: int) -> np.ndarray:
    """Central-difference derivative along ``axis``, first-order at the edges."""
    h = spacing[axis]
    out = np.empty_like(values)
    nd = values.ndim

    def sl(s):
        idx = [slice(None)] * nd
        idx[axis] = s
        return tuple(idx)

    out[sl(slice(1, -1))] = (values[sl(slice(2, None))] - values[sl(slice(0, -2))]) / (2 * h)
    out[sl(0)] = (values[sl(1)] - values[sl(0)]) / h
    out[sl(-1)] = (values[sl(-1)] - values[sl(-2)]) / h
    return out


# -- public operations -------------------------------------------------------

def laplacian_apply(f: ScalarField, axes=None) -> ScalarField:
    """Apply the Dirichlet Laplacian over the requested axes.

    Exact on quadratics in the interior; boundary rows see the implicit zero
    just outside the domain.
    """
    axes = f.grid._normalize_axes(axes)
    return ScalarField(f.grid, laplacian_values(f.values, f.grid.spacing, axes))


def gradient(f: ScalarField, axis: int) -> ScalarField:
    """Central-difference partial derivative along one axis."""
    f.grid._check_axis(axis)
    return ScalarField(f.grid, gradient_values(f.values, f.grid.spacing, axis))


def integrate(f: ScalarField, axes=None):
    """Riemann sum of ``f`` times the cell volume over the requested axes.

    Integrating every axis returns a scalar; integrating a subset returns a
    field on the remaining axes.
    """
    axes = f.grid._normalize_axes(axes)
    total = f.values.sum(axis=axes) * f.grid.cell_volume(axes)
    if len(axes) == f.grid.ndim:
        return complex(total) if np.iscomplexobj(f.values) else float(total)
    keep = tuple(a for a in range(f.grid.ndim) if a not in axes)
    return ScalarField(f.grid.subgrid(keep), total)


def inner_product(f: ScalarField, g: ScalarField, axes=None):
    """Quadrature inner product ``integral(conj(f) * g)`` over the given axes."""
    _check_same_grid(f, g)
    fv = np.conj(f.values) if f.is_complex else f.values
    prod = ScalarField(f.grid, fv * g.values)
    return integrate(prod, axes)


def norm(f: ScalarField) -> float:
    """Quadrature L2 norm, sqrt(integral |f|^2)."""
    v = f.values
    return float(np.sqrt((v.real**2 + v.imag**2 if np.iscomplexobj(v) else v**2).sum()
                         * f.grid.cell_volume()))


def normalized(f: ScalarField) -> ScalarField:
    """Rescale so that the quadrature L2 norm equals 1."""
    n = norm(f)
    if n == 0:
        raise ValueError("cannot normalize the zero field")
    return ScalarField(f.grid, f.values / n)
