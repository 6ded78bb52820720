"""The 2D three-ion / one-electron model.

Two ions are pinned at (+L/2, 0) and (-L/2, 0); a third ion of mass M and one
electron move in the plane.  All pair interactions are soft Coulomb forms,

    v_en(d) = -1 / sqrt(a + d^2)        attraction, electron to any ion
    v_nn(d) = +1 / sqrt(b + d^2)        repulsion, ion to ion

and a quartic trap (|R|/R0)^4 on the moving ion keeps the system bound.  With
the default geometry the three ions form an equilateral triangle when the
moving ion sits at (0, +-Y_eq), Y_eq = sqrt(3)/2 * L; the first and second
excited electronic surfaces are degenerate there.

Both Hamiltonians are real symmetric and applied matrix-free: the fixed-R
electronic operator on an (x, y) grid, and the full operator on the product
(x, y, X, Y) grid with kinetic terms for electron (mass 1) and moving ion
(mass M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import Grid, ScalarField

DEFAULT_L = 4 * math.sqrt(3) / 5


@dataclass(frozen=True)
class ModelParams:
    """Physical constants. Defaults follow the reference parameter set."""

    a: float = 0.5
    b: float = 10.0
    r0: float = 3.5
    L: float = DEFAULT_L
    M: float = 10.0

    def __post_init__(self):
        for name in ("a", "b", "r0", "L", "M"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ModelParams.{name} must be positive")

    @property
    def fixed_ions(self):
        """Positions of the two pinned ions, ((+L/2, 0), (-L/2, 0))."""
        return ((self.L / 2, 0.0), (-self.L / 2, 0.0))

    @property
    def y_eq(self) -> float:
        """|Y| of the two equilateral (conical-intersection) points."""
        return math.sqrt(3) / 2 * self.L

    def with_mass(self, M: float) -> "ModelParams":
        return replace(self, M=M)

    def v_en(self, d):
        """Soft-Coulomb electron-ion attraction, -1/sqrt(a + d^2)."""
        d = np.asarray(d, dtype=float)
        out = -1.0 / np.sqrt(self.a + d * d)
        return float(out) if out.ndim == 0 else out

    def v_nn(self, d):
        """Soft-Coulomb ion-ion repulsion, +1/sqrt(b + d^2)."""
        d = np.asarray(d, dtype=float)
        out = 1.0 / np.sqrt(self.b + d * d)
        return float(out) if out.ndim == 0 else out


def nuclear_potential(params: ModelParams, R) -> float:
    """All terms of the potential that depend on the moving ion only.

    Repulsion to both fixed ions, the constant fixed-pair repulsion v_nn(L),
    and the quartic trap.  These shift every electronic eigenvalue at fixed R
    and therefore belong to the Born-Oppenheimer surfaces.
    """
    X, Y = float(R[0]), float(R[1])
    (x1, y1), (x2, y2) = params.fixed_ions
    val = (params.v_nn(math.hypot(X - x1, Y - y1))
           + params.v_nn(math.hypot(X - x2, Y - y2))
           + params.v_nn(params.L)
           + (math.hypot(X, Y) / params.r0) ** 4)
    return float(val)


def electron_attraction_values(params: ModelParams, grid: Grid, R) -> np.ndarray:
    """Electron-ion attraction to all three ions, sampled on the (x, y) grid."""
    if grid.ndim != 2:
        raise ValueError("electron grid must be 2-dimensional")
    x = grid.axis_coords(0)[:, None]
    y = grid.axis_coords(1)[None, :]
    X, Y = float(R[0]), float(R[1])
    v = np.zeros(grid.dims)
    for (xi, yi) in params.fixed_ions:
        v += params.v_en(np.hypot(x - xi, y - yi))
    v += params.v_en(np.hypot(x - X, y - Y))
    return v


def potential_field(params: ModelParams, grid: Grid, R) -> ScalarField:
    """Total potential over the electron grid at fixed nuclear position R.

    Includes the R-only terms so that the eigenvalues of the resulting
    operator are the Born-Oppenheimer surfaces directly.
    """
    v = electron_attraction_values(params, grid, R) + nuclear_potential(params, R)
    return ScalarField(grid, v)


def _neighbor_accumulate(out, values, axis, w):
    """out += w * (values shifted one step each way along axis), Dirichlet."""
    nd = values.ndim
    lo = [slice(None)] * nd
    hi = [slice(None)] * nd
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    lo, hi = tuple(lo), tuple(hi)
    out[lo] += w * values[hi]
    out[hi] += w * values[lo]


class BOOperator:
    """Matrix-free electronic Hamiltonian -1/2 lap_r + V(r; R) at fixed R."""

    def __init__(self, params: ModelParams, grid: Grid, R):
        if grid.ndim != 2:
            raise ValueError("BOOperator needs a 2-d electron grid")
        self.params = params
        self.grid = grid
        self.R = (float(R[0]), float(R[1]))
        h = grid.spacing
        self._kinetic_diag = 1.0 / h[0] ** 2 + 1.0 / h[1] ** 2
        self._diag = potential_field(params, grid, R).values + self._kinetic_diag
        self._w = (-0.5 / h[0] ** 2, -0.5 / h[1] ** 2)

    @property
    def dim(self) -> int:
        return self.grid.npoints

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        out = self._diag * values
        _neighbor_accumulate(out, values, 0, self._w[0])
        _neighbor_accumulate(out, values, 1, self._w[1])
        return out

    def apply_flat(self, vec: np.ndarray) -> np.ndarray:
        return self.apply_values(vec.reshape(self.grid.dims)).reshape(-1)

    def apply(self, f: ScalarField) -> ScalarField:
        if f.grid != self.grid:
            raise ValueError("field grid does not match operator grid")
        return ScalarField(self.grid, self.apply_values(f.values))


def full_potential_values(params: ModelParams, grid: Grid) -> np.ndarray:
    """Pointwise potential of the full problem on the (x, y, X, Y) grid."""
    if grid.ndim != 4:
        raise ValueError("the full potential lives on a 4-d (x, y, X, Y) grid")
    x = grid.axis_coords(0)[:, None, None, None]
    y = grid.axis_coords(1)[None, :, None, None]
    X = grid.axis_coords(2)[None, None, :, None]
    Y = grid.axis_coords(3)[None, None, None, :]
    v = np.zeros(grid.dims)
    for (xi, yi) in params.fixed_ions:
        v += params.v_en(np.hypot(x - xi, y - yi))
        v += params.v_nn(np.hypot(X - xi, Y - yi))
    v += params.v_en(np.hypot(x - X, y - Y))
    v += params.v_nn(params.L) + (np.hypot(X, Y) / params.r0) ** 4
    return v


class FullOperator:
    """Matrix-free full Hamiltonian on the (x, y, X, Y) product grid.

    Kinetic energy with mass 1 on the electron axes (0, 1) and mass M on the
    nuclear axes (2, 3); the potential is evaluated pointwise on (r, R).
    """

    def __init__(self, params: ModelParams, grid: Grid):
        if grid.ndim != 4:
            raise ValueError("FullOperator needs a 4-d (x, y, X, Y) grid")
        self.params = params
        self.grid = grid
        h = grid.spacing
        M = params.M
        self._kinetic_diag = (1.0 / h[0] ** 2 + 1.0 / h[1] ** 2
                              + (1.0 / h[2] ** 2 + 1.0 / h[3] ** 2) / M)
        self._diag = full_potential_values(params, grid) + self._kinetic_diag
        self._w = (-0.5 / h[0] ** 2, -0.5 / h[1] ** 2,
                   -0.5 / (M * h[2] ** 2), -0.5 / (M * h[3] ** 2))

    @property
    def dim(self) -> int:
        return self.grid.npoints

    def potential(self) -> ScalarField:
        return ScalarField(self.grid, self._diag - self._kinetic_diag)

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        out = self._diag * values
        for ax in range(4):
            _neighbor_accumulate(out, values, ax, self._w[ax])
        return out

    def apply_flat(self, vec: np.ndarray) -> np.ndarray:
        return self.apply_values(vec.reshape(self.grid.dims)).reshape(-1)

    def apply(self, f: ScalarField) -> ScalarField:
        if f.grid != self.grid:
            raise ValueError("field grid does not match operator grid")
        return ScalarField(self.grid, self.apply_values(f.values))


def apply_bo_hamiltonian(op: BOOperator, f: ScalarField) -> ScalarField:
    return op.apply(f)


def apply_full_hamiltonian(op: FullOperator, f: ScalarField) -> ScalarField:
    return op.apply(f)


def reflection_projector(grid: Grid, x_parity: int | None = None,
                         y_parity: int | None = None):
    """Flat-vector projector onto mirror-symmetry sectors of the full problem.

    The full Hamiltonian commutes with the simultaneous reflections
    (x, X) -> (-x, -X) and (y, Y) -> (-y, -Y) on grids symmetric about 0.
    ``x_parity`` / ``y_parity`` pick the +1 or -1 eigenspace of each (None
    leaves that reflection unprojected).  Feed the result to
    ``EigenRequest.projector`` to confine a solve to one symmetry sector.
    """
    if grid.ndim != 4:
        raise ValueError("reflection sectors are defined on the 4-d grid")
    for p in (x_parity, y_parity):
        if p not in (None, 1, -1):
            raise ValueError("parities must be +1, -1 or None")
    checks = []
    if x_parity is not None:
        checks.extend([0, 2])
    if y_parity is not None:
        checks.extend([1, 3])
    for ax in checks:
        if not grid.is_symmetric(ax):
            raise ValueError(f"grid axis {ax} is not symmetric about 0")
    dims = grid.dims

    def project(vec: np.ndarray) -> np.ndarray:
        f = vec.reshape(dims)
        if x_parity is not None:
            f = 0.5 * (f + x_parity * f[::-1, :, ::-1, :])
        if y_parity is not None:
            f = 0.5 * (f + y_parity * f[:, ::-1, :, ::-1])
        return f.reshape(-1)

    return project
