"""Geometric phases of parameterized electronic-state families.

The primary instrument is the discrete Wilson loop: the phase
``-Im ln prod_i <phi(R_i) | phi(R_i+1)>`` accumulated around a closed path of
nuclear grid points.  For real states every overlap is real, so the product
reduces to a sign and the loop phase is exactly 0 or exactly pi; the pi case
flags an enclosed conical intersection.  The differential route (Berry
connection by central differences, then a trapezoidal line integral) is kept
as a secondary check, valid only away from sign seams and undefined regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, gradient_values


class LoopThroughDegeneracyError(RuntimeError):
    """An overlap along the path fell below the magnitude floor, i.e. the
    path runs through (or numerically too close to) a conical intersection."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


OVERLAP_FLOOR = 1e-8


@dataclass
class StateFamily:
    """Electronic states indexed by nuclear grid point.

    ``values`` has the electron axes first and the nuclear axes last,
    shape (ex, ey, nX, nY); ``defined`` marks nuclear points that carry a
    valid state (conditional states below the marginal floor are undefined).
    """

    electron_grid: Grid
    nuclear_grid: Grid
    values: np.ndarray
    defined: np.ndarray | None = None

    def __post_init__(self):
        expect = self.electron_grid.dims + self.nuclear_grid.dims
        if tuple(self.values.shape) != expect:
            raise ValueError(f"family shape {self.values.shape} != {expect}")
        if self.defined is None:
            self.defined = np.ones(self.nuclear_grid.dims, dtype=bool)

    def state(self, iX: int, iY: int) -> np.ndarray:
        return self.values[:, :, iX, iY]

    def overlap(self, a, b):
        """Electron-space overlap <phi(a)|phi(b)> between two nuclear points."""
        sa = self.values[:, :, a[0], a[1]]
        sb = self.values[:, :, b[0], b[1]]
        w = self.electron_grid.cell_volume()
        return (np.conj(sa) * sb).sum() * w


@dataclass
class LoopPath:
    """A closed loop of nuclear grid points with its accumulated phase."""

    points: list[tuple[int, int]]
    overlaps: np.ndarray
    phase: float
    min_overlap: float


@dataclass
class ConnectionField:
    """Berry connection components on the nuclear grid (real parts).

    ``drift`` is the largest normalization-drift magnitude encountered, the
    imaginary counterpart that vanishes for exactly normalized families.
    """

    nuclear_grid: Grid
    a_x: np.ndarray
    a_y: np.ndarray
    defined: np.ndarray
    drift: float = 0.0


def _canonical_phase(phi: float) -> float:
    """Map a phase to (-pi, pi] with +pi canonical."""
    out = math.remainder(phi, 2 * math.pi)
    if out <= -math.pi + 1e-15:
        out = math.pi
    return out


def wilson_loop_phase(states, overlap_floor: float = OVERLAP_FLOOR) -> float:
    """Discrete Berry phase of a closed sequence of normalized states.

    ``states`` are electron-space arrays (or ScalarFields sharing one grid)
    listed around the loop; the edge from the last back to the first is
    implied.  Real families return exactly 0.0 or pi by sign-parity
    arithmetic; complex families return -Im ln of the overlap product,
    reported in (-pi, pi].
    """
    loop = evaluate_loop(states, overlap_floor=overlap_floor)
    return loop.phase


def loop_overlaps(states) -> np.ndarray:
    """Consecutive overlaps around the closed path (last edge wraps)."""
    vals = []
    weights = None
    arrays = []
    for s in states:
        if hasattr(s, "values"):
            if weights is None:
                weights = s.grid.cell_volume()
            arrays.append(s.values)
        else:
            arrays.append(np.asarray(s))
    if weights is None:
        weights = 1.0
    n = len(arrays)
    if n < 2:
        raise ValueError("a loop needs at least 2 states")
    for i in range(n):
        a = arrays[i]
        b = arrays[(i + 1) % n]
        vals.append((np.conj(a) * b).sum() * weights)
    return np.asarray(vals)


def evaluate_loop(states, points=None, overlap_floor: float = OVERLAP_FLOOR) -> LoopPath:
    """Build a LoopPath: overlaps, accumulated phase, worst overlap."""
    ov = loop_overlaps(states)
    mags = np.abs(ov)
    worst = int(np.argmin(mags))
    if mags[worst] < overlap_floor:
        raise LoopThroughDegeneracyError(
            f"overlap {mags[worst]:.2e} below floor {overlap_floor:.0e} on loop "
            f"edge {worst}; the path passes numerically through a degeneracy",
            edge=worst,
        )
    if np.iscomplexobj(ov):
        prod = np.prod(ov / mags)  # unit-magnitude factors only
        phase = _canonical_phase(-np.angle(prod))
    else:
        flips = int(np.sum(ov < 0))
        phase = math.pi if flips % 2 else 0.0
    return LoopPath(
        points=list(points) if points is not None else list(range(len(ov))),
        overlaps=ov,
        phase=phase,
        min_overlap=float(mags.min()),
    )


def connection_field(family: StateFamily, seam_edges=None) -> ConnectionField:
    """Berry connection A_nu(R) = Re <phi(R)| -i d_nu phi(R)> by central
    differences over the nuclear grid.

    Points whose difference stencil touches an undefined state or a seam edge
    are marked undefined.  For a real family the reported components vanish
    identically; the imaginary counterpart (normalization drift) is returned
    as the ``drift`` diagnostic.
    """
    vals = family.values
    ngrid = family.nuclear_grid
    w = family.electron_grid.cell_volume()
    conj = np.conj(vals) if np.iscomplexobj(vals) else vals

    comps = []
    drift = 0.0
    for nu, axis in enumerate((2, 3)):
        dphi = gradient_values(vals, (1.0, 1.0) + ngrid.spacing, axis)
        braket = (conj * dphi).sum(axis=(0, 1)) * w  # <phi|d_nu phi> per R
        if np.iscomplexobj(braket):
            comps.append(braket.imag.copy())  # Re <phi|-i d phi> = Im <phi|d phi>
            drift = max(drift, float(np.abs(braket.real).max()))
        else:
            # real family: <phi|-i d phi> is purely imaginary, real part 0
            comps.append(np.zeros(ngrid.dims))
            drift = max(drift, float(np.abs(braket).max()))
    a_x, a_y = comps

    defined = stencil_defined(family.defined, seam_edges)
    a_x = np.where(defined, a_x, np.nan)
    a_y = np.where(defined, a_y, np.nan)
    return ConnectionField(ngrid, a_x, a_y, defined, drift=drift)


def stencil_defined(defined: np.ndarray, seam_edges=None) -> np.ndarray:
    """Nuclear points whose central/one-sided stencil along both axes only
    touches defined neighbors and crosses no seam edge."""
    ok = defined.copy()
    for axis in (0, 1):
        nbr_ok = np.ones_like(defined)
        # interior central stencil needs both neighbors; edges need the single
        # inward neighbor
        lo = np.roll(defined, 1, axis=axis)
        hi = np.roll(defined, -1, axis=axis)
        sl_first = [slice(None)] * 2
        sl_last = [slice(None)] * 2
        sl_first[axis] = 0
        sl_last[axis] = -1
        lo[tuple(sl_first)] = True
        hi[tuple(sl_last)] = True
        nbr_ok &= lo & hi
        ok &= nbr_ok
    if seam_edges is not None:
        for (a, b) in seam_edges:
            ok[a] = False
            ok[b] = False
    return ok


def line_integral(conn: ConnectionField, points, closed: bool = False) -> float:
    """Trapezoidal accumulation of A . dR along a path of grid points.

    ``points`` are (iX, iY) indices; with ``closed`` the final edge back to
    the start is included.  Raises on undefined points.
    """
    pts = list(points)
    if closed:
        pts = pts + [pts[0]]
    if len(pts) < 2:
        raise ValueError("path needs at least two points")
    g = conn.nuclear_grid
    total = 0.0
    for (a, b) in zip(pts[:-1], pts[1:]):
        for p in (a, b):
            if not conn.defined[p]:
                raise ValueError(f"connection undefined at nuclear point {p}")
        dX = (b[0] - a[0]) * g.spacing[0]
        dY = (b[1] - a[1]) * g.spacing[1]
        ax = 0.5 * (conn.a_x[a] + conn.a_x[b])
        ay = 0.5 * (conn.a_y[a] + conn.a_y[b])
        total += ax * dX + ay * dY
    return total
