"""Born-Oppenheimer scan over the nuclear plane.

At every nuclear grid point the fixed-R electronic problem is solved for the
lowest few states; the surfaces are stored sorted by energy, so the conical
intersections show up as minima of the gap between surfaces 1 and 2.  The
states are real (real-symmetric Hamiltonian) which leaves a sign freedom per
point; ``fix_gauge_real`` sweeps the grid column by column from the largest X
toward the smallest, aligning each state with its already-fixed neighbor, and
anchors the X < 0 half-plane by electron-space mirror symmetry so that the
residual sign seams settle on the X = 0 column, matching the symmetry
structure of the states there (on the axis every state is exactly even or
odd in x, and transporting an odd state across the axis must flip it).
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .berry import StateFamily
from .eigensolve import EigenRequest, EigenSolveError, lowest_eigenpairs
from .grid import Grid, ScalarField, gradient_values
from .model import BOOperator, ModelParams

DEGENERACY_TOL = 1e-6  # eigenvalues closer than this form one cluster
SEAM_OVERLAP_FLOOR = 1e-8


@dataclass
class BOScanResult:
    """Energies and electronic states on the nuclear grid.

    ``energies[n, iX, iY]`` is the n-th surface (0 is the ground state; the
    conical-intersection pair is surfaces 1 and 2); ``states[n]`` holds the
    electronic wavefunctions with electron axes first, shape
    (ex, ey, nX, nY).  ``gauge_fixed`` records whether a sign sweep ran.
    """

    params: ModelParams
    electron_grid: Grid
    nuclear_grid: Grid
    energies: np.ndarray
    states: np.ndarray
    residuals: np.ndarray
    gauge_fixed: bool = False

    @property
    def n_states(self) -> int:
        return self.energies.shape[0]

    def gap(self) -> ScalarField:
        """Splitting between surfaces 2 and 1 (the CI diagnostic)."""
        return ScalarField(self.nuclear_grid, self.energies[2] - self.energies[1])

    def surface(self, n: int) -> ScalarField:
        return ScalarField(self.nuclear_grid, self.energies[n])

    def family(self, n: int) -> StateFamily:
        return StateFamily(self.electron_grid, self.nuclear_grid, self.states[n])

    def state_at(self, n: int, iX: int, iY: int) -> ScalarField:
        return ScalarField(self.electron_grid, self.states[n][:, :, iX, iY])

    def copy(self) -> "BOScanResult":
        return BOScanResult(self.params, self.electron_grid, self.nuclear_grid,
                            self.energies.copy(), self.states.copy(),
                            self.residuals.copy(), self.gauge_fixed)


@dataclass
class SeamReport:
    """Sign-discontinuous edges of one gauge-fixed surface.

    ``edges`` holds ((iX, iY), (iX2, iY2), overlap) with overlap < 0;
    ``degenerate_edges`` are edges whose overlap magnitude fell below the
    floor (the state changes character too fast for this grid, e.g. the
    seam of the axis column straddling a conical intersection).
    ``segments`` classifies flip edges into the candidate seam lines:
    "L1" for axis-crossing edges with |Y| above the equilateral height,
    "L2" below it, "other" elsewhere.
    """

    state: int
    edges: list = field(default_factory=list)
    degenerate_edges: list = field(default_factory=list)
    segments: dict = field(default_factory=dict)


def solve_bo_at(params: ModelParams, electron_grid: Grid, R, n_states: int,
                req: EigenRequest | None = None):
    """Lowest electronic eigenpairs at fixed nuclear position R."""
    if n_states < 3:
        raise ValueError("need n_states >= 3 (ground plus the two p-like states)")
    op = BOOperator(params, electron_grid, R)
    if req is None:
        req = EigenRequest(k=n_states)
    elif req.k != n_states:
        raise ValueError("req.k must equal n_states")
    try:
        return lowest_eigenpairs(op, electron_grid, req)
    except EigenSolveError as exc:
        raise EigenSolveError(f"BO solve failed at R={tuple(R)}: {exc}",
                              residuals=exc.residuals) from exc


# tuned for the small electron-grid problems of the scan
_SCAN_GUARD = 6
_SCAN_BLOCK = 4
_SCAN_SUBSPACE = 60


def _scan_request(n_states: int, tol: float, seed: int) -> EigenRequest:
    return EigenRequest(k=n_states, tol=tol, seed=seed, guard=_SCAN_GUARD,
                        block=_SCAN_BLOCK, max_subspace=_SCAN_SUBSPACE)


def _scan_point(args):
    params, egrid, R, n_states, tol, seed = args
    req = _scan_request(n_states, tol, seed)
    pairs = solve_bo_at(params, egrid, R, n_states, req)
    energies = np.array([p.value for p in pairs])
    states = np.stack([p.vector.values for p in pairs])
    residuals = np.array([p.residual for p in pairs])
    return energies, states, residuals


def scan_bo(params: ModelParams, electron_grid: Grid, nuclear_grid: Grid,
            n_states: int = 4, tol: float = 1e-8, seed: int = 7,
            workers: int = 1) -> BOScanResult:
    """Solve the electronic problem at every nuclear grid point.

    Points are independent eigenproblems and run in parallel over
    ``workers`` processes; results land in deterministic grid order and do
    not depend on the worker count.
    """
    if nuclear_grid.ndim != 2:
        raise ValueError("nuclear grid must be 2-dimensional")
    nX, nY = nuclear_grid.dims
    Xs = nuclear_grid.axis_coords(0)
    Ys = nuclear_grid.axis_coords(1)
    tasks = [(params, electron_grid, (Xs[i], Ys[j]), n_states, tol, seed)
             for i in range(nX) for j in range(nY)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_point, tasks, chunksize=8))
    else:
        results = [_scan_point(t) for t in tasks]

    ex, ey = electron_grid.dims
    energies = np.empty((n_states, nX, nY))
    states = np.empty((n_states, ex, ey, nX, nY))
    residuals = np.empty((n_states, nX, nY))
    idx = 0
    for i in range(nX):
        for j in range(nY):
            e, s, r = results[idx]
            energies[:, i, j] = e
            states[:, :, :, i, j] = s
            residuals[:, i, j] = r
            idx += 1
    return BOScanResult(params, electron_grid, nuclear_grid, energies, states, residuals)


def polarization_vector(state: ScalarField) -> np.ndarray:
    """(integral x phi dr, integral y phi dr) of a real normalized state."""
    g = state.grid
    if g.ndim != 2:
        raise ValueError("polarization is defined for 2-d electron states")
    x = g.axis_coords(0)[:, None]
    y = g.axis_coords(1)[None, :]
    w = g.cell_volume()
    v = state.values
    return np.array([(x * v).sum() * w, (y * v).sum() * w])


def polarization_field(family: StateFamily) -> np.ndarray:
    """Polarization vectors for every nuclear point, shape (nX, nY, 2).

    Undefined nuclear points give NaN components.
    """
    g = family.electron_grid
    x = g.axis_coords(0)[:, None, None, None]
    y = g.axis_coords(1)[None, :, None, None]
    w = g.cell_volume()
    px = (x * family.values).sum(axis=(0, 1)) * w
    py = (y * family.values).sum(axis=(0, 1)) * w
    out = np.stack([px, py], axis=-1)
    out[~family.defined] = np.nan
    return out


def _cluster_ranges(energies, tol=DEGENERACY_TOL):
    """Contiguous index ranges of (nearly) degenerate eigenvalues."""
    ranges = []
    start = 0
    for i in range(1, len(energies) + 1):
        if i == len(energies) or energies[i] - energies[i - 1] > tol:
            ranges.append((start, i))
            start = i
    return ranges


def _align_point(states_here, ref_states, energies_here, cell, mirror=False):
    """Sign-fix (and rotate degenerate clusters of) one point's states against
    reference states; returns the number of unresolvable (near-zero-overlap)
    states."""
    n = states_here.shape[0]
    ref = states_here if ref_states is None else ref_states
    if ref_states is None:
        return 0
    if mirror:
        ref = ref[:, ::-1, :]  # electron-space x mirror of the reference
    unresolved = 0
    for (lo, hi) in _cluster_ranges(energies_here):
        size = hi - lo
        if size > 1:
            # rotate the degenerate cluster for maximal overlap with the
            # reference: orthogonal polar factor of the overlap matrix
            O = np.einsum("aij,bij->ab", ref[lo:hi], states_here[lo:hi]) * cell
            U, s, Vt = np.linalg.svd(O)
            if s[-1] < SEAM_OVERLAP_FLOOR:
                unresolved += size
                continue
            Wrot = Vt.T @ U.T  # orthogonal polar factor: O @ Wrot is SPD
            states_here[lo:hi] = np.einsum("ab,bij->aij", Wrot.T, states_here[lo:hi])
        else:
            ov = (ref[lo] * states_here[lo]).sum() * cell
            if abs(ov) < SEAM_OVERLAP_FLOOR:
                unresolved += 1
            elif ov < 0:
                states_here[lo] = -states_here[lo]
    return unresolved


def fix_gauge_real(scan: BOScanResult):
    """Sign-continuous real gauge plus the seams it cannot remove.

    Sweeps columns from X max to X min.  The rightmost column is made
    continuous along Y; every other column aligns pointwise with its right
    neighbor, except the first column left of a symmetric axis, which aligns
    with the x-mirror of its right neighbor so that the unavoidable sign
    flips settle on the X = 0 edges.  Degenerate clusters (gap below 1e-6)
    are rotated as a block for maximal overlap with the reference.

    Returns (gauge-fixed copy of the scan, list of SeamReport per state).
    """
    out = scan.copy()
    nX, nY = out.nuclear_grid.dims
    cell = out.electron_grid.cell_volume()
    states = out.states  # (n, ex, ey, nX, nY)
    energies = out.energies

    Xs = out.nuclear_grid.axis_coords(0)
    mirror_ok = (out.nuclear_grid.is_symmetric(0)
                 and out.electron_grid.is_symmetric(0))
    # column index just left of the axis, if the axis is a grid column
    axis_col = None
    if mirror_ok:
        i0 = int(np.argmin(np.abs(Xs)))
        if abs(Xs[i0]) < 1e-9 * max(1.0, out.nuclear_grid.spacing[0]):
            axis_col = i0

    # rightmost column: continuity along Y
    for j in range(1, nY):
        _align_point(states[:, :, :, nX - 1, j], states[:, :, :, nX - 1, j - 1],
                     energies[:, nX - 1, j], cell)
    # remaining columns, right to left
    for i in range(nX - 2, -1, -1):
        use_mirror = axis_col is not None and i == axis_col - 1
        for j in range(nY):
            _align_point(states[:, :, :, i, j], states[:, :, :, i + 1, j],
                         energies[:, i, j], cell, mirror=use_mirror)

    out.gauge_fixed = True
    reports = _detect_seams(out)
    return out, reports


def _detect_seams(scan: BOScanResult) -> list:
    """Scan every grid edge of every surface for sign flips."""
    nX, nY = scan.nuclear_grid.dims
    cell = scan.electron_grid.cell_volume()
    states = scan.states
    Xs = scan.nuclear_grid.axis_coords(0)
    Ys = scan.nuclear_grid.axis_coords(1)
    y_eq = scan.params.y_eq
    hX = scan.nuclear_grid.spacing[0]

    reports = []
    for n in range(scan.n_states):
        rep = SeamReport(state=n, segments={"L1": [], "L2": [], "other": []})
        sn = states[n]
        # X-direction edges
        ovx = (sn[:, :, :-1, :] * sn[:, :, 1:, :]).sum(axis=(0, 1)) * cell
        for i in range(nX - 1):
            for j in range(nY):
                o = ovx[i, j]
                edge = ((i, j), (i + 1, j), float(o))
                if abs(o) < SEAM_OVERLAP_FLOOR:
                    rep.degenerate_edges.append(edge)
                elif o < 0:
                    rep.edges.append(edge)
                    xm = 0.5 * (Xs[i] + Xs[i + 1])
                    ym = Ys[j]
                    if abs(xm) <= hX:
                        key = "L1" if abs(ym) > y_eq else "L2"
                    else:
                        key = "other"
                    rep.segments[key].append(edge)
        # Y-direction edges
        ovy = (sn[:, :, :, :-1] * sn[:, :, :, 1:]).sum(axis=(0, 1)) * cell
        for i in range(nX):
            for j in range(nY - 1):
                o = ovy[i, j]
                edge = ((i, j), (i, j + 1), float(o))
                if abs(o) < SEAM_OVERLAP_FLOOR:
                    rep.degenerate_edges.append(edge)
                elif o < 0:
                    rep.edges.append(edge)
                    rep.segments["other"].append(edge)
        reports.append(rep)
    return reports


def seam_edge_set(report: SeamReport) -> set:
    """Flip edges as an order-independent set of point pairs."""
    return {frozenset((a, b)) for (a, b, _o) in report.edges}


def generalized_bo_pes(scan: BOScanResult, params: ModelParams | None = None,
                       seam_reports=None) -> np.ndarray:
    """Mass-corrected surfaces eps_n + sum_nu <d_nu phi|d_nu phi> / 2M.

    Needs a gauge-fixed scan; nuclear points whose difference stencil
    crosses a seam or degenerate edge are NaN.  In this real gauge the
    Berry-connection term vanishes identically, so only the positive
    gradient correction remains and the result never drops below eps_n.
    """
    if not scan.gauge_fixed:
        raise ValueError("generalized surfaces need a gauge-fixed scan")
    params = params or scan.params
    M = params.M
    ngrid = scan.nuclear_grid
    cell = scan.electron_grid.cell_volume()
    spacing = (1.0, 1.0) + ngrid.spacing

    out = np.empty_like(scan.energies)
    for n in range(scan.n_states):
        vals = scan.states[n]
        corr = np.zeros(ngrid.dims)
        for axis in (2, 3):
            d = gradient_values(vals, spacing, axis)
            corr += (d * d).sum(axis=(0, 1)) * cell
        surf = scan.energies[n] + corr / (2.0 * M)
        if seam_reports is not None:
            bad = np.zeros(ngrid.dims, dtype=bool)
            rep = seam_reports[n]
            for (a, b, _o) in rep.edges + rep.degenerate_edges:
                bad[a] = True
                bad[b] = True
            surf = np.where(bad, np.nan, surf)
        out[n] = surf
    return out


def min_gap_location(scan: BOScanResult):
    """Grid point (and value) of the smallest surface-1/2 splitting."""
    gap = scan.energies[2] - scan.energies[1]
    i, j = np.unravel_index(int(np.argmin(gap)), gap.shape)
    return (int(i), int(j)), float(gap[i, j])


def write_polarization_csv(path, scan: BOScanResult) -> None:
    """polarization.csv with columns X, Y, state, px, py."""
    Xs = scan.nuclear_grid.axis_coords(0)
    Ys = scan.nuclear_grid.axis_coords(1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["X", "Y", "state", "px", "py"])
        for n in range(scan.n_states):
            pol = polarization_field(scan.family(n))
            for i in range(len(Xs)):
                for j in range(len(Ys)):
                    w.writerow([f"{Xs[i]:.17g}", f"{Ys[j]:.17g}", n,
                                f"{pol[i, j, 0]:.17g}", f"{pol[i, j, 1]:.17g}"])


def write_seams_csv(path, scan: BOScanResult, reports) -> None:
    """seams.csv with the endpoints of every sign-flip edge."""
    Xs = scan.nuclear_grid.axis_coords(0)
    Ys = scan.nuclear_grid.axis_coords(1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "X1", "Y1", "X2", "Y2", "overlap", "segment"])
        for rep in reports:
            for seg, edges in rep.segments.items():
                for (a, b, o) in edges:
                    w.writerow([rep.state,
                                f"{Xs[a[0]]:.17g}", f"{Ys[a[1]]:.17g}",
                                f"{Xs[b[0]]:.17g}", f"{Ys[b[1]]:.17g}",
                                f"{o:.17g}", seg])
            for (a, b, o) in rep.degenerate_edges:
                w.writerow([rep.state,
                            f"{Xs[a[0]]:.17g}", f"{Ys[a[1]]:.17g}",
                            f"{Xs[b[0]]:.17g}", f"{Ys[b[1]]:.17g}",
                            f"{o:.17g}", "degenerate"])
