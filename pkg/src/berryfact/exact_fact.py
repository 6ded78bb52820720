"""Exact factorization of full electron-nuclear eigenstates.

Every full eigenstate Psi(r, R) splits uniquely (up to gauge) into a nuclear
amplitude and a conditional electronic state,

    chi(R) = sqrt( integral |Psi(r, R)|^2 dr ),      chi >= 0,
    phi(r; R) = Psi(r, R) / chi(R),

so that phi is normalized over r at every R where chi is above a floor.  The
exact surface adds the mass-weighted electronic-gradient correction and the
(vanishing, in this real gauge) connection term to the electronic
expectation value; the coupled electronic and nuclear equations are then
verified by residual, not solved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .berry import ConnectionField, StateFamily, connection_field, stencil_defined
from .bo_surface import BOScanResult, polarization_field
from .eigensolve import EigenPair, EigenRequest, lowest_eigenpairs
from .grid import Grid, ScalarField, gradient_values, laplacian_values
from .model import FullOperator, ModelParams, full_potential_values

CHI_FLOOR_REL = 1e-6


class ClassificationError(RuntimeError):
    """Too few p-like states among the computed eigenstates."""


@dataclass
class FactorizedState:
    """One factorized full eigenpair and its derived surfaces."""

    energy: float
    psi: ScalarField
    chi: ScalarField
    phi: StateFamily
    chi_floor: float
    label: str | None = None
    solver_residual: float = 0.0
    eps_ex: np.ndarray | None = None     # exact surface, NaN where undefined
    connection: ConnectionField | None = None

    @property
    def electron_grid(self) -> Grid:
        return self.phi.electron_grid

    @property
    def nuclear_grid(self) -> Grid:
        return self.phi.nuclear_grid


@dataclass
class PLikeClassification:
    """Per-state polarization profile and the chosen A/B indices."""

    max_polarization: np.ndarray     # max |p(R)| over the chi core, per state
    reference_polarization: np.ndarray  # BO p-state |p| at the same points
    verdicts: list[str]              # "p-like" / "s-like" / "other"
    ci_support: np.ndarray           # |chi|^2 mass within ci_radius of the CIs
    a_index: int | None
    b_index: int | None
    threshold: float


def solve_full(params: ModelParams, grid: Grid, k: int,
               req: EigenRequest | None = None) -> list[EigenPair]:
    """Lowest k eigenpairs of the full 4D Hamiltonian."""
    op = FullOperator(params, grid)
    if req is None:
        req = EigenRequest(k=k)
    elif req.k != k:
        raise ValueError("req.k must equal k")
    return lowest_eigenpairs(op, grid, req)


def factorize(psi: ScalarField, energy: float = np.nan,
              chi_floor_rel: float = CHI_FLOOR_REL,
              solver_residual: float = 0.0) -> FactorizedState:
    """Split a normalized 4D state into chi(R) and phi(r; R).

    The marginal is exact by construction: chi^2 equals the electron-space
    integral of |Psi|^2 pointwise.  phi is undefined (zeroed, masked) where
    chi does not exceed ``chi_floor_rel * max(chi)``.
    """
    if psi.grid.ndim != 4:
        raise ValueError("factorize needs a 4-d (x, y, X, Y) field")
    g = psi.grid
    egrid = g.subgrid((0, 1))
    ngrid = g.subgrid((2, 3))
    cell_e = egrid.cell_volume()
    dens = (psi.values.real**2 + psi.values.imag**2) if psi.is_complex else psi.values**2
    chi2 = dens.sum(axis=(0, 1)) * cell_e
    chi = np.sqrt(chi2)
    floor = chi_floor_rel * float(chi.max())
    defined = chi > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_vals = psi.values / chi[None, None, :, :]
    phi_vals[:, :, ~defined] = 0.0
    return FactorizedState(
        energy=float(energy),
        psi=psi,
        chi=ScalarField(ngrid, chi),
        phi=StateFamily(egrid, ngrid, phi_vals, defined),
        chi_floor=floor,
        solver_residual=solver_residual,
    )


def _bo_expectation(fs: FactorizedState, params: ModelParams, v4=None) -> np.ndarray:
    """<phi | H_BO(R) | phi>_r per nuclear point (defined points only)."""
    vals = fs.phi.values
    g4 = fs.psi.grid
    if v4 is None:
        v4 = full_potential_values(params, g4)
    hphi = -0.5 * laplacian_values(vals, g4.spacing, (0, 1)) + v4 * vals
    conj = np.conj(vals) if np.iscomplexobj(vals) else vals
    out = (conj * hphi).sum(axis=(0, 1)) * fs.electron_grid.cell_volume()
    return out.real if np.iscomplexobj(out) else out


def exact_pes(fs: FactorizedState, params: ModelParams, v4=None) -> np.ndarray:
    """Exact potential energy surface on the nuclear grid (NaN undefined).

    eps(R) = <phi|H_BO|phi> + sum_nu <d_nu phi|d_nu phi>/2M - sum_nu A_nu^2/2M
    with nuclear derivatives by central differences (one-sided at grid
    edges).  Stores the result and the connection on ``fs`` and returns the
    surface.
    """
    M = params.M
    g4 = fs.psi.grid
    term1 = _bo_expectation(fs, params, v4=v4)

    vals = fs.phi.values
    spacing = g4.spacing
    grad2 = np.zeros(fs.nuclear_grid.dims)
    for axis in (2, 3):
        d = gradient_values(vals, spacing, axis)
        dd = (d.real**2 + d.imag**2) if np.iscomplexobj(d) else d * d
        grad2 += dd.sum(axis=(0, 1)) * fs.electron_grid.cell_volume()

    conn = connection_field(fs.phi)
    fs.connection = conn
    defined = fs.phi.defined & conn.defined
    asq = np.where(conn.defined, conn.a_x**2 + conn.a_y**2, 0.0)

    eps = term1 + grad2 / (2.0 * M) - asq / (2.0 * M)
    eps = np.where(defined, eps, np.nan)
    fs.eps_ex = eps
    return eps


def ci_density_fraction(fs: FactorizedState, params: ModelParams,
                        radius: float = 0.7) -> float:
    """Fraction of the nuclear density within ``radius`` of either
    equilateral (conical-intersection) point."""
    g = fs.nuclear_grid
    X = g.axis_coords(0)[:, None]
    Y = g.axis_coords(1)[None, :]
    near = (np.hypot(X, Y - params.y_eq) < radius) | (np.hypot(X, Y + params.y_eq) < radius)
    chi2 = fs.chi.values**2
    return float(chi2[near].sum() / chi2.sum())


def reference_polarization_field(scan: BOScanResult) -> np.ndarray:
    """Pointwise max of the two BO p-surface polarization magnitudes."""
    ref1 = np.linalg.norm(polarization_field(scan.family(1)), axis=-1)
    ref2 = np.linalg.norm(polarization_field(scan.family(2)), axis=-1)
    return np.maximum(ref1, ref2)


def p_like_metrics(fs: FactorizedState, scan: BOScanResult, ref: np.ndarray | None = None,
                   core_frac: float = 0.25, ci_radius: float = 0.7):
    """(max |p| over the chi core, BO reference there, their ratio, CI
    density fraction) for one factorized state."""
    if ref is None:
        ref = reference_polarization_field(scan)
    chi2 = fs.chi.values**2
    core = (chi2 >= core_frac * chi2.max()) & fs.phi.defined
    pol = np.linalg.norm(polarization_field(fs.phi), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(core & (ref > 0), pol / ref, 0.0)
    j = int(np.nanargmax(np.where(core, ratio, -np.inf)))
    support = ci_density_fraction(fs, scan.params, ci_radius)
    return float(pol.flat[j]), float(ref.flat[j]), float(ratio.flat[j]), support


def classify_p_like(states: list[FactorizedState], scan: BOScanResult,
                    threshold: float = 0.5, core_frac: float = 0.25,
                    ci_radius: float = 0.7, ci_frac: float = 0.1) -> PLikeClassification:
    """Rank states by energy and find the lowest two p-like ones (A and B).

    A state counts as p-like when, somewhere in the core of its nuclear
    density (chi^2 above ``core_frac`` of its maximum), the magnitude of its
    electronic polarization reaches ``threshold`` times the larger of the
    two Born-Oppenheimer p-surface polarizations at the same nuclear point;
    the s-like full states sit far below that at every core point.

    A and B are the energetically lowest two p-like states whose nuclear
    density also puts at least ``ci_frac`` of its weight within ``ci_radius``
    of the equilateral points.  The support filter excludes p-manifold
    states that live on the outer ring of the confining trap, far from the
    intersections; their conditional electronic states are p-like too, but
    they are not the states whose surfaces interpolate through the
    degeneracy (measured supports: ring states < 0.05, A/B > 0.15).
    """
    if scan.n_states < 3:
        raise ValueError("classification needs the BO scan up to surface 2")
    for fs in states:
        if fs.nuclear_grid != scan.nuclear_grid:
            raise ValueError("factorized states and scan use different nuclear grids")

    ref = reference_polarization_field(scan)
    order = np.argsort([fs.energy for fs in states], kind="stable")
    maxpol = np.zeros(len(states))
    refpol = np.zeros(len(states))
    support = np.zeros(len(states))
    verdicts = [""] * len(states)
    for i, fs in enumerate(states):
        maxpol[i], refpol[i], r, support[i] = p_like_metrics(
            fs, scan, ref=ref, core_frac=core_frac, ci_radius=ci_radius)
        verdicts[i] = "p-like" if r >= threshold else ("s-like" if r < threshold / 2 else "other")

    p_sorted = [int(i) for i in order
                if verdicts[i] == "p-like" and support[i] >= ci_frac]
    if len(p_sorted) < 2:
        raise ClassificationError(
            f"found {len(p_sorted)} p-like intersection-supported states among "
            f"{len(states)} computed; request more eigenstates (larger k)")
    a_idx, b_idx = p_sorted[0], p_sorted[1]
    states[a_idx].label = "A"
    states[b_idx].label = "B"
    return PLikeClassification(
        max_polarization=maxpol,
        reference_polarization=refpol,
        verdicts=verdicts,
        ci_support=support,
        a_index=a_idx,
        b_index=b_idx,
        threshold=threshold,
    )


def _central_diff(arr, axis, h):
    """Interior-only central first difference; NaN on the boundary slabs."""
    out = np.full_like(arr, np.nan)
    nd = arr.ndim

    def sl(s):
        idx = [slice(None)] * nd
        idx[axis] = s
        return tuple(idx)

    out[sl(slice(1, -1))] = (arr[sl(slice(2, None))] - arr[sl(slice(0, -2))]) / (2 * h)
    return out


def _central_second_diff(arr, axis, h):
    out = np.full_like(arr, np.nan)
    nd = arr.ndim

    def sl(s):
        idx = [slice(None)] * nd
        idx[axis] = s
        return tuple(idx)

    out[sl(slice(1, -1))] = (arr[sl(slice(2, None))] - 2 * arr[sl(slice(1, -1))]
                             + arr[sl(slice(0, -2))]) / (h * h)
    return out


def _interior_defined(defined: np.ndarray) -> np.ndarray:
    """Points whose full central stencil (both axes) is defined; excludes
    the nuclear-grid boundary."""
    ok = np.zeros_like(defined)
    ok[1:-1, 1:-1] = (defined[1:-1, 1:-1]
                      & defined[:-2, 1:-1] & defined[2:, 1:-1]
                      & defined[1:-1, :-2] & defined[1:-1, 2:])
    return ok


def residual_eq10(fs: FactorizedState, params: ModelParams, v4=None) -> np.ndarray:
    """Per-R residual norm of the conditional electronic equation.

    r(R) = || (H_BO + U_en) phi(.; R) - eps_ex(R) phi(.; R) ||_r with the
    coupling operator in the real gauge (A = 0):

        U_en phi = (1/M) [ -1/2 (dXX + dYY) phi
                           - (dX chi / chi) dX phi - (dY chi / chi) dY phi ]

    NaN where chi is below the floor, where eps_ex is undefined, or where
    the nuclear stencil leaves the defined region.
    """
    if fs.eps_ex is None:
        exact_pes(fs, params, v4=v4)
    g4 = fs.psi.grid
    if v4 is None:
        v4 = full_potential_values(params, g4)
    M = params.M
    vals = fs.phi.values
    hX, hY = g4.spacing[2], g4.spacing[3]

    hphi = -0.5 * laplacian_values(vals, g4.spacing, (0, 1)) + v4 * vals

    chi = fs.chi.values
    dchi_x = _central_diff(chi, 0, hX)
    dchi_y = _central_diff(chi, 1, hY)
    with np.errstate(invalid="ignore", divide="ignore"):
        gx = dchi_x / chi
        gy = dchi_y / chi

    dphi_x = _central_diff(vals, 2, hX)
    dphi_y = _central_diff(vals, 3, hY)
    d2phi = _central_second_diff(vals, 2, hX) + _central_second_diff(vals, 3, hY)

    u_en = (-0.5 * d2phi - gx[None, None, :, :] * dphi_x
            - gy[None, None, :, :] * dphi_y) / M

    resid = hphi + u_en - fs.eps_ex[None, None, :, :] * vals
    rr = (resid.real**2 + resid.imag**2) if np.iscomplexobj(resid) else resid**2
    with np.errstate(invalid="ignore"):
        norms = np.sqrt(rr.sum(axis=(0, 1)) * fs.electron_grid.cell_volume())

    ok = _interior_defined(fs.phi.defined) & np.isfinite(fs.eps_ex)
    return np.where(ok, norms, np.nan)


def residual_eq11(fs: FactorizedState, params: ModelParams) -> float:
    """Residual norm of the nuclear equation (real gauge, A = 0):

    || (-sum_nu d_nu^2 / 2M + eps_ex) chi - E chi ||  over the nuclear grid,
    excluding points where eps_ex is undefined and the grid boundary.
    """
    if fs.eps_ex is None:
        exact_pes(fs, params)
    M = params.M
    g = fs.nuclear_grid
    chi = fs.chi.values
    lap = (_central_second_diff(chi, 0, g.spacing[0])
           + _central_second_diff(chi, 1, g.spacing[1]))
    resid = -lap / (2.0 * M) + (fs.eps_ex - fs.energy) * chi
    ok = np.isfinite(resid)
    return float(np.sqrt((resid[ok] ** 2).sum() * g.cell_volume()))


def nuclear_current_density(psi: ScalarField) -> np.ndarray:
    """J_nu(R) = Im integral Psi* d_nu Psi dr, shape (2, nX, nY).

    Multiplied by 1/M this is the exact nuclear current density; it equals
    Im[chi* d_nu chi] + |chi|^2 A_nu up to the finite-difference product
    rule, and vanishes identically for real eigenstates.
    """
    if psi.grid.ndim != 4:
        raise ValueError("needs a 4-d (x, y, X, Y) field")
    cell_e = psi.grid.subgrid((0, 1)).cell_volume()
    vals = psi.values
    if not np.iscomplexobj(vals):
        nX, nY = psi.grid.dims[2], psi.grid.dims[3]
        return np.zeros((2, nX, nY))
    conj = np.conj(vals)
    out = []
    for axis in (2, 3):
        d = gradient_values(vals, psi.grid.spacing, axis)
        out.append((conj * d).sum(axis=(0, 1)).imag * cell_e)
    return np.stack(out)


def current_identity_check(fs: FactorizedState) -> float:
    """Reality diagnostic: max_nu,R |Im integral Psi* d_nu Psi dr|.

    Both sides of the current identity vanish for real eigenstates; any
    nonzero value flags a complex-contaminated state.
    """
    return float(np.abs(nuclear_current_density(fs.psi)).max())
