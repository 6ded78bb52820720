import numpy as np
import pytest
from numpy.testing import assert_allclose

from berryfact.berry import connection_field, wilson_loop_phase
from berryfact.bo_surface import scan_bo
from berryfact.eigensolve import EigenRequest, dense_oracle, materialize
from berryfact.exact_fact import (
    ClassificationError,
    ci_density_fraction,
    classify_p_like,
    current_identity_check,
    exact_pes,
    factorize,
    nuclear_current_density,
    residual_eq10,
    residual_eq11,
    solve_full,
)
from berryfact.grid import Grid, ScalarField, normalized
from berryfact.model import BOOperator, FullOperator, ModelParams, reflection_projector

PARAMS = ModelParams()


def small_grid4(ne=15, nn=9, Le=6.0, Ln=3.0):
    return Grid.centered((Le, Le, Ln, Ln), (ne, ne, nn, nn))


@pytest.fixture(scope="module")
def ground_state():
    g4 = small_grid4()
    pairs = solve_full(PARAMS, g4, k=1, req=EigenRequest(k=1, tol=1e-9, seed=3))
    return g4, pairs[0]


@pytest.fixture(scope="module")
def ground_fs(ground_state):
    g4, pair = ground_state
    return factorize(pair.vector, energy=pair.value, solver_residual=pair.residual)


class TestFactorize:
    def test_marginal_is_exact_by_construction(self, ground_fs):
        fs = ground_fs
        cell_e = fs.electron_grid.cell_volume()
        marg = (fs.psi.values**2).sum(axis=(0, 1)) * cell_e
        assert_allclose(fs.chi.values**2, marg, atol=1e-14)

    def test_chi_nonnegative_and_normalized(self, ground_fs):
        fs = ground_fs
        assert np.all(fs.chi.values >= 0)
        total = (fs.chi.values**2).sum() * fs.nuclear_grid.cell_volume()
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_reconstruction(self, ground_fs):
        fs = ground_fs
        recon = fs.phi.values * fs.chi.values[None, None, :, :]
        d = fs.phi.defined
        err = np.abs(recon[:, :, d] - fs.psi.values[:, :, d]).max()
        assert err < 1e-14

    def test_partial_normalization(self, ground_fs):
        fs = ground_fs
        cell_e = fs.electron_grid.cell_volume()
        norms = (fs.phi.values**2).sum(axis=(0, 1)) * cell_e
        assert_allclose(norms[fs.phi.defined], 1.0, atol=1e-10)

    def test_separable_product_case(self):
        g4 = small_grid4()
        eg, ng = g4.subgrid((0, 1)), g4.subgrid((2, 3))
        rng = np.random.default_rng(0)
        gvals = normalized(ScalarField(eg, np.exp(-(eg.axis_coords(0)[:, None]**2
                                                    + eg.axis_coords(1)[None, :]**2)))).values
        hvals = normalized(ScalarField(ng, np.exp(-0.5 * (ng.axis_coords(0)[:, None]**2
                                                          + ng.axis_coords(1)[None, :]**2)))).values
        psi = ScalarField(g4, gvals[:, :, None, None] * hvals[None, None, :, :])
        fs = factorize(psi)
        assert_allclose(fs.chi.values, np.abs(hvals), atol=1e-14)
        d = fs.phi.defined
        for i, j in zip(*np.nonzero(d)):
            assert_allclose(fs.phi.values[:, :, i, j], gvals, atol=1e-12)
        del rng

    def test_rejects_non_4d(self):
        g = Grid.centered((2.0, 2.0), 5)
        with pytest.raises(ValueError):
            factorize(ScalarField(g, np.ones(g.dims)))


class TestExactPes:
    def test_r_independent_family_gives_bo_expectation(self):
        # separable psi: corrections vanish, eps_ex = <g|H_BO(R)|g> exactly
        g4 = small_grid4()
        eg, ng = g4.subgrid((0, 1)), g4.subgrid((2, 3))
        x = eg.axis_coords(0)[:, None]
        y = eg.axis_coords(1)[None, :]
        gvals = normalized(ScalarField(eg, np.exp(-(x**2 + y**2)))).values
        hvals = normalized(ScalarField(ng, 1.0 + 0.3 * np.exp(
            -0.5 * (ng.axis_coords(0)[:, None]**2 + ng.axis_coords(1)[None, :]**2)))).values
        psi = ScalarField(g4, gvals[:, :, None, None] * hvals[None, None, :, :])
        fs = factorize(psi)
        eps = exact_pes(fs, PARAMS)
        gf = ScalarField(eg, gvals)
        Xs, Ys = ng.axis_coords(0), ng.axis_coords(1)
        for (i, j) in [(0, 0), (4, 4), (2, 6), (8, 1)]:
            op = BOOperator(PARAMS, eg, (Xs[i], Ys[j]))
            expect = (gvals * op.apply(gf).values).sum() * eg.cell_volume()
            assert eps[i, j] == pytest.approx(expect, abs=1e-10)

    def test_variational_bound(self, ground_fs):
        fs = ground_fs
        eps = exact_pes(fs, PARAMS)
        assert np.nanmin(eps) <= fs.energy + 1e-10

    def test_connection_vanishes_for_real_state(self, ground_fs):
        fs = ground_fs
        exact_pes(fs, PARAMS)
        conn = fs.connection
        assert np.nanmax(np.abs(conn.a_x)) == 0.0
        assert np.nanmax(np.abs(conn.a_y)) == 0.0

    def test_wilson_loop_of_conditional_states_is_zero(self, ground_fs):
        fs = ground_fs
        nX, nY = fs.nuclear_grid.dims
        ring = ([(i, 2) for i in range(2, nX - 2)]
                + [(nX - 3, j) for j in range(3, nY - 2)]
                + [(i, nY - 3) for i in range(nX - 3, 1, -1)]
                + [(2, j) for j in range(nY - 3, 2, -1)])
        assert all(fs.phi.defined[p] for p in ring)
        states = [fs.phi.values[:, :, i, j] for (i, j) in ring]
        assert wilson_loop_phase(states) == 0.0


class TestResiduals:
    def test_eq10_small_in_chi_core(self, ground_fs):
        fs = ground_fs
        r = residual_eq10(fs, PARAMS)
        core = fs.chi.values > 10 * fs.chi_floor
        vals = r[core & np.isfinite(r)]
        assert vals.size > 0
        assert np.median(vals) < 0.05  # coarse grid; refinement test tightens

    def test_eq10_decreases_under_refinement(self, ground_state):
        g4c, pc = ground_state
        fsc = factorize(pc.vector, energy=pc.value)
        rc = residual_eq10(fsc, PARAMS)
        corec = fsc.chi.values > 10 * fsc.chi_floor
        med_c = np.median(rc[corec & np.isfinite(rc)])

        g4f = small_grid4(ne=21, nn=13)
        pf = solve_full(PARAMS, g4f, k=1, req=EigenRequest(k=1, tol=1e-9, seed=3))[0]
        fsf = factorize(pf.vector, energy=pf.value)
        rf = residual_eq10(fsf, PARAMS)
        coref = fsf.chi.values > 10 * fsf.chi_floor
        med_f = np.median(rf[coref & np.isfinite(rf)])
        assert med_f < med_c

    def test_eq10_grows_where_chi_vanishes(self, ground_fs):
        fs = ground_fs
        r = residual_eq10(fs, PARAMS)
        chi = fs.chi.values
        ok = np.isfinite(r)
        lo = r[ok & (chi < 1e-3 * chi.max())]
        hi = r[ok & (chi > 0.5 * chi.max())]
        if lo.size and hi.size:
            assert np.median(lo) > np.median(hi)

    def test_eq11_residual_and_shift_invariance(self, ground_fs):
        fs = ground_fs
        exact_pes(fs, PARAMS)
        r = residual_eq11(fs, PARAMS)
        assert 0 <= r < 0.1
        # adding a constant to eps and E cancels exactly
        fs_shift = factorize(fs.psi, energy=fs.energy + 0.7)
        exact_pes(fs_shift, PARAMS)
        fs_shift.eps_ex = fs_shift.eps_ex + 0.7
        assert residual_eq11(fs_shift, PARAMS) == pytest.approx(r, rel=1e-10)

    def test_eq11_decreases_under_refinement(self, ground_state):
        g4c, pc = ground_state
        fsc = factorize(pc.vector, energy=pc.value)
        r_c = residual_eq11(fsc, PARAMS)
        g4f = small_grid4(ne=21, nn=13)
        pf = solve_full(PARAMS, g4f, k=1, req=EigenRequest(k=1, tol=1e-9, seed=3))[0]
        fsf = factorize(pf.vector, energy=pf.value)
        r_f = residual_eq11(fsf, PARAMS)
        assert r_f < r_c


class TestCurrentIdentity:
    def test_real_state_gives_zero(self, ground_fs):
        assert current_identity_check(ground_fs) == 0.0

    @staticmethod
    def _boost_deviation(nn):
        # smooth synthetic state times e^{i kappa X}; the current identity
        # Im int Psi* dX Psi dr = Im[chi* dX chi] + |chi|^2 A_X is kinematic
        # and holds to the accuracy of the finite-difference product rule
        kappa = 0.4
        g4 = Grid.centered((4.0, 4.0, 3.0, 3.0), (11, 11, nn, nn))
        x = g4.axis_coords(0)[:, None, None, None]
        y = g4.axis_coords(1)[None, :, None, None]
        X = g4.axis_coords(2)[None, None, :, None]
        Y = g4.axis_coords(3)[None, None, None, :]
        base = np.exp(-(x**2 + y**2) / 2 - (X**2 + Y**2) / 2 - 0.2 * x * X)
        psi = normalized(ScalarField(g4, base * np.exp(1j * kappa * X)))
        J = nuclear_current_density(psi)
        fs = factorize(psi)
        conn = connection_field(fs.phi)
        chi2 = fs.chi.values**2
        rhs = chi2 * conn.a_x  # chi real: Im[chi* d chi] = 0
        ok = np.isfinite(rhs) & (chi2 > 1e-6 * chi2.max())
        dev = np.abs(J[0] - rhs)[ok].max() / chi2.max()
        # the plain-boost reference |chi|^2 sin(kappa h)/h
        hX = g4.spacing[2]
        ref_dev = np.abs(J[0] - chi2 * np.sin(kappa * hX) / hX)[ok].max() / chi2.max()
        return dev, ref_dev

    def test_plane_wave_boost(self):
        dev_c, ref_c = self._boost_deviation(13)
        dev_f, ref_f = self._boost_deviation(25)
        assert dev_c < 0.05 and ref_c < 0.05
        # halving h cuts the product-rule error by about 4
        assert dev_f < 0.4 * dev_c
        assert ref_f < 0.4 * ref_c

    def test_boosted_y_current_vanishes(self, ground_fs):
        g4 = ground_fs.psi.grid
        X = g4.axis_coords(2)[None, None, :, None]
        boosted = ScalarField(g4, ground_fs.psi.values * np.exp(1j * 0.4 * X))
        J = nuclear_current_density(boosted)
        assert_allclose(J[1], 0.0, atol=1e-12)


@pytest.fixture(scope="module")
def tiny_scan():
    eg = Grid.centered((6.0, 6.0), 15)
    ng = Grid((5, 5), (0.5, 0.5), (-1.0, 0.2))  # covers the upper CI
    return scan_bo(ModelParams(), eg, ng, n_states=3)


def synth_state(scan, surface, center, energy, width=0.5):
    """Synthetic factorized state: chi is a gaussian hump on the given BO
    surface's electronic family."""
    ng = scan.nuclear_grid
    X = ng.axis_coords(0)[:, None]
    Y = ng.axis_coords(1)[None, :]
    chi = np.exp(-((X - center[0])**2 + (Y - center[1])**2) / (2 * width**2))
    chi = chi / np.sqrt((chi**2).sum() * ng.cell_volume())
    psi = ScalarField(
        Grid(scan.electron_grid.dims + ng.dims,
             scan.electron_grid.spacing + ng.spacing,
             scan.electron_grid.origin + ng.origin),
        scan.states[surface] * chi[None, None, :, :])
    fs = factorize(psi, energy=energy)
    return fs


class TestClassification:
    def test_selects_ci_supported_p_states(self, tiny_scan):
        s_state = synth_state(tiny_scan, 0, (0.0, 1.2), energy=-0.9)
        p_far = synth_state(tiny_scan, 1, (-1.0, 0.2), energy=-0.30, width=0.3)
        p_a = synth_state(tiny_scan, 1, (0.0, 1.2), energy=-0.28)
        p_b = synth_state(tiny_scan, 2, (0.0, 1.2), energy=-0.20)
        cls = classify_p_like([s_state, p_far, p_a, p_b], tiny_scan)
        assert cls.verdicts[0] == "s-like"
        assert cls.verdicts[2] == "p-like" and cls.verdicts[3] == "p-like"
        assert cls.a_index == 2 and cls.b_index == 3
        assert p_a.label == "A" and p_b.label == "B"
        # the far p state is p-like but lacks CI support
        assert cls.verdicts[1] == "p-like"
        assert cls.ci_support[1] < 0.1 < cls.ci_support[2]

    def test_too_few_p_like_raises(self, tiny_scan):
        s_state = synth_state(tiny_scan, 0, (0.0, 1.2), energy=-0.9)
        p_a = synth_state(tiny_scan, 1, (0.0, 1.2), energy=-0.28)
        with pytest.raises(ClassificationError, match="larger k"):
            classify_p_like([s_state, p_a], tiny_scan)

    def test_ci_density_fraction(self, tiny_scan):
        fs = synth_state(tiny_scan, 0, (0.0, 1.2), energy=-1.0, width=0.3)
        assert ci_density_fraction(fs, tiny_scan.params) > 0.8


class TestSolveFullOracle:
    def test_tiny_grid_matches_dense_oracle(self):
        g4 = Grid.centered((3.0, 3.0, 2.0, 2.0), 7)
        op = FullOperator(PARAMS, g4)
        pairs = solve_full(PARAMS, g4, k=5, req=EigenRequest(k=5, tol=1e-10, seed=1))
        dense = dense_oracle(materialize(op, g4.npoints))
        for p, d in zip(pairs, dense[:5]):
            assert p.value == pytest.approx(d.value, abs=1e-9)

    def test_energies_above_potential_infimum(self):
        g4 = small_grid4()
        pairs = solve_full(PARAMS, g4, k=2, req=EigenRequest(k=2, tol=1e-8, seed=5))
        vmin = FullOperator(PARAMS, g4).potential().values.min()
        for p in pairs:
            assert p.value > vmin

    def test_sector_solves_partition_spectrum(self):
        g4 = Grid.centered((3.0, 3.0, 2.0, 2.0), 7)
        full = solve_full(PARAMS, g4, k=8, req=EigenRequest(k=8, tol=1e-9, seed=2))
        sector_vals = []
        for xp in (+1, -1):
            proj = reflection_projector(g4, x_parity=xp)
            req = EigenRequest(k=4, tol=1e-9, seed=2, projector=proj)
            pairs = solve_full(PARAMS, g4, k=4, req=req)
            sector_vals.extend(p.value for p in pairs)
        merged = np.sort(sector_vals)[:8]
        assert_allclose(merged, [p.value for p in full], atol=1e-8)
