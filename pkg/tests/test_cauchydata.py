"""Forward solves, Cauchy data assembly, and the Green boundary form."""

import numpy as np
import pytest

from diskdbar.field import (FORM_01, FUNCTION, BoundaryTrace, MatrixField,
                            build_domain, l2_inner, lp_norm)
from diskdbar.cauchy import dbar_inv, dbar_star_inv
from diskdbar.dirac import (adjoint_potential, diagonal_potential,
                            zero_potential)
from diskdbar.cauchydata import (SLOT_FORM, SLOT_FUNCTION, CauchyDataMatrix,
                                 _rows_of_V, assemble_cauchy_data,
                                 forward_solve, green_functional,
                                 load_cauchy_data, monomial_boundary,
                                 monomial_incident, save_cauchy_data,
                                 subspace_distance, trace_pair)


def bump_field(grid, center, rho, amp=1.0):
    t = np.abs(grid.z - center) / rho
    inside = t < 1.0
    vals = np.zeros_like(t)
    vals[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return MatrixField.from_scalar(grid, amp * vals.astype(complex))


def two_bump_potential(grid, amp=1.5):
    qp = bump_field(grid, 0.2 + 0.1j, 0.45, amp)
    qm = bump_field(grid, -0.2 - 0.1j, 0.45, amp)
    return diagonal_potential(qp, qm)


def rim_flat_perturbation(grid):
    """Radial profile vanishing to second order at the rim."""
    r2 = np.abs(grid.z) ** 2
    vals = np.where(grid.mask, (1.0 - r2) ** 2, 0.0).astype(complex)
    return MatrixField.from_scalar(grid, vals)


def perturbed_potential(grid, amp=1.5):
    qp = bump_field(grid, 0.2 + 0.1j, 0.45, amp)
    qm = bump_field(grid, -0.2 - 0.1j, 0.45, amp)
    delta = rim_flat_perturbation(grid)
    return diagonal_potential(qp, qm.with_data(qm.data + delta.data))


def pair_deviation(sol, inc):
    du = sol.u.with_data(sol.u.data - inc[0].data)
    dv = sol.v.with_data(sol.v.data - inc[1].data)
    return np.hypot(lp_norm(du, 2), lp_norm(dv, 2))


class TestMonomialIncident:
    def test_function_slot_values(self):
        g = build_domain(32)
        u, v = monomial_incident(g, SLOT_FUNCTION, 3, 0, 1)
        assert np.allclose(u.data[0, 0], g.z ** 3)
        assert np.count_nonzero(v.data) == 0

    def test_form_slot_values(self):
        g = build_domain(32)
        u, v = monomial_incident(g, SLOT_FORM, 2, 0, 1)
        assert np.count_nonzero(u.data) == 0
        assert np.allclose(v.data[0, 0], np.conj(g.z) ** 2)

    def test_preconditions(self):
        g = build_domain(32)
        with pytest.raises(ValueError, match="degree"):
            monomial_incident(g, SLOT_FUNCTION, -1, 0, 1)
        with pytest.raises(ValueError, match="component"):
            monomial_incident(g, SLOT_FUNCTION, 0, 2, 2)
        with pytest.raises(ValueError, match="slot"):
            monomial_incident(g, "neither", 0, 0, 1)

    def test_closed_form_boundary_matches_interpolation_at_low_degree(self):
        # bilinear interpolation of z^m degrades like (m h)^2; at degree 2
        # and n = 64 the two trace routes must agree closely
        g = build_domain(64)
        inc = monomial_incident(g, SLOT_FUNCTION, 2, 0, 1)
        interp = trace_pair(inc[0], inc[1])
        exact = monomial_boundary(g, SLOT_FUNCTION, 2, 0, 1)
        assert np.abs(interp.values - exact.values).max() < 5e-3
        assert np.abs(exact.values[0, 0]).max() == pytest.approx(1.0)


class TestForwardSolve:
    def test_zero_potential_returns_incident(self):
        g = build_domain(32)
        V = zero_potential(g)
        inc = monomial_incident(g, SLOT_FUNCTION, 2, 0, 1)
        sol = forward_solve(V, inc)
        assert pair_deviation(sol, inc) == 0.0
        assert sol.method == "neumann"

    def test_small_potential_first_order_bound(self):
        # U - W should match the first Neumann correction to second order
        g = build_domain(64)
        eps = 1e-3
        V = diagonal_potential(bump_field(g, 0.1, 0.6, eps),
                               bump_field(g, -0.1, 0.6, eps))
        inc = monomial_incident(g, SLOT_FUNCTION, 1, 0, 1)
        sol = forward_solve(V, inc, tol=1e-13)
        r1, r2 = _rows_of_V(V, inc[0].data, inc[1].data)
        t_u = dbar_inv(MatrixField(g, 1, 1, r2, form_type=FORM_01),
                       mean_free=True)
        t_v = dbar_star_inv(MatrixField(g, 1, 1, r1, form_type=FUNCTION),
                            mean_free=True)
        first = np.hypot(lp_norm(t_u, 2), lp_norm(t_v, 2))
        dev = pair_deviation(sol, inc)
        assert dev <= 2.0 * first
        sec_u = sol.u.with_data(sol.u.data - inc[0].data + t_u.data)
        sec_v = sol.v.with_data(sol.v.data - inc[1].data + t_v.data)
        second = np.hypot(lp_norm(sec_u, 2), lp_norm(sec_v, 2))
        assert second < 1e-3 * first

    def test_manufactured_forcing_recovery(self):
        # exact solution (g, 0) for a seamless Gaussian g; the forcing
        # (qp g, dbar g) is analytic, recovery is grid-limited only
        g = build_domain(64)
        V = two_bump_potential(g)
        a, c = 50.0, 0.15 - 0.1j
        target = np.exp(-a * np.abs(g.z - c) ** 2)
        f1 = V.top_left.data[0, 0] * target
        f2 = -a * (g.z - c) * target
        forcing = (MatrixField(g, 1, 1, f1[None, None], form_type=FUNCTION),
                   MatrixField(g, 1, 1, f2[None, None], form_type=FORM_01))
        w0 = (MatrixField.zeros(g, 1, 1, form_type=FUNCTION),
              MatrixField.zeros(g, 1, 1, form_type=FORM_01))
        sol = forward_solve(V, w0, forcing=forcing, tol=1e-13)
        # the flat inverse fixes the additive constant; compare modulo it
        diff = sol.u.data[0, 0] - target
        shift = diff[g.mask].mean()
        err = lp_norm(sol.u.with_data((diff - shift)[None, None]), 2)
        assert err < 1e-5
        assert lp_norm(sol.v, 2) < 1e-7

    def test_manufactured_recovery_sharpens_with_resolution(self):
        errs = []
        for n in (64, 96):
            g = build_domain(n)
            V = two_bump_potential(g)
            a, c = 50.0, 0.15 - 0.1j
            target = np.exp(-a * np.abs(g.z - c) ** 2)
            f1 = V.top_left.data[0, 0] * target
            f2 = -a * (g.z - c) * target
            forcing = (MatrixField(g, 1, 1, f1[None, None],
                                   form_type=FUNCTION),
                       MatrixField(g, 1, 1, f2[None, None],
                                   form_type=FORM_01))
            w0 = (MatrixField.zeros(g, 1, 1, form_type=FUNCTION),
                  MatrixField.zeros(g, 1, 1, form_type=FORM_01))
            sol = forward_solve(V, w0, forcing=forcing, tol=1e-13)
            diff = sol.u.data[0, 0] - target
            shift = diff[g.mask].mean()
            errs.append(lp_norm(sol.u.with_data((diff - shift)[None, None]),
                                2))
        assert errs[1] < 1e-9
        assert errs[1] < errs[0] / 100.0

    def test_linearity_in_the_incident(self):
        g = build_domain(48)
        V = two_bump_potential(g)
        inc0 = monomial_incident(g, SLOT_FUNCTION, 0, 0, 1)
        inc1 = monomial_incident(g, SLOT_FUNCTION, 1, 0, 1)
        both = (inc0[0].with_data(inc0[0].data + inc1[0].data),
                inc0[1].with_data(inc0[1].data + inc1[1].data))
        s0 = forward_solve(V, inc0, tol=1e-12)
        s1 = forward_solve(V, inc1, tol=1e-12)
        sb = forward_solve(V, both, tol=1e-12)
        du = sb.u.with_data(sb.u.data - s0.u.data - s1.u.data)
        dv = sb.v.with_data(sb.v.data - s0.v.data - s1.v.data)
        scale = np.hypot(lp_norm(sb.u, 2), lp_norm(sb.v, 2))
        assert np.hypot(lp_norm(du, 2), lp_norm(dv, 2)) < 1e-9 * scale

    def test_strong_potential_escalates_to_krylov(self):
        g = build_domain(48)
        V = diagonal_potential(bump_field(g, 0.2, 0.5, 8.0),
                               bump_field(g, -0.2, 0.5, 8.0))
        sol = forward_solve(V, monomial_incident(g, SLOT_FUNCTION, 0, 0, 1))
        assert sol.method == "krylov"
        assert sol.residual < 1e-8

    def test_layout_and_grid_preconditions(self):
        g = build_domain(32)
        other = build_domain(48)
        V = two_bump_potential(g)
        inc = monomial_incident(other, SLOT_FUNCTION, 0, 0, 1)
        with pytest.raises(ValueError, match="different grids"):
            forward_solve(V, inc)


class TestCauchyDataAssembly:
    def test_flat_columns_are_exact_monomial_traces(self):
        g = build_domain(32)
        C = assemble_cauchy_data(zero_potential(g), degrees=5)
        assert C.n_columns == 10
        k = 0
        for slot in (SLOT_FUNCTION, SLOT_FORM):
            for m in range(5):
                exact = monomial_boundary(g, slot, m, 0, 1)
                assert np.array_equal(C.traces[k].values, exact.values)
                k += 1

    def test_column_count_and_metadata(self):
        g = build_domain(32)
        V = two_bump_potential(g)
        C = assemble_cauchy_data(V, degrees=3, tol=1e-11)
        assert C.n_columns == 6
        assert C.basis_spec["degrees"] == 3
        assert C.solver_tol < 1e-9
        assert C.matrix().shape == (2 * 4 * 32, 6)

    def test_span_invariant_under_column_remix(self):
        # same span after an invertible recombination; the monomial basis
        # conditioning puts the floor near sqrt(machine eps), not 1e-10
        g = build_domain(64)
        C = assemble_cauchy_data(two_bump_potential(g), degrees=8)
        rng = np.random.default_rng(7)
        G = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
        M = C.matrix() @ G
        traces = [BoundaryTrace(M[:, k].reshape(2, 1, 4 * 64), C.angles,
                                dim=1) for k in range(16)]
        remixed = CauchyDataMatrix(traces, C.basis_spec, C.solver_tol, 1)
        assert subspace_distance(C, remixed) < 1e-6

    def test_distinct_potentials_are_separated(self):
        g = build_domain(64)
        C1 = assemble_cauchy_data(two_bump_potential(g), degrees=8)
        C2 = assemble_cauchy_data(perturbed_potential(g), degrees=8)
        C3 = assemble_cauchy_data(
            diagonal_potential(bump_field(g, -0.3, 0.5, 2.0),
                               bump_field(g, 0.3, 0.5, 2.0)), degrees=8)
        assert subspace_distance(C1, C1) < 1e-6
        assert subspace_distance(C1, C2) > 0.05
        assert subspace_distance(C1, C3) > 0.05

    def test_random_spans_are_nearly_orthogonal(self):
        g = build_domain(64)
        C = assemble_cauchy_data(two_bump_potential(g), degrees=8)
        rng = np.random.default_rng(11)
        A = rng.normal(size=(8 * 64, 16)) + 1j * rng.normal(size=(8 * 64, 16))
        traces = [BoundaryTrace(A[:, k].reshape(2, 1, 4 * 64), C.angles,
                                dim=1) for k in range(16)]
        other = CauchyDataMatrix(traces, C.basis_spec, 0.0, 1)
        assert subspace_distance(C, other) > 0.9

    def test_serialization_roundtrip(self, tmp_path):
        g = build_domain(32)
        C = assemble_cauchy_data(two_bump_potential(g), degrees=3)
        save_cauchy_data(C, tmp_path / "cd")
        back = load_cauchy_data(tmp_path / "cd")
        assert back.n_columns == C.n_columns
        assert back.dim == C.dim
        assert back.basis_spec == C.basis_spec
        assert np.allclose(back.angles, C.angles)
        for a, b in zip(back.traces, C.traces):
            assert np.allclose(a.values, b.values, atol=1e-12)


class TestGreenFunctional:
    def test_closed_form_oracle(self):
        # U1 = (z zbar, z zbar^2 dzbar), U2 = (zbar^2, z zbar dzbar):
        # both the boundary form and the interior Stokes pairing equal
        # -2 pi exactly; the boundary side is trigonometric and the
        # trapezoid rule is exact on low harmonics
        g = build_domain(32)
        ang = g.boundary_angles
        t1 = BoundaryTrace(np.stack([np.ones_like(ang, dtype=complex),
                                     np.exp(-1j * ang)])[:, None], ang, dim=1)
        t2 = BoundaryTrace(np.stack([np.exp(-2j * ang),
                                     np.ones_like(ang, dtype=complex)])
                           [:, None], ang, dim=1)
        b = green_functional(t1, t2)
        assert b == pytest.approx(-2.0 * np.pi, abs=1e-12)

    def test_interior_quadrature_converges_to_the_oracle(self):
        # masked Riemann sums of the Stokes pairing carry an O(h) rim
        # error; the limit must match the boundary form's closed form
        errs = []
        for n in (64, 128):
            g = build_domain(n)
            z, zb = g.z, np.conj(g.z)

            def fld(a, ft):
                return MatrixField(g, 1, 1, a[None, None], form_type=ft)

            lhs = (l2_inner(fld(-2.0 * zb ** 2, FUNCTION),
                            fld(zb ** 2, FUNCTION))
                   + l2_inner(fld(z, FORM_01), fld(z * zb, FORM_01)))
            rhs = (l2_inner(fld(z * zb, FUNCTION), fld(-2.0 * zb, FUNCTION))
                   + l2_inner(fld(z * zb ** 2, FORM_01),
                              fld(2.0 * zb, FORM_01)))
            errs.append(abs((lhs - rhs) + 2.0 * np.pi) / (2.0 * np.pi))
        assert errs[0] < 5e-2
        assert errs[1] < errs[0] / 2.0

    def test_sesquilinearity(self):
        g = build_domain(32)
        ang = g.boundary_angles
        rng = np.random.default_rng(3)

        def rand_trace():
            vals = (rng.normal(size=(2, 1, ang.size))
                    + 1j * rng.normal(size=(2, 1, ang.size)))
            return BoundaryTrace(vals, ang, dim=1)

        t1, t1b, t2 = rand_trace(), rand_trace(), rand_trace()
        a, b = 1.3 - 0.7j, -0.4 + 2.1j
        left = BoundaryTrace(a * t1.values + t1b.values, ang, dim=1)
        got = green_functional(left, t2)
        expect = a * green_functional(t1, t2) + green_functional(t1b, t2)
        assert got == pytest.approx(expect, rel=1e-12)
        right = BoundaryTrace(b * t2.values, ang, dim=1)
        assert green_functional(t1, right) == pytest.approx(
            np.conj(b) * green_functional(t1, t2), rel=1e-12)

    def test_node_mismatch_rejected(self):
        g = build_domain(32)
        other = build_domain(48)
        ang1, ang2 = g.boundary_angles, other.boundary_angles
        t1 = BoundaryTrace(np.zeros((2, 1, ang1.size), complex), ang1, dim=1)
        t2 = BoundaryTrace(np.zeros((2, 1, ang2.size), complex), ang2, dim=1)
        with pytest.raises(ValueError, match="shape|nodes"):
            green_functional(t1, t2)

    def test_same_potential_solutions_annihilate(self):
        # B(trace of a V-solution, trace of a V*-solution) = 0 in the
        # continuum; measured defect at n = 64 sits near 1e-4 relative
        g = build_domain(64)
        V = two_bump_potential(g)
        A = adjoint_potential(V)
        cols = [(SLOT_FUNCTION, 0), (SLOT_FUNCTION, 3), (SLOT_FORM, 2)]
        worst = 0.0
        for slot_u, m_u in cols:
            U = forward_solve(V, monomial_incident(g, slot_u, m_u, 0, 1),
                              tol=1e-12)
            tU = trace_pair(U.u, U.v)
            nU = np.linalg.norm(tU.values) * np.sqrt(2 * np.pi / (4 * 64))
            for slot_f, m_f in cols:
                F = forward_solve(A, monomial_incident(g, slot_f, m_f, 0, 1),
                                  tol=1e-12)
                tF = trace_pair(F.u, F.v)
                nF = np.linalg.norm(tF.values) * np.sqrt(2 * np.pi / (4 * 64))
                worst = max(worst,
                            abs(green_functional(tU, tF)) / (nU * nF))
        assert worst < 5e-4

    def test_two_potential_interior_identity(self):
        # B(trace U2, trace F1adj) = <(V1 - V2) U2, F1adj> for V2-solutions
        # against adjoint V1-solutions; compare on matched incident pairs
        # that carry signal well above the quadrature floor
        g = build_domain(64)
        V1 = two_bump_potential(g)
        V2 = perturbed_potential(g)
        delta = rim_flat_perturbation(g)
        dV = diagonal_potential(MatrixField.zeros(g, 1, 1),
                                delta.with_data(-delta.data))
        A1 = adjoint_potential(V1)
        combos = [(SLOT_FUNCTION, 0, SLOT_FUNCTION, 0),
                  (SLOT_FUNCTION, 2, SLOT_FUNCTION, 2),
                  (SLOT_FORM, 1, SLOT_FORM, 1),
                  (SLOT_FUNCTION, 1, SLOT_FORM, 1)]
        for slot_u, m_u, slot_f, m_f in combos:
            U2 = forward_solve(V2, monomial_incident(g, slot_u, m_u, 0, 1),
                               tol=1e-12)
            F = forward_solve(A1, monomial_incident(g, slot_f, m_f, 0, 1),
                              tol=1e-12)
            b = green_functional(trace_pair(U2.u, U2.v),
                                 trace_pair(F.u, F.v))
            r1, r2 = _rows_of_V(dV, U2.u.data, U2.v.data)
            bulk = (l2_inner(MatrixField(g, 1, 1, r1, form_type=FUNCTION),
                             F.u)
                    + l2_inner(MatrixField(g, 1, 1, r2, form_type=FORM_01),
                               F.v))
            assert abs(b - bulk) <= 6e-3 * abs(bulk)

    def test_identity_holds_at_oscillatory_solution_grade(self):
        # CGO pair against its dual: the boundary form reproduces the
        # interior pairing of the potential difference
        from diskdbar.cgo import KIND_F, make_incident, make_phase, \
            solve_remainders

        g = build_domain(128)
        V1 = two_bump_potential(g)
        V2 = perturbed_potential(g)
        delta = rim_flat_perturbation(g)
        dV = diagonal_potential(MatrixField.zeros(g, 1, 1),
                                delta.with_data(-delta.data))
        phase = make_phase(g, 0.0)
        inc = make_incident(g, KIND_F, 0, dim=1)
        U2 = solve_remainders(V2, inc, phase, 0.25, KIND_F, tol=1e-12)
        F = solve_remainders(adjoint_potential(V1), inc, phase.negated(),
                             0.25, KIND_F, tol=1e-12)
        b = green_functional(U2.boundary_trace(), F.boundary_trace())
        uu, vv = U2.assembled()
        pu, pv = F.assembled()
        r1, r2 = _rows_of_V(dV, uu.data, vv.data)
        bulk = (l2_inner(MatrixField(g, 1, 1, r1, form_type=FUNCTION), pu)
                + l2_inner(MatrixField(g, 1, 1, r2, form_type=FORM_01), pv))
        assert abs(b - bulk) <= 5e-4 * abs(bulk)
