"""Clifford identities, Dirac reduction, and block operator application."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diskdbar.field import FORM_01, FORM_10, FUNCTION, MatrixField, build_domain
from diskdbar.dirac import (BlockPotential, CliffordData, SQRT2,
                            apply_operator, check_clifford,
                            conjugate_by_reduction, diagonal_potential,
                            reduce_dirac, reduction_identities,
                            standard_clifford, zero_potential)


def random_unitary(k, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((k, k))
                        + 1j * rng.standard_normal((k, k)))
    return q


class TestClifford:
    def test_standard_identities_exact(self):
        rep = check_clifford(standard_clifford(1))
        assert all(v == 0.0 for v in rep.values())

    def test_doubling_identities_exact(self):
        rep = check_clifford(standard_clifford(3))
        assert all(v == 0.0 for v in rep.values())

    def test_hermitian_violation_reported(self):
        c = standard_clifford(1)
        herm = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        rep = check_clifford(CliffordData(1, herm, c.gamma_y))
        assert rep["skew_x"] == pytest.approx(2.0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_unitary_conjugation_preserves_relations(self, seed):
        c = standard_clifford(1)
        q = random_unitary(2, seed)
        cu = CliffordData(1, q @ c.gamma_x @ q.conj().T,
                          q @ c.gamma_y @ q.conj().T)
        assert max(check_clifford(cu).values()) < 1e-12

    def test_chirality_splits_and_swaps(self):
        c = standard_clifford(2)
        h = c.chirality()
        dim = 2 * c.n
        pp = (np.eye(dim) + h) / 2
        pm = (np.eye(dim) - h) / 2
        assert np.abs(pp @ pp - pp).max() < 1e-14
        assert np.abs(pp + pm - np.eye(dim)).max() < 1e-14
        # Clifford multiplication reverses chirality
        assert np.abs(c.gamma_x @ pp - pm @ c.gamma_x).max() < 1e-14


class TestReduction:
    def test_standard_reduction(self):
        red = reduce_dirac(standard_clifford(1))
        assert red.E0_basis.shape == (2, 1)
        ids = reduction_identities(red)
        assert max(ids.values()) < 1e-14
        assert red.cond_B == pytest.approx(SQRT2, rel=1e-12)

    def test_blockwise_doubling(self):
        red = reduce_dirac(standard_clifford(2))
        assert red.E0_basis.shape == (4, 2)
        assert max(reduction_identities(red).values()) < 1e-13

    def test_unitary_conjugate_reduction(self):
        c = standard_clifford(1)
        q = random_unitary(2, 7)
        cu = CliffordData(1, q @ c.gamma_x @ q.conj().T,
                          q @ c.gamma_y @ q.conj().T)
        red = reduce_dirac(cu)
        assert max(reduction_identities(red).values()) < 1e-13

    def test_rank_defect_rejected(self):
        # gamma_y = i gamma_x makes gamma(Z*) proportional to gamma(Z*)... and
        # violates the Clifford relation first
        c = standard_clifford(1)
        bad = CliffordData(1, c.gamma_x, 1j * c.gamma_x)
        with pytest.raises(ValueError):
            reduce_dirac(bad)


class TestConjugation:
    def test_polynomial_sections(self):
        c = standard_clifford(1)
        red = reduce_dirac(c)
        grid = build_domain(128)
        sec = MatrixField(grid, 2, 1, np.stack([
            (grid.z ** 2 + 0.5 * np.conj(grid.z))[None],
            (grid.z * np.conj(grid.z) + 0.3j * grid.z)[None]]),
            form_type=FUNCTION)
        rep = conjugate_by_reduction(red, c, sec)
        assert rep["residual"] < 1e-6

    def test_zero_and_constant_sections(self):
        c = standard_clifford(1)
        red = reduce_dirac(c)
        grid = build_domain(32)
        zero = MatrixField.zeros(grid, 2, 1)
        assert conjugate_by_reduction(red, c, zero)["residual"] == 0.0
        const = MatrixField(grid, 2, 1,
                            np.broadcast_to(np.array([1.0 + 2j, -0.5j])
                                            .reshape(2, 1, 1, 1),
                                            (2, 1, grid.n, grid.n)).copy(),
                            form_type=FUNCTION)
        assert conjugate_by_reduction(red, c, const)["residual"] < 1e-13

    def test_unitary_representation(self):
        c0 = standard_clifford(1)
        q = random_unitary(2, 3)
        c = CliffordData(1, q @ c0.gamma_x @ q.conj().T,
                         q @ c0.gamma_y @ q.conj().T)
        red = reduce_dirac(c)
        grid = build_domain(64)
        rng = np.random.default_rng(5)
        coef = rng.standard_normal((2, 1, 3, 3)) + 1j * rng.standard_normal((2, 1, 3, 3))
        vals = np.zeros((2, 1, grid.n, grid.n), complex)
        for a in range(3):
            for b in range(3):
                vals += coef[:, :, a, b, None, None] * grid.z ** a * np.conj(grid.z) ** b
        sec = MatrixField(grid, 2, 1, vals, form_type=FUNCTION)
        rep = conjugate_by_reduction(red, c, sec)
        assert rep["relative"] < 1e-12


class TestBlockPotential:
    def test_layout_validation(self):
        grid = build_domain(16)
        f = MatrixField.zeros(grid, 1, 1, form_type=FUNCTION)
        with pytest.raises(ValueError, match="layout"):
            BlockPotential("weird", f, f, f, f)
        with pytest.raises(ValueError, match="form_type"):
            BlockPotential("dirac", f, f, f, f)

    def test_diagonal_helper(self):
        grid = build_domain(16)
        qp = MatrixField.from_scalar(grid, np.ones((grid.n, grid.n)) + 0j)
        v = diagonal_potential(qp, qp)
        assert v.is_diagonal()
        assert v.top_right.form_type == FORM_10
        assert v.bottom_left.form_type == FORM_01

    def test_shape_mismatch(self):
        grid = build_domain(16)
        a = MatrixField.zeros(grid, 2, 1)
        with pytest.raises(ValueError, match="square"):
            BlockPotential("dirac", a, a, a, a)


class TestApplyOperator:
    def test_kernel_pairs_dirac(self):
        grid = build_domain(64)
        u = MatrixField(grid, 1, 1, (grid.z ** 3)[None, None],
                        form_type=FUNCTION)
        v = MatrixField(grid, 1, 1, (np.conj(grid.z) ** 2)[None, None],
                        form_type=FORM_01)
        r1, r2 = apply_operator(zero_potential(grid, 1), (u, v))
        assert np.abs(r1.data)[0, 0][grid.mask].max() < 1e-12
        assert np.abs(r2.data)[0, 0][grid.mask].max() < 1e-12

    def test_kernel_pairs_domain(self):
        grid = build_domain(64)
        x = MatrixField(grid, 1, 1, (grid.z ** 2)[None, None],
                        form_type=FUNCTION)
        y = MatrixField(grid, 1, 1, (np.conj(grid.z) ** 3)[None, None],
                        form_type=FUNCTION)
        v = zero_potential(grid, 1, layout="domain")
        r1, r2 = apply_operator(v, (x, y))
        assert np.abs(r1.data)[0, 0][grid.mask].max() < 1e-12
        assert np.abs(r2.data)[0, 0][grid.mask].max() < 1e-12
        assert r1.form_type == FORM_01 and r2.form_type == FORM_10

    def test_against_dense_hand_assembly(self):
        # 16x16 grid: compare one interior node against an explicitly
        # assembled 2x2 block action
        grid = build_domain(16)
        rng = np.random.default_rng(11)
        def rnd(ft):
            return MatrixField(grid, 1, 1,
                               rng.standard_normal((1, 1, grid.n, grid.n))
                               + 1j * rng.standard_normal((1, 1, grid.n, grid.n)),
                               form_type=ft)
        V = BlockPotential("dirac", rnd(FUNCTION), rnd(FORM_10),
                           rnd(FORM_01), rnd(FUNCTION))
        u = MatrixField(grid, 1, 1, (grid.z ** 2 + 0.1)[None, None],
                        form_type=FUNCTION)
        v = MatrixField(grid, 1, 1, (0.5 * np.conj(grid.z))[None, None],
                        form_type=FORM_01)
        r1, r2 = apply_operator(V, (u, v))
        i = j = 8
        # hand value: dbar* v = -2 d_z (0.5 zbar) = 0; dbar u = 0 (holomorphic)
        z = grid.z[i, j]
        hand1 = (V.top_left.data[0, 0, i, j] * (z ** 2 + 0.1)
                 + V.top_right.data[0, 0, i, j] * 0.5 * np.conj(z))
        hand2 = (V.bottom_left.data[0, 0, i, j] * (z ** 2 + 0.1)
                 + V.bottom_right.data[0, 0, i, j] * 0.5 * np.conj(z))
        assert r1.data[0, 0, i, j] == pytest.approx(hand1, abs=1e-10)
        assert r2.data[0, 0, i, j] == pytest.approx(hand2, abs=1e-10)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_linearity(self, seed):
        grid = build_domain(16)
        rng = np.random.default_rng(seed)
        def rnd(ft):
            return MatrixField(grid, 1, 1,
                               rng.standard_normal((1, 1, grid.n, grid.n))
                               + 1j * rng.standard_normal((1, 1, grid.n, grid.n)),
                               form_type=ft)
        V = BlockPotential("dirac", rnd(FUNCTION), rnd(FORM_10),
                           rnd(FORM_01), rnd(FUNCTION))
        u1, u2 = rnd(FUNCTION), rnd(FUNCTION)
        v1, v2 = rnd(FORM_01), rnd(FORM_01)
        a1, a2 = apply_operator(V, (u1, v1))
        b1, b2 = apply_operator(V, (u2, v2))
        s1, s2 = apply_operator(V, (u1.with_data(u1.data + u2.data),
                                    v1.with_data(v1.data + v2.data)))
        scale = max(np.abs(s1.data).max(), np.abs(s2.data).max(), 1.0)
        assert np.abs(s1.data - a1.data - b1.data).max() < 1e-10 * scale
        assert np.abs(s2.data - a2.data - b2.data).max() < 1e-10 * scale

    def test_mismatched_layout_fields(self):
        grid = build_domain(16)
        V = zero_potential(grid, 1)
        u = MatrixField.zeros(grid, 1, 1, form_type=FUNCTION)
        with pytest.raises(ValueError, match="dirac layout"):
            apply_operator(V, (u, u))
