"""Clifford algebra, chirality splitting, and reduction of Dirac operators.

A rank-2n bundle with Clifford matrices gamma(dx), gamma(dy) splits under the
chirality involution H = i gamma(dx) gamma(dy).  The nilpotent combinations
gamma(Z*) = (gamma(dx) + i gamma(dy)) / sqrt(2) and its conjugate identify the
positive subbundle E0 and a basis change B after which the flat Dirac operator
becomes sqrt(2) (dbar + dbar*) acting on (function, (0,1)-form) pairs with
coefficients taken against dzbar.

First-order systems are carried as BlockPotential in one of two layouts:

    dirac:   (D+V)(u, v) = (dbar* v + Q+ u + A'* v,  dbar u + A u + Q- v)
    domain:  rows ((dbar + A) X + Q+ Y,  (d + B) Y + Q- X)

Derivatives inside apply_operator are order-6 centered stencils: the fields
these operators meet (polynomial probes, forward solutions) are generally not
periodic over the data square, where a Fourier derivative rings globally; the
stencil wrap corrupts only a band at the square's edge, outside the disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (C_FORM, FORM_01, FORM_10, FUNCTION, DomainGrid,
                    MatrixField, matmul_field)
from .cauchy import fd_d, fd_dbar

SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class CliffordData:
    """Constant Clifford multiplication matrices on a rank-2n bundle."""

    n: int
    gamma_x: np.ndarray
    gamma_y: np.ndarray
    metric_scale: float = 1.0

    def chirality(self) -> np.ndarray:
        return 1j * self.gamma_x @ self.gamma_y


def standard_clifford(n: int = 1) -> CliffordData:
    """Block-diagonal copies of the minimal skew-Hermitian representation."""
    gx = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
    gy = np.array([[0.0, 1.0j], [1.0j, 0.0]], dtype=complex)
    eye = np.eye(n)
    return CliffordData(n, np.kron(eye, gx), np.kron(eye, gy))


def check_clifford(c: CliffordData) -> dict:
    """Max-norm defects of the algebraic identities; report only."""
    dim = 2 * c.n
    ident = np.eye(dim)
    gx, gy = c.gamma_x, c.gamma_y
    h = c.chirality()
    def mx(m):
        return float(np.abs(m).max())
    return {
        "square_x": mx(gx @ gx + ident),
        "square_y": mx(gy @ gy + ident),
        "anticommute": mx(gx @ gy + gy @ gx),
        "skew_x": mx(gx + gx.conj().T),
        "skew_y": mx(gy + gy.conj().T),
        "chirality": mx(h @ h - ident),
    }


@dataclass(frozen=True)
class DiracReduction:
    """Data of the splitting E = E0 + gamma(Zbar*) E0 and the basis change."""

    E0_basis: np.ndarray
    B: np.ndarray
    gamma_zs: np.ndarray
    gamma_zbs: np.ndarray
    cond_B: float


def reduce_dirac(c: CliffordData, tol: float = 1e-10) -> DiracReduction:
    """Construct the chirality splitting and the dbar-reducing basis change.

    B maps a bundle section into (function components, dzbar coefficients):
    the first n output slots live in E0, the last n carry the (0,1)-part.
    By construction B gamma(Zbar*) = sqrt(2) ext(Zbar*) B and
    B gamma(Z*) = -sqrt(2) int(Zbar*) B hold as matrix identities, where the
    exterior/interior products are taken in the same dzbar coordinates.
    """
    defects = check_clifford(c)
    worst = max(defects.values())
    if worst > 1e-8:
        raise ValueError(
            "Clifford identities violated (max defect %.2e)" % worst)
    dim = 2 * c.n
    gzs = (c.gamma_x + 1j * c.gamma_y) / SQRT2
    gzb = (c.gamma_x - 1j * c.gamma_y) / SQRT2
    u, s, vh = np.linalg.svd(gzs)
    rank = int(np.sum(s > tol * s[0]))
    if rank != c.n:
        raise ValueError("rank defect: gamma(Z*) has rank %d, expected %d"
                         % (rank, c.n))
    w = u[:, :c.n]
    # section = W v + gamma(Zbar*) W w with w the dzbar coefficient
    cmat = np.concatenate([w, gzb @ w], axis=1)
    b = np.linalg.inv(cmat)
    cond = float(np.linalg.cond(cmat))
    return DiracReduction(E0_basis=w, B=b, gamma_zs=gzs, gamma_zbs=gzb,
                          cond_B=cond)


def reduction_identities(red: DiracReduction) -> dict:
    """Residuals of the defining B-relations (exact by construction)."""
    n = red.E0_basis.shape[1]
    zero = np.zeros((n, n))
    ident = np.eye(n)
    ext = np.block([[zero, zero], [ident / SQRT2, zero]])
    inter = np.block([[zero, SQRT2 * ident], [zero, zero]])
    r1 = red.B @ red.gamma_zbs - SQRT2 * ext @ red.B
    r2 = red.B @ red.gamma_zs + SQRT2 * inter @ red.B
    null_defect = float(np.abs(red.gamma_zs @ red.E0_basis).max())
    return {
        "ext_relation": float(np.abs(r1).max()),
        "int_relation": float(np.abs(r2).max()),
        "nilpotent_zs": float(np.abs(red.gamma_zs @ red.gamma_zs).max()),
        "anticommutator": float(np.abs(
            red.gamma_zs @ red.gamma_zbs + red.gamma_zbs @ red.gamma_zs
            + 2.0 * np.eye(2 * n)).max()),
        "image_is_nullspace": null_defect,
    }


# ----------------------------------------------------------------------------
# block potentials and the first-order operator

LAYOUT_DIRAC = "dirac"
LAYOUT_DOMAIN = "domain"

_SLOT_TYPES = {
    LAYOUT_DIRAC: (FUNCTION, FORM_10, FORM_01, FUNCTION),
    LAYOUT_DOMAIN: (FORM_01, FORM_01, FORM_10, FORM_10),
}


@dataclass
class BlockPotential:
    """Four pointwise blocks of a first-order matrix potential.

    dirac layout:   top_left = Q+, top_right = the map applied to dzbar
    coefficients in the function row (stores (A')* with any pairing factors
    already baked in), bottom_left = A, bottom_right = Q-.

    domain layout:  top_left = A, top_right = Q+, bottom_left = Q-,
    bottom_right = B.
    """

    layout: str
    top_left: MatrixField
    top_right: MatrixField
    bottom_left: MatrixField
    bottom_right: MatrixField

    def __post_init__(self):
        if self.layout not in (LAYOUT_DIRAC, LAYOUT_DOMAIN):
            raise ValueError("unknown layout %r" % self.layout)
        blocks = self.blocks()
        dim = blocks[0].rows
        grid = blocks[0].grid
        for blk, slot_type in zip(blocks, _SLOT_TYPES[self.layout]):
            if blk.rows != dim or blk.cols != dim:
                raise ValueError("potential blocks must be square and share "
                                 "one dimension")
            if blk.grid != grid:
                raise ValueError("potential blocks must share one grid")
            if blk.form_type != slot_type:
                raise ValueError(
                    "block form_type %r does not match its slot (%r)"
                    % (blk.form_type, slot_type))

    def blocks(self) -> tuple:
        return (self.top_left, self.top_right,
                self.bottom_left, self.bottom_right)

    @property
    def grid(self) -> DomainGrid:
        return self.top_left.grid

    @property
    def dim(self) -> int:
        return self.top_left.rows

    def is_diagonal(self, tol: float = 0.0) -> bool:
        off = max(np.abs(self.top_right.data).max(),
                  np.abs(self.bottom_left.data).max())
        return off <= tol

    def scaled(self, factor: complex) -> "BlockPotential":
        return BlockPotential(self.layout,
                              *(b.with_data(factor * b.data)
                                for b in self.blocks()))


def diagonal_potential(qp: MatrixField, qm: MatrixField,
                       layout: str = LAYOUT_DIRAC) -> BlockPotential:
    """Potential with vanishing connection blocks."""
    grid, dim = qp.grid, qp.rows
    if layout == LAYOUT_DIRAC:
        tl = qp.with_data(qp.data, form_type=FUNCTION)
        br = qm.with_data(qm.data, form_type=FUNCTION)
        tr = MatrixField.zeros(grid, dim, dim, form_type=FORM_10)
        bl = MatrixField.zeros(grid, dim, dim, form_type=FORM_01)
        return BlockPotential(layout, tl, tr, bl, br)
    tr = qp.with_data(qp.data, form_type=FORM_01)
    bl = qm.with_data(qm.data, form_type=FORM_10)
    tl = MatrixField.zeros(grid, dim, dim, form_type=FORM_01)
    br = MatrixField.zeros(grid, dim, dim, form_type=FORM_10)
    return BlockPotential(layout, tl, tr, bl, br)


def zero_potential(grid: DomainGrid, dim: int = 1,
                   layout: str = LAYOUT_DIRAC) -> BlockPotential:
    z = MatrixField.zeros(grid, dim, dim)
    return diagonal_potential(z, z, layout=layout)


def adjoint_potential(V: BlockPotential) -> BlockPotential:
    """Potential of the formal adjoint: (D + V)* = D + adjoint_potential(V).

    Blockwise conjugate transpose with the form-weight factors of the mixed
    slots: the function row pairs without weight, the form row carries
    c_form, so the off-diagonal blocks trade a factor c_form when they cross
    rows under the adjoint.
    """
    if V.layout != LAYOUT_DIRAC:
        raise ValueError("adjoint_potential expects the dirac layout")

    def ct(block: MatrixField) -> np.ndarray:
        return np.conj(np.swapaxes(block.data, 0, 1))

    tl, tr, bl, br = V.blocks()
    slots = _SLOT_TYPES[LAYOUT_DIRAC]
    return BlockPotential(
        LAYOUT_DIRAC,
        MatrixField(V.grid, V.dim, V.dim, ct(tl), form_type=slots[0]),
        MatrixField(V.grid, V.dim, V.dim, C_FORM * ct(bl),
                    form_type=slots[1]),
        MatrixField(V.grid, V.dim, V.dim, ct(tr) / C_FORM,
                    form_type=slots[2]),
        MatrixField(V.grid, V.dim, V.dim, ct(br), form_type=slots[3]))


def _mul(block: MatrixField, vec: MatrixField) -> np.ndarray:
    if np.count_nonzero(block.data) == 0:
        return 0.0
    return np.einsum("ik...,k...->i...", block.data, vec.data[:, 0])[:, None]


def apply_operator(V: BlockPotential, U: tuple) -> tuple:
    """(D+V) U for a pair of column fields in the potential's layout.

    dirac layout expects U = (u, v) with u function-typed and v a (0,1)-form;
    domain layout expects two function columns (X, Y).  Output rows carry the
    form types of the operator rows.  Differentiation is the order-6 stencil;
    trust values away from the data square's edge.
    """
    u, v = U
    if u.grid != V.grid or v.grid != V.grid:
        raise ValueError("operator and fields live on different grids")
    if u.cols != 1 or v.cols != 1 or u.rows != V.dim or v.rows != V.dim:
        raise ValueError("fields must be %d-component columns" % V.dim)
    if V.layout == LAYOUT_DIRAC:
        if u.form_type != FUNCTION or v.form_type != FORM_01:
            raise ValueError("dirac layout expects (function, (0,1)-form)")
        dstar_v = fd_d(v.with_data(v.data, form_type=FUNCTION))
        row1 = -2.0 * dstar_v.data + _mul(V.top_left, u) + _mul(V.top_right, v)
        dbar_u = fd_dbar(u)
        row2 = dbar_u.data + _mul(V.bottom_left, u) + _mul(V.bottom_right, v)
        return (MatrixField(V.grid, V.dim, 1, row1, form_type=FUNCTION),
                MatrixField(V.grid, V.dim, 1, row2, form_type=FORM_01))
    x, y = u, v
    if x.form_type != FUNCTION or y.form_type != FUNCTION:
        raise ValueError("domain layout expects two function columns")
    row1 = fd_dbar(x).data + _mul(V.top_left, x) + _mul(V.top_right, y)
    row2 = fd_d(y).data + _mul(V.bottom_right, y) + _mul(V.bottom_left, x)
    return (MatrixField(V.grid, V.dim, 1, row1, form_type=FORM_01),
            MatrixField(V.grid, V.dim, 1, row2, form_type=FORM_10))


def conjugate_by_reduction(red: DiracReduction, c: CliffordData,
                           section: MatrixField) -> dict:
    """Residual of B D B^{-1} = sqrt(2)(dbar + dbar*) on a test section.

    The flat Dirac operator D = gamma(dx) d_x + gamma(dy) d_y is applied with
    the same stencils as the right side, so the comparison isolates the
    algebraic reduction.  The section is a 2n-component column; the residual
    is reported over the disk.
    """
    grid = section.grid
    dim = 2 * c.n
    if section.rows != dim or section.cols != 1:
        raise ValueError("section must be a %d-component column" % dim)
    h = grid.step
    from .cauchy import _fd_axis
    dx = _fd_axis(section.data, -2, h)
    dy = _fd_axis(section.data, -1, h)
    d_sec = (np.einsum("ik,k...->i...", c.gamma_x, dx[:, 0])
             + np.einsum("ik,k...->i...", c.gamma_y, dy[:, 0]))[:, None]
    lhs = np.einsum("ik,k...->i...", red.B, d_sec[:, 0])[:, None]
    split = np.einsum("ik,k...->i...", red.B, section.data[:, 0])[:, None]
    fun = MatrixField(grid, c.n, 1, split[:c.n], form_type=FUNCTION)
    frm = MatrixField(grid, c.n, 1, split[c.n:], form_type=FUNCTION)
    top = -2.0 * fd_d(frm).data
    bot = fd_dbar(fun).data
    rhs = SQRT2 * np.concatenate([top, bot], axis=0)
    resid = np.abs(lhs - rhs)[:, 0, grid.mask].max()
    scale = max(np.abs(lhs).max(), 1e-30)
    return {"residual": float(resid), "relative": float(resid / scale),
            "scale": float(scale)}
