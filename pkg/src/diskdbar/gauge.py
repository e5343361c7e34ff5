"""Holomorphic trivialization of connection blocks and gauge comparison.

A (0,1)-form connection block A can be rotated away by a pointwise matrix
field F solving dbar F = F A with F = Id at the disk center; the mirrored
(1,0)-side solve d G = G B handles the other chirality.  Both solves run the
same fixed-point iteration F <- Id + dbar^{-1}(F A) built on the mean-free
split-kernel transform, so at the fixed point the discrete closure identity
is exact on the disk and the reported residual equals the iteration defect.
When the Neumann iteration stops contracting the solve escalates to a
matrix-free Krylov solve of the same equation.

On top of the two solvers the module provides the potential-level plumbing:
pushing a block potential through an explicit gauge change, rotating a
potential's connection blocks away to diagonal form, aligning two transforms
by a boundary-holomorphic factor, and the end-to-end equivalence check that
compares the diagonal blocks of two potentials after that alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.sparse.linalg import LinearOperator, gmres

from .cauchy import dbar_inv, spectral_d, spectral_dbar
from .dirac import BlockPotential, LAYOUT_DIRAC, diagonal_potential
from .field import (FORM_01, FORM_10, FUNCTION, DomainGrid, MatrixField,
                    conj_transpose, lp_norm, matmul_field, pointwise_inverse,
                    restrict)

__all__ = [
    "GaugeTransform", "trivialize", "trivialize_anti", "gauge_conjugate",
    "conjugate_potential", "match_boundary", "gauge_equivalence_check",
    "unitarity_defect",
]

# A transform whose determinant dips below this is treated as singular.
DET_FLOOR_MIN = 1e-10


@dataclass(frozen=True)
class GaugeTransform:
    """Pointwise invertible matrix field with its solve diagnostics.

    field is the matrix F itself (function-typed).  residual is the
    disk-relative closure defect of the defining equation, det_floor the
    minimum of |det F| over the disk, boundary_defect the relative
    negative-mode mass left by the last boundary alignment (zero for a
    plain trivialization).
    """

    field: MatrixField
    residual: float
    det_floor: float
    boundary_defect: float = 0.0
    method: str = "neumann"
    iterations: int = 0

    def __post_init__(self):
        if self.field.rows != self.field.cols:
            raise ValueError("gauge transforms are square matrix fields")
        if not self.det_floor > DET_FLOOR_MIN:
            raise ValueError(
                "gauge transform is singular on the disk (det floor %.2e)"
                % self.det_floor)

    @property
    def grid(self) -> DomainGrid:
        return self.field.grid

    @property
    def dim(self) -> int:
        return self.field.rows

    def inverse_field(self) -> MatrixField:
        return pointwise_inverse(self.field)


def _det_floor(f: MatrixField) -> float:
    arr = np.moveaxis(f.data, (0, 1), (-2, -1))
    det = np.abs(np.linalg.det(arr))
    return float(det[f.grid.mask].min())


def _center_index(grid: DomainGrid) -> tuple:
    # The node axis contains the origin exactly (n even, cell-node layout).
    return grid.n // 2, grid.n // 2


def _closure_residual(F: MatrixField, A: MatrixField) -> float:
    """Disk-relative defect of dbar F = F A in the integrated sense.

    A solution produced by the right inverse satisfies F - dbar^{-1}(F A) =
    const exactly, so the residual is the non-constancy of that combination,
    pinned at the center node.  This realizes the equation residual without
    re-differentiating F, whose values off the data square are not stored.
    """
    prod = matmul_field(F, A)
    corr = dbar_inv(prod, mean_free=True)
    gap = F.data - corr.data
    ci, cj = _center_index(F.grid)
    gap = gap - gap[:, :, ci, cj][:, :, None, None]
    num = lp_norm(restrict(F.with_data(gap)))
    den = max(lp_norm(restrict(F)), 1e-30)
    return num / den


def trivialize(A: MatrixField, tol: float = 1e-11,
               max_iter: int = 120) -> GaugeTransform:
    """Solve dbar F = F A with F(0) = Id for a (0,1)-form block A.

    The fixed point of F = Id + dbar^{-1}(F A) is unique up to a constant
    left factor (periodic holomorphic fields are constant), so the center
    normalization pins the transform completely.  Raises when the closure
    residual does not reach 1e-7 or the transform degenerates.
    """
    if A.form_type != FORM_01:
        raise ValueError("trivialize expects a (0,1)-form connection block")
    if A.rows != A.cols:
        raise ValueError("connection blocks must be square")
    grid, m = A.grid, A.rows
    ident = MatrixField.identity(grid, m).data

    def step(cur: np.ndarray) -> np.ndarray:
        prod = np.einsum("ik...,kj...->ij...", cur, A.data)
        corr = dbar_inv(MatrixField(grid, m, m, prod, form_type=FORM_01),
                        mean_free=True)
        return ident + corr.data

    scale = math.sqrt(m) * 2.0 * grid.L
    cur = ident.copy()
    prev = math.inf
    grew = 0
    method = "neumann"
    its = 0
    for its in range(1, max_iter + 1):
        nxt = step(cur)
        move = float(np.linalg.norm(nxt - cur)) * grid.step
        cur = nxt
        if move <= tol * scale:
            break
        grew = grew + 1 if move > prev else 0
        prev = move
        if grew >= 3:
            cur = None
            break
    else:
        cur = None

    if cur is None:
        method = "krylov"
        cur, its = _krylov_trivialize(A, ident, tol)

    ci, cj = _center_index(grid)
    center = cur[:, :, ci, cj]
    try:
        norm = np.linalg.inv(center)
    except np.linalg.LinAlgError:
        raise RuntimeError("trivialization is singular at the center")
    data = np.einsum("ik,kj...->ij...", norm, cur)
    F = MatrixField(grid, m, m, data, form_type=FUNCTION)
    res = _closure_residual(F, A)
    if res > 1e-7:
        raise RuntimeError(
            "trivialization did not close (residual %.2e)" % res)
    return GaugeTransform(F, res, _det_floor(F), method=method,
                          iterations=its)


def _krylov_trivialize(A: MatrixField, ident: np.ndarray, tol: float):
    grid, m = A.grid, A.rows
    size = m * m * grid.n * grid.n

    def matvec(x):
        cur = x.reshape(m, m, grid.n, grid.n)
        prod = np.einsum("ik...,kj...->ij...", cur, A.data)
        corr = dbar_inv(MatrixField(grid, m, m, prod, form_type=FORM_01),
                        mean_free=True)
        return x - corr.data.ravel()

    op = LinearOperator((size, size), matvec=matvec, dtype=np.complex128)
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    x, info = gmres(op, ident.ravel(), rtol=max(tol, 1e-13), atol=0.0,
                    maxiter=400, restart=40, callback=cb,
                    callback_type="pr_norm")
    if info != 0:
        raise RuntimeError(
            "trivialization Krylov solve did not converge (info=%d)" % info)
    return x.reshape(m, m, grid.n, grid.n), counter["n"]


def trivialize_anti(B: MatrixField, tol: float = 1e-11,
                    max_iter: int = 120) -> GaugeTransform:
    """Solve d G = G B with G(0) = Id for a (1,0)-form block B.

    Realized through the mirror: G is the elementwise conjugate of the
    dbar-side transform for the conjugated block, so both chiralities share
    one solver and one set of diagnostics.
    """
    if B.form_type != FORM_10:
        raise ValueError("trivialize_anti expects a (1,0)-form connection block")
    mirrored = MatrixField(B.grid, B.rows, B.cols, np.conj(B.data),
                           form_type=FORM_01)
    inner = trivialize(mirrored, tol=tol, max_iter=max_iter)
    G = inner.field.with_data(np.conj(inner.field.data))
    return GaugeTransform(G, inner.residual, inner.det_floor,
                          method=inner.method, iterations=inner.iterations)


# ----------------------------------------------------------------------------
# potential-level conjugation

def gauge_conjugate(V: BlockPotential, H: MatrixField,
                    d_H: MatrixField = None,
                    dbar_H: MatrixField = None) -> BlockPotential:
    """Potential of H^{-1} (D + V) H, both section components rotated by H.

    The diagonal blocks conjugate pointwise; the connection blocks pick up
    the logarithmic derivatives of H.  Pass the exact derivatives when a
    closed form exists; otherwise they are taken spectrally, which is
    accurate for H - const supported away from the data square's edge.
    """
    if V.layout != LAYOUT_DIRAC:
        raise ValueError("gauge_conjugate expects the dirac layout")
    if H.grid != V.grid or H.rows != V.dim or H.cols != V.dim:
        raise ValueError("gauge factor must be a %d-square field on the "
                         "potential's grid" % V.dim)
    if d_H is None:
        d_H = spectral_d(H)
    if dbar_H is None:
        dbar_H = spectral_dbar(H)
    Hi = pointwise_inverse(H)
    tl, tr, bl, br = V.blocks()

    def sandwich(blk: MatrixField) -> MatrixField:
        return matmul_field(matmul_field(Hi, blk), H,
                            form_type=blk.form_type)

    tl2 = sandwich(tl)
    br2 = sandwich(br)
    bl2 = sandwich(bl) + matmul_field(Hi, dbar_H, form_type=FORM_01)
    tr2 = sandwich(tr) + matmul_field(Hi, d_H, form_type=FORM_10) * (-2.0)
    return BlockPotential(LAYOUT_DIRAC, tl2, tr2, bl2, br2)


def _field_of(F) -> MatrixField:
    return F.field if isinstance(F, GaugeTransform) else F


def conjugate_potential(V: BlockPotential, F_a: GaugeTransform,
                        F_ap: GaugeTransform) -> BlockPotential:
    """Diagonal potential after rotating both connection blocks away.

    F_a trivializes the (0,1) block (dbar F = F A); F_ap trivializes half
    the conjugate transpose of the function-row block, which is exactly the
    factor whose conjugate transpose cancels that row's connection term.
    The new diagonal blocks are (F_ap^* )^{-1} Q+ F_a^{-1} and
    F_a Q- F_ap^*; the off-diagonal blocks vanish identically.
    """
    if V.layout != LAYOUT_DIRAC:
        raise ValueError("conjugate_potential expects the dirac layout")
    Fa = _field_of(F_a)
    Gs = conj_transpose(_field_of(F_ap))
    if Fa.grid != V.grid or Fa.rows != V.dim:
        raise ValueError("gauge transforms must match the potential")
    qp = matmul_field(matmul_field(pointwise_inverse(Gs), V.top_left),
                      pointwise_inverse(Fa), form_type=FUNCTION)
    qm = matmul_field(matmul_field(Fa, V.bottom_right), Gs,
                      form_type=FUNCTION)
    return diagonal_potential(qp, qm)


def function_row_transform(V: BlockPotential, tol: float = 1e-11):
    """Trivializer of the function-row connection block of V.

    Solves dbar F = F (ct(A')/2) for A' the top-right block; the conjugate
    transpose of the result is the left factor that absorbs -2 d + A' in the
    function row.  This is the F_ap argument of conjugate_potential.
    """
    half = conj_transpose(V.top_right) * 0.5
    return trivialize(half, tol=tol)


# ----------------------------------------------------------------------------
# boundary alignment

def _circle_values(f: MatrixField) -> np.ndarray:
    """Cubic-spline samples of a smooth field on the boundary nodes.

    Order-3 interpolation keeps the spurious negative-mode mass of smooth
    non-holomorphic factors well below the alignment tolerance on the grids
    in use, where the bilinear trace would not.
    """
    grid = f.grid
    px = grid.radius * np.cos(grid.boundary_angles)
    py = grid.radius * np.sin(grid.boundary_angles)
    coords = np.stack([(px - grid.axis[0]) / grid.step,
                       (py - grid.axis[0]) / grid.step])
    out = np.empty(f.data.shape[:2] + (px.size,), dtype=np.complex128)
    for i in range(f.rows):
        for j in range(f.cols):
            re = map_coordinates(f.data[i, j].real, coords, order=3,
                                 mode="nearest")
            im = map_coordinates(f.data[i, j].imag, coords, order=3,
                                 mode="nearest")
            out[i, j] = re + 1j * im
    return out


def _holomorphic_extension(coef: np.ndarray, grid: DomainGrid,
                           anti: bool) -> MatrixField:
    """Evaluate sum_k coef[..., k] z^k on the grid, radially clamped.

    Outside the closed disk the argument is pulled back to the rim along its
    ray; every comparison downstream is disk-masked, the clamp only keeps
    the high powers finite on the square's corners.
    """
    r = np.abs(grid.z)
    with np.errstate(invalid="ignore"):
        zhat = np.where(r > grid.radius, grid.z * (grid.radius / np.maximum(r, 1e-30)),
                        grid.z)
    if anti:
        zhat = np.conj(zhat)
    m = coef.shape[0]
    data = np.zeros((m, m, grid.n, grid.n), dtype=np.complex128)
    power = np.ones_like(zhat)
    for k in range(coef.shape[-1]):
        data += coef[:, :, k, None, None] * power
        power = power * zhat
    return MatrixField(grid, m, m, data, form_type=FUNCTION)


def match_boundary(F1: GaugeTransform, F2: GaugeTransform,
                   tol: float = 1e-5, anti: bool = False) -> tuple:
    """Align two transforms by a boundary-holomorphic factor.

    The boundary values of F2 F1^{-1} must extend holomorphically into the
    disk for the pair to admit a common normalization; the test aggregates
    the negative-frequency mass of every matrix entry on the boundary
    circle, relative to the total boundary mass.  On success the extension
    H (the nonnegative-frequency sum, evaluated as a power series) divides
    F2 from the left and (F1, H^{-1} F2) have equal boundary values.  With
    anti=True the roles of the frequency halves swap and the extension is a
    series in conj(z), the mirror normalization for d-side transforms.
    """
    f1, f2 = F1.field, F2.field
    if f1.grid != f2.grid or f1.rows != f2.rows:
        raise ValueError("transforms live on different grids or dimensions")
    grid = f1.grid
    ratio = matmul_field(f2, pointwise_inverse(f1))
    vals = _circle_values(ratio)
    m_b = vals.shape[-1]
    half = m_b // 2
    ghat = np.fft.fft(vals, axis=-1) / m_b
    if anti:
        # Modes e^{-ikt} extend as conj(z)^k; reorder so index k holds them.
        ghat = np.concatenate([ghat[..., :1], ghat[..., :0:-1]], axis=-1)
    keep = ghat[..., :half]
    drop = ghat[..., half + 1:]
    total = float(np.sqrt((np.abs(ghat) ** 2).sum()))
    defect = float(np.sqrt((np.abs(drop) ** 2).sum()))
    rel = defect / max(total, 1e-30)
    if rel > tol:
        raise RuntimeError(
            "boundary values admit no holomorphic extension "
            "(defect %.2e, tol %.2e)" % (rel, tol))
    H = _holomorphic_extension(keep, grid, anti)
    floor = _det_floor(H)
    if not floor > DET_FLOOR_MIN:
        raise RuntimeError(
            "holomorphic boundary correction is singular (det floor %.2e)"
            % floor)
    second = matmul_field(pointwise_inverse(H), f2)
    first = GaugeTransform(f1, F1.residual, F1.det_floor,
                           boundary_defect=rel, method=F1.method,
                           iterations=F1.iterations)
    matched = GaugeTransform(second, F2.residual, _det_floor(second),
                             boundary_defect=rel, method=F2.method,
                             iterations=F2.iterations)
    return first, matched


# ----------------------------------------------------------------------------
# end-to-end comparison

def unitarity_defect(F: MatrixField) -> float:
    """Sup over the disk of the entrywise gap between F^{-1} and F^*."""
    gap = np.abs(pointwise_inverse(F).data - conj_transpose(F).data)
    return float(gap.max(axis=(0, 1))[F.grid.mask].max())


def _block_gap(b1: MatrixField, b2: MatrixField) -> float:
    num = lp_norm(restrict(b1 - b2))
    den = max(lp_norm(restrict(b1)), lp_norm(restrict(b2)), 1e-30)
    return num / den


def gauge_equivalence_check(V1: BlockPotential, V2: BlockPotential,
                            tol_boundary: float = 1e-5,
                            tol_blocks: float = 1e-5) -> dict:
    """Decide whether two potentials differ by an interior gauge change.

    Runs the full chain: trivialize the (0,1) blocks of both potentials and
    the mirrored function-row blocks, align each pair of transforms by a
    boundary factor, then compare the original diagonal blocks through
    F := F1^{-1} F2 and G := G1^{-1} G2.  For a genuine pair Q1+ = F Q2+ G^{-1}
    and Q1- = G Q2- F^{-1} hold to solver accuracy; unrelated potentials
    fail either at the boundary alignment or in the block comparison.  The
    conjugated diagonal forms of both potentials are compared as well, and
    the unitarity defect of F is reported for metric-compatible pairs.
    """
    if V1.layout != LAYOUT_DIRAC or V2.layout != LAYOUT_DIRAC:
        raise ValueError("gauge_equivalence_check expects the dirac layout")
    if V1.grid != V2.grid or V1.dim != V2.dim:
        raise ValueError("potentials live on different grids or dimensions")

    F1 = trivialize(V1.bottom_left)
    F2 = trivialize(V2.bottom_left)
    G1 = trivialize_anti(V1.top_right * (-0.5))
    G2 = trivialize_anti(V2.top_right * (-0.5))
    report = {
        "equivalent": False,
        "stage": "trivialize",
        "trivialization_residual": max(F1.residual, F2.residual,
                                       G1.residual, G2.residual),
        "det_floor": min(F1.det_floor, F2.det_floor,
                         G1.det_floor, G2.det_floor),
    }

    try:
        F1m, F2m = match_boundary(F1, F2, tol=tol_boundary)
        G1m, G2m = match_boundary(G1, G2, tol=tol_boundary, anti=True)
    except RuntimeError as exc:
        report["stage"] = "match_boundary"
        report["message"] = str(exc)
        return report
    report["boundary_defect_f"] = F2m.boundary_defect
    report["boundary_defect_g"] = G2m.boundary_defect

    F = matmul_field(pointwise_inverse(F1m.field), F2m.field)
    G = matmul_field(pointwise_inverse(G1m.field), G2m.field)
    Fi = pointwise_inverse(F)
    Gi = pointwise_inverse(G)
    report["stage"] = "block_comparison"
    report["transform_f"] = F
    report["transform_g"] = G
    report["residual_plus"] = _block_gap(
        V1.top_left, matmul_field(matmul_field(F, V2.top_left), Gi,
                                  form_type=FUNCTION))
    report["residual_minus"] = _block_gap(
        V1.bottom_right, matmul_field(matmul_field(G, V2.bottom_right), Fi,
                                      form_type=FUNCTION))
    report["unitarity_defect"] = unitarity_defect(F)

    # Same comparison through the diagonalized forms; the matched anti-side
    # transform doubles as (F_ap^*)^{-1} for each potential.
    def fap_of(Gm: GaugeTransform) -> GaugeTransform:
        field = pointwise_inverse(conj_transpose(Gm.field))
        return GaugeTransform(field, Gm.residual, _det_floor(field),
                              boundary_defect=Gm.boundary_defect,
                              method=Gm.method, iterations=Gm.iterations)

    D1 = conjugate_potential(V1, F1m, fap_of(G1m))
    D2 = conjugate_potential(V2, F2m, fap_of(G2m))
    report["diagonal_gap_plus"] = _block_gap(D1.top_left, D2.top_left)
    report["diagonal_gap_minus"] = _block_gap(D1.bottom_right,
                                              D2.bottom_right)

    worst = max(report["residual_plus"], report["residual_minus"],
                report["diagonal_gap_plus"], report["diagonal_gap_minus"])
    report["equivalent"] = bool(worst <= tol_blocks)
    if report["equivalent"]:
        report["stage"] = "complete"
    return report
