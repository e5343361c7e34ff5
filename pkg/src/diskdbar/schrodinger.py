"""Connection Laplacians on the disk and their first-order factorization.

A Hermitian connection on the trivial rank-n bundle is parametrized by
the coefficient a of its (0,1) part: nabla = d + X with X = a dzbar
- a^H dz, which is anti-Hermitian in every real direction.  The
curvature dX + X wedge X has a single coefficient against dz wedge
dzbar,

    Omega = d(a) + dbar(a^H) + a a^H - a^H a.

With the weight-two pairing on form components the adjoint of the
covariant CR operator dbar + a is -2 d + 2 a^H, and the connection
Laplacian expands to

    nabla* nabla = -Lap - 4 a d + 4 a^H dbar
                   + 2 (dbar(a^H) - d(a) + a a^H + a^H a),

whose leading term is the full flat Laplacian.  The two realizations
are linked by the Weitzenbock identity

    nabla* nabla = 2 (dbar + a)^* (dbar + a) + 2 Omega,

so the block system that encodes (nabla* nabla + W) u = 0 on the pair
(u, (dbar + a) u) stores Omega + W/2 in its diagonal slot: the function
row of the block operator computes exactly half of the second-order
residual, and the factor of two returns through the same weight-two
pairing.  factorization_residuals exposes both sides of that identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import (FORM_01, FORM_10, FUNCTION, BoundaryTrace, MatrixField,
                    load_field, lp_norm, pointwise_inverse, restrict,
                    save_field)
from .cauchy import fd_d, fd_dbar, spectral_d, spectral_dbar
from .dirac import LAYOUT_DIRAC, BlockPotential
from .gauge import unitarity_defect

__all__ = [
    "ConnectionData",
    "ConnectionLaplacian",
    "connection_data",
    "curvature_defect",
    "assemble_laplacian",
    "apply_laplacian",
    "factorize",
    "factorization_residuals",
    "lift_cauchy_data",
    "conjugate_connection",
    "recover_gauge_second_order",
    "save_connection",
    "load_connection",
]


def _adj(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, 0, 1))


def _mul(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("ik...,kj...->ij...", m, x)


@dataclass(frozen=True)
class ConnectionData:
    """Hermitian connection nabla = d + X plus endomorphism potential W.

    A holds the (0,1) coefficient a; the (1,0) part is forced to -a^H so
    X is anti-Hermitian pointwise.  Omega is the curvature coefficient
    against dz wedge dzbar, carried explicitly so block assembly does
    not re-derive it.
    """

    A: MatrixField
    W: MatrixField
    Omega: MatrixField

    def __post_init__(self):
        if self.A.rows != self.A.cols:
            raise ValueError("connection coefficients are square")
        if self.A.form_type != FORM_01:
            raise ValueError("A must be a (0,1)-form coefficient")
        for name, other in (("W", self.W), ("Omega", self.Omega)):
            if (other.grid != self.A.grid or other.rows != self.A.rows
                    or other.cols != self.A.cols):
                raise ValueError(f"{name} must match A in grid and shape")
            if other.form_type != FUNCTION:
                raise ValueError(f"{name} must be an endomorphism field")

    @property
    def grid(self):
        return self.A.grid

    @property
    def dim(self) -> int:
        return self.A.rows

    def x_part_01(self) -> MatrixField:
        return self.A

    def x_part_10(self) -> MatrixField:
        return MatrixField(self.grid, self.dim, self.dim,
                           -_adj(self.A.data), form_type=FORM_10)


def _curvature(A: MatrixField, spectral: bool = True) -> MatrixField:
    a = A.data
    ah = _adj(a)
    d_f, dbar_f = (spectral_d, spectral_dbar) if spectral else (fd_d, fd_dbar)
    da = d_f(A.with_data(a, form_type=FUNCTION)).data
    dbah = dbar_f(A.with_data(ah, form_type=FUNCTION)).data
    comm = _mul(a, ah) - _mul(ah, a)
    return MatrixField(A.grid, A.rows, A.cols, da + dbah + comm,
                       form_type=FUNCTION)


def connection_data(A: MatrixField, W: MatrixField | None = None
                    ) -> ConnectionData:
    """Bundle a (0,1) coefficient and a potential, deriving the curvature."""
    if A.form_type != FORM_01:
        raise ValueError("A must be a (0,1)-form coefficient")
    if W is None:
        W = MatrixField(A.grid, A.rows, A.cols, np.zeros_like(A.data),
                        form_type=FUNCTION)
    return ConnectionData(A, W, _curvature(A))


def curvature_defect(c: ConnectionData) -> float:
    """Gap between the stored curvature and a stencil recomputation.

    The stored Omega comes from Fourier derivatives; the reference here
    uses the order-6 stencil, so agreement certifies both the formula
    and the smoothness of the coefficient.
    """
    ref = _curvature(c.A, spectral=False)
    gap = restrict(c.Omega.with_data(c.Omega.data - ref.data))
    den = max(lp_norm(restrict(c.Omega)), 1e-30)
    return lp_norm(gap) / den


# ----------------------------------------------------------------------------
# second-order operator

def apply_laplacian(c: ConnectionData, u: MatrixField) -> MatrixField:
    """(nabla* nabla + W) u with expanded coefficients.

    Fourier derivatives throughout; sections should be smooth with
    negligible values near the data square's edge.
    """
    if u.form_type != FUNCTION:
        raise ValueError("second-order sections are function fields")
    if u.grid != c.grid or u.rows != c.dim:
        raise ValueError("section does not match the connection")
    a = c.A.data
    ah = _adj(a)
    du = spectral_d(u).data
    dbu = spectral_dbar(u).data
    lap = 4.0 * spectral_d(u.with_data(dbu, form_type=FUNCTION)).data
    dbah = spectral_dbar(c.A.with_data(ah, form_type=FUNCTION)).data
    da = spectral_d(c.A.with_data(a, form_type=FUNCTION)).data
    order0 = 2.0 * (dbah - da + _mul(a, ah) + _mul(ah, a)) + c.W.data
    out = -lap - 4.0 * _mul(a, du) + 4.0 * _mul(ah, dbu) + _mul(order0, u.data)
    return u.with_data(out)


@dataclass(frozen=True)
class ConnectionLaplacian:
    """Callable wrapper around apply_laplacian for a fixed connection."""

    connection: ConnectionData

    def apply(self, u: MatrixField) -> MatrixField:
        return apply_laplacian(self.connection, u)

    __call__ = apply


def assemble_laplacian(c: ConnectionData) -> ConnectionLaplacian:
    return ConnectionLaplacian(c)


# ----------------------------------------------------------------------------
# factorization

def factorize(c: ConnectionData) -> BlockPotential:
    """First-order block potential encoding the second-order problem.

    The pair (u, (dbar + a) u) is annihilated by the returned operator
    exactly when (nabla* nabla + W) u = 0.  The diagonal slot stores
    Omega + W/2; see the module docstring for the factor bookkeeping.
    The form-row block stores 2 a^H, the true adjoint multiplier under
    the weight-two pairing.
    """
    grid = c.grid
    m = c.dim
    a = c.A.data
    ah = _adj(a)
    eye = np.tile(np.eye(m, dtype=np.complex128)[:, :, None, None],
                  (1, 1) + grid.z.shape)
    tl = MatrixField(grid, m, m, c.Omega.data + 0.5 * c.W.data,
                     form_type=FUNCTION)
    tr = MatrixField(grid, m, m, 2.0 * ah, form_type=FORM_10)
    bl = c.A
    br = MatrixField(grid, m, m, -eye, form_type=FUNCTION)
    return BlockPotential(LAYOUT_DIRAC, tl, tr, bl, br)


def factorization_residuals(c: ConnectionData, u: MatrixField
                            ) -> tuple[MatrixField, MatrixField]:
    """Second-order residual and doubled function-row residual.

    Both are (nabla* nabla + W) u on any smooth section, through two
    different compositions; their pointwise agreement is the discrete
    form of the factorization identity.
    """
    second = apply_laplacian(c, u)
    a = c.A.data
    ah = _adj(a)
    v = spectral_dbar(u).data + _mul(a, u.data)
    dv = spectral_d(u.with_data(v, form_type=FUNCTION)).data
    tl = c.Omega.data + 0.5 * c.W.data
    row = -2.0 * dv + _mul(tl, u.data) + 2.0 * _mul(ah, v)
    return second, u.with_data(2.0 * row)


# ----------------------------------------------------------------------------
# boundary data lift

def lift_cauchy_data(u_trace: BoundaryTrace, conormal_trace: BoundaryTrace,
                     a_trace: BoundaryTrace | np.ndarray,
                     max_tail: float = 0.1
                     ) -> tuple[BoundaryTrace, BoundaryTrace]:
    """Turn second-order boundary data into first-order boundary data.

    Inputs are the Dirichlet trace of u, the covariant conormal
    derivative nabla_nu u, and the boundary values of the connection
    coefficient a.  On the unit circle with outward normal e^{i theta}
    and tangent i e^{i theta},

        (dbar u)|bdry = e^{i theta} (d_nu u + i d_tau u) / 2,

    where d_tau differentiates the Dirichlet trace along the circle and
    d_nu u = nabla_nu u - (a e^{-i theta} - a^H e^{i theta}) u strips
    the connection from the conormal input.  The second component of
    the lifted pair is (dbar u + a u)|bdry.
    """
    vals = u_trace.values
    angles = np.asarray(u_trace.angles)
    m = vals.shape[-1]
    if conormal_trace.values.shape != vals.shape:
        raise ValueError("trace pair shapes disagree")
    avals = (a_trace.values if isinstance(a_trace, BoundaryTrace)
             else np.asarray(a_trace, dtype=np.complex128))
    if avals.shape != (vals.shape[0], vals.shape[0], m):
        raise ValueError("connection trace does not match the data traces")

    spec = np.fft.fft(vals, axis=-1)
    power = np.abs(spec) ** 2
    third = m // 3
    tail = power[..., third:m - third + 1].sum()
    if tail > max_tail * max(power.sum(), 1e-300):
        raise RuntimeError("boundary trace is under-resolved on the "
                           "collocation circle")

    modes = np.fft.fftfreq(m, d=1.0 / m)
    dtau = np.fft.ifft(1j * modes * spec, axis=-1)
    eig = np.exp(1j * angles)
    xnu = avals * np.conj(eig) - _adj(avals) * eig
    dnu = conormal_trace.values - np.einsum("ikm,kjm->ijm", xnu, vals)
    dbar_u = 0.5 * eig * (dnu + 1j * dtau)
    lifted = dbar_u + np.einsum("ikm,kjm->ijm", avals, vals)
    return (BoundaryTrace(vals.copy(), angles.copy()),
            BoundaryTrace(lifted, angles.copy()))


# ----------------------------------------------------------------------------
# gauge action

def conjugate_connection(c: ConnectionData, H: MatrixField) -> ConnectionData:
    """Gauge action a -> H^{-1}(a H + dbar H), W -> H^{-1} W H.

    Unitary H preserves the Hermitian structure and conjugates the
    curvature; non-unitary H still yields valid ConnectionData but
    breaks the plain conjugation law for Omega, which the second-order
    recovery check exploits to reject such pairs.
    """
    if H.form_type != FUNCTION or H.rows != c.dim or H.cols != c.dim:
        raise ValueError("gauge factor must be a square endomorphism field")
    if H.grid != c.grid:
        raise ValueError("gauge factor lives on a different grid")
    Hi = pointwise_inverse(H)
    dbh = spectral_dbar(H).data
    a2 = _mul(Hi.data, _mul(c.A.data, H.data) + dbh)
    w2 = _mul(Hi.data, _mul(c.W.data, H.data))
    return connection_data(
        MatrixField(c.grid, c.dim, c.dim, a2, form_type=FORM_01),
        MatrixField(c.grid, c.dim, c.dim, w2, form_type=FUNCTION))


def _masked_rel(grid, num_data: np.ndarray, den: float) -> float:
    field = MatrixField(grid, num_data.shape[0], num_data.shape[1], num_data,
                        form_type=FUNCTION)
    return lp_norm(restrict(field)) / max(den, 1e-30)


def recover_gauge_second_order(report: dict, c1: ConnectionData,
                               c2: ConnectionData, tol: float = 1e-5) -> dict:
    """Promote a first-order equivalence report to connection level.

    Verifies that the two transforms recovered by the block chain agree,
    that the shared factor intertwines the covariant CR operators and
    conjugates W and Omega, and that the factor is unitary.  Unrelated
    pairs that slip past the boundary alignment are caught by the
    curvature and potential comparisons.
    """
    out = {
        "equivalent": False,
        "first_order_equivalent": bool(report.get("equivalent", False)),
        "tol": tol,
    }
    F = report.get("transform_f")
    G = report.get("transform_g")
    if F is None or G is None:
        out["stage"] = "first_order"
        out["message"] = report.get(
            "message", "first-order chain produced no transforms")
        return out
    grid = c1.grid
    mask = grid.mask

    fmag = np.abs(F.data - G.data).max(axis=(0, 1))[mask].max()
    fscale = max(np.abs(F.data).max(axis=(0, 1))[mask].max(), 1e-30)
    out["fg_gap"] = float(fmag / fscale)

    a1, a2 = c1.A.data, c2.A.data
    ah1, ah2 = _adj(a1), _adj(a2)
    dbF = spectral_dbar(F).data
    dF = spectral_d(F).data
    conn_den = max(lp_norm(restrict(c1.A)), lp_norm(restrict(c2.A)), 1e-30)
    out["connection_gap_01"] = _masked_rel(
        grid, _mul(F.data, a2) - _mul(a1, F.data) - dbF, conn_den)
    out["connection_gap_10"] = _masked_rel(
        grid, _mul(F.data, ah2) - _mul(ah1, F.data) + dF, conn_den)

    om_den = max(lp_norm(restrict(c1.Omega)), lp_norm(restrict(c2.Omega)),
                 1e-30)
    out["curvature_gap"] = _masked_rel(
        grid, _mul(F.data, c2.Omega.data) - _mul(c1.Omega.data, F.data),
        om_den)
    w_den = max(lp_norm(restrict(c1.W)), lp_norm(restrict(c2.W)), 1e-30)
    out["potential_gap"] = _masked_rel(
        grid, _mul(F.data, c2.W.data) - _mul(c1.W.data, F.data), w_den)
    out["unitarity_defect"] = unitarity_defect(F)

    gaps = (out["fg_gap"], out["connection_gap_01"],
            out["connection_gap_10"], out["curvature_gap"],
            out["potential_gap"], out["unitarity_defect"])
    out["equivalent"] = bool(out["first_order_equivalent"]
                             and max(gaps) <= tol)
    out["stage"] = "complete"
    return out


# ----------------------------------------------------------------------------
# serialization

_MANIFEST = "manifest.json"


def save_connection(c: ConnectionData, path: str | Path) -> None:
    """Write the four coefficient fields plus a manifest."""
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    files = {"a_01": "a_01.fld", "x_10": "x_10.fld",
             "omega": "omega.fld", "w": "w.fld"}
    save_field(c.A, p / files["a_01"])
    save_field(c.x_part_10(), p / files["x_10"])
    save_field(c.Omega, p / files["omega"])
    save_field(c.W, p / files["w"])
    manifest = {
        "format": "connection-v1",
        "dim": c.dim,
        "n": c.grid.n,
        "half_width": c.grid.L,
        "files": files,
    }
    (p / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True)
                               + "\n")


def load_connection(path: str | Path) -> ConnectionData:
    p = Path(path)
    manifest = json.loads((p / _MANIFEST).read_text())
    if manifest.get("format") != "connection-v1":
        raise ValueError("not a connection manifest")
    files = manifest["files"]
    A = load_field(p / files["a_01"])
    x10 = load_field(p / files["x_10"])
    Omega = load_field(p / files["omega"])
    W = load_field(p / files["w"])
    gap = np.abs(x10.data + _adj(A.data)).max()
    scale = max(np.abs(A.data).max(), 1e-30)
    # stored payloads are single precision, so allow that much slack
    if gap > 1e-5 * max(scale, 1.0):
        raise ValueError("stored connection parts are inconsistent")
    return ConnectionData(A, W, Omega)
