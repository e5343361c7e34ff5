"""Forward boundary value solves and discrete Cauchy data spaces.

A Cauchy data matrix collects boundary traces of solutions of (D+V)U = 0
over a fixed incident family: holomorphic monomial columns in the function
slot and anti-holomorphic monomial columns in the form slot.  Traces of the
pair (u, v) are stacked as 2*dim boundary components.

The Green boundary form pairs a (D+V1)-solution trace against a
(D+V2)*-solution trace and equals the interior pairing against V2 - V1.
With dbar = (d_x + i d_y)/2, the form weight 2, and unit boundary radius,
integration by parts leaves the kernel

    B((u,v),(p,q)) = int u . conj(q) e^{i t} dt - int v . conj(p) e^{-i t} dt

over the boundary angle t; both weight factors cancel against the Stokes
halves, so no residual constant appears.  The trapezoid rule on the uniform
boundary nodes integrates smooth traces to spectral accuracy.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.linalg import orth
from scipy.sparse.linalg import LinearOperator, gmres

from .field import (FORM_01, FUNCTION, BoundaryTrace, DomainGrid, MatrixField,
                    load_trace, lp_norm, save_trace, trace_boundary)
from .cauchy import dbar_inv, dbar_star_inv
from .dirac import BlockPotential, LAYOUT_DIRAC

SLOT_FUNCTION = "function"
SLOT_FORM = "form"


def monomial_incident(grid: DomainGrid, slot: str, degree: int, comp: int,
                      dim: int = 1) -> tuple:
    """Incident pair annihilated by the flat operator.

    slot "function": (z^degree e_comp, 0); slot "form": (0, zbar^degree
    e_comp dzbar).  Either family is a flat solution because holomorphic
    functions are dbar-closed and anti-holomorphic dzbar coefficients are
    d-closed.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if not 0 <= comp < dim:
        raise ValueError("component %d out of range for dim %d" % (comp, dim))
    u = MatrixField.zeros(grid, dim, 1, form_type=FUNCTION)
    v = MatrixField.zeros(grid, dim, 1, form_type=FORM_01)
    if slot == SLOT_FUNCTION:
        data = u.data.copy()
        data[comp, 0] = grid.z ** degree
        u = u.with_data(data)
    elif slot == SLOT_FORM:
        data = v.data.copy()
        data[comp, 0] = np.conj(grid.z) ** degree
        v = v.with_data(data)
    else:
        raise ValueError("slot must be %r or %r" % (SLOT_FUNCTION, SLOT_FORM))
    return u, v


def monomial_boundary(grid: DomainGrid, slot: str, degree: int, comp: int,
                      dim: int = 1) -> BoundaryTrace:
    """Exact boundary values of the monomial incident pair.

    A degree-m monomial runs through m full turns along the boundary, so
    grid interpolation of its trace degrades like (m h)^2; the closed form
    keeps high-degree data columns honest.
    """
    if not 0 <= comp < dim:
        raise ValueError("component %d out of range for dim %d" % (comp, dim))
    zb = grid.radius * np.exp(1j * grid.boundary_angles)
    vals = np.zeros((2 * dim, 1, zb.size), dtype=np.complex128)
    if slot == SLOT_FUNCTION:
        vals[comp, 0] = zb ** degree
    elif slot == SLOT_FORM:
        vals[dim + comp, 0] = np.conj(zb) ** degree
    else:
        raise ValueError("slot must be %r or %r" % (SLOT_FUNCTION, SLOT_FORM))
    return BoundaryTrace(vals, grid.boundary_angles.copy(), dim=dim)


def _rows_of_V(V: BlockPotential, u: np.ndarray, v: np.ndarray) -> tuple:
    """Pointwise V(u, v) rows as raw (dim, 1, n, n) arrays."""

    def mul(block: MatrixField, col: np.ndarray):
        if np.count_nonzero(block.data) == 0:
            return None
        return np.einsum("ik...,k...->i...", block.data, col[:, 0])[:, None]

    def acc(a, b):
        if a is None:
            return b
        if b is None:
            return a
        return a + b

    r1 = acc(mul(V.top_left, u), mul(V.top_right, v))
    r2 = acc(mul(V.bottom_left, u), mul(V.bottom_right, v))
    zero = np.zeros_like(u)
    return (zero if r1 is None else r1), (zero if r2 is None else r2)


def _pair_norm(u: MatrixField, v: MatrixField) -> float:
    return math.hypot(lp_norm(u, 2), lp_norm(v, 2))


@dataclass
class ForwardSolution:
    """Solution pair of (D+V)U = forcing with incident behavior W."""

    u: MatrixField
    v: MatrixField
    residual: float
    iterations: int
    method: str

    def trace(self) -> BoundaryTrace:
        return trace_pair(self.u, self.v)


def trace_pair(u: MatrixField, v: MatrixField) -> BoundaryTrace:
    """Stacked boundary trace of a solution pair: u rows, then v rows."""
    tu = trace_boundary(u)
    tv = trace_boundary(v)
    vals = np.concatenate([tu.values, tv.values], axis=0)
    return BoundaryTrace(vals, tu.angles)


def forward_solve(V: BlockPotential, incident: tuple, forcing: tuple = None,
                  tol: float = 1e-11, max_iter: int = 120) -> ForwardSolution:
    """Solve (D+V)U = forcing with U - W in the range of the flat inverse.

    Rearranged as U = W + D^{-1}(forcing - V U) and iterated; the flat
    inverse uses the mean-free split-kernel transforms, so at the fixed
    point the discrete operator residual equals the iteration defect.  When
    the iteration fails to contract it escalates to a matrix-free Krylov
    solve of the same fixed-point equation; if that also stalls the instance
    is reported as non-well-posed.
    """
    if V.layout != LAYOUT_DIRAC:
        raise ValueError("forward_solve expects the dirac layout")
    w_u, w_v = incident
    if w_u.grid != V.grid or w_v.grid != V.grid:
        raise ValueError("incident pair and potential live on different grids")
    if w_u.rows != V.dim or w_v.rows != V.dim:
        raise ValueError("incident pair must have %d components" % V.dim)
    grid = V.grid
    dim = V.dim

    if forcing is None:
        base_u, base_v = w_u.data, w_v.data
    else:
        g1, g2 = forcing
        fu = dbar_inv(MatrixField(grid, dim, 1, g2.data, form_type=FORM_01),
                      mean_free=True)
        fv = dbar_star_inv(
            MatrixField(grid, dim, 1, g1.data, form_type=FUNCTION),
            mean_free=True)
        base_u = w_u.data + fu.data
        base_v = w_v.data + fv.data

    def step(cu: np.ndarray, cv: np.ndarray) -> tuple:
        r1, r2 = _rows_of_V(V, cu, cv)
        du = dbar_inv(MatrixField(grid, dim, 1, r2, form_type=FORM_01),
                      mean_free=True)
        dv = dbar_star_inv(MatrixField(grid, dim, 1, r1, form_type=FUNCTION),
                           mean_free=True)
        return base_u - du.data, base_v - dv.data

    def defect(cu, cv) -> float:
        nu, nv = step(cu, cv)
        return _pair_norm(
            MatrixField(grid, dim, 1, nu - cu, form_type=FUNCTION),
            MatrixField(grid, dim, 1, nv - cv, form_type=FORM_01))

    # Forced instances can have zero incident; the base pair carries the
    # particular term, so it sets the defect scale.
    scale = max(_pair_norm(
        MatrixField(grid, dim, 1, base_u, form_type=FUNCTION),
        MatrixField(grid, dim, 1, base_v, form_type=FORM_01)),
        _pair_norm(w_u, w_v), 1e-30)
    cu, cv = base_u.copy(), base_v.copy()
    prev = math.inf
    grew = 0
    method = "neumann"
    its = 0
    for its in range(1, max_iter + 1):
        nu, nv = step(cu, cv)
        move = _pair_norm(
            MatrixField(grid, dim, 1, nu - cu, form_type=FUNCTION),
            MatrixField(grid, dim, 1, nv - cv, form_type=FORM_01))
        cu, cv = nu, nv
        if move <= tol * scale:
            break
        grew = grew + 1 if move > prev else 0
        prev = move
        if grew >= 3:
            cu = cv = None
            break
    else:
        cu = cv = None

    if cu is None:
        method = "krylov"
        cu, cv, its = _krylov_solve(V, base_u, base_v, tol, scale)

    u = MatrixField(grid, dim, 1, cu, form_type=FUNCTION)
    v = MatrixField(grid, dim, 1, cv, form_type=FORM_01)
    res = defect(cu, cv) / scale
    if res > 1e-8:
        raise RuntimeError(
            "non-well-posed instance: solver defect %.2e after %s" %
            (res, method))
    return ForwardSolution(u, v, res, its, method)


def _krylov_solve(V: BlockPotential, base_u, base_v, tol, scale):
    grid, dim = V.grid, V.dim
    size = dim * grid.n * grid.n

    def matvec(x):
        cu = x[:size].reshape(dim, 1, grid.n, grid.n)
        cv = x[size:].reshape(dim, 1, grid.n, grid.n)
        r1, r2 = _rows_of_V(V, cu, cv)
        du = dbar_inv(MatrixField(grid, dim, 1, r2, form_type=FORM_01),
                      mean_free=True)
        dv = dbar_star_inv(MatrixField(grid, dim, 1, r1, form_type=FUNCTION),
                           mean_free=True)
        return x + np.concatenate([du.data.ravel(), dv.data.ravel()])

    op = LinearOperator((2 * size, 2 * size), matvec=matvec,
                        dtype=np.complex128)
    rhs = np.concatenate([base_u.ravel(), base_v.ravel()])
    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    x, info = gmres(op, rhs, rtol=max(tol, 1e-13), atol=0.0, maxiter=400,
                    restart=40, callback=cb, callback_type="pr_norm")
    if info != 0:
        raise RuntimeError("non-well-posed instance: Krylov solve did not "
                           "converge (info=%d)" % info)
    cu = x[:size].reshape(dim, 1, grid.n, grid.n)
    cv = x[size:].reshape(dim, 1, grid.n, grid.n)
    return cu, cv, counter["n"]


# ----------------------------------------------------------------------------
# Cauchy data matrices

@dataclass
class CauchyDataMatrix:
    """Boundary traces of forward solutions over the incident family."""

    traces: list
    basis_spec: dict
    solver_tol: float
    dim: int
    angles: np.ndarray = dc_field(repr=False, default=None)

    def __post_init__(self):
        if self.angles is None and self.traces:
            self.angles = self.traces[0].angles
        for t in self.traces:
            if t.values.shape[0] != 2 * self.dim:
                raise ValueError("trace rows must stack both slots")

    @property
    def n_columns(self) -> int:
        return len(self.traces)

    def matrix(self) -> np.ndarray:
        return np.stack([t.values.reshape(-1) for t in self.traces], axis=1)


def assemble_cauchy_data(V: BlockPotential, degrees: int = 12,
                         tol: float = 1e-11) -> CauchyDataMatrix:
    """Forward-solve the monomial incident family and collect pair traces.

    Column order: function-slot family first (component-major, degree-minor),
    then the form-slot family.  Each trace splits into the incident monomial,
    taken in closed form on the boundary nodes, plus the interpolated smooth
    correction, so column quality does not degrade with the degree.
    """
    dim = V.dim
    traces = []
    worst = 0.0
    for slot in (SLOT_FUNCTION, SLOT_FORM):
        for comp in range(dim):
            for m in range(degrees):
                inc = monomial_incident(V.grid, slot, m, comp, dim)
                sol = forward_solve(V, inc, tol=tol)
                worst = max(worst, sol.residual)
                cu = sol.u.with_data(sol.u.data - inc[0].data)
                cv = sol.v.with_data(sol.v.data - inc[1].data)
                tc = trace_pair(cu, cv)
                exact = monomial_boundary(V.grid, slot, m, comp, dim)
                traces.append(BoundaryTrace(exact.values + tc.values,
                                            tc.angles, dim=dim))
    spec = {
        "degrees": degrees,
        "dim": dim,
        "n": V.grid.n,
        "families": [SLOT_FUNCTION, SLOT_FORM],
        "order": "slot-major, component, degree",
    }
    return CauchyDataMatrix(traces, spec, worst, dim)


def green_functional(t1: BoundaryTrace, t2: BoundaryTrace) -> complex:
    """Green boundary form between a solution trace and an adjoint-solution
    trace; see the module docstring for the kernel and its derivation.
    """
    if t1.values.shape != t2.values.shape:
        raise ValueError("traces have mismatched shapes")
    if t1.values.shape[-1] != t2.values.shape[-1] or not np.allclose(
            t1.angles, t2.angles):
        raise ValueError("traces sampled on different boundary nodes")
    dim = t1.values.shape[0] // 2
    u1 = t1.values[:dim, 0]
    v1 = t1.values[dim:, 0]
    p2 = t2.values[:dim, 0]
    q2 = t2.values[dim:, 0]
    ang = t1.angles
    kern = (u1 * np.conj(q2)).sum(axis=0) * np.exp(1j * ang) \
        - (v1 * np.conj(p2)).sum(axis=0) * np.exp(-1j * ang)
    return complex(kern.sum() * (2.0 * np.pi / ang.size))


def subspace_distance(c1: CauchyDataMatrix, c2: CauchyDataMatrix,
                      rcond: float = 1e-10) -> float:
    """Sine of the largest principal angle between the trace column spans.

    Columns are orthonormalized first; with unequal numerical ranks the
    angle is taken over the common rank, so a strict subspace reports the
    distance to its best-matching slice rather than 1.
    """
    if c1.dim != c2.dim or not np.allclose(c1.angles, c2.angles):
        raise ValueError("Cauchy data matrices sampled incompatibly")
    q1 = orth(c1.matrix(), rcond=rcond)
    q2 = orth(c2.matrix(), rcond=rcond)
    r = min(q1.shape[1], q2.shape[1])
    if r == 0:
        return 0.0 if q1.shape[1] == q2.shape[1] else 1.0
    if q1.shape[1] != q2.shape[1]:
        warnings.warn("rank mismatch: %d vs %d columns after "
                      "orthonormalization" % (q1.shape[1], q2.shape[1]),
                      RuntimeWarning)
    sv = np.linalg.svd(q1.conj().T @ q2, compute_uv=False)
    c = min(1.0, float(sv[r - 1]))
    return math.sqrt(max(0.0, 1.0 - c * c))


# ----------------------------------------------------------------------------
# serialization

def save_cauchy_data(c: CauchyDataMatrix, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "basis_spec": c.basis_spec,
        "solver_tol": c.solver_tol,
        "dim": c.dim,
        "columns": c.n_columns,
        "boundary_nodes": int(c.angles.size),
    }
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for k, t in enumerate(c.traces):
        save_trace(t, d / ("column_%03d.csv" % k))


def load_cauchy_data(directory: str | Path) -> CauchyDataMatrix:
    d = Path(directory)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    traces = [load_trace(d / ("column_%03d.csv" % k))
              for k in range(manifest["columns"])]
    return CauchyDataMatrix(traces, manifest["basis_spec"],
                            manifest["solver_tol"], manifest["dim"])
