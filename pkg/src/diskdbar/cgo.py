"""Quadratic Morse phases and oscillatory solutions of first-order systems.

Solutions have the form (e^{Phi/h} u, e^{conj(Phi)/h} v) with Phi = (z-z0)^2.
The exponential factor is carried analytically: the construction, the series
iteration, and the reported residuals all act on the conjugated profiles,
where every appearance of the phase is the unimodular weight e^{+-2i psi/h}.
Assembling the exponential is deferred to the moment values are needed.

Residual bookkeeping uses the exact closure of the discrete transforms: the
canonical discrete dbar of a transform output reproduces the transform input
on every node of the data square, so the residual of a truncated series
collapses algebraically to its next term.  The reported residual is therefore
the honest discrete operator defect, computed without cancellation noise.

Norms of the assembled solution and its residual are evaluated with the
overflow-safe weight e^{2(phi - max phi)/h}; the common factor e^{max phi/h}
cancels in every relative quantity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .field import (FORM_01, FUNCTION, BoundaryTrace, DomainGrid, MatrixField,
                    lp_norm, restrict, trace_boundary)
from .cauchy import (OscillatoryPhase, osc_dbar_inv, osc_dbar_inv_adjoint,
                     osc_dbar_star_inv, osc_dbar_star_inv_adjoint)
from .dirac import BlockPotential, LAYOUT_DIRAC

KIND_F = "F"
KIND_G = "G"

PPW_RECOMMENDED = 8.0
PPW_FLAG = 4.0
PPW_HARD = 2.2


@dataclass(frozen=True)
class MorsePhase:
    """Quadratic holomorphic phase centered at an interior point.

    psi = Im Phi drives the oscillation, phi = Re Phi the exponential growth;
    the only critical point of Phi' is z0 and it is nondegenerate.
    """

    z0: complex
    Phi: MatrixField
    psi: MatrixField
    phi: MatrixField
    sign: int = 1

    @property
    def grid(self) -> DomainGrid:
        return self.Phi.grid

    def negated(self) -> "MorsePhase":
        return MorsePhase(self.z0, self.Phi.with_data(-self.Phi.data),
                          self.psi.with_data(-self.psi.data),
                          self.phi.with_data(-self.phi.data), -self.sign)

    def value_at(self, z: np.ndarray) -> np.ndarray:
        """Closed-form phase values off the grid (boundary nodes)."""
        return self.sign * (np.asarray(z) - self.z0) ** 2

    def grad_psi_max(self, radius: float | None = None) -> float:
        """sup |grad psi| = 2 |z - z0| over the disk or a smaller radius."""
        r = self.grid.radius if radius is None else radius
        return 2.0 * (r + abs(self.z0))

    def oscillation_weight(self, h: float, sign: int) -> OscillatoryPhase:
        return OscillatoryPhase(self.psi, h, sign)


def make_phase(grid: DomainGrid, z0: complex,
               margin: float = 0.05) -> MorsePhase:
    if abs(z0) > grid.radius - margin:
        raise ValueError("phase center too near the boundary: |z0| = %.3f "
                         "with margin %.3f" % (abs(z0), margin))
    phi_vals = (grid.z - z0) ** 2
    Phi = MatrixField.from_scalar(grid, phi_vals)
    psi = MatrixField.from_scalar(grid, phi_vals.imag.astype(complex))
    phi = MatrixField.from_scalar(grid, phi_vals.real.astype(complex))
    return MorsePhase(complex(z0), Phi, psi, phi)


def resolution_report(phase: MorsePhase, h: float,
                      support_radius: float | None = None) -> dict:
    """Points per oscillation wavelength of e^{2i psi/h} and guard flags.

    The guard recommends >= 8 points per wavelength; below 4 the stationary
    phase structure degrades (flag), below 2.2 the weight is not sampled
    (hard error in solvers).
    """
    grad = phase.grad_psi_max(support_radius)
    hg = phase.grid.step
    ppw = math.inf if grad == 0 else math.pi * h / (hg * grad)
    return {
        "ppw": ppw,
        "recommended": PPW_RECOMMENDED,
        "flagged": ppw < PPW_FLAG,
        "unresolved": ppw < PPW_HARD,
        "grad_psi_max": grad,
    }


def nyquist_grid_size(h: float, grad_psi_max: float, L: float = 2.0,
                      floor: int = 64, cap: int = 2048) -> int:
    """Power-of-two grid size resolving the oscillation with a 25% margin."""
    target = 2.0 * L * (2.0 * grad_psi_max / h) * 1.25 / math.pi
    n = floor
    while n < target and n < cap:
        n *= 2
    return n


@dataclass(frozen=True)
class IncidentField:
    """Holomorphic / anti-holomorphic seed for the oscillatory ansatz."""

    a: MatrixField
    b: MatrixField
    theta: MatrixField

    @property
    def dim(self) -> int:
        return self.a.rows


def make_incident(grid: DomainGrid, kind: str, j: int,
                  dim: int = 1) -> IncidentField:
    """Constant-coefficient seed: a = e_j (kind G) or b = dzbar e_j (kind F).

    On the disk the constant anti-holomorphic form dzbar plays the role of
    the nonvanishing section theta.
    """
    if not 0 <= j < dim:
        raise ValueError("component index %d out of range for dim %d"
                         % (j, dim))
    if kind not in (KIND_F, KIND_G):
        raise ValueError("kind must be %r or %r" % (KIND_F, KIND_G))
    a = MatrixField.zeros(grid, dim, 1, form_type=FUNCTION)
    b = MatrixField.zeros(grid, dim, 1, form_type=FORM_01)
    ones = np.ones((grid.n, grid.n), dtype=np.complex128)
    theta = MatrixField.from_scalar(grid, ones, form_type=FORM_01)
    if kind == KIND_F:
        data = b.data.copy()
        data[j, 0] = ones
        b = b.with_data(data)
    else:
        data = a.data.copy()
        data[j, 0] = ones
        a = a.with_data(data)
    return IncidentField(a, b, theta)


def _mulcol(block: MatrixField, col: MatrixField,
            form_type: str) -> MatrixField:
    out = np.einsum("ik...,k...->i...", block.data, col.data[:, 0])[:, None]
    return MatrixField(col.grid, col.rows, 1, out, form_type=form_type)


def _require_diagonal(V: BlockPotential):
    if V.layout != LAYOUT_DIRAC:
        raise ValueError("oscillatory solver expects the dirac layout")
    if not V.is_diagonal():
        raise ValueError("nondiagonal potential: connection blocks must "
                         "vanish for the scalar-weight ansatz")


def apply_Sh(f: MatrixField, V: BlockPotential, phase: MorsePhase, h: float,
             taper_width: float = 0.2) -> MatrixField:
    """One contraction step: conjugated transforms around both potentials."""
    _require_diagonal(V)
    w_minus = phase.oscillation_weight(h, -1)
    w_plus = phase.oscillation_weight(h, +1)
    qp_f = _mulcol(V.top_left, f, FUNCTION)
    t2 = osc_dbar_star_inv(qp_f, w_plus, taper_width=taper_width)
    qm_t2 = _mulcol(V.bottom_right, t2, FORM_01)
    return osc_dbar_inv(qm_t2, w_minus, taper_width=taper_width)


def _apply_Sh_adjoint(f: MatrixField, V: BlockPotential, phase: MorsePhase,
                      h: float, taper_width: float) -> MatrixField:
    w_minus = phase.oscillation_weight(h, -1)
    w_plus = phase.oscillation_weight(h, +1)
    qm_h = V.bottom_right.with_data(
        np.conj(np.swapaxes(V.bottom_right.data, 0, 1)))
    qp_h = V.top_left.with_data(np.conj(np.swapaxes(V.top_left.data, 0, 1)))
    u = osc_dbar_inv_adjoint(f, w_minus, taper_width=taper_width)
    u = _mulcol(qm_h, u, FORM_01)
    u = osc_dbar_star_inv_adjoint(u, w_plus, taper_width=taper_width)
    return _mulcol(qp_h, u, FUNCTION)


def estimate_Sh_norm(V: BlockPotential, phase: MorsePhase, h: float,
                     iters: int = 6, taper_width: float = 0.2,
                     seed: int = 0) -> float:
    """Power-iteration estimate of the L2 -> L2 norm of the contraction."""
    _require_diagonal(V)
    grid = V.grid
    rng = np.random.default_rng(seed)
    shape = (V.dim, 1, grid.n, grid.n)
    u = restrict(MatrixField(grid, V.dim, 1,
                             rng.standard_normal(shape)
                             + 1j * rng.standard_normal(shape),
                             form_type=FUNCTION))
    nu = lp_norm(u, 2)
    if nu == 0.0:
        return 0.0
    u = u.with_data(u.data / nu)
    est = 0.0
    for _ in range(iters):
        v = apply_Sh(u, V, phase, h, taper_width=taper_width)
        w = _apply_Sh_adjoint(v, V, phase, h, taper_width)
        nw = lp_norm(w, 2)
        if nw == 0.0:
            return 0.0
        # u has unit norm, so |S^H S u| estimates the top squared
        # singular value.
        est = math.sqrt(nw)
        u = w.with_data(w.data / nw)
    return est


# ----------------------------------------------------------------------------
# truncated Neumann series for the remainder profiles

@dataclass
class CgoSolution:
    """Profiles of one oscillatory solution pair and its residual ledger.

    The solution is (e^{Phi/h} U, e^{conj(Phi)/h} g) with U the function
    profile and g the dzbar coefficient; both are reported restricted to the
    disk.  residual_profile is the dzbar coefficient of the only nonzero
    residual row; the full residual is e^{Phi/h} e^{-2i psi/h} times it, so
    its weighted norm is what the report's residual entries measure.
    """

    phase: MorsePhase
    h: float
    kind: str
    incident: IncidentField
    remainder_function: MatrixField
    remainder_form: MatrixField
    residual_profile: MatrixField
    report: dict
    terms: list | None = None
    term_inputs: list | None = None
    remainder_function_raw: MatrixField | None = None
    remainder_form_raw: MatrixField | None = None

    @property
    def grid(self) -> DomainGrid:
        return self.phase.grid

    def total_function_profile(self) -> MatrixField:
        return self.incident.a + self.remainder_function

    def total_form_profile(self) -> MatrixField:
        return self.incident.b + self.remainder_form

    def _overflow_guard(self, bound: float):
        if bound / self.h > 700.0:
            raise OverflowError(
                "exponential factor overflows double precision at h = %g; "
                "use the profiles" % self.h)

    def assembled(self) -> tuple:
        """Solution values with the exponential factor, masked to the disk.

        Refuses to assemble when e^{max phi / h} overflows double precision;
        work with the profiles in that regime.
        """
        phi = self.phase.phi.data[0, 0].real
        self._overflow_guard(float(np.max(np.abs(phi))))
        efac = np.exp(self.phase.Phi.data[0, 0] / self.h)
        u = self.total_function_profile()
        v = self.total_form_profile()
        u = restrict(u.with_data(u.data * efac))
        v = restrict(v.with_data(v.data * np.conj(efac)))
        return u, v

    def boundary_trace(self) -> BoundaryTrace:
        """Cauchy-pair trace with the exponential evaluated in closed form.

        Only the smooth profiles are interpolated to the rim; the oscillatory
        factor is exact at the boundary nodes.  Interpolating the assembled
        field instead would sample the oscillation on the grid, which aliases
        once the grid step approaches h / |grad psi|.  Rows stack the function
        components over the form components, matching solution traces.
        """
        rf = self.remainder_function_raw
        rg = self.remainder_form_raw
        if rf is None:
            rf = self.remainder_function
        if rg is None:
            rg = self.remainder_form
        tu = trace_boundary(self.incident.a + rf)
        tv = trace_boundary(self.incident.b + rg)
        zb = self.grid.radius * np.exp(1j * tu.angles)
        phi_b = self.phase.value_at(zb)
        self._overflow_guard(float(np.max(np.abs(phi_b.real))))
        eu = np.exp(phi_b / self.h)
        vals = np.concatenate([tu.values * eu, tv.values * np.conj(eu)],
                              axis=0)
        return BoundaryTrace(vals, tu.angles, dim=self.incident.dim)


def _weight_sqrt(phase: MorsePhase, h: float) -> np.ndarray:
    """Pointwise sqrt of the overflow-safe weight e^{2(phi - max phi)/h}."""
    phi = phase.phi.data[0, 0].real
    phimax = float(phi[phase.grid.mask].max())
    return np.exp((phi - phimax) / h)


def _wnorm(f: MatrixField, sqrt_weight: np.ndarray) -> float:
    return lp_norm(f.with_data(f.data * sqrt_weight), 2)


def _validate_incident(kind: str, incident: IncidentField):
    if kind == KIND_F:
        active, silent, label = incident.b, incident.a, "(0,1)-form"
    else:
        active, silent, label = incident.a, incident.b, "function"
    if np.abs(silent.data).max() != 0.0:
        raise ValueError("kind %s carries a single incident %s; the other "
                         "slot must vanish" % (kind, label))
    top = np.abs(active.data).max()
    if top == 0.0:
        raise ValueError("incident %s must not vanish" % label)
    mean = active.data.mean(axis=(-2, -1), keepdims=True)
    if np.abs(active.data - mean).max() > 1e-12 * top:
        raise ValueError(
            "incident %s must be constant over the data square (the seeds "
            "from make_incident); nonconstant seeds break the exact residual "
            "bookkeeping" % label)


def solve_remainders(V: BlockPotential, incident: IncidentField,
                     phase: MorsePhase, h: float, kind: str,
                     tol: float = 1e-10, max_terms: int = 60,
                     taper_width: float = 0.2, estimate_norm: bool = False,
                     keep_terms: bool = False) -> CgoSolution:
    """Remainder profiles of the oscillatory ansatz by truncated Neumann series.

    Kind F grows the function remainder around an incident dzbar column; kind
    G grows the form remainder around an incident function column.  Both run
    the same contraction; the incident part only seeds the first term.  The
    residual profile equals minus the first dropped contraction input, an
    algebraic identity of the discrete transforms, so the reported residual
    is exact rather than a recomputed derivative defect.
    """
    _require_diagonal(V)
    if kind not in (KIND_F, KIND_G):
        raise ValueError("kind must be %r or %r" % (KIND_F, KIND_G))
    grid = V.grid
    if phase.grid != grid or incident.a.grid != grid:
        raise ValueError("potential, phase, and incident must share one grid")
    if incident.dim != V.dim:
        raise ValueError("incident has %d components, potential %d"
                         % (incident.dim, V.dim))
    _validate_incident(kind, incident)
    guard = resolution_report(phase, h)
    if guard["unresolved"]:
        raise ValueError(
            "oscillation unresolved: %.2f grid points per wavelength "
            "(hard floor %.1f); increase n or h" % (guard["ppw"], PPW_HARD))
    if guard["flagged"]:
        warnings.warn("marginal oscillation sampling: %.2f points per "
                      "wavelength (recommended %.0f)"
                      % (guard["ppw"], PPW_RECOMMENDED), RuntimeWarning)

    w_minus = phase.oscillation_weight(h, -1)
    w_plus = phase.oscillation_weight(h, +1)
    qp, qm = V.top_left, V.bottom_right

    if kind == KIND_F:
        qm_b = _mulcol(qm, incident.b, FORM_01)
        t0_raw = -osc_dbar_inv(qm_b, w_minus, taper_width=taper_width,
                               masked=False)
        t0 = restrict(t0_raw)
    else:
        t0 = incident.a.copy()
        t0_raw = t0
    scale = lp_norm(t0, 2)

    dim = V.dim
    zero_fun = MatrixField.zeros(grid, dim, 1, form_type=FUNCTION)
    zero_form = MatrixField.zeros(grid, dim, 1, form_type=FORM_01)

    if scale == 0.0:
        # kind F with Q- = 0: the ansatz is already exact.
        sol_terms = [t0] if keep_terms else None
        rep = _report(phase, h, kind, guard, 1, 0.0, 0.0, 0.0, None,
                      V, incident, zero_fun, zero_form, zero_form, None)
        return CgoSolution(phase, h, kind, incident, zero_fun, zero_form,
                           zero_form, rep, sol_terms,
                           [] if keep_terms else None,
                           remainder_function_raw=zero_fun,
                           remainder_form_raw=zero_form)

    term = t0
    fun_sum = t0.data.copy()
    fun_sum_raw = t0_raw.data.copy()
    t2_sum = np.zeros_like(zero_form.data)
    t2_sum_raw = np.zeros_like(zero_form.data)
    term_norms = [scale]
    w_last = zero_form
    terms = [t0] if keep_terms else None
    inputs = [] if keep_terms else None
    converged = False
    n_summed = 1
    dropped = 0.0

    for _ in range(max_terms):
        qp_t = _mulcol(qp, term, FUNCTION)
        t2_raw = osc_dbar_star_inv(qp_t, w_plus, taper_width=taper_width,
                                   masked=False)
        t2 = restrict(t2_raw)
        t2_sum += t2.data
        t2_sum_raw += t2_raw.data
        w = _mulcol(qm, t2, FORM_01)
        w_last = w
        if inputs is not None:
            inputs.append(w)
        nxt_raw = osc_dbar_inv(w, w_minus, taper_width=taper_width,
                               masked=False)
        nxt = restrict(nxt_raw)
        dropped = lp_norm(nxt, 2)
        if dropped <= tol * scale:
            converged = True
            break
        fun_sum += nxt.data
        fun_sum_raw += nxt_raw.data
        term_norms.append(dropped)
        n_summed += 1
        if terms is not None:
            terms.append(nxt)
        term = nxt

    if not converged:
        ratio = term_norms[-1] / term_norms[-2] if len(term_norms) > 1 \
            else math.inf
        raise RuntimeError(
            "Neumann series stalled: %d terms, last ratio %.3f, last term "
            "%.2e (target %.2e); reduce h or the potential size"
            % (n_summed, ratio, term_norms[-1], tol * scale))

    if kind == KIND_F:
        rem_fun = MatrixField(grid, dim, 1, fun_sum, form_type=FUNCTION)
        rem_fun_raw = MatrixField(grid, dim, 1, fun_sum_raw,
                                  form_type=FUNCTION)
    else:
        rem_fun = MatrixField(grid, dim, 1, fun_sum - incident.a.data,
                              form_type=FUNCTION)
        rem_fun_raw = MatrixField(grid, dim, 1,
                                  fun_sum_raw - incident.a.data,
                                  form_type=FUNCTION)
    rem_form = MatrixField(grid, dim, 1, -t2_sum, form_type=FORM_01)
    rem_form_raw = MatrixField(grid, dim, 1, -t2_sum_raw, form_type=FORM_01)
    residual = MatrixField(grid, dim, 1, -w_last.data, form_type=FORM_01)

    tail = dropped / term_norms[-1] if term_norms[-1] > 0 else 0.0
    est = estimate_Sh_norm(V, phase, h, taper_width=taper_width) \
        if estimate_norm else None
    if est is not None and est >= 0.9:
        warnings.warn("estimated contraction norm %.2f >= 0.9; the series "
                      "may stall, reduce h" % est, RuntimeWarning)
    rep = _report(phase, h, kind, guard, n_summed, term_norms[-1], dropped,
                  tail, est, V, incident, rem_fun, rem_form, residual, w_last)
    return CgoSolution(phase, h, kind, incident, rem_fun, rem_form,
                       residual, rep, terms, inputs,
                       remainder_function_raw=rem_fun_raw,
                       remainder_form_raw=rem_form_raw)


def _report(phase, h, kind, guard, n_terms, last_norm, dropped, tail, est,
            V, incident, rem_fun, rem_form, residual, w_last) -> dict:
    sw = _weight_sqrt(phase, h)
    u_tot = incident.a + rem_fun
    g_tot = incident.b + rem_form
    qp_u = _mulcol(V.top_left, u_tot, FUNCTION)
    qm_g = _mulcol(V.bottom_right, g_tot, FORM_01)
    num = _wnorm(residual, sw)
    # Row sizes of the conjugated system: the dbar* row cancels Q+ U against
    # the form derivative exactly, the dbar row cancels Q- g up to the
    # residual itself.
    dbar_row = qm_g if w_last is None else qm_g.with_data(
        qm_g.data + w_last.data)
    denom = 2.0 * _wnorm(qp_u, sw) + _wnorm(qm_g, sw) + _wnorm(dbar_row, sw)
    if num == 0.0:
        rel = 0.0
    elif denom == 0.0:
        rel = math.inf
    else:
        rel = num / denom
    return {
        "kind": kind,
        "h": h,
        "z0": phase.z0,
        "n": phase.grid.n,
        "series_terms": n_terms,
        "last_term_norm": last_norm,
        "dropped_term_norm": dropped,
        "tail_ratio": tail,
        "Sh_norm_est": est,
        "residual_abs": num,
        "residual_rel": rel,
        "norm_remainder_function": lp_norm(rem_fun, 2),
        "norm_remainder_form": lp_norm(rem_form, 2),
        "ppw": guard["ppw"],
        "ppw_flagged": guard["flagged"],
    }
