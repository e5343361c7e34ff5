"""Masked disk geometry, matrix-valued grid fields, and boundary traces.

The computational domain is the closed unit disk, embedded in the periodic
square [-L, L)^2 sampled on an n x n grid with nodes x_j = -L + j*(2L/n).
n is even so that z = 0 is an exact node.  Matrix-valued fields carry a
form type: plain functions, (0,1)-form coefficients (the dz-bar component)
or (1,0)-form coefficients.  The metric weight of |dz|^2 = |dzbar|^2 is
C_FORM = 2, and every inner product on form-typed fields carries it.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.special import roots_legendre

FUNCTION = "function"
FORM_01 = "(0,1)-form"
FORM_10 = "(1,0)-form"
_FORM_TYPES = (FUNCTION, FORM_01, FORM_10)
_FORM_CODES = {name: i for i, name in enumerate(_FORM_TYPES)}

# Pointwise metric weight of dz and dzbar: |dzbar|^2 = 2.
C_FORM = 2.0

_MAGIC = b"DDBF"
_VERSION = 1


class DomainGrid:
    """Unit disk mask on a periodic square grid.

    Attributes:
        n: nodes per axis (even, >= 16).
        L: half-width of the periodic square (> radius).
        radius: disk radius (1.0 throughout the library).
        axis: 1d node coordinates, length n.
        z: complex node coordinates, shape (n, n), z[i, j] = axis[i] + 1j*axis[j].
        mask: boolean node-in-disk array, shape (n, n).
        boundary_angles: 4n equispaced angles on [0, 2pi).
        boundary_nodes: complex boundary collocation points radius*e^{i theta}.
        cell_area: (2L/n)^2.
    """

    def __init__(self, n: int, L: float, radius: float = 1.0):
        self.n = int(n)
        self.L = float(L)
        self.radius = float(radius)
        self.step = 2.0 * self.L / self.n
        self.cell_area = self.step * self.step
        self.axis = -self.L + self.step * np.arange(self.n)
        x = self.axis[:, None]
        y = self.axis[None, :]
        self.z = x + 1j * y
        self.r2 = x * x + y * y
        self.mask = self.r2 <= self.radius * self.radius + 1e-12
        m_b = 4 * self.n
        self.boundary_angles = 2.0 * np.pi * np.arange(m_b) / m_b
        self.boundary_nodes = self.radius * np.exp(1j * self.boundary_angles)

    @property
    def key(self) -> tuple:
        return (self.n, self.L, self.radius)

    def __eq__(self, other) -> bool:
        return isinstance(other, DomainGrid) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"DomainGrid(n={self.n}, L={self.L}, radius={self.radius})"


def build_domain(n: int, L: float = 2.0) -> DomainGrid:
    """Build the unit-disk grid; n must be even and >= 16, L must exceed 1."""
    if n != int(n) or n % 2 != 0:
        raise ValueError("n must be even")
    if n < 16:
        raise ValueError("n must be at least 16")
    if L <= 1.0:
        raise ValueError("L must exceed the disk radius 1")
    return DomainGrid(int(n), float(L))


@dataclass
class MatrixField:
    """Matrix-valued field on a DomainGrid.

    data has shape (rows, cols, n, n); entry (i, j) is a scalar field sampled
    at grid nodes.  form_type records whether values are plain functions or
    coefficients of dzbar / dz.
    """

    grid: DomainGrid
    rows: int
    cols: int
    data: np.ndarray
    form_type: str = FUNCTION

    def __post_init__(self):
        if self.form_type not in _FORM_TYPES:
            raise ValueError(f"unknown form_type {self.form_type!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.complex128)
        expected = (self.rows, self.cols, self.grid.n, self.grid.n)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")

    @classmethod
    def from_scalar(cls, grid: DomainGrid, values: np.ndarray,
                    form_type: str = FUNCTION) -> "MatrixField":
        return cls(grid, 1, 1, np.asarray(values, dtype=np.complex128)[None, None],
                   form_type=form_type)

    @classmethod
    def zeros(cls, grid: DomainGrid, rows: int = 1, cols: int = 1,
              form_type: str = FUNCTION) -> "MatrixField":
        return cls(grid, rows, cols,
                   np.zeros((rows, cols, grid.n, grid.n), dtype=np.complex128),
                   form_type=form_type)

    @classmethod
    def identity(cls, grid: DomainGrid, dim: int,
                 form_type: str = FUNCTION) -> "MatrixField":
        data = np.zeros((dim, dim, grid.n, grid.n), dtype=np.complex128)
        for i in range(dim):
            data[i, i] = 1.0
        return cls(grid, dim, dim, data, form_type=form_type)

    @property
    def is_scalar(self) -> bool:
        return self.rows == 1 and self.cols == 1

    def scalar(self) -> np.ndarray:
        if not self.is_scalar:
            raise ValueError("field is matrix-valued, expected 1x1")
        return self.data[0, 0]

    def copy(self) -> "MatrixField":
        return MatrixField(self.grid, self.rows, self.cols, self.data.copy(),
                           form_type=self.form_type)

    def with_data(self, data: np.ndarray,
                  form_type: str | None = None) -> "MatrixField":
        return MatrixField(self.grid, data.shape[0], data.shape[1], data,
                           form_type=self.form_type if form_type is None else form_type)

    def __add__(self, other: "MatrixField") -> "MatrixField":
        _check_compatible(self, other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        _check_compatible(self, other)
        return self.with_data(self.data - other.data)

    def __mul__(self, scalar) -> "MatrixField":
        return self.with_data(self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "MatrixField":
        return self.with_data(-self.data)


def _check_compatible(f: MatrixField, g: MatrixField) -> None:
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if (f.rows, f.cols) != (g.rows, g.cols):
        raise ValueError("field shapes differ")
    if f.form_type != g.form_type:
        raise ValueError("form_type mismatch")


def matmul_field(a: MatrixField, b: MatrixField,
                 form_type: str | None = None) -> MatrixField:
    """Pointwise matrix product (a @ b)(x)."""
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    if a.cols != b.rows:
        raise ValueError("inner matrix dimensions differ")
    data = np.einsum("ik...,kj...->ij...", a.data, b.data)
    out_form = form_type
    if out_form is None:
        out_form = b.form_type if a.form_type == FUNCTION else a.form_type
    return MatrixField(a.grid, a.rows, b.cols, data, form_type=out_form)


def conj_transpose(f: MatrixField) -> MatrixField:
    """Pointwise conjugate transpose; swaps the (0,1)/(1,0) form types."""
    swap = {FUNCTION: FUNCTION, FORM_01: FORM_10, FORM_10: FORM_01}
    return MatrixField(f.grid, f.cols, f.rows,
                       np.conj(np.swapaxes(f.data, 0, 1)),
                       form_type=swap[f.form_type])


def pointwise_inverse(f: MatrixField) -> MatrixField:
    """Pointwise matrix inverse of a square matrix field."""
    if f.rows != f.cols:
        raise ValueError("pointwise inverse needs a square matrix field")
    arr = np.moveaxis(f.data, (0, 1), (-2, -1))
    inv = np.linalg.inv(arr)
    return f.with_data(np.moveaxis(inv, (-2, -1), (0, 1)))


@dataclass
class BoundaryTrace:
    """Sampled values on the 4n boundary collocation nodes.

    values has shape (rows, cols, M) matching the traced field's matrix shape;
    angles are the collocation angles.
    """

    values: np.ndarray
    angles: np.ndarray
    dim: int = dc_field(default=0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim == 1:
            self.values = self.values[None, None]
        if self.dim == 0:
            self.dim = self.values.shape[0]


# ----------------------------------------------------------------------------
# restriction / extension

def restrict(f: MatrixField) -> MatrixField:
    """Zero the field outside the disk."""
    return f.with_data(f.data * f.grid.mask)


_EXTEND_CACHE: dict[tuple, tuple] = {}


def _extend_plan(grid: DomainGrid, taper_width: float):
    key = (grid.key, round(taper_width, 12))
    if key in _EXTEND_CACHE:
        return _EXTEND_CACHE[key]
    r = np.sqrt(grid.r2)
    collar = (r > grid.radius) & (r <= grid.radius + taper_width)
    ci, cj = np.nonzero(collar)
    rc = r[ci, cj]
    t = (rc - grid.radius) / taper_width
    taper = (1.0 - t * t) ** 3
    # Even radial reflection through the rim; the pull radius is clamped two
    # cells inside so every bilinear corner reads an interior node.
    pull = np.minimum(2.0 * grid.radius - rc,
                      grid.radius - 2.0 * grid.step)
    theta = np.arctan2(grid.axis[cj], grid.axis[ci])
    px = pull * np.cos(theta)
    py = pull * np.sin(theta)
    fx = (px - grid.axis[0]) / grid.step
    fy = (py - grid.axis[0]) / grid.step
    ix = np.clip(np.floor(fx).astype(np.int64), 0, grid.n - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, grid.n - 2)
    wx = fx - ix
    wy = fy - iy
    corners = []
    for dx, wxs in ((0, 1.0 - wx), (1, wx)):
        for dy, wys in ((0, 1.0 - wy), (1, wy)):
            corners.append((ix + dx, iy + dy, wxs * wys * taper))
    plan = (ci, cj, corners)
    _EXTEND_CACHE[key] = plan
    return plan


def extend(f: MatrixField, taper_width: float = 0.3) -> MatrixField:
    """Extend a disk-supported field by a tapered radial reflection.

    The collar radius < |z| <= radius + taper_width receives the reflected
    interior values scaled by the C^2 profile (1 - t^2)^3; everything farther
    out is zero.  taper_width must stay below L - 1 so the support cannot touch
    the periodic seam.
    """
    grid = f.grid
    if not 0.0 < taper_width < grid.L - grid.radius:
        raise ValueError("taper_width must lie in (0, L - 1)")
    ci, cj, corners = _extend_plan(grid, taper_width)
    masked = f.data * grid.mask
    out = masked.copy()
    vals = np.zeros(f.data.shape[:2] + ci.shape, dtype=np.complex128)
    for ix, iy, w in corners:
        vals += masked[:, :, ix, iy] * w
    out[:, :, ci, cj] = vals
    return f.with_data(out)


def adjoint_extend(f: MatrixField, taper_width: float = 0.3) -> MatrixField:
    """Adjoint of extend with respect to the unweighted grid inner product."""
    grid = f.grid
    if not 0.0 < taper_width < grid.L - grid.radius:
        raise ValueError("taper_width must lie in (0, L - 1)")
    ci, cj, corners = _extend_plan(grid, taper_width)
    out = f.data * grid.mask
    out = np.ascontiguousarray(out)
    collar_vals = f.data[:, :, ci, cj]
    for ix, iy, w in corners:
        scat = np.zeros_like(out)
        np.add.at(scat, (slice(None), slice(None), ix, iy), collar_vals * w)
        out += scat * grid.mask
    return f.with_data(out)


# ----------------------------------------------------------------------------
# inner products and norms

def _form_weight(form_type: str) -> float:
    return C_FORM if form_type in (FORM_01, FORM_10) else 1.0


def l2_inner(f: MatrixField, g: MatrixField) -> complex:
    """Masked L2 pairing <f, g> = sum tr(g^H f) dA with the form weight."""
    _check_compatible(f, g)
    w = _form_weight(f.form_type) * f.grid.cell_area
    prod = np.conj(g.data) * f.data
    return complex(w * prod[:, :, f.grid.mask].sum())


def lp_norm(f: MatrixField, p: float = 2.0) -> float:
    """Masked L^p norm of the pointwise Frobenius magnitude (form-weighted)."""
    w = _form_weight(f.form_type)
    mag2 = (np.abs(f.data) ** 2).sum(axis=(0, 1)) * w
    vals = mag2[f.grid.mask]
    if p == 2.0:
        return float(np.sqrt(vals.sum() * f.grid.cell_area))
    return float((np.power(vals, p / 2.0).sum() * f.grid.cell_area) ** (1.0 / p))


def sup_norm(f: MatrixField, masked: bool = True) -> float:
    mag = np.sqrt((np.abs(f.data) ** 2).sum(axis=(0, 1)))
    return float(mag[f.grid.mask].max() if masked else mag.max())


# ----------------------------------------------------------------------------
# boundary trace

def _bilinear(data: np.ndarray, grid: DomainGrid,
              px: np.ndarray, py: np.ndarray) -> np.ndarray:
    fx = (px - grid.axis[0]) / grid.step
    fy = (py - grid.axis[0]) / grid.step
    ix = np.clip(np.floor(fx).astype(np.int64), 0, grid.n - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, grid.n - 2)
    wx = fx - ix
    wy = fy - iy
    return (data[..., ix, iy] * (1 - wx) * (1 - wy)
            + data[..., ix + 1, iy] * wx * (1 - wy)
            + data[..., ix, iy + 1] * (1 - wx) * wy
            + data[..., ix + 1, iy + 1] * wx * wy)


def trace_boundary(f: MatrixField) -> BoundaryTrace:
    """Bilinear interpolation onto the 4n boundary nodes (second order).

    The field is interpolated as stored; fields that were hard-masked to the
    disk interior will show the mask staircase in their trace, so trace
    smooth, unmasked representatives (solutions, incidents).
    """
    grid = f.grid
    px = grid.radius * np.cos(grid.boundary_angles)
    py = grid.radius * np.sin(grid.boundary_angles)
    vals = _bilinear(f.data, grid, px, py)
    return BoundaryTrace(vals, grid.boundary_angles.copy())


# ----------------------------------------------------------------------------
# sharp characteristic function of the disk

def _corner_area(a: np.ndarray, b: np.ndarray, R: float) -> np.ndarray:
    """Area of {x <= a, y <= b} inside the disk of radius R (vectorized)."""
    a = np.clip(a, -R, R)

    def G(x):
        x = np.clip(x, -R, R)
        return 0.5 * (x * np.sqrt(np.maximum(R * R - x * x, 0.0))
                      + R * R * np.arcsin(np.clip(x / R, -1.0, 1.0)))

    xb = np.sqrt(np.maximum(R * R - b * b, 0.0))
    xb = np.where(np.abs(b) >= R, 0.0, xb)
    # Segment where the y-clip is active: |x| <= xb and b between -g and g.
    lo = np.maximum(-xb, -R)
    hi = np.minimum(xb, a)
    seg = np.maximum(hi - lo, 0.0)
    mid = b * seg + (G(np.maximum(hi, lo)) - G(lo))
    # For b >= 0 the strips with g(x) < b contribute the full chord 2 g(x).
    left_hi = np.minimum(a, -xb)
    left = 2.0 * (G(np.maximum(left_hi, -R)) - G(-R))
    right_lo = xb
    right = 2.0 * (G(np.maximum(a, right_lo)) - G(right_lo))
    pos = np.where(b >= 0.0, left + right, 0.0)
    full = np.where(b >= R, 2.0 * (G(a) - G(-R)), 0.0)
    out = np.where(np.abs(b) < R, mid + pos, full)
    return out


def chi_disk(grid: DomainGrid) -> MatrixField:
    """Characteristic function of the disk with exact rim-cell area fractions.

    Each node carries the fraction of its node-centered cell covered by the
    disk, so the total integral equals pi exactly and the discrete Cauchy
    transform of the field matches the closed form z-bar in the interior.
    """
    h = grid.step
    R = grid.radius
    x = grid.axis
    vals = np.zeros((grid.n, grid.n))
    r = np.sqrt(grid.r2)
    half_diag = h * np.sqrt(0.5)
    inside = r <= R - half_diag
    outside = r >= R + half_diag
    rim = ~(inside | outside)
    vals[inside] = 1.0
    ri, rj = np.nonzero(rim)
    x0 = x[ri] - 0.5 * h
    x1 = x[ri] + 0.5 * h
    y0 = x[rj] - 0.5 * h
    y1 = x[rj] + 0.5 * h
    area = (_corner_area(x1, y1, R) - _corner_area(x0, y1, R)
            - _corner_area(x1, y0, R) + _corner_area(x0, y0, R))
    vals[ri, rj] = np.clip(area / (h * h), 0.0, 1.0)
    return MatrixField.from_scalar(grid, vals)


# ----------------------------------------------------------------------------
# quadrature helper for oracle integrals

def disk_quadrature(n_r: int = 48, n_t: int = 128,
                    radius: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Polar Gauss-Legendre x trapezoid rule on the disk: (nodes z, weights)."""
    xs, ws = roots_legendre(n_r)
    r = 0.5 * (xs + 1.0) * radius
    wr = 0.5 * radius * ws * r
    theta = 2.0 * np.pi * np.arange(n_t) / n_t
    wt = 2.0 * np.pi / n_t
    z = (r[:, None] * np.exp(1j * theta)[None, :]).ravel()
    w = (wr[:, None] * wt * np.ones(n_t)[None, :]).ravel()
    return z, w


# ----------------------------------------------------------------------------
# serialization

def save_field(f: MatrixField, path: str | Path) -> None:
    """Write a field as a little-endian header + complex64 payload."""
    header = struct.pack("<4sBiiiidd", _MAGIC, _VERSION, f.grid.n, f.rows,
                         f.cols, _FORM_CODES[f.form_type], f.grid.L,
                         f.grid.radius)
    payload = np.ascontiguousarray(f.data.astype(np.complex64))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_field(path: str | Path) -> MatrixField:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize("<4sBiiiidd")
    magic, version, n, rows, cols, form_code, L, radius = struct.unpack(
        "<4sBiiiidd", raw[:head_size])
    if magic != _MAGIC:
        raise ValueError("not a field file")
    if version != _VERSION:
        raise ValueError(f"unsupported field file version {version}")
    grid = DomainGrid(n, L, radius)
    data = np.frombuffer(raw[head_size:], dtype=np.complex64).astype(np.complex128)
    data = data.reshape(rows, cols, n, n)
    return MatrixField(grid, rows, cols, data,
                       form_type=_FORM_TYPES[form_code])


def save_trace(t: BoundaryTrace, path: str | Path) -> None:
    """CSV with one row per boundary node: angle then re/im per component."""
    rows, cols, m = t.values.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["angle"]
        for i in range(rows):
            for j in range(cols):
                head += [f"re_{i}_{j}", f"im_{i}_{j}"]
        writer.writerow(head)
        for k in range(m):
            row = [f"{t.angles[k]:.17g}"]
            for i in range(rows):
                for j in range(cols):
                    v = t.values[i, j, k]
                    row += [f"{v.real:.17g}", f"{v.imag:.17g}"]
            writer.writerow(row)


def load_trace(path: str | Path) -> BoundaryTrace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        comps = head[1:]
        rows = max(int(c.split("_")[1]) for c in comps) + 1
        cols = max(int(c.split("_")[2]) for c in comps) + 1
        angles = []
        vals = []
        for line in reader:
            angles.append(float(line[0]))
            nums = np.array([float(v) for v in line[1:]])
            vals.append(nums[0::2] + 1j * nums[1::2])
    values = np.array(vals).T.reshape(rows, cols, len(angles))
    return BoundaryTrace(values, np.array(angles))
