"""Discretized local charts and finite-difference exterior calculus.

Grid layout: arrays are indexed ``data[i, j]`` with i the x-index and j the
y-index; z = x + iy.  Complex derivatives are the second-order central
stencils combined as d = (d_x - i d_y)/2 and dbar = (d_x + i d_y)/2.  On
periodic charts the stencils wrap; on disk charts points outside the mask are
treated as missing and one-sided second-order stencils take over along the
boundary band.

Form conventions (fixed once, used by every module):

* a 1-form is stored as the component pair (a, b) meaning a dz + b dzbar;
* a 2-form is stored as its coefficient c against dz ^ dzbar = -2i dx ^ dy;
* ``exterior_d`` of a 1-form is (d b - dbar a) as a 2-form coefficient, and
  ``wedge_bracket`` of two 1-forms is [a1, b2] - [a2, b1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainMismatchError

__all__ = [
    "Chart",
    "periodic_chart",
    "disk_chart",
    "ScalarField",
    "LieForm",
    "BeltramiField",
    "CovectorField",
    "partial_z",
    "partial_zbar",
    "exterior_d",
    "wedge_bracket",
    "covariant_d",
    "integrate",
    "bump_field",
    "random_smooth_scalar",
    "save_scalar_csv",
    "load_scalar_csv",
    "save_lieform_csv",
    "load_lieform_csv",
    "save_matrix_field_csv",
    "load_matrix_field_csv",
]

_BAND_WIDTH = 2  # cells pinned by Dirichlet data on disk charts


@dataclass(frozen=True)
class Chart:
    kind: str  # "periodic-rect" | "dirichlet-disk"
    nx: int
    ny: int
    lx: float = 0.0
    ly: float = 0.0
    radius: float = 0.0
    hx: float = field(init=False, default=0.0)
    hy: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grids need nx, ny >= 8")
        if self.kind == "periodic-rect":
            object.__setattr__(self, "hx", self.lx / self.nx)
            object.__setattr__(self, "hy", self.ly / self.ny)
        elif self.kind == "dirichlet-disk":
            if not 0.0 < self.radius <= 0.7:
                raise ValueError("disk charts need 0 < R <= 0.7 (inside the unit disk)")
            object.__setattr__(self, "hx", 2 * self.radius / (self.nx - 1))
            object.__setattr__(self, "hy", 2 * self.radius / (self.ny - 1))
        else:
            raise ValueError(f"unknown chart kind {self.kind!r}")

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic-rect"

    def xy(self):
        if self.periodic:
            x = np.arange(self.nx) * self.hx
            y = np.arange(self.ny) * self.hy
        else:
            x = -self.radius + np.arange(self.nx) * self.hx
            y = -self.radius + np.arange(self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def z(self):
        x, y = self.xy()
        return x + 1j * y

    def mask(self):
        """Boolean grid of points strictly inside the disk (rim excluded, so
        every mask point has at least one in-mask neighbour per axis)."""
        if self.periodic:
            return np.ones((self.nx, self.ny), dtype=bool)
        x, y = self.xy()
        return x * x + y * y < self.radius**2 * (1 - 1e-12)

    def boundary_band(self):
        """In-mask points within _BAND_WIDTH cells of the mask complement."""
        m = self.mask()
        if self.periodic:
            return np.zeros_like(m)
        inner = m.copy()
        for _ in range(_BAND_WIDTH):
            shrunk = inner.copy()
            shrunk[1:, :] &= inner[:-1, :]
            shrunk[:-1, :] &= inner[1:, :]
            shrunk[:, 1:] &= inner[:, :-1]
            shrunk[:, :-1] &= inner[:, 1:]
            shrunk[[0, -1], :] = False
            shrunk[:, [0, -1]] = False
            inner = shrunk
        return m & ~inner

    def interior(self):
        """Mask minus the Dirichlet boundary band."""
        return self.mask() & ~self.boundary_band()


def periodic_chart(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Chart:
    return Chart(kind="periodic-rect", nx=nx, ny=ny, lx=lx, ly=ly)


def disk_chart(nx: int, ny: int, radius: float = 0.5) -> Chart:
    return Chart(kind="dirichlet-disk", nx=nx, ny=ny, radius=radius)


@dataclass
class ScalarField:
    chart: Chart
    data: np.ndarray  # (nx, ny) complex

    def copy(self):
        return ScalarField(self.chart, self.data.copy())


@dataclass
class LieForm:
    """Lie-valued form field: degree 0/2 hold one matrix grid, degree 1 two."""

    chart: Chart
    degree: int
    d0: np.ndarray | None = None  # degree 0/2 coefficient, (nx, ny, n, n)
    d1: np.ndarray | None = None  # dz component
    d2: np.ndarray | None = None  # dzbar component

    @property
    def n(self):
        arr = self.d0 if self.degree != 1 else self.d1
        return arr.shape[-1]

    def copy(self):
        cp = lambda a: None if a is None else a.copy()
        return LieForm(self.chart, self.degree, cp(self.d0), cp(self.d1), cp(self.d2))


@dataclass
class BeltramiField:
    """Grid scalars mu_k for k = 2..n parametrizing the higher structure."""

    chart: Chart
    n: int
    comps: dict  # {k: (nx, ny) complex array}

    def comp(self, k):
        z = np.zeros((self.chart.nx, self.chart.ny), dtype=complex)
        return self.comps.get(k, z)


@dataclass
class CovectorField:
    """Grid scalars t_k for k = 2..n."""

    chart: Chart
    n: int
    comps: dict

    def comp(self, k):
        z = np.zeros((self.chart.nx, self.chart.ny), dtype=complex)
        return self.comps.get(k, z)


# ---------------------------------------------------------------------------
# stencils


def _d_axis_periodic(arr, axis, h):
    return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2 * h)


def _d_axis_zerofill(arr, axis, h):
    """Central stencil with zero extension; exactly skew-adjoint under the sum."""
    fwd = np.roll(arr, -1, axis=axis)
    bwd = np.roll(arr, 1, axis=axis)
    sl_last = [slice(None)] * arr.ndim
    sl_first = [slice(None)] * arr.ndim
    sl_last[axis] = -1
    sl_first[axis] = 0
    fwd[tuple(sl_last)] = 0.0
    bwd[tuple(sl_first)] = 0.0
    return (fwd - bwd) / (2 * h)


def _d_axis_masked(arr, axis, h, mask):
    """Central where both neighbours are valid, one-sided second order at the
    band, first order where only one neighbour exists, zero when isolated."""
    out = np.zeros_like(arr, dtype=complex)
    valid = mask
    sh = lambda a, k: np.roll(a, -k, axis=axis)
    val = lambda k: sh(valid, k) & _inside_shift(valid.shape, axis, k)
    f1, f2 = sh(arr, 1), sh(arr, 2)
    b1, b2 = sh(arr, -1), sh(arr, -2)
    has_f1, has_f2 = val(1), val(2)
    has_b1, has_b2 = val(-1), val(-2)
    central = valid & has_f1 & has_b1
    fwd = valid & ~central & has_f1 & has_f2
    bwd = valid & ~central & ~fwd & has_b1 & has_b2
    fwd1 = valid & ~central & ~fwd & ~bwd & has_f1
    bwd1 = valid & ~central & ~fwd & ~bwd & ~fwd1 & has_b1
    if arr.ndim > 2:
        expand = (...,) + (None,) * (arr.ndim - 2)
        central, fwd, bwd = central[expand], fwd[expand], bwd[expand]
        fwd1, bwd1 = fwd1[expand], bwd1[expand]
    out = np.where(central, (f1 - b1) / (2 * h), out)
    out = np.where(fwd, (-3 * arr + 4 * f1 - f2) / (2 * h), out)
    out = np.where(bwd, (3 * arr - 4 * b1 + b2) / (2 * h), out)
    out = np.where(fwd1, (f1 - arr) / h, out)
    out = np.where(bwd1, (arr - b1) / h, out)
    return out


def _inside_shift(shape, axis, k):
    """Mask of points whose k-shifted neighbour stays inside the array."""
    n = shape[axis]
    idx = np.arange(n)
    ok = (idx + k >= 0) & (idx + k < n)
    expand = [None, None]
    expand[axis] = slice(None)
    out = np.broadcast_to(ok[tuple(expand)], shape)
    return out


def dx_array(chart: Chart, arr, boundary: str = "auto"):
    """d/dx of a grid array; boundary in {auto, periodic, zerofill, masked}."""
    return _d_dispatch(chart, arr, 0, chart.hx, boundary)


def dy_array(chart: Chart, arr, boundary: str = "auto"):
    return _d_dispatch(chart, arr, 1, chart.hy, boundary)


def _d_dispatch(chart, arr, axis, h, boundary):
    if boundary == "auto":
        boundary = "periodic" if chart.periodic else "masked"
    if boundary == "periodic":
        return _d_axis_periodic(arr, axis, h)
    if boundary == "zerofill":
        return _d_axis_zerofill(arr, axis, h)
    if boundary == "masked":
        return _d_axis_masked(arr, axis, h, chart.mask())
    if boundary == "rect":
        # data valid on the whole rectangle (analytic fields on disk charts)
        return _d_axis_masked(arr, axis, h, np.ones((chart.nx, chart.ny), dtype=bool))
    raise ValueError(f"unknown boundary policy {boundary!r}")


def dz_array(chart, arr, boundary="auto"):
    return 0.5 * (dx_array(chart, arr, boundary) - 1j * dy_array(chart, arr, boundary))


def dzbar_array(chart, arr, boundary="auto"):
    return 0.5 * (dx_array(chart, arr, boundary) + 1j * dy_array(chart, arr, boundary))


def partial_z(f: ScalarField, boundary: str = "auto") -> ScalarField:
    """d f = (d_x - i d_y) f / 2 with the chart's boundary treatment."""
    return ScalarField(f.chart, dz_array(f.chart, f.data, boundary))


def partial_zbar(f: ScalarField, boundary: str = "auto") -> ScalarField:
    return ScalarField(f.chart, dzbar_array(f.chart, f.data, boundary))


# ---------------------------------------------------------------------------
# exterior calculus on Lie-valued forms


def _bracket(x, y):
    return x @ y - y @ x


def exterior_d(alpha: LieForm, boundary: str = "auto") -> LieForm:
    """Discrete d; degree 0 -> 1, degree 1 -> 2."""
    ch = alpha.chart
    if alpha.degree == 0:
        return LieForm(ch, 1, d1=dz_array(ch, alpha.d0, boundary), d2=dzbar_array(ch, alpha.d0, boundary))
    if alpha.degree == 1:
        c = dz_array(ch, alpha.d2, boundary) - dzbar_array(ch, alpha.d1, boundary)
        return LieForm(ch, 2, d0=c)
    raise DomainMismatchError("exterior_d is defined for degrees 0 and 1 only")


def wedge_bracket(alpha: LieForm, beta: LieForm) -> LieForm:
    """Graded bracket-wedge [alpha ^ beta]; degrees must sum to <= 2."""
    if alpha.chart is not beta.chart and alpha.chart != beta.chart:
        raise DomainMismatchError("wedge_bracket needs a common chart")
    da, db = alpha.degree, beta.degree
    if da + db > 2:
        raise DomainMismatchError(f"degree overflow: {da} + {db} > 2")
    ch = alpha.chart
    if da == 0 and db == 0:
        return LieForm(ch, 0, d0=_bracket(alpha.d0, beta.d0))
    if da == 0 and db == 1:
        return LieForm(ch, 1, d1=_bracket(alpha.d0, beta.d1), d2=_bracket(alpha.d0, beta.d2))
    if da == 1 and db == 0:
        return LieForm(ch, 1, d1=_bracket(alpha.d1, beta.d0), d2=_bracket(alpha.d2, beta.d0))
    if da == 0 and db == 2:
        return LieForm(ch, 2, d0=_bracket(alpha.d0, beta.d0))
    if da == 2 and db == 0:
        return LieForm(ch, 2, d0=_bracket(alpha.d0, beta.d0))
    # 1-form against 1-form
    return LieForm(ch, 2, d0=_bracket(alpha.d1, beta.d2) - _bracket(alpha.d2, beta.d1))


def covariant_d(a_form: LieForm, omega: LieForm, boundary: str = "auto") -> LieForm:
    """d omega + [A ^ omega] for a degree-1 connection form A."""
    d = exterior_d(omega, boundary)
    w = wedge_bracket(a_form, omega)
    if omega.degree == 0:
        return LieForm(omega.chart, 1, d1=d.d1 + w.d1, d2=d.d2 + w.d2)
    return LieForm(omega.chart, 2, d0=d.d0 + w.d0)


def integrate(f, weight: str = "area"):
    """Midpoint-rule integral over the chart; disk charts sum mask points only.

    ScalarField: returns sum(f) * hx * hy.  Degree-2 LieForm: integrates the
    stored coefficient entrywise against dx dy (the caller accounts for the
    dz^dzbar = -2i dx dy factor where needed).
    """
    if isinstance(f, ScalarField):
        ch, data = f.chart, f.data
    elif isinstance(f, LieForm):
        if f.degree != 2:
            raise DomainMismatchError("integrate expects a scalar or degree-2 form")
        ch, data = f.chart, f.d0
    else:
        raise TypeError("integrate expects ScalarField or LieForm")
    m = ch.mask()
    if data.ndim > 2:
        sel = data[m]
        return sel.sum(axis=0) * ch.hx * ch.hy
    return data[m].sum() * ch.hx * ch.hy


# ---------------------------------------------------------------------------
# field constructors


def bump_field(chart: Chart, center=(0.0, 0.0), radius: float = 0.25, amplitude=1.0) -> ScalarField:
    """C^2 compactly supported bump amplitude*(1 - r^2)^3 on r < 1."""
    x, y = chart.xy()
    r2 = ((x - center[0]) ** 2 + (y - center[1]) ** 2) / radius**2
    prof = np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 3, 0.0)
    return ScalarField(chart, amplitude * prof.astype(complex))


def random_smooth_scalar(chart: Chart, rng, amplitude: float = 1.0, modes: int = 2) -> ScalarField:
    """Smooth random field: low trig polynomial (periodic) or bump-carried polynomial (disk)."""
    x, y = chart.xy()
    out = np.zeros_like(x, dtype=complex)
    if chart.periodic:
        for kx in range(-modes, modes + 1):
            for ky in range(-modes, modes + 1):
                c = (rng.standard_normal() + 1j * rng.standard_normal()) / (1 + kx * kx + ky * ky)
                out += c * np.exp(2j * np.pi * (kx * x / chart.lx + ky * y / chart.ly))
    else:
        r = chart.radius
        for px in range(modes + 1):
            for py in range(modes + 1):
                c = rng.standard_normal() + 1j * rng.standard_normal()
                out += c * (x / r) ** px * (y / r) ** py
        out = out * bump_field(chart, radius=0.75 * r).data
    scale = np.abs(out).max()
    if scale > 0:
        out *= amplitude / scale
    return ScalarField(chart, out)


# ---------------------------------------------------------------------------
# CSV I/O: ScalarField rows are i,j,re,im; LieForm rows are
# i,j,row,col,comp,re,im with comp in {0} for degree 0/2 and {dz,dzb} for
# degree 1.  Floats are printed with 17 significant digits.


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_scalar_csv(path, f: ScalarField):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "re", "im"])
        for i in range(f.chart.nx):
            for j in range(f.chart.ny):
                v = f.data[i, j]
                w.writerow([i, j, _fmt(v.real), _fmt(v.imag)])


def load_scalar_csv(path, chart: Chart) -> ScalarField:
    data = np.zeros((chart.nx, chart.ny), dtype=complex)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:4] != ["i", "j", "re", "im"]:
            raise ValueError(f"bad scalar field header in {path}: {header}")
        for row in r:
            i, j = int(row[0]), int(row[1])
            data[i, j] = float(row[2]) + 1j * float(row[3])
    return ScalarField(chart, data)


def _write_matrix_rows(w, grid, comp):
    nx, ny, n, _ = grid.shape
    for i in range(nx):
        for j in range(ny):
            for r_ in range(n):
                for c_ in range(n):
                    v = grid[i, j, r_, c_]
                    w.writerow([i, j, r_, c_, comp, _fmt(v.real), _fmt(v.imag)])


def save_lieform_csv(path, form: LieForm):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "row", "col", "comp", "re", "im"])
        if form.degree == 1:
            _write_matrix_rows(w, form.d1, "dz")
            _write_matrix_rows(w, form.d2, "dzb")
        else:
            _write_matrix_rows(w, form.d0, "0")


def load_lieform_csv(path, chart: Chart, degree: int, n: int) -> LieForm:
    grids = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:7] != ["i", "j", "row", "col", "comp", "re", "im"]:
            raise ValueError(f"bad field header in {path}: {header}")
        for row in r:
            comp = row[4]
            g = grids.setdefault(comp, np.zeros((chart.nx, chart.ny, n, n), dtype=complex))
            g[int(row[0]), int(row[1]), int(row[2]), int(row[3])] = float(row[5]) + 1j * float(row[6])
    if degree == 1:
        return LieForm(chart, 1, d1=grids.get("dz"), d2=grids.get("dzb"))
    return LieForm(chart, degree, d0=grids.get("0"))


def save_matrix_field_csv(path, chart: Chart, grid):
    """Per-point matrix field (e.g. a hermitian structure) in the degree-0 layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "row", "col", "comp", "re", "im"])
        _write_matrix_rows(w, grid, "0")


def load_matrix_field_csv(path, chart: Chart, n: int):
    form = load_lieform_csv(path, chart, 0, n)
    return form.d0
