"""Hermitian adjoints, the canonical compatible connection, curvature, covectors.

The filling-in solvers work per grid point (data parallel, deterministic):

* ``fill_in(Phi, Psi)`` looks for the sigma-invariant connection killing both
  fields, as a joint least-squares over sigma-invariant component pairs.
* ``fill_in(Phi, h=...)`` parametrizes the exactly-unitary, exactly
  sigma-invariant affine family through the Chern-like base point
  (h^-1 d h, 0) and least-squares the Phi-compatibility over it.  At a
  metric/field pair that is compatible in the continuum this reproduces the
  discrete Chern connection exactly, because the base point already
  annihilates the residual and the family direction is pinned by uniqueness.
* ``inject_covector`` keeps exact unitarity, drops sigma-invariance, and pins
  the covector traces as linear constraints (KKT system per point).

Compatibility of finite-difference fields holds only up to the O(h^2)
discretization floor; each solver reports its residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fiber
from .chart import Chart, CovectorField, LieForm, dz_array, dzbar_array, exterior_d, wedge_bracket
from .errors import DomainMismatchError, TransversalityError

__all__ = [
    "HermitianField",
    "ConnectionField",
    "hermitian_structure",
    "hermitian_adjoint_field",
    "fill_in",
    "curvature_total",
    "covector_extract",
    "inject_covector",
    "sigma_defect",
    "unitarity_defect",
    "sup_norm",
]


def sup_norm(form: LieForm, mask=None) -> float:
    """Largest pointwise Frobenius norm over the chart mask."""
    if mask is None:
        mask = form.chart.mask()
    arrs = [a for a in (form.d0, form.d1, form.d2) if a is not None]
    out = 0.0
    for a in arrs:
        nrm = np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))
        out = max(out, float(nrm[mask].max()))
    return out


@dataclass
class HermitianField:
    """Per-point positive hermitian matrix with unit determinant."""

    chart: Chart
    data: np.ndarray  # (nx, ny, n, n)

    @property
    def n(self):
        return self.data.shape[-1]

    def inv(self):
        return np.linalg.inv(self.data)

    def check(self, tol: float = 1e-10):
        h = self.data
        herm = np.abs(h - np.conj(np.swapaxes(h, -1, -2))).max()
        w = np.linalg.eigvalsh(h)
        det = np.linalg.det(h)
        return {
            "hermitian_defect": float(herm),
            "min_eig": float(w.min()),
            "det_defect": float(np.abs(det - 1.0).max()),
        }


def hermitian_structure(chart: Chart, data: np.ndarray, normalize: bool = True) -> HermitianField:
    """Wrap a matrix grid as a hermitian structure, dividing by det^{1/n}."""
    h = np.asarray(data, dtype=complex)
    if normalize:
        det = np.linalg.det(h)
        n = h.shape[-1]
        h = h / det[..., None, None] ** (1.0 / n)
    hf = HermitianField(chart, h)
    chk = hf.check()
    if chk["min_eig"] <= 0:
        raise DomainMismatchError("hermitian structure must be positive definite")
    return hf


def _adj(x, h, hinv):
    """Pointwise h-adjoint x -> h^-1 x^+ h."""
    xd = np.conj(np.swapaxes(x, -1, -2))
    return hinv @ xd @ h


def hermitian_adjoint_field(phi: LieForm, h: HermitianField) -> LieForm:
    """Phi* : the adjoint exchanges dz and dzbar components."""
    if phi.degree != 1:
        raise DomainMismatchError("hermitian adjoint expects a degree-1 field")
    hh, hinv = h.data, h.inv()
    return LieForm(phi.chart, 1, d1=_adj(phi.d2, hh, hinv), d2=_adj(phi.d1, hh, hinv))


@dataclass
class ConnectionField:
    A: LieForm
    sigma_invariant: bool = False
    unitary: bool = False
    report: dict = field(default_factory=dict)

    @property
    def chart(self):
        return self.A.chart

    def a_minus_sigma(self) -> LieForm:
        inv = fiber.involutions(self.A.n)
        return LieForm(
            self.A.chart,
            1,
            d1=0.5 * (self.A.d1 - inv.sigma(self.A.d1)),
            d2=0.5 * (self.A.d2 - inv.sigma(self.A.d2)),
        )

    def a_sigma(self) -> LieForm:
        inv = fiber.involutions(self.A.n)
        return LieForm(
            self.A.chart,
            1,
            d1=0.5 * (self.A.d1 + inv.sigma(self.A.d1)),
            d2=0.5 * (self.A.d2 + inv.sigma(self.A.d2)),
        )


def sigma_defect(a_form: LieForm) -> float:
    inv = fiber.involutions(a_form.n)
    d1 = np.abs(inv.sigma(a_form.d1) - a_form.d1).max()
    d2 = np.abs(inv.sigma(a_form.d2) - a_form.d2).max()
    return float(max(d1, d2))


def unitarity_defect(a_form: LieForm, h: HermitianField, boundary: str = "auto") -> float:
    """sup |d_A h| : dh - h A - A^+ h componentwise."""
    hh = h.data
    ch = a_form.chart
    dh_z = dz_array(ch, hh, boundary)
    dh_zb = dzbar_array(ch, hh, boundary)
    dag = lambda x: np.conj(np.swapaxes(x, -1, -2))
    r1 = dh_z - hh @ a_form.d1 - dag(a_form.d2) @ hh
    r2 = dh_zb - hh @ a_form.d2 - dag(a_form.d1) @ hh
    m = ch.mask()
    return float(max(np.abs(r1[m]).max(), np.abs(r2[m]).max()))


# ---------------------------------------------------------------------------
# batched least-squares helpers


def _realify_rows(m):
    """(..., rows, cols) complex -> (..., 2 rows, cols) real."""
    return np.concatenate([m.real, m.imag], axis=-2)


def _compat_residual(phi: LieForm, a1, a2, boundary):
    dphi = exterior_d(phi, boundary).d0
    return dphi + a1 @ phi.d2 - phi.d2 @ a1 - (a2 @ phi.d1 - phi.d1 @ a2)


def _sigma_cols(phi: LieForm, basis):
    """Columns [s, phi2] and -[s, phi1] for each basis element; shapes (N,...)"""
    nx, ny = phi.chart.nx, phi.chart.ny
    p1 = phi.d1.reshape(nx * ny, *phi.d1.shape[-2:])
    p2 = phi.d2.reshape(nx * ny, *phi.d2.shape[-2:])
    cols1, cols2 = [], []
    for s in basis:
        cols1.append((s @ p2 - p2 @ s).reshape(nx * ny, -1))
        cols2.append((-(s @ p1 - p1 @ s)).reshape(nx * ny, -1))
    return cols1, cols2


def _solve_batched(mats, rhs, method, context):
    """Least squares per point for stacked systems (N, rows, cols)."""
    if method == "normal":
        g = np.swapaxes(mats, -1, -2).conj() @ mats
        b = (np.swapaxes(mats, -1, -2).conj() @ rhs[..., None])[..., 0]
        w = np.linalg.eigvalsh(g)
        bad = w[:, 0] < 1e-13 * np.maximum(w[:, -1], 1e-300)
        if bad.any():
            raise TransversalityError(
                f"{context}: singular pointwise system", point=int(np.argmax(bad))
            )
        return np.linalg.solve(g, b[..., None])[..., 0]
    sol = np.linalg.pinv(mats, rcond=1e-12) @ rhs[..., None]
    return sol[..., 0]


def fill_in(
    phi: LieForm,
    psi: LieForm | None = None,
    h: HermitianField | None = None,
    boundary: str = "auto",
    method: str = "normal",
) -> ConnectionField:
    """Canonical compatible connection for a transverse pair.

    Without ``h``: joint least squares of d_A phi = d_A psi = 0 over exactly
    sigma-invariant component pairs.  With ``h``: least squares of
    d_A phi = 0 over the exactly-unitary sigma-invariant family through the
    Chern-like base point; ``psi`` defaults to the h-adjoint of ``phi``.
    """
    if phi.degree != 1:
        raise DomainMismatchError("fill_in expects degree-1 fields")
    ch = phi.chart
    if h is not None:
        psi_eff = hermitian_adjoint_field(phi, h)
        a1, a2, rep = _fill_in_unitary(phi, h, boundary, method)
    else:
        if psi is None:
            raise ValueError("fill_in needs either psi or h")
        psi_eff = psi
        a1, a2, rep = _fill_in_sigma(phi, psi, boundary, method)
    a_form = LieForm(ch, 1, d1=a1, d2=a2)
    mask = ch.mask()
    r_phi = _compat_residual(phi, a1, a2, boundary)
    r_psi = _compat_residual(psi_eff, a1, a2, boundary)
    rep["compat_residual_phi"] = float(np.abs(r_phi[mask]).max())
    rep["compat_residual_psi"] = float(np.abs(r_psi[mask]).max())
    rep["sigma_defect"] = sigma_defect(a_form)
    sig_ok = rep["sigma_defect"] < 1e-9 * max(1.0, float(np.abs(a1).max()))
    uni_ok = False
    if h is not None:
        rep["unitarity_defect"] = unitarity_defect(a_form, h, boundary)
        uni_ok = rep["unitarity_defect"] < 1e-8 * max(1.0, float(np.abs(h.data).max()))
    floor = ch.hx * ch.hx * 10.0
    rep["warnings"] = []
    scale = max(1.0, sup_norm(phi))
    if rep["compat_residual_phi"] > max(floor * scale * 100.0, 1e-6):
        rep["warnings"].append(
            f"phi-compatibility residual {rep['compat_residual_phi']:.3e} above the h^2 floor"
        )
    return ConnectionField(A=a_form, sigma_invariant=sig_ok, unitary=uni_ok, report=rep)


def _fill_in_sigma(phi, psi, boundary, method):
    n = phi.n
    ch = phi.chart
    npt = ch.nx * ch.ny
    basis = fiber.sigma_plus_basis(n)
    m = len(basis)
    c1p, c2p = _sigma_cols(phi, basis)
    c1q, c2q = _sigma_cols(psi, basis)
    # rows: phi-equation then psi-equation; cols: alpha (A1) then beta (A2)
    top = np.stack(c1p + c2p, axis=-1)
    bot = np.stack(c1q + c2q, axis=-1)
    mats = np.concatenate([top, bot], axis=-2)
    y = -np.concatenate(
        [
            exterior_d(phi, boundary).d0.reshape(npt, -1),
            exterior_d(psi, boundary).d0.reshape(npt, -1),
        ],
        axis=-1,
    )
    coef = _solve_batched(mats, y, method, "fill_in")
    bstack = np.stack(basis)  # (m, n, n)
    a1 = np.einsum("pa,aij->pij", coef[:, :m], bstack).reshape(ch.nx, ch.ny, n, n)
    a2 = np.einsum("pa,aij->pij", coef[:, m:], bstack).reshape(ch.nx, ch.ny, n, n)
    return a1, a2, {"mode": "sigma-pair"}


def _unitary_base(phi, h, boundary):
    ch = phi.chart
    hinv = h.inv()
    a0_1 = hinv @ dz_array(ch, h.data, boundary)
    a0_2 = np.zeros_like(a0_1)
    return a0_1, a0_2


def _unitary_cols(phi, h, basis):
    """Real-linear columns of the phi-compat residual over the unitary family."""
    ch = phi.chart
    n = phi.n
    npt = ch.nx * ch.ny
    p1 = phi.d1.reshape(npt, n, n)
    p2 = phi.d2.reshape(npt, n, n)
    hh = h.data.reshape(npt, n, n)
    hinv = h.inv().reshape(npt, n, n)
    cols = []
    for s in basis:
        sstar = hinv @ np.conj(s.T)[None] @ hh  # h-adjoint of the direction
        br1 = s[None] @ p2 - p2 @ s[None]
        br2 = sstar @ p1 - p1 @ sstar
        cols.append((br1 + br2).reshape(npt, -1))  # real part direction
        cols.append((1j * (br1 - br2)).reshape(npt, -1))  # imaginary direction
    return cols


def _fill_in_unitary(phi, h, boundary, method):
    n = phi.n
    ch = phi.chart
    npt = ch.nx * ch.ny
    basis = fiber.sigma_plus_basis(n)
    a0_1, a0_2 = _unitary_base(phi, h, boundary)
    r0 = _compat_residual(phi, a0_1, a0_2, boundary).reshape(npt, -1)
    cols = _unitary_cols(phi, h, basis)
    mats = _realify_rows(np.stack(cols, axis=-1))
    y = _realify_rows((-r0)[..., None])[..., 0]
    coef = _solve_batched(mats, y, method, "fill_in(unitary)")
    m = len(basis)
    bstack = np.stack(basis)
    v1 = np.einsum("pa,aij->pij", coef[:, 0::2] + 1j * coef[:, 1::2], bstack)
    hh = h.data.reshape(npt, n, n)
    hinv = h.inv().reshape(npt, n, n)
    v2 = -hinv @ np.conj(np.swapaxes(v1, -1, -2)) @ hh
    a1 = a0_1 + v1.reshape(ch.nx, ch.ny, n, n)
    a2 = a0_2 + v2.reshape(ch.nx, ch.ny, n, n)
    return a1, a2, {"mode": "unitary"}


def curvature_total(a_conn, phi: LieForm, psi: LieForm, boundary: str = "auto") -> LieForm:
    """F(A) + [Phi ^ Psi] as a dz^dzbar coefficient field."""
    a_form = a_conn.A if isinstance(a_conn, ConnectionField) else a_conn
    ch = a_form.chart
    da = exterior_d(a_form, boundary).d0
    comm = a_form.d1 @ a_form.d2 - a_form.d2 @ a_form.d1
    ff = wedge_bracket(phi, psi).d0
    return LieForm(ch, 2, d0=da + comm + ff)


def _phi1_powers(phi: LieForm):
    """[phi1^1, ..., phi1^{n-1}] as stacked grids."""
    n = phi.n
    out = [phi.d1]
    for _ in range(n - 2):
        out.append(out[-1] @ phi.d1)
    return out


def covector_extract(a_conn, phi: LieForm) -> CovectorField:
    """t_k = tr(phi1^{k-1} Aminus_dz) for k = 2..n."""
    a_form = a_conn.A if isinstance(a_conn, ConnectionField) else a_conn
    n = phi.n
    inv = fiber.involutions(n)
    aminus1 = 0.5 * (a_form.d1 - inv.sigma(a_form.d1))
    comps = {}
    for k, pw in zip(range(2, n + 1), _phi1_powers(phi)):
        comps[k] = np.einsum("xyij,xyji->xy", pw, aminus1)
    return CovectorField(phi.chart, n, comps)


def inject_covector(
    phi: LieForm,
    h: HermitianField,
    t: CovectorField,
    boundary: str = "auto",
) -> ConnectionField:
    """Unitary Phi-compatible connection whose extracted covector equals t.

    Per grid point: least squares of the Phi-compatibility over the exactly
    unitary affine family (full sl_n direction space), subject to the linear
    covector constraints, solved as a KKT system.  t = 0 returns the
    generalized base point, whose sigma-odd part pairs to zero against the
    centralizer directions.
    """
    n = phi.n
    ch = phi.chart
    npt = ch.nx * ch.ny
    inv = fiber.involutions(n)
    basis = fiber.sl_basis(n)
    a0_1, a0_2 = _unitary_base(phi, h, boundary)
    r0 = _compat_residual(phi, a0_1, a0_2, boundary).reshape(npt, -1)
    cols = _unitary_cols(phi, h, basis)
    mats = _realify_rows(np.stack(cols, axis=-1))  # (npt, 2n^2, 2d)
    y = _realify_rows((-r0)[..., None])[..., 0]
    # covector constraints: tr(phi1^{k-1} (A0 + V)^{-sigma}_dz) = t_k
    powers = [p.reshape(npt, n, n) for p in _phi1_powers(phi)]
    a0m = (0.5 * (a0_1 - inv.sigma(a0_1))).reshape(npt, n, n)
    crows, cvals = [], []
    for k, pw in zip(range(2, n + 1), powers):
        base = np.einsum("pij,pji->p", pw, a0m)
        tk = t.comp(k).reshape(npt)
        row_cols = []
        for s in basis:
            sm = 0.5 * (s - inv.sigma(s))
            cu = np.einsum("pij,ji->p", pw, sm)
            row_cols.append(cu)
            row_cols.append(1j * cu)
        row = np.stack(row_cols, axis=-1)  # (npt, 2d) complex
        crows.extend([row.real, row.imag])
        rhsk = tk - base
        cvals.extend([rhsk.real, rhsk.imag])
    cmat = np.stack(crows, axis=-2)  # (npt, 2(n-1), 2d)
    cval = np.stack(cvals, axis=-1)  # (npt, 2(n-1))
    d2 = mats.shape[-1]
    ncon = cmat.shape[-2]
    g = np.swapaxes(mats, -1, -2) @ mats
    kkt = np.zeros((npt, d2 + ncon, d2 + ncon))
    kkt[:, :d2, :d2] = 2.0 * g
    kkt[:, :d2, d2:] = np.swapaxes(cmat, -1, -2)
    kkt[:, d2:, :d2] = cmat
    rhs = np.zeros((npt, d2 + ncon))
    rhs[:, :d2] = 2.0 * (np.swapaxes(mats, -1, -2) @ y[..., None])[..., 0]
    rhs[:, d2:] = cval
    try:
        sol = np.linalg.solve(kkt, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise TransversalityError(f"inject_covector: singular KKT system ({exc})") from exc
    coef = sol[:, :d2]
    bstack = np.stack(basis)
    v1 = np.einsum("pa,aij->pij", coef[:, 0::2] + 1j * coef[:, 1::2], bstack)
    hh = h.data.reshape(npt, n, n)
    hinv = h.inv().reshape(npt, n, n)
    v2 = -hinv @ np.conj(np.swapaxes(v1, -1, -2)) @ hh
    a1 = a0_1 + v1.reshape(ch.nx, ch.ny, n, n)
    a2 = a0_2 + v2.reshape(ch.nx, ch.ny, n, n)
    a_form = LieForm(ch, 1, d1=a1, d2=a2)
    mask = ch.mask()
    rep = {
        "mode": "inject",
        "compat_residual_phi": float(
            np.abs(_compat_residual(phi, a1, a2, boundary)[mask]).max()
        ),
        "unitarity_defect": unitarity_defect(a_form, h, boundary),
        "sigma_defect": sigma_defect(a_form),
    }
    return ConnectionField(A=a_form, sigma_invariant=False, unitary=True, report=rep)
