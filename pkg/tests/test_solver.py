import numpy as np
import pytest
from scipy.linalg import expm as scipy_expm

from fockbench import chart as chm
from fockbench import connection as cn
from fockbench import fiber
from fockbench import fockpoint as fp
from fockbench import hcsflow as hf
from fockbench import solver as sv
from fockbench.errors import DomainMismatchError, NonConvergenceError


def _identity_h(ch, n):
    eye = np.broadcast_to(np.eye(n), (ch.nx, ch.ny, n, n)).copy()
    return cn.hermitian_structure(ch, eye, normalize=False)


def _const_positive(ch, n, mu):
    f = fiber.principal_nilpotent(n)
    shape = (ch.nx, ch.ny, n, n)
    d2 = np.zeros(shape, dtype=complex)
    pw = np.eye(n, dtype=complex)
    for k, m in enumerate(mu, start=2):
        pw = pw @ f
        d2 = d2 + m * pw
    return chm.LieForm(ch, 1, d1=np.broadcast_to(f, shape).copy(), d2=d2)


def _random_admissible(space, rng, amplitude=1.0):
    coords = np.stack(
        [chm.random_smooth_scalar(space.chart, rng, amplitude=amplitude).data.real for _ in range(space.dim)],
        axis=-1,
    )
    coords = coords * space.active[..., None]
    return space.to_field(coords), coords


def test_expm_batch_matches_scipy():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3))
    got = sv.expm_batch(x)
    for i in range(5):
        assert np.abs(got[i] - scipy_expm(x[i])).max() < 1e-12


def test_conjugate_field_identities():
    ch = chm.periodic_chart(12, 12)
    n = 2
    phi = _const_positive(ch, n, [0.0])
    zero = chm.LieForm(ch, 0, d0=np.zeros((12, 12, n, n), dtype=complex))
    same = sv.conjugate_field(phi, zero)
    assert np.abs(same.d1 - phi.d1).max() == 0
    t = fiber.complete_sl2_triple(n)
    s = 0.3
    eta = chm.LieForm(ch, 0, d0=np.broadcast_to(s * t.H, phi.d1.shape).copy())
    moved = sv.conjugate_field(phi, eta)
    assert np.abs(moved.d1 - np.exp(2 * s) * phi.d1).max() < 1e-12
    # conjugation preserves [Phi ^ Phi] = 0
    rng = np.random.default_rng(1)
    mu = chm.BeltramiField(ch, 3, {k: chm.random_smooth_scalar(ch, rng, amplitude=0.2).data for k in (2, 3)})
    phi3 = hf.fock_form(ch, mu)
    eta3 = chm.LieForm(ch, 0, d0=chm.random_smooth_scalar(ch, rng).data[..., None, None] * fiber.sigma_plus_basis(3)[0])
    moved3 = sv.conjugate_field(phi3, eta3)
    assert np.abs(chm.wedge_bracket(moved3, moved3).d0).max() < 1e-12


def test_fuchsian_reference_properties():
    ch = chm.disk_chart(33, 33, 0.5)
    for n in (2, 3):
        fd = sv.fuchsian_reference(n, ch)
        assert fd.c0 == pytest.approx(n - 1, abs=2e-2)
        assert np.abs(np.linalg.det(fd.h.data) - 1).max() < 1e-10
        assert fd.A.unitary
    with pytest.raises(DomainMismatchError):
        sv.fuchsian_reference(2, chm.periodic_chart(16, 16))


def test_fuchsian_chern_diagonal_profile():
    ch = chm.disk_chart(33, 33, 0.5)
    fd = sv.fuchsian_reference(3, ch)
    a1 = fd.A.A.d1
    m = ch.interior()
    # diagonal entries proportional to (-1, 0, 1) * d log g; the antisymmetry
    # of the outer entries holds at the discrete chain-rule floor O(h^2)
    assert np.abs(a1[m][:, 1, 1]).max() < 1e-10
    assert np.abs(a1[m][:, 0, 0] + a1[m][:, 2, 2]).max() < 50 * ch.hx**2
    u = np.log(fd.g.data.real)
    dlog = chm.dz_array(ch, u.astype(complex), "rect")
    assert np.abs(a1[..., 2, 2][m] - dlog[m]).max() < 50 * ch.hx**2


def test_fuchsian_refinement_second_order():
    res = {}
    for nx in (33, 65):
        fd = sv.fuchsian_reference(2, chm.disk_chart(nx, nx, 0.5))
        res[nx] = fd.A.report["fuchsian_curvature_sup"]
    assert 3.0 < res[33] / res[65] < 5.3


def test_admissible_space_roundtrip_and_structure():
    rng = np.random.default_rng(2)
    ch = chm.periodic_chart(16, 16)
    for n in (2, 3):
        h = _identity_h(ch, n)
        space = sv.AdmissibleSpace(ch, n, h)
        assert space.dim == n * (n - 1) // 2
        inv = fiber.involutions(n)
        assert np.abs(inv.sigma(space.basis) - space.basis).max() < 1e-12
        assert np.abs(np.conj(np.swapaxes(space.basis, -1, -2)) - space.basis).max() < 1e-12
        eta, coords = _random_admissible(space, rng)
        assert np.abs(space.to_coords(eta) - coords).max() < 1e-12


def test_admissible_space_position_dependent_h():
    ch = chm.disk_chart(33, 33, 0.5)
    fd = sv.fuchsian_reference(2, ch)
    space = sv.AdmissibleSpace(ch, 2, fd.h)
    b = space.basis
    hh, hinv = fd.h.data, fd.h.inv()
    herm = np.abs(hinv[..., None, :, :] @ np.conj(np.swapaxes(b, -1, -2)) @ hh[..., None, :, :] - b).max()
    assert herm < 1e-10


def test_energy_identity_exact_on_periodic():
    rng = np.random.default_rng(3)
    n = 3
    ch = chm.periodic_chart(24, 24)
    h = _identity_h(ch, n)
    phi = _const_positive(ch, n, [0.25, 0.1])
    conn = cn.fill_in(phi, h=h)
    space = sv.AdmissibleSpace(ch, n, h)
    eta, _ = _random_admissible(space, rng)
    lhs, rhs = sv.energy_identity_sides(eta, phi, conn, h)
    assert lhs > 0
    assert abs(lhs - rhs) < 1e-11 * abs(lhs)
    # with a nonzero constant sigma-invariant unitary connection
    s0 = fiber.sigma_plus_basis(n)[0] + 0.5 * fiber.sigma_plus_basis(n)[1]
    shape = phi.d1.shape
    a = chm.LieForm(ch, 1, d1=np.broadcast_to(0.2 * s0, shape).copy(), d2=np.broadcast_to(-0.2 * np.conj(s0.T), shape).copy())
    lhs, rhs = sv.energy_identity_sides(eta, phi, cn.ConnectionField(A=a), h)
    assert lhs > 0 and abs(lhs - rhs) < 1e-11 * abs(lhs)


def test_linearized_operator_self_adjoint():
    rng = np.random.default_rng(4)
    n = 2
    ch = chm.periodic_chart(20, 20)
    h = _identity_h(ch, n)
    phi = _const_positive(ch, n, [0.3])
    conn = cn.fill_in(phi, h=h)
    ctx = sv.LinearizedContext(phi, conn, h)
    e1, _ = _random_admissible(ctx.space, rng)
    e2, _ = _random_admissible(ctx.space, rng)
    w = ch.hx * ch.hy
    b12 = -(np.einsum("xyij,xyji->", e1.d0, ctx.apply(e2).d0) * w)
    b21 = -(np.einsum("xyij,xyji->", e2.d0, ctx.apply(e1).d0) * w)
    assert abs(b12 - b21) < 1e-11 * abs(b12)


def test_linearized_operator_admissibility_guard():
    ch = chm.periodic_chart(12, 12)
    n = 2
    h = _identity_h(ch, n)
    phi = _const_positive(ch, n, [0.0])
    conn = cn.fill_in(phi, h=h)
    bad = chm.LieForm(ch, 0, d0=np.broadcast_to(fiber.principal_nilpotent(n), phi.d1.shape).copy())
    with pytest.raises(DomainMismatchError):
        sv.linearized_operator(bad, phi, conn, h)


def test_linearized_matches_fd_of_discrete_map():
    rng = np.random.default_rng(5)
    n = 2
    ch = chm.periodic_chart(20, 20)
    h = _identity_h(ch, n)
    phi = _const_positive(ch, n, [0.2])
    conn = cn.fill_in(phi, h=h)
    space = sv.AdmissibleSpace(ch, n, h)
    eta, _ = _random_admissible(space, rng)

    def curv(scale):
        ef = chm.LieForm(ch, 0, d0=scale * eta.d0)
        phi_c = sv.conjugate_field(phi, ef)
        cc = cn.fill_in(phi_c, h=h)
        psi_c = cn.hermitian_adjoint_field(phi_c, h)
        return cn.curvature_total(cc, phi_c, psi_c).d0

    eps = 1e-5
    fd = (curv(eps) - curv(-eps)) / (2 * eps)
    lop = sv.linearized_operator(eta, phi, conn, h)
    rel = np.abs(fd - lop.d0).max() / np.abs(lop.d0).max()
    assert rel < 1e-6


def test_symbol_positivity_pointwise():
    # -(i/2) tr(eta alpha ^ Q(alpha eta)) is sign-definite for positive points
    rng = np.random.default_rng(6)
    n = 3
    count = 0
    while count < 100:
        mu = 0.25 * (rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1))
        try:
            pt = fp.fock_point(n, mu)
        except Exception:
            continue
        if not fp.is_positive(pt):
            continue
        count += 1
        star = fp.FormFiber(pt.phi2.conj().T, pt.phi1.conj().T)
        p = rng.standard_normal() + 1j * rng.standard_normal()  # covector alpha = p dz + conj(p) dzbar
        for _ in range(5):
            x = fiber.random_traceless(n, rng)
            inv = fiber.involutions(n)
            eta = 0.5 * (x + inv.sigma(x))
            eta = 0.5 * (eta + eta.conj().T)  # admissible: sigma-even hermitian
            if np.abs(eta).max() < 1e-10:
                continue
            omega = fp.FormFiber(p * eta, np.conj(p) * eta)
            q = fp.q_involution(omega, pt, star)
            val = -(np.trace(eta @ (p * q.b)) - np.trace(eta @ (np.conj(p) * q.a))).real
            assert val < 0


def test_solve_linear_manufactured_and_trivial():
    rng = np.random.default_rng(7)
    n = 3
    ch = chm.periodic_chart(20, 20)
    h = _identity_h(ch, n)
    phi = _const_positive(ch, n, [0.2, 0.05])
    conn = cn.fill_in(phi, h=h)
    ctx = sv.LinearizedContext(phi, conn, h)
    eta, _ = _random_admissible(ctx.space, rng)
    cfg = sv.NewtonConfig(cg_tol=1e-12, max_cg=2000)
    rhs = ctx.apply(eta)
    got, rep = sv.solve_linear(phi, conn, h, rhs, cfg)
    assert np.abs(got.d0 - eta.d0).max() < 1e-7 * np.abs(eta.d0).max()
    assert rep["rayleigh_min"] > 0
    zero_rhs = chm.LieForm(ch, 2, d0=np.zeros_like(rhs.d0))
    got0, rep0 = sv.solve_linear(phi, conn, h, zero_rhs, cfg)
    assert np.abs(got0.d0).max() == 0 and rep0["iterations"] == 0


def test_solve_linear_jacobi_preconditioner():
    rng = np.random.default_rng(8)
    n = 2
    ch = chm.periodic_chart(20, 20)
    h = _identity_h(ch, n)
    phi = _const_positive(ch, n, [0.1])
    conn = cn.fill_in(phi, h=h)
    ctx = sv.LinearizedContext(phi, conn, h)
    eta, _ = _random_admissible(ctx.space, rng)
    rhs = ctx.apply(eta)
    plain = sv.solve_linear(phi, conn, h, rhs, sv.NewtonConfig(cg_tol=1e-11, max_cg=3000))
    pre = sv.solve_linear(phi, conn, h, rhs, sv.NewtonConfig(cg_tol=1e-11, max_cg=3000, preconditioner="jacobi"))
    assert np.abs(plain[0].d0 - pre[0].d0).max() < 1e-8 * np.abs(eta.d0).max()
    assert pre[1]["iterations"] <= plain[1]["iterations"]


def test_newton_config_validation():
    with pytest.raises(ValueError):
        sv.NewtonConfig(continuation_steps=0)
    with pytest.raises(ValueError):
        sv.NewtonConfig(newton_tol=2.0)


def test_newton_continuation_small():
    ch = chm.disk_chart(32, 32, 0.5)
    fd = sv.fuchsian_reference(2, ch)
    bump = chm.bump_field(ch, radius=0.25, amplitude=0.004)
    # n = 2 has no higher coefficients; use n = 3 on a small grid instead
    fd3 = sv.fuchsian_reference(3, ch)
    mu = chm.BeltramiField(ch, 3, {3: bump.data})
    cfg = sv.NewtonConfig(continuation_steps=1, newton_tol=1e-9, cg_tol=1e-10, max_cg=3000, preconditioner="jacobi")
    eta, rep = sv.newton_continuation(fd3, mu, cfg)
    assert rep["final_residual"] < 1e-9
    assert rep["per_step"][0]["newton_iters"] <= 8
    assert rep["projection_defect"] < 1e-12
    # converged point is a fixed point: re-running needs no further steps
    # (the residual map at the found eta starts below tolerance)
    mu0 = chm.BeltramiField(ch, 3, {})
    eta0, rep0 = sv.newton_continuation(fd3, mu0, cfg)
    assert rep0["per_step"] == [] and np.abs(eta0.d0).max() == 0.0


def test_newton_continuation_fd_check_recorded():
    ch = chm.disk_chart(32, 32, 0.5)
    fd = sv.fuchsian_reference(3, ch)
    bump = chm.bump_field(ch, radius=0.25, amplitude=0.003)
    mu = chm.BeltramiField(ch, 3, {3: bump.data})
    cfg = sv.NewtonConfig(continuation_steps=1, newton_tol=1e-9, cg_tol=1e-10, max_cg=3000,
                          preconditioner="jacobi", fd_check=True)
    _, rep = sv.newton_continuation(fd, mu, cfg)
    assert rep["fd_checks"] and rep["fd_checks"][0]["rel_mismatch"] < 0.05


def test_newton_continuation_rejects_bad_targets():
    ch = chm.disk_chart(32, 32, 0.5)
    fd = sv.fuchsian_reference(3, ch)
    cfg = sv.NewtonConfig(continuation_steps=1)
    with pytest.raises(DomainMismatchError):
        mu = chm.BeltramiField(ch, 3, {2: 0.1 * np.ones((32, 32), dtype=complex)})
        sv.newton_continuation(fd, mu, cfg)
    with pytest.raises(DomainMismatchError):
        mu = chm.BeltramiField(ch, 3, {3: 0.1 * np.ones((32, 32), dtype=complex)})
        sv.newton_continuation(fd, mu, cfg)
