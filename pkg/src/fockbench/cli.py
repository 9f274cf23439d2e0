"""Command-line driver.

Subcommands: fiber-verify, point-verify, fillin, fuchsian, solve, muholo,
flow.  Configs are JSON, fields travel as CSV, every run writes exactly one
report.json into the output directory (and echoes it to stdout).

Exit codes: 0 ok, 1 warn-threshold breached, 2 fail, 3 unknown subcommand,
4 malformed config, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import chart as chm
from . import connection as cn
from . import fiber
from . import fockpoint as fp
from . import hcsflow as hf
from . import solver as sv
from .report import SolveReport

EXIT_OK, EXIT_WARN, EXIT_FAIL = 0, 1, 2
EXIT_USAGE, EXIT_CONFIG, EXIT_IO = 3, 4, 5

_SUBCOMMANDS = ("fiber-verify", "point-verify", "fillin", "fuchsian", "solve", "muholo", "flow")


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _build_chart(spec) -> chm.Chart:
    try:
        kind = spec["kind"]
        if kind == "periodic-rect":
            return chm.periodic_chart(int(spec["nx"]), int(spec["ny"]), float(spec.get("lx", 1.0)), float(spec.get("ly", 1.0)))
        if kind == "dirichlet-disk":
            return chm.disk_chart(int(spec["nx"]), int(spec["ny"]), float(spec.get("radius", 0.5)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad chart spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown chart kind {kind!r}")


def _complexval(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _build_scalar(chart, spec) -> np.ndarray:
    kind = spec.get("type")
    if kind == "constant":
        return np.full((chart.nx, chart.ny), _complexval(spec.get("value", 0.0)))
    if kind == "bump":
        f = chm.bump_field(
            chart,
            center=tuple(spec.get("center", (0.0, 0.0))),
            radius=float(spec.get("radius", 0.25)),
            amplitude=_complexval(spec.get("amplitude", 1.0)),
        )
        return f.data
    if kind == "file":
        return chm.load_scalar_csv(spec["path"], chart).data
    raise ConfigError(f"unknown field spec type {kind!r}")


def _build_component_family(chart, n, spec, cls):
    comps = {}
    for key, sub in (spec or {}).items():
        k = int(key)
        if not 2 <= k <= n:
            raise ConfigError(f"component index {k} outside 2..{n}")
        comps[k] = _build_scalar(chart, sub)
    return cls(chart, n, comps)


def _newton_config(spec) -> sv.NewtonConfig:
    spec = spec or {}
    try:
        return sv.NewtonConfig(
            continuation_steps=int(spec.get("continuation_steps", 3)),
            newton_tol=float(spec.get("newton_tol", 1e-10)),
            max_newton=int(spec.get("max_newton", 12)),
            cg_tol=float(spec.get("cg_tol", 1e-11)),
            max_cg=int(spec.get("max_cg", 4000)),
            fd_check=bool(spec.get("fd_check", False)),
            preconditioner=str(spec.get("preconditioner", "none")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver spec: {exc}") from exc


def _outdir(cfg):
    out = cfg.get("output_dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _emit(report: SolveReport, outdir) -> int:
    text = report.to_json()
    if outdir is not None:
        with open(os.path.join(outdir, "report.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return report.exit_code()


# ---------------------------------------------------------------------------
# fiber-verify


def _cmd_fiber_verify(args) -> int:
    n = args.n
    rep = SolveReport(command="fiber-verify", config_echo={"n": n, "seed": args.seed})
    t0 = time.time()
    rng = np.random.default_rng(args.seed)
    checks = {}
    triple = fiber.complete_sl2_triple(n)
    br = fiber.commutator
    checks["triple_HE"] = float(np.abs(br(triple.H, triple.E) - 2 * triple.E).max())
    checks["triple_HF"] = float(np.abs(br(triple.H, triple.F) + 2 * triple.F).max())
    checks["triple_EF"] = float(np.abs(br(triple.E, triple.F) - triple.H).max())
    inv = fiber.involutions(n)
    checks["sigma_F"] = float(np.abs(inv.sigma(triple.F) + triple.F).max())
    checks["sigma_E"] = float(np.abs(inv.sigma(triple.E) + triple.E).max())
    worst = 0.0
    for _ in range(20):
        x = fiber.random_traceless(n, rng)
        worst = max(worst, float(np.abs(inv.sigma(inv.rho(x)) - inv.rho(inv.sigma(x))).max()))
        worst = max(worst, float(np.abs(inv.sigma(inv.sigma(x)) - x).max()))
        worst = max(worst, float(np.abs(inv.rho(inv.rho(x)) - x).max()))
    checks["involution_algebra"] = worst
    cb = fiber.centralizer_basis(triple.F)
    checks["centralizer_dim_defect"] = abs(len(cb) - (n - 1))
    neg = max(float(np.abs(inv.sigma(b) + b).max()) for b in cb)
    checks["sigma_negates_centralizer"] = neg
    ab = 0.0
    ad = fiber.adjoint_operator(triple.F)
    for i, b1 in enumerate(cb):
        for b2 in cb[i + 1 :]:
            ab = max(ab, float(np.abs(br(b1, b2)).max()))
        sol, *_ = np.linalg.lstsq(ad.matrix, fiber._to_coords(n, b1), rcond=None)
        resid = np.abs(ad.matrix @ sol - fiber._to_coords(n, b1)).max()
        checks["center_in_image"] = max(checks.get("center_in_image", 0.0), float(resid))
    checks["centralizer_abelian"] = ab
    if n <= 6:
        wb = fiber.weight_basis(n, exact=True)
        bad = 0
        for (i, j, gi) in wb:
            for (k, l, gk) in wb:
                tr = np.trace(gi @ gk)
                if (k, l) == (i, -j):
                    bad += tr == 0
                else:
                    bad += tr != 0
        checks["trace_orthogonality_violations"] = bad
    rep.residual_norms = checks
    rep.timings["wall_time_s"] = time.time() - t0
    tol = 1e-12
    for key, val in checks.items():
        if val > tol:
            rep.fail(f"{key} = {val!r} exceeds {tol}")
    return _emit(rep, args.out)


# ---------------------------------------------------------------------------
# point-verify


def _cmd_point_verify(args) -> int:
    n = args.n
    rng = np.random.default_rng(args.seed)
    rep = SolveReport(command="point-verify", config_echo={"n": n, "samples": args.samples, "seed": args.seed})
    t0 = time.time()
    worst = {"reconstruction": 0.0, "dims": 0, "gram_vs_contraction": 0, "q_involution": 0.0}
    for _ in range(args.samples):
        mu = 0.25 * (rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1))
        try:
            pt = fp.fock_point(n, mu)
        except Exception:
            continue
        star = fp.FormFiber(pt.phi2.conj().T, pt.phi1.conj().T)
        om = fp.FormFiber(fiber.random_traceless(n, rng), fiber.random_traceless(n, rng))
        parts = fp.four_way_decompose(om, pt, star)
        resid = (parts[0] + parts[1] + parts[2] + parts[3] - om).norm() / max(om.norm(), 1e-300)
        worst["reconstruction"] = max(worst["reconstruction"], resid)
        if fp.phi_cohomology_dims(pt) != (n - 1, 2 * (n - 1), n - 1):
            worst["dims"] += 1
        pos = fp.is_positive(pt)
        s = fp.contraction_norm(pt)
        eps = fp.EPS_POS
        pos_c = s * s < (1 - eps) / (1 + eps)
        worst["gram_vs_contraction"] += int(pos != pos_c)
        x = fiber.sigma_plus_basis(n)[0]
        om2 = fp.FormFiber(x, 0.5 * x)
        if pos:
            q2 = fp.q_involution(fp.q_involution(om2, pt, star), pt, star)
            worst["q_involution"] = max(worst["q_involution"], (q2 - om2).norm())
    rep.residual_norms = worst
    rep.timings["wall_time_s"] = time.time() - t0
    if worst["reconstruction"] > 1e-10:
        rep.fail("four-way reconstruction above 1e-10")
    if worst["dims"] or worst["gram_vs_contraction"]:
        rep.fail("discrete invariants violated")
    if worst["q_involution"] > 1e-9:
        rep.fail("Q is not an involution")
    return _emit(rep, args.out)


# ---------------------------------------------------------------------------
# config-driven commands


def _require(cfg, key):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    return cfg[key]


def _cmd_fuchsian(cfg) -> int:
    rep = SolveReport(command="fuchsian", config_echo=cfg)
    t0 = time.time()
    n = int(_require(cfg, "n"))
    spec = _require(cfg, "chart")
    grids = cfg.get("grids")
    out = _outdir(cfg)
    residuals = {}
    if grids:
        for nx in grids:
            local = dict(spec)
            local["nx"] = local["ny"] = int(nx)
            ch = _build_chart(local)
            fd = sv.fuchsian_reference(n, ch)
            residuals[str(nx)] = fd.A.report["fuchsian_curvature_sup"]
        keys = sorted(int(k) for k in residuals)
        rep.residual_norms = dict(residuals)
        rep.residual_norms["ratio"] = residuals[str(keys[0])] / residuals[str(keys[1])]
    else:
        ch = _build_chart(spec)
        fd = sv.fuchsian_reference(n, ch)
        residuals["residual_sup"] = fd.A.report["fuchsian_curvature_sup"]
        residuals["c0"] = fd.c0
        rep.residual_norms = residuals
        chm.save_lieform_csv(os.path.join(out, "A.csv"), fd.A.A)
        chm.save_matrix_field_csv(os.path.join(out, "h.csv"), ch, fd.h.data)
        chm.save_scalar_csv(os.path.join(out, "g.csv"), fd.g)
    rep.timings["wall_time_s"] = time.time() - t0
    return _emit(rep, out)


def _fields_from_config(cfg):
    n = int(_require(cfg, "n"))
    ch = _build_chart(_require(cfg, "chart"))
    mu = _build_component_family(ch, n, cfg.get("beltrami"), chm.BeltramiField)
    t = _build_component_family(ch, n, cfg.get("covector"), chm.CovectorField)
    return n, ch, mu, t


def _identity_h(ch, n):
    eye = np.broadcast_to(np.eye(n), (ch.nx, ch.ny, n, n)).copy()
    return cn.hermitian_structure(ch, eye, normalize=False)


def _cmd_fillin(cfg) -> int:
    rep = SolveReport(command="fillin", config_echo=cfg)
    t0 = time.time()
    out = _outdir(cfg)
    n, ch, mu, _ = _fields_from_config(cfg)
    hermitian = cfg.get("hermitian", "identity")
    if hermitian == "fuchsian":
        fd = sv.fuchsian_reference(n, ch)
        phi, h = fd.Phi, fd.h
        boundary = "rect"
    else:
        phi = hf.fock_form(ch, mu)
        h = _identity_h(ch, n)
        boundary = "auto"
    conn = cn.fill_in(phi, h=h, boundary=boundary)
    chm.save_lieform_csv(os.path.join(out, "A.csv"), conn.A)
    rep.residual_norms = {k: v for k, v in conn.report.items() if isinstance(v, float)}
    for msg in conn.report.get("warnings", []):
        rep.warn(msg)
    rep.timings["wall_time_s"] = time.time() - t0
    return _emit(rep, out)


def _cmd_solve(cfg) -> int:
    rep = SolveReport(command="solve", config_echo=cfg)
    t0 = time.time()
    out = _outdir(cfg)
    n, ch, mu, _ = _fields_from_config(cfg)
    ncfg = _newton_config(cfg.get("solver"))
    fd = sv.fuchsian_reference(n, ch, c0=cfg.get("c0"))
    eta, srep = sv.newton_continuation(fd, mu, ncfg)
    phi_final = sv.conjugate_field(hf.fock_form(ch, mu), eta)
    conn = cn.fill_in(phi_final, h=fd.h, boundary="rect")
    chm.save_lieform_csv(os.path.join(out, "eta.csv"), eta)
    chm.save_lieform_csv(os.path.join(out, "phi.csv"), phi_final)
    chm.save_lieform_csv(os.path.join(out, "A.csv"), conn.A)
    rep.residual_norms = {
        "final_residual": srep["final_residual"],
        "curvature_sup": srep["curvature_sup"],
        "curvature_floor": srep["curvature_floor"],
        "eta_sup": srep["eta_sup"],
    }
    rep.iteration_traces = {"per_step": srep["per_step"]}
    rep.timings["wall_time_s"] = time.time() - t0
    rep.timings["newton_wall_time_s"] = srep["wall_time_s"]
    if srep["final_residual"] > ncfg.newton_tol:
        rep.fail(f"final residual {srep['final_residual']:.3e} above newton_tol")
    return _emit(rep, out)


def _cmd_muholo(cfg) -> int:
    rep = SolveReport(command="muholo", config_echo=cfg)
    t0 = time.time()
    out = _outdir(cfg)
    n, ch, mu, t = _fields_from_config(cfg)
    phi = hf.fock_form(ch, mu)
    h = _identity_h(ch, n)
    conn = cn.inject_covector(phi, h, t)
    tensor = hf.mu_holo_residual(mu, t)
    gauge = hf.gauge_muholo_residual(phi, conn)
    mask = ch.mask()
    norms = {}
    diff_sup = 0.0
    for k in range(2, n + 1):
        norms[f"tensor_{k}"] = float(np.abs(tensor[k][mask]).max())
        norms[f"gauge_{k}"] = float(np.abs(gauge[k][mask]).max())
        d = float(np.abs((tensor[k] - gauge[k])[mask]).max())
        norms[f"difference_{k}"] = d
        diff_sup = max(diff_sup, d)
    norms["equivalence_sup"] = diff_sup
    rep.residual_norms = norms
    for k in range(2, n + 1):
        chm.save_scalar_csv(os.path.join(out, f"tensor_residual_{k}.csv"), chm.ScalarField(ch, tensor[k]))
        chm.save_scalar_csv(os.path.join(out, f"gauge_residual_{k}.csv"), chm.ScalarField(ch, gauge[k]))
    rep.timings["wall_time_s"] = time.time() - t0
    floor = 100.0 * ch.hx**2
    if diff_sup > floor:
        rep.warn(f"gauge/tensor residual difference {diff_sup:.3e} above {floor:.1e}")
    return _emit(rep, out)


def _cmd_flow(cfg) -> int:
    rep = SolveReport(command="flow", config_echo=cfg)
    t0 = time.time()
    out = _outdir(cfg)
    n, ch, mu, t = _fields_from_config(cfg)
    ham_spec = _require(cfg, "hamiltonian")
    eps = float(ham_spec.get("eps", 1e-3))
    steps = int(ham_spec.get("steps", 1))
    ham = hf.HamiltonianTerm(int(_require(ham_spec, "ell")), chm.ScalarField(ch, _build_scalar(ch, _require(ham_spec, "w"))))
    phi = hf.fock_form(ch, mu)
    h = _identity_h(ch, n)
    conn = cn.inject_covector(phi, h, t)
    a_form = conn.A
    mask = ch.mask()

    def table(phi_c, a_c):
        psi = cn.hermitian_adjoint_field(phi_c, h)
        curv = cn.curvature_total(a_c, phi_c, psi)
        mu_c = hf.beltrami_extract(phi_c)
        t_c = cn.covector_extract(a_c, phi_c)
        resid = hf.mu_holo_residual(mu_c, t_c)
        return {
            "curvature_sup": float(np.sqrt(np.sum(np.abs(curv.d0) ** 2, axis=(-2, -1)))[mask].max()),
            "mu_holo_sup": max(float(np.abs(resid[k][mask]).max()) for k in range(2, n + 1)),
        }

    import warnings as _warnings

    before = table(phi, a_form)
    traj = [before]
    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        for _ in range(steps):
            phi, a_form = hf.flow_step(phi, a_form, h, ham, eps)
    for w in caught:
        rep.messages.append(f"step drift: {w.message}")
    after = table(phi, a_form)
    traj.append(after)
    rep.residual_norms = {"before": before, "after": after}
    rep.iteration_traces = {"eps": eps, "steps": steps}
    rep.timings["wall_time_s"] = time.time() - t0
    return _emit(rep, out)


# ---------------------------------------------------------------------------


def run(argv) -> int:
    argv = list(argv)
    if not argv:
        sys.stderr.write(f"usage: fockbench <{'|'.join(_SUBCOMMANDS)}> ...\n")
        return EXIT_USAGE
    cmd, rest = argv[0], argv[1:]
    if cmd not in _SUBCOMMANDS:
        sys.stderr.write(f"unknown subcommand {cmd!r}; expected one of {', '.join(_SUBCOMMANDS)}\n")
        return EXIT_USAGE
    try:
        if cmd in ("fiber-verify", "point-verify"):
            p = argparse.ArgumentParser(prog=f"fockbench {cmd}", exit_on_error=False)
            p.add_argument("--n", type=int, required=True)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--samples", type=int, default=50)
            p.add_argument("--out", default=None)
            try:
                args = p.parse_args(rest)
            except (argparse.ArgumentError, SystemExit) as exc:
                sys.stderr.write(f"bad arguments: {exc}\n")
                return EXIT_CONFIG
            if args.out is not None:
                os.makedirs(args.out, exist_ok=True)
            if args.n < 2:
                sys.stderr.write("--n must be >= 2\n")
                return EXIT_CONFIG
            return _cmd_fiber_verify(args) if cmd == "fiber-verify" else _cmd_point_verify(args)
        p = argparse.ArgumentParser(prog=f"fockbench {cmd}", exit_on_error=False)
        p.add_argument("--config", required=True)
        try:
            args = p.parse_args(rest)
        except (argparse.ArgumentError, SystemExit) as exc:
            sys.stderr.write(f"bad arguments: {exc}\n")
            return EXIT_CONFIG
        cfg = _load_config(args.config)
        handler = {
            "fillin": _cmd_fillin,
            "fuchsian": _cmd_fuchsian,
            "solve": _cmd_solve,
            "muholo": _cmd_muholo,
            "flow": _cmd_flow,
        }[cmd]
        return handler(cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return EXIT_IO
    except Exception as exc:  # solver-level failures surface as status "fail"
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_FAIL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
