"""Experiment runner: ``vplap run <config>`` and ``vplap describe <config>``.

Exit codes: 0 all requested certificates pass, 1 config error, 2 solver
divergence, 3 certificate failure (reports are still written).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, diagnostics as dg, plotting, symmetry
from .config import ConfigError, ExperimentConfig, load_config, parse_resolutions, radial_source
from .geometry import ball, build_grid
from .report import write_csv, write_json
from .solver import radial_solution, solve

log = logging.getLogger("vplap")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CERTIFICATE = 0, 1, 2, 3
ENV_OUT = "VPLAP_OUT"
DEFAULT_OUT = "vplap_out"


@dataclass
class Certificate:
    name: str
    status: str
    value: float = float("nan")
    detail: str = ""

    def row(self):
        return [self.name, self.status, self.value, self.detail]


@dataclass
class RunResult:
    exit_code: int
    out: Path
    certificates: list = field(default_factory=list)
    ladders: dict = field(default_factory=dict)


# -- describe ----------------------------------------------------------------------

def describe_lines(cfg: ExperimentConfig) -> list:
    spec = cfg.problem
    p, n = spec.p, spec.n
    raw = cfg.problem_raw
    lines = [
        f"problem: domain={raw['domain']} n={n} N={spec.N} p={p:g}",
        f"  f = {raw['f']}  (depends on u: {'yes' if spec.depends_on_u else 'no'})",
        f"  boundary = {raw['boundary']}",
        f"  bounding box lower={raw['lower']} upper={raw['upper']} symmetric in x1: {raw['symmetric_x1']}",
        f"resolutions: {', '.join(str(r) for r in cfg.resolutions)}; seed {cfg.seed}",
        "eps schedule: " + ", ".join(f"{e:.4g}" for e in cfg.solver.schedule()),
        f"  stage tol {cfg.solver.stage_tol:g}, final tol {cfg.solver.tol:g}, max Newton steps {cfg.solver.max_iter}",
    ]
    thr = dg.sigma_threshold(p)
    lines.append("admissible ranges for this p:")
    lines.append(f"  alpha: {'0 <= alpha < p-1 = %g' % (p - 1) if p <= 2 else '0 <= alpha < 1'}")
    lines.append(f"  gamma: {'gamma = 0 (n = 2)' if n == 2 else 'gamma < n-2 = %g' % (n - 2)}")
    if thr > 0:
        lines.append(f"  sigma: admissible sigma < {thr:g}")
    else:
        lines.append(f"  sigma: threshold {thr:g} <= 0, no admissible positive sigma")
    lines.append("applicability:")
    lines.append(f"  second-order and inverse-gradient estimates: p > 1 {'holds' if p > 1 else 'fails'}")
    lines.append(f"  stress W^(1,2) bound: needs p > 3/2 ({'holds' if p > 1.5 else 'fails'})")
    lines.append("  symmetry certificate: needs a domain symmetric in x1 "
                 f"({'yes' if spec.domain.symmetric_x1 else 'no'}); f hypotheses are sampled at run time")
    if cfg.oracle == "radial":
        lines.append(f"oracle: radial formula, max error <= {cfg.oracle_tol:g} at resolutions >= "
                     f"{cfg.oracle_min_resolution}, strictly decreasing")
    for req in cfg.diagnostics:
        lines.append(f"diagnostic {req.name}: op={req.op} expect={req.expect}")
        flags = dg.admissibility(req.params, p, n)
        for key in ("alpha", "gamma", "sigma", "s"):
            if key not in flags:
                continue
            if key in ("alpha",) and req.op != "weighted_d2":
                continue
            if key == "sigma" and req.op != "inverse_gradient":
                continue
            fl = flags[key]
            mark = "ok" if fl["admissible"] else "WARNING"
            lines.append(f"  {key} = {getattr(req.params, key):g}: {mark} ({fl['rule']})")
    if cfg.sweep.enabled:
        lines.append(f"sweep: tol {cfg.sweep.tol:g}, defect <= {cfg.sweep.symmetry_constant:g} h, "
                     f"thin cap {cfg.sweep.width_cells} cells: {'on' if cfg.sweep.thin_cap else 'off'}")
    return lines


# -- run -----------------------------------------------------------------------------

def _out_dir(args_out, cfg: ExperimentConfig) -> Path:
    return Path(args_out or cfg.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def _diagnostic_value(req, u, spec, eps, cfg):
    """Value of one diagnostic at one resolution; a list when several poles are given."""
    g = u.grid
    prm = req.params
    if req.eta_crit_h is not None:
        prm = replace(prm, eta_crit=req.eta_crit_h * g.h)
    if req.op == "weighted_d2":
        return [dg.weighted_d2_integral(u, spec.p, eps, _with_pole(prm, y)) for y in req.poles]
    if req.op == "inverse_gradient":
        return [dg.inverse_gradient_integral(u, eps, _with_pole(prm, y), spec) for y in req.poles]
    if req.op == "critical_set":
        if prm.eta_crit is None:
            raise ConfigError(f"diagnostic {req.name}.eta_crit", "critical_set needs eta_crit")
        return dg.critical_set_measure(u, prm.eta_crit, prm.margin)
    if req.op == "stress_w12":
        eta = req.eta if req.eta is not None else spec.p - 1
        return dg.stress_w12_norm(u, eps, eta, prm.margin, spec.p)
    if req.op == "poincare":
        return dg.poincare_constant(u, spec.p, ball(req.subregion[1], g.n), eps).constant
    raise AssertionError(req.op)


def _with_pole(prm, y):
    return replace(prm, pole=tuple(y))


def run_experiment(cfg: ExperimentConfig, out: Path, quiet: bool = False) -> RunResult:
    spec = cfg.problem
    out.mkdir(parents=True, exist_ok=True)
    say = (lambda *a: None) if quiet else (lambda *a: print(*a, flush=True))
    meta = {"config_hash": cfg.digest, "python": platform.python_version(), "numpy": np.__version__,
            "version": __version__, "started": time.strftime("%Y-%m-%dT%H:%M:%S"), "wall_time": {}}
    certs: list = []
    ladders: dict = {}
    diag_reports = {}
    hs = {}
    diverged = False

    hyp = None
    if cfg.sweep.enabled:
        hyp = symmetry.check_hypotheses(spec, samples=cfg.sweep.samples, seed=cfg.seed)
        write_json(out / "hypotheses.json", {"config_hash": cfg.digest, **hyp.to_dict()})

    oracle_err = []
    sweep_data = []
    fields = {}
    eps = cfg.solver.eps_floor
    for res in cfg.resolutions:
        grid = build_grid(spec.domain, res)
        hs[res] = grid.h
        rep = solve(spec, cfg.solver, res, grid=grid)
        meta["wall_time"][f"solve_r{res}"] = rep.wall_time
        sdict = {"config_hash": cfg.digest, "resolution": res, "h": grid.h, **rep.to_dict()}
        if cfg.oracle == "radial":
            exact = radial_solution(grid, spec.p, radial_source(spec), spec.domain.upper[0])
            err = float(np.max(np.abs(rep.field.values - exact)[:, grid.interior]))
            sdict["oracle_max_error"] = err
            oracle_err.append(err)
        write_json(out / f"solver_r{res}.json", sdict)
        say(f"r={res:4d} h={grid.h:.4g} status={rep.status} residual={rep.residual:.3e}"
            + (f" oracle_err={oracle_err[-1]:.3e}" if cfg.oracle == "radial" else ""))
        if not rep.converged:
            diverged = True
            say(f"solver did not converge at resolution {res} ({rep.status})")
            break
        u = rep.field
        fields[res] = u

        for req in cfg.diagnostics:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                val = _diagnostic_value(req, u, spec, eps, cfg)
            entry = diag_reports.setdefault(req.name, {"op": req.op, "params": asdict(req.params),
                                                       "expect": req.expect, "values": {}, "warnings": []})
            entry["values"][str(res)] = val
            for w in caught:
                msg = str(w.message)
                if msg not in entry["warnings"]:
                    entry["warnings"].append(msg)

        if cfg.sweep.enabled:
            try:
                mp = symmetry.moving_plane_sweep(u, spec, tol=cfg.sweep.tol, hypotheses=hyp)
            except symmetry.AsymmetricDomainError as exc:
                certs.append(Certificate("moving_plane", "not-applicable", detail=str(exc)))
                write_json(out / f"moving_plane_r{res}.json", {"config_hash": cfg.digest, "error": str(exc)})
                continue
            mdict = {"config_hash": cfg.digest, "resolution": res, "h": grid.h, **mp.to_dict()}
            if cfg.sweep.thin_cap:
                tc = symmetry.thin_cap_check(u, spec.p, cfg.sweep.width_cells, cfg.sweep.tol)
                mdict["thin_cap"] = tc.to_dict()
            write_json(out / f"moving_plane_r{res}.json", mdict)
            write_csv(out / f"sweep_r{res}.csv", ["lambda", "violation", "sign_defect"],
                      zip(mp.lambdas, mp.violations, mp.sign_defects))
            sweep_data.append((res, grid.h, mp, mdict.get("thin_cap")))
            if cfg.figures:
                plotting.plot_sweep(mp.lambdas, mp.violations, mp.lambda_bar, mp.tol,
                                    out / "figures" / f"sweep_r{res}.png")
        if cfg.figures:
            plotting.plot_field(grid, u.values, out / "figures" / f"field_r{res}.png")

    done = [r for r in cfg.resolutions if r in fields]

    if cfg.oracle == "radial" and oracle_err:
        ladders["oracle_max_error"] = (done[:len(oracle_err)], oracle_err)
        checked = [e for r, e in zip(cfg.resolutions, oracle_err) if r >= cfg.oracle_min_resolution]
        decreasing = all(b < a for a, b in zip(oracle_err, oracle_err[1:]))
        ok = bool(checked) and max(checked) <= cfg.oracle_tol and decreasing and not diverged
        certs.append(Certificate("radial_oracle", "pass" if ok else "fail", oracle_err[-1],
                                 f"tol {cfg.oracle_tol:g} at r >= {cfg.oracle_min_resolution}; "
                                 f"strictly decreasing: {decreasing}"))

    for req in cfg.diagnostics:
        entry = diag_reports.get(req.name)
        if entry is None:
            continue
        vals = [entry["values"][str(r)] for r in done]
        ladder_vals = [max(v) if isinstance(v, list) else v for v in vals]
        verdict = dg.classify_trend(done, ladder_vals)
        entry["trend"] = verdict.to_dict()
        ladders[req.name] = (done, ladder_vals)
        if req.expect in ("bounded", "growing"):
            ok = verdict.classification == req.expect
            certs.append(Certificate(f"{req.name}_trend", "pass" if ok else "fail", ladder_vals[-1],
                                     f"classified {verdict.classification}, expected {req.expect}"))
        elif req.expect == "vanishing":
            bounds = [4 * math.pi * hs[r] ** 2 for r in done]
            ok = all(v <= b for v, b in zip(ladder_vals, bounds))
            certs.append(Certificate(f"{req.name}_vanishing", "pass" if ok else "fail", ladder_vals[-1],
                                     "measure <= 4 pi h^2 at every resolution"))
        if len(req.poles) > 1 and vals:
            fac = dg.uniformity_factor(vals[-1])
            entry["uniformity_factor"] = fac
            if req.max_uniformity is not None:
                ok = fac <= req.max_uniformity
                certs.append(Certificate(f"{req.name}_uniformity", "pass" if ok else "fail", fac,
                                         f"max/median over {len(req.poles)} poles <= {req.max_uniformity:g}"))
        if cfg.figures:
            plotting.plot_ladder(req.name, done, ladder_vals, out / "figures" / f"ladder_{req.name}.png",
                                 verdict.classification)

    if sweep_data:
        C = cfg.sweep.symmetry_constant
        floor = cfg.solver.tol
        h_list = [h for _, h, _, _ in sweep_data]
        defects = [mp.symmetry_defect for _, _, mp, _ in sweep_data]
        ladders["symmetry_defect"] = ([r for r, *_ in sweep_data], defects)
        order = symmetry.fitted_order(h_list, defects, floor)
        bound_ok = all(d <= C * h for d, h in zip(defects, h_list))
        order_ok = order >= cfg.sweep.min_order
        note = "" if math.isfinite(order) else "; defects at or below the solver tolerance, order not resolvable"
        certs.append(Certificate("symmetry_defect", "pass" if bound_ok and order_ok else "fail", defects[-1],
                                 f"defect <= {C:g} h at every resolution; fitted order {order:.3g} "
                                 f">= {cfg.sweep.min_order:g}{note}"))
        lam_ok = all(abs(mp.lambda_bar) <= mp.step + 1e-12 for _, _, mp, _ in sweep_data)
        certs.append(Certificate("lambda_bar", "pass" if lam_ok else "fail", sweep_data[-1][2].lambda_bar,
                                 "within one sweep step of 0 at every resolution"))
        mono = max(mp.monotonicity_defect for _, _, mp, _ in sweep_data)
        certs.append(Certificate("monotonicity", "pass" if mono <= cfg.sweep.tol else "fail", mono,
                                 "nondecreasing in x1 on x1 < 0"))
        if cfg.sweep.thin_cap:
            tcs = [tc for *_, tc in sweep_data]
            ok = all(tc["passed"] for tc in tcs)
            certs.append(Certificate("thin_cap_comparison", "pass" if ok else "fail",
                                     max(tc["violation"] for tc in tcs), f"violation <= {cfg.sweep.tol:g}"))
        caveats = sweep_data[-1][2].caveats
        if caveats:
            certs.append(Certificate("hypotheses", "not-applicable", detail="; ".join(caveats)))
        else:
            certs.append(Certificate("hypotheses", "pass", detail="sampled structural conditions on f hold"))
        if cfg.figures:
            plotting.plot_ladder("symmetry_defect", [r for r, *_ in sweep_data], defects,
                                 out / "figures" / "ladder_symmetry_defect.png")

    if diverged:
        certs.append(Certificate("solver", "fail", detail="solver did not converge"))

    write_json(out / "diagnostics.json", {
        "config_hash": cfg.digest, "eps_floor": eps, "resolutions": done,
        "h": {str(r): hs[r] for r in done}, "diagnostics": diag_reports,
    })
    write_csv(out / "summary.csv", ["certificate", "status", "value", "detail"], [c.row() for c in certs])
    rows = []
    for name, (rs, vs) in ladders.items():
        for r, v in zip(rs, vs):
            rows.append([name, r, hs[r], v])
    write_csv(out / "ladders.csv", ["quantity", "resolution", "h", "value"], rows)
    if cfg.figures and "oracle_max_error" in ladders:
        rs, vs = ladders["oracle_max_error"]
        plotting.plot_ladder("oracle_max_error", rs, vs, out / "figures" / "ladder_oracle_max_error.png")
    write_json(out / "metadata.json", meta)

    for c in certs:
        say(f"[{c.status.upper():>14}] {c.name}: {c.value if isinstance(c.value, str) else f'{c.value:.4g}'}"
            f"  {c.detail}")
    if diverged:
        code = EXIT_DIVERGED
    elif any(c.status == "fail" for c in certs):
        code = EXIT_CERTIFICATE
    else:
        code = EXIT_OK
    return RunResult(code, out, certs, ladders)


# -- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vplap", description="Vectorial p-Laplace solver and verification harness")
    ap.add_argument("--out", help=f"output directory (default: ${ENV_OUT} or ./{DEFAULT_OUT})")
    ap.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    ap.add_argument("--resolutions", help="comma-separated resolution ladder, e.g. 17,33,65")
    ap.add_argument("--quiet", action="store_true", help="only report errors")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "solve and write reports"), ("describe", "print the resolved plan")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {"seed": args.seed, "out": args.out}
        if args.resolutions:
            overrides["resolutions"] = parse_resolutions(args.resolutions, "--resolutions")
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "describe":
        print("\n".join(describe_lines(cfg)))
        return EXIT_OK
    try:
        result = run_experiment(cfg, _out_dir(args.out, cfg), quiet=args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
