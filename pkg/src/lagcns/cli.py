"""``lagcns`` command line: one subcommand per study, one YAML config each.

Exit codes: 0 success, 1 study check failed, 2 configuration error,
3 degenerate flow map, 4 solver divergence / non-contraction, 5 small-data
regime exited.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .errors import ConfigError, LagcnsError, SmallnessExitError
from .fields import Field
from .fixpoint import (
    decay_quantity,
    measure_contraction,
    solve_global,
    solve_local,
)
from .report import Reporter, fmt, parallel_map
from .transformed import rhs_local
from .verification import mms_study, verify_transform

RATIO_BAND = (3.0, 5.0)  # 4 +- 25% under h-halving
IDENTITY_FLOW_TOL = 1e-12


def _max_ratio(distances, floor: float = 1e-12) -> float | None:
    """Largest successive distance ratio, ignoring distances at roundoff level."""
    d0 = distances[0] if distances else 0.0
    vals = [b / a for a, b in zip(distances, distances[1:]) if a > floor * max(d0, 1.0) and b > floor * max(d0, 1.0)]
    return max(vals) if vals else None


# ------------------------------------------------------------ subcommands

def cmd_solve_local(cfg: RunConfig, rep: Reporter, dump_terms: bool = False) -> int:
    grid, mat, data = cfg.grid(), cfg.material(), cfg.initial_data()
    res = solve_local(cfg.local_config(), data, grid, mat)
    rep.json("norms.json", {k: v.to_dict() for k, v in res.reports.items()})
    rep.csv("picard.csv", ["iteration", "distance", "ratio"],
            [(i + 1, d, res.distances[i] / res.distances[i - 1] if i and res.distances[i - 1] > 0 else None)
             for i, d in enumerate(res.distances)])
    steps = res.diagnostics.get("steps", [])
    rep.csv("steps.csv", ["step", "residual", "eta_min", "eta_max", "u_max"],
            [(s["step"], s["residual"], s["eta_min"], s["eta_max"], s["u_max"]) for s in steps])
    times = res.trajectory.time_grid.times
    rep.csv("mass.csv", ["t", "mass"], zip(times, res.diagnostics["mass"]))
    Field(grid, res.trajectory.rho[-1]).to_csv(rep.outdir / "rho_final.csv")
    Field(grid, res.trajectory.u[-1]).to_csv(rep.outdir / "u_final.csv")
    rep.files += ["rho_final.csv", "u_final.csv"]
    if dump_terms:
        flows = res.flows
        w = res.perturbation
        rhs = rhs_local(w.rho, w.u, grid, flows, mat, res.lift, data.rho0, res.trajectory.time_grid.dt)
        for name, arr in sorted(rhs.terms.items()):
            path = rep.outdir / "rhs_terms" / f"{name}.csv"
            path.parent.mkdir(exist_ok=True)
            Field(grid, arr[-1]).to_csv(path)
            rep.files.append(f"rhs_terms/{name}.csv")
    ne = res.diagnostics["norm_equivalence"]
    rep.line(f"window length used: {fmt(res.T)} (bisections: {res.bisections})")
    rep.line(f"fixed-point iterations: {res.iterations}, converged: {fmt(res.converged)}")
    rep.line(f"largest successive distance ratio of the iterates: {fmt(_max_ratio(res.distances))}")
    rep.line("norms (norms.json):")
    rep.line(f"  solution-space norm of the perturbation (eta, v): {fmt(res.reports['Y_perturbation'].value)}")
    rep.line(f"  regularity-class norm, reference frame: {fmt(res.reports['X_lagrangian'].value)}")
    rep.line(f"  regularity-class norm, moving frame by change of variables: {fmt(res.reports['X_eulerian'].value)}")
    rep.line(f"relative drift of the Lagrangian mass integral of rho*det(I+k): {fmt(res.diagnostics['mass_drift'])}")
    rep.line(f"accumulated sup of the velocity gradient (delta): {fmt(ne['delta'])}")
    rep.line(f"moving/reference L_q ratio range: [{fmt(ne['min_ratio'])}, {fmt(ne['max_ratio'])}] "
             f"within [{fmt(ne['lower'])}, {fmt(ne['upper'])}]: {fmt(ne['ok'])}")
    return 0


def _windows_csv(rep: Reporter, windows) -> None:
    rep.csv("windows.csv", ["window", "t0", "increment", "x", "bootstrap_C", "small_root", "iterations"],
            [(w["window"], w["t0"], w["increment"], w["x"], w["bootstrap_C"], w["small_root"], w["iterations"])
             for w in windows])


def _run_global(cfg: RunConfig, rep: Reporter):
    grid, mat, data = cfg.grid(), cfg.material(), cfg.initial_data()
    quantity = cfg["global"]["quantity"]
    try:
        return solve_global(cfg.local_config(), cfg.global_config(), data, grid, mat, quantity)
    except SmallnessExitError as exc:
        rep.json("trace.json", exc.trace)
        _windows_csv(rep, [t for t in exc.trace if "increment" in t])
        rep.line(f"small-data regime exited: {exc}")
        rep.line("norm trace written to trace.json")
        raise


def cmd_solve_global(cfg: RunConfig, rep: Reporter) -> int:
    res = _run_global(cfg, rep)
    _windows_csv(rep, res.windows)
    _decay_csv(rep, res, cfg)
    rep.json("norms.json", {"windows": res.windows, "trace": res.trace,
                            "norm_equivalence": res.diagnostics["norm_equivalence"]})
    _global_summary(rep, res)
    return 0


def _decay_csv(rep: Reporter, res, cfg: RunConfig) -> None:
    q = cfg["norms"]["q"]
    rho_star = cfg["material"]["rho_star"]
    traj = res.trajectory
    cols = ("grad_u_Lq", "eta_W1q", "dt_u_Lq")
    vals = [decay_quantity(traj, c, q, rho_star) for c in cols]
    d = res.decay
    rep.csv("decay.csv", ["t", *cols], zip(traj.time_grid.times, *vals),
            footer=[f"quantity={d.quantity}", f"gamma_fit={fmt(d.gamma_fit)}", f"residual={fmt(d.residual)}",
                    f"message={d.message}"])


def _global_summary(rep: Reporter, res) -> None:
    d = res.decay
    rep.line(f"windows completed: {len(res.windows)}")
    rep.line(f"decay quantity: {d.quantity}")
    if d.gamma_fit is None:
        rep.line(d.message)
    else:
        rep.line(f"gamma_fit (log-linear slope over the second half): {fmt(d.gamma_fit)}")
        rep.line(f"fit residual (rms in log space): {fmt(d.residual)}")
    rep.line("per-window e^{gamma t}-weighted seminorm increments of the perturbation (sigma, v): "
             + ", ".join(fmt(w["increment"]) for w in res.windows))
    if res.windows:
        last = res.windows[-1]
        rep.line(f"accumulated weighted norm x: {fmt(last['x'])}; bootstrap ratio x/(eps + x^2): "
                 f"{fmt(last['bootstrap_C'])}; small-root branch: {fmt(last['small_root'])}")
    ne = res.diagnostics["norm_equivalence"]
    rep.line(f"accumulated sup of the velocity gradient (delta): {fmt(ne['delta'])}; "
             f"moving/reference L_q ratios within bound: {fmt(ne['ok'])}")


def cmd_decay(cfg: RunConfig, rep: Reporter) -> int:
    res = _run_global(cfg, rep)
    _decay_csv(rep, res, cfg)
    _windows_csv(rep, res.windows)
    _global_summary(rep, res)
    return 0


def cmd_verify_transform(cfg: RunConfig, rep: Reporter) -> int:
    v = cfg["verify"]
    cases = [(f, d) for d in v["dims"] for f in v["flows"] if not (d == 1 and f in ("rotation", "shear"))]
    parts = parallel_map(lambda c: verify_transform((c[0],), (c[1],), tuple(v["sizes"])), cases)
    rows = [r for p in parts for r in p.rows]
    rep.csv("transform.csv", ["flow", "dim", "identity", "N", "error", "ratio"],
            [(r["flow"], r["dim"], r["identity"], r["N"], r["error"], r["ratio"]) for r in rows])
    ok = True
    for flow, d in cases:
        sub = [r for r in rows if r["flow"] == flow and r["dim"] == d]
        if flow == "identity":
            worst = max(r["error"] for r in sub)
            good = worst < IDENTITY_FLOW_TOL
            rep.line(f"{flow} d={d}: max discrepancy {fmt(worst)} (< {IDENTITY_FLOW_TOL:g}: {fmt(good)})")
        else:
            ratios = [r["ratio"] for r in sub if r["ratio"] is not None]
            good = bool(ratios) and all(RATIO_BAND[0] <= x <= RATIO_BAND[1] for x in ratios)
            span = f"{min(ratios):.3f}..{max(ratios):.3f}" if ratios else "none (needs two sizes)"
            rep.line(f"{flow} d={d}: error ratios under h-halving {span} "
                     f"(band {RATIO_BAND[0]:g}..{RATIO_BAND[1]:g}: {fmt(good)})")
        ok &= good
    if cases:
        rep.line("identities: Eulerian divergence, pressure gradient, vector Laplacian and grad-div, each "
                 "assembled on the reference grid and compared with the composed analytic value")
    return 0 if ok else 1


def cmd_contraction(cfg: RunConfig, rep: Reporter) -> int:
    grid, mat, data = cfg.grid(), cfg.material(), cfg.initial_data()
    T_list = [float(T) for T in cfg["contraction"]["T_list"]]
    lcfg = cfg.local_config()
    crep = measure_contraction(lcfg, data, grid, mat, T_list, cfg["seed"], cfg["contraction"]["pairs"],
                               map_fn=parallel_map)
    rows = []
    for r in crep.rows:
        rows += [(r["T"], x, i) for i, x in enumerate(r["ratios"])]
        rows.append((r["T"], r["kappa"], "max"))
    rep.csv("contraction.csv", ["T", "kappa", "pair"], rows)
    picard_rows, ok = [], True
    locals_ = parallel_map(lambda T: solve_local(cfg.local_config(T), data, grid, mat), T_list)
    for r, res in zip(crep.rows, locals_):
        for i, dist in enumerate(res.distances):
            ratio = dist / res.distances[i - 1] if i and res.distances[i - 1] > 0 else None
            picard_rows.append((r["T"], i + 1, dist, ratio))
        mr = _max_ratio(res.distances)
        good = mr is None or mr <= r["kappa"] + 0.1
        ok &= good
        rep.line(f"T={fmt(r['T'])}: kappa={fmt(r['kappa'])} (max ratio of solution-operator distances over "
                 f"{len(r['ratios'])} random pairs); iterate distance ratio {fmt(mr)} <= kappa+0.1: {fmt(good)}")
    rep.csv("picard.csv", ["T", "iteration", "distance", "ratio"], picard_rows)
    order = sorted(crep.rows, key=lambda r: r["T"])
    mono = all(a["kappa"] <= b["kappa"] for a, b in zip(order, order[1:]))
    small = order[0]["kappa"] < 1.0
    rep.line(f"kappa nondecreasing in T: {fmt(mono)}; kappa at smallest T below 1: {fmt(small)}")
    return 0 if (ok and mono and small) else 1


def cmd_mms(cfg: RunConfig, rep: Reporter) -> int:
    m = cfg["mms"]
    mrep = mms_study(tuple(m["dims"]), tuple(m["time_steps"]), tuple(m["space_sizes"]), m["T"], mat=cfg.material())
    rep.csv("mms.csv", ["study", "dim", "size", "error_u", "error_eta"],
            [(r["study"], r["dim"], r["size"], r["error_u"], r["error_eta"]) for r in mrep.rows])
    orows = []
    for (study, d), order in sorted(mrep.orders.items()):
        lo, hi = mrep.bands[study]
        orows.append((study, d, order, lo, hi, lo <= order <= hi))
        rep.line(f"{study} order, d={d}: {order:.3f} (band {lo:g}..{hi:g}: {fmt(lo <= order <= hi)})")
    rep.csv("orders.csv", ["study", "dim", "order", "lo", "hi", "ok"], orows)
    return 0 if mrep.ok else 1


COMMANDS = {
    "solve-local": cmd_solve_local,
    "solve-global": cmd_solve_global,
    "verify-transform": cmd_verify_transform,
    "contraction": cmd_contraction,
    "decay": cmd_decay,
    "mms": cmd_mms,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lagcns", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "solve-local":
            p.add_argument("--dump-rhs-terms", action="store_true", help="write each right-hand-side term as CSV")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.values["seed"] = args.seed
        out = args.out or cfg["output"]["dir"]
        if not Path(out).is_absolute() and not args.out:
            out = str(Path(args.config).parent / out)
        rep = Reporter(out, args.command)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    fn = COMMANDS[args.command]
    try:
        status = fn(cfg, rep, args.dump_rhs_terms) if args.command == "solve-local" else fn(cfg, rep)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        status = exc.exit_code
        rep.line(f"configuration error: {exc}")
    except LagcnsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = exc.exit_code
        rep.line(f"stopped: {exc}")
    rep.finish(status, args.config)
    return status


if __name__ == "__main__":
    sys.exit(main())
