"""Command-line experiment runner.

    doublephase <subcommand> [--config PATH] [--out DIR] [--seed U64]
                [--threads INT] [--regime {auto,supercritical,subcritical}]

Every run writes manifest.json and summary.csv (plus snapshot CSVs for
``solve``) into a fresh timestamped directory under --out. Exit status:
0 when every requested verification passes with the stored constants,
1 when one fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import config as cfgmod
from . import degiorgi as dg
from . import io, kernels, lemmas
from .geometry import Grid
from .kernel_energy import indicator_tail_exact, tail
from .stepper import StepFailure

log = logging.getLogger("doublephase")

SUBCOMMANDS = {
    "solve": "run the minimizing-movements solver and write snapshots",
    "verify-caccioppoli": "fit one Caccioppoli constant over random tuples",
    "verify-recursion": "check the Y_j recursion exponent",
    "verify-bound": "assemble the local sup bound and report its margin",
    "tail": "compare a discrete tail with its closed form",
    "sobolev-fit": "fit the parabolic Sobolev constant on random fields",
    "lemmas-selftest": "run the iteration-lemma and elementary-inequality checks",
    "calibrate-constants": "recompute the stored constants on the reference suite",
}
EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class Outcome:
    """What a subcommand hands back: verdict, report, summary rows, failures."""

    def __init__(self, passed=True, report=None, rows=None, failures=None, outputs=None):
        self.passed = passed
        self.report = report or {}
        self.rows = rows or []
        self.failures = failures or []
        self.outputs = outputs or []

    def require(self, ok, what, margin):
        if not ok:
            self.passed = False
            self.failures.append((what, margin))


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output root (default: runs)")
    common.add_argument("--seed", type=_u64, default=0, help="seed for randomised checks")
    common.add_argument("--threads", type=_positive, default=1, help="kernel threads")
    common.add_argument("--regime", choices=("auto", "supercritical", "subcritical"), default="auto")
    common.add_argument("--constants", type=Path, help="constants file (default: packaged)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="doublephase", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, text in SUBCOMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "calibrate-constants":
            sp.add_argument("--install", action="store_true",
                            help="also overwrite the packaged constants file")
    return p


def _run_dir(root, command):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-{stamp}"
    d, i = base, 0
    while d.exists():
        i += 1
        d = base.with_name(f"{base.name}-{i}")
    d.mkdir(parents=True)
    return d


def _warn_truncation(grid, u0):
    edge = np.zeros(grid.n_cells, dtype=bool)
    lim = grid.half_width - grid.h
    edge |= np.any(np.abs(grid.centers) > lim, axis=1)
    if np.any(u0[edge] != 0.0):
        log.warning("u0 does not vanish on the outermost cell layer; "
                    "the exterior beyond the box is treated as zero")


def _solve(cfg, **kw):
    grid, _, _, u0 = cfgmod.build_problem(cfg, **kw)
    _warn_truncation(grid, u0)
    return cal.run_configured(cfg, **kw)


def _regime(cfg, args):
    exp = cfgmod.build_exponents(cfg)
    if args.regime != "auto" and args.regime != exp.regime:
        raise UsageError(f"--regime {args.regime} contradicts the configured exponents "
                         f"(p={exp.p}, N={exp.N} is {exp.regime})")
    return exp.regime


# --- subcommands ------------------------------------------------------------

def cmd_solve(cfg, args, out, consts):
    ex = _solve(cfg)
    tr = ex.traj
    files = []
    width = max(4, len(str(tr.steps)))
    for n, row in enumerate(tr.values):
        name = f"snapshot_{n:0{width}d}.csv"
        io.write_snapshot_csv(out / name, ex.grid, row, time=n * ex.grid.dt)
        files.append(name)
    rows = [{"step": n, "time": n * ex.grid.dt, "energy": e} for n, e in enumerate(tr.energies)]
    report = {
        "header": io.snapshot_header(ex.grid, ex.exp, ex.coef),
        "energies": list(tr.energies),
        "diagnostics": [d.__dict__ for d in tr.diagnostics],
        "dissipation_slack": tr.dissipation_slack(),
        "range_violation": tr.range_violation(),
        "data": ex.data.describe(),
    }
    return Outcome(True, report, rows, outputs=files)


def cmd_verify_caccioppoli(cfg, args, out, consts):
    c = cfg["caccioppoli"]
    ex = _solve(cfg)
    rng = np.random.default_rng(args.seed)
    tuples = [dg.random_caccioppoli_tuple(rng, ex.grid, R_range=(c["R_min"], c["R_max"]))
              for _ in range(c["tuples"])]
    reps = [dg.caccioppoli_from_tuple(ex.traj, ex.exp, ex.coef, t) for t in tuples]
    cmax = max(r.C_fit for r in reps)
    oc = Outcome(report={"C_fit_max": cmax, "tuples": [r.to_dict() for r in reps]})
    oc.rows = [dict(tuple=i, grid_n=ex.grid.n, **{k: v for k, v in r.to_dict().items()
                                                   if k != "geometry"})
               for i, r in enumerate(reps)]
    oc.require(all(math.isfinite(r.C_fit) for r in reps), "LHS <= C_fit * sum(RHS) with finite C_fit", cmax)
    if c["refine"]:
        fine = _solve(cfg, n=2 * cfg["grid"]["n"])
        reps2 = [dg.caccioppoli_from_tuple(fine.traj, fine.exp, fine.coef, t) for t in tuples]
        cmax2 = max(r.C_fit for r in reps2)
        change = abs(cmax2 - cmax) / cmax if cmax > 0 else math.inf
        oc.report.update(C_fit_max_refined=cmax2, relative_change=change)
        oc.rows += [dict(tuple=i, grid_n=fine.grid.n, **{k: v for k, v in r.to_dict().items()
                                                        if k != "geometry"})
                    for i, r in enumerate(reps2)]
        oc.require(change <= c["max_change"], f"|C_fit,max(2n)/C_fit,max(n) - 1| <= {c['max_change']}",
                   c["max_change"] - change)
    return oc


def cmd_verify_recursion(cfg, args, out, consts):
    rc = cfg["recursion"]
    ex = _solve(cfg)
    exp = ex.exp
    sch = cal.recursion_schedule(ex)
    delta = rc["delta"]
    ys = dg.y_sequence(ex.traj, exp, sch, delta, floor=rc["min_y"])
    target = 1 + exp.s * delta / (exp.N * exp.kappa) - rc["slope_margin"]
    dom = [dg.truncation_domination(ex.traj, sch, exp.q, tau, j)
           for j in range(sch.J) for tau in (0.0, 1.0, 2.0)]
    worst = max(d["max_violation"] for d in dom)
    adm = cal.recursion_schedule(ex, max(max(dg.admissible_level(ex.traj, exp, sch)), 1e-300))
    rec = [dg.recursive_rhs(ex.traj, exp, ex.coef, adm, delta, j) for j in range(adm.J)]
    report = {
        "schedule": sch.describe(), "y_sequence": ys.to_dict(), "target_slope": target,
        "truncation_domination": dom, "recursive_estimate": [r.__dict__ | {"C_fit": r.C_fit} for r in rec],
        "admissible_k_tilde": adm.k_tilde,
    }
    rows = [{"j": j, "Y": float(y), "k_j": float(sch.levels[j]), "R_j": float(sch.radii[j]),
             "theta_j": float(sch.heights[j])} for j, y in enumerate(ys.Y)]
    oc = Outcome(True, report, rows)
    oc.require(len(ys.used) >= 2, "at least two pairs with Y_j above the floor", len(ys.used) - 2)
    oc.require(len(ys.used) >= 2 and ys.slope_model >= target,
               f"recursion slope >= {target:.4f}", ys.slope_model - target)
    oc.require(worst <= 1e-12, "truncation domination w~_j^tau <= C 2^{(q-tau)j} k~^{tau-q} w_j^q",
               -worst)
    return oc


def _bound_row(tag, rep):
    return {"case": tag} | rep.summary_row()


def cmd_verify_bound(cfg, args, out, consts):
    regime = _regime(cfg, args)
    b = cfg["bound"]
    ex = _solve(cfg)
    x0 = cfgmod.bound_point(cfg, ex.grid)
    exp = ex.exp
    oc = Outcome()
    if abs(exp.q - exp.p_star) <= 1e-12 * exp.p_star:
        adm = dg.admissible_level(ex.traj, exp, cal.recursion_schedule(ex, 1.0))
        k0 = b["k_tilde"] or max(max(adm), 1e-12)
        rec = dg.limit_case_check(ex.traj, exp, k0, b["R"], x0, b["t0"], b["sigma"], consts["C_rec"])
        oc.report = {"regime": "limit", "limit_case": rec.to_dict()}
        oc.rows = [{"case": "limit", "k_tilde": k, "Y0": y, "threshold": rec.threshold}
                   for k, y in rec.sweep]
        oc.require(rec.found, "doubling sweep finds a finite k~ with Y_0 <= threshold", -math.inf)
        return oc
    cases = [("base", ex)]
    if regime == "supercritical" and b["perturb_amplitude"]:
        amp = cfg["data"]["amplitude"] * b["perturb_amplitude"]
        cases.append((f"amplitude x{b['perturb_amplitude']:g}", _solve(cfg, amplitude=amp)))
    reports = {}
    for tag, e in cases:
        if regime == "supercritical":
            rep = dg.supercritical_bound(e.traj, exp, x0, b["t0"], b["R"], b["sigma"], b["delta"],
                                         consts["C_cal_supercritical"], k_tilde=b["k_tilde"])
            oc.require(rep.admissible, f"[{tag}] k~ satisfies the tail lower bounds", rep.k_tilde)
        else:
            seq = None
            if b["mode"] == "H2":
                amp = cfg["data"]["amplitude"]
                seq = [_solve(cfg, clip=amp * f).traj for f in (0.25, 0.5, 1.0)]
            rep = dg.subcritical_bound(e.traj, exp, x0, b["t0"], b["R"], b["r"],
                                       consts["C_cal_subcritical"], b["mode"], sequence=seq)
        reports[tag] = rep.to_dict()
        oc.rows.append(_bound_row(tag, rep))
        oc.require(rep.margin >= 0, f"[{tag}] ess-sup <= bound ({regime})", rep.margin)
    oc.report = {"regime": regime, "reports": reports}
    return oc


def cmd_tail(cfg, args, out, consts):
    t = cfg["tail"]
    g = Grid.build(1, t["half_width"], t["n"], 0.5 * t["half_width"], 1.0, 0)
    val = tail(np.ones(g.n_cells), g, t["m"], t["s"], 0.0, t["R"])
    exact = indicator_tail_exact(t["R"], t["half_width"], t["m"], t["s"])
    err = abs(val / exact - 1)
    oc = Outcome(report={"discrete": val, "exact": exact, "relative_error": err})
    oc.rows = [{"n": t["n"], "R": t["R"], "m": t["m"], "s": t["s"], "discrete": val,
                "exact": exact, "relative_error": err}]
    oc.require(err <= t["rtol"], f"|tail / exact - 1| <= {t['rtol']}", t["rtol"] - err)
    return oc


def cmd_sobolev_fit(cfg, args, out, consts):
    sc = cfg["sobolev"]
    kw = dict(seed=args.seed, fields=sc["fields"], dim=sc["dim"], s=sc["s"], p=sc["p"],
              radius=sc["radius"])
    r1 = lemmas.sobolev_fit(sc["n"], **kw)
    r2 = lemmas.sobolev_fit(2 * sc["n"], **kw)
    c1, c2 = float(r1.max()), float(r2.max())
    change = abs(c2 / c1 - 1)
    oc = Outcome(report={"C_fit": c1, "C_fit_refined": c2, "relative_change": change,
                         "ratios": r1.tolist(), "ratios_refined": r2.tolist()})
    oc.rows = [{"field": i, "ratio_n": a, "ratio_2n": b} for i, (a, b) in enumerate(zip(r1, r2))]
    oc.require(change <= sc["max_change"], f"|C(2n)/C(n) - 1| <= {sc['max_change']}",
               sc["max_change"] - change)
    return oc


def cmd_lemmas_selftest(cfg, args, out, consts):
    rows = lemmas.selftest(seed=args.seed)
    oc = Outcome(report={"checks": [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in rows]})
    oc.rows = [{"check": n, "passed": bool(ok), "detail": d} for n, ok, d in rows]
    for n, ok, d in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {n}  ({d})")
        oc.require(ok, n, d)
    return oc


def cmd_calibrate_constants(cfg, args, out, consts):
    doc = cal.calibrate(progress=log.info)
    written = [io.write_json(out / "constants.json", doc).name]
    if args.install:
        io.write_json(cal.packaged_constants_path(), doc)
        written.append(str(cal.packaged_constants_path()))
    rows = [{"constant": k, "needed": doc["needed"][k], "stored": v} for k, v in doc["constants"].items()]
    return Outcome(True, doc, rows, outputs=written)


HANDLERS = {
    "solve": cmd_solve,
    "verify-caccioppoli": cmd_verify_caccioppoli,
    "verify-recursion": cmd_verify_recursion,
    "verify-bound": cmd_verify_bound,
    "tail": cmd_tail,
    "sobolev-fit": cmd_sobolev_fit,
    "lemmas-selftest": cmd_lemmas_selftest,
    "calibrate-constants": cmd_calibrate_constants,
}


def run(argv=None):
    """Parse arguments, execute one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_PASS if err.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load_config(args.config, args.regime)
        consts = cal.load_constants(args.constants)
    except (cfgmod.ConfigError, ValueError, OSError) as err:
        print(f"doublephase: configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    kernels.set_threads(args.threads)
    out = _run_dir(args.out, args.command)
    try:
        oc = HANDLERS[args.command](cfg, args, out, consts)
    except (cfgmod.ConfigError, UsageError) as err:
        print(f"doublephase: {err}", file=sys.stderr)
        return EXIT_USAGE
    except StepFailure as err:
        oc = Outcome(False, {"solver_failure": str(err)},
                     failures=[("implicit step converges", err.diagnostics.residual)])
    except ValueError as err:
        # violated preconditions of a check (cylinder, delta, levels, ...)
        print(f"doublephase: invalid setup: {err}", file=sys.stderr)
        return EXIT_USAGE
    manifest = {
        "subcommand": args.command,
        "flags": {"config": args.config, "out": args.out, "seed": args.seed,
                  "threads": args.threads, "regime": args.regime,
                  "constants": args.constants or cal.packaged_constants_path()},
        "config": cfg,
        "constants": consts,
        "backend": kernels.BACKEND,
        "passed": oc.passed,
        "failures": [{"inequality": w, "margin": m} for w, m in oc.failures],
        "report": oc.report,
        "outputs": oc.outputs + ["summary.csv"],
    }
    io.write_json(out / "manifest.json", manifest)
    io.write_summary_csv(out / "summary.csv", oc.rows)
    for what, margin in oc.failures:
        print(f"FAIL {args.command}: {what} (margin {margin})", file=sys.stderr)
    print(f"{args.command}: {'pass' if oc.passed else 'FAIL'} -> {out}")
    return EXIT_PASS if oc.passed else EXIT_FAIL


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
