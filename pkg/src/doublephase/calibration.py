"""Calibration of the existential constants on a fixed reference suite.

Each constant is stored as max(SAFETY * needed, floor), where ``needed``
is the smallest value for which the inequality holds on every reference
run. A floor is used when the suite never forces the constant, which is
what happens for the local-boundedness bounds: on these runs the tail
terms alone dominate the ess-sup.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import degiorgi as dg
from .stepper import CauchyDirichletData, MinimizingMovements, check_variational_inequality, interior_bump

CONSTANTS_VERSION = 1
SAFETY = 2.0
FLOORS = {
    "C_cal_supercritical": 1.0,
    "C_cal_subcritical": 1.0,
    "C_slack": 1e-3,
    "C_rec": 1e-12,
}


@dataclass
class Experiment:
    cfg: dict
    grid: object
    exp: object
    coef: object
    data: CauchyDirichletData
    traj: object


def run_configured(cfg, *, n=None, amplitude=None, clip=None):
    """Build the configured problem and solve it over the full horizon."""
    grid, exp, coef, u0 = cfgmod.build_problem(cfg, n=n, amplitude=amplitude, clip=clip)
    data = CauchyDirichletData.from_profile(grid, exp, coef, u0)
    s = cfg["solver"]
    traj = MinimizingMovements(grid, exp, coef, data, tol=s["tol"], max_iter=s["max_iter"]).solve()
    return Experiment(cfg, grid, exp, coef, data, traj)


def limit_cylinder_sup(ex):
    """ess-sup of u on Q_{sigma R, sigma theta} with theta = R^{sp}."""
    b = ex.cfg["bound"]
    x0 = cfgmod.bound_point(ex.cfg, ex.grid)
    R, sigma = b["R"], b["sigma"]
    return dg._esssup(ex.grid, ex.traj.values, x0, sigma * R, b["t0"], sigma * R**ex.exp.sp)


def recursion_schedule(ex, k_tilde=None):
    """Schedule of the recursion check; k~ defaults to k_factor times the
    ess-sup on the limit cylinder, so that Y_j stays positive for a few j
    and then vanishes."""
    from .geometry import make_schedule

    b, rc = ex.cfg["bound"], ex.cfg["recursion"]
    x0 = cfgmod.bound_point(ex.cfg, ex.grid)
    if k_tilde is None:
        k_tilde = rc["k_factor"] * limit_cylinder_sup(ex)
    R = b["R"]
    return make_schedule(R, R**ex.exp.sp, b["sigma"], k_tilde, rc["J"], x0, b["t0"])


def vi_residuals(ex):
    """Minimum over time levels of the variational-inequality residual for
    the three comparison maps u, u + 0.01 bump and the constant-in-time u0."""
    tr, g = ex.traj, ex.grid
    maps = {
        "u": tr.values,
        "u_plus_bump": tr.values + 0.01 * interior_bump(g),
        "u0_constant": np.broadcast_to(tr.u0, tr.values.shape),
    }
    out = {}
    for name, v in maps.items():
        out[name] = min(check_variational_inequality(tr, v, m * g.dt, ex.exp, ex.coef)
                        for m in range(1, tr.steps + 1))
    return out


def _store(needed, floor):
    return max(SAFETY * needed, floor)


def calibrate(progress=None):
    """Run the reference suite and return the constants document."""
    say = progress or (lambda msg: None)
    needed = {}
    runs = {}

    sup = cfgmod.preset("supercritical")
    b = sup["bound"]
    need_sup = []
    for amp in (1.0, sup["data"]["amplitude"]):
        ex = run_configured(sup, amplitude=amp)
        x0 = cfgmod.bound_point(sup, ex.grid)
        need_sup.append(dg.supercritical_needed_constant(
            ex.traj, ex.exp, x0, b["t0"], b["R"], b["sigma"], b["delta"]))
        say(f"supercritical amplitude {amp}: needed C_cal = {need_sup[-1]:.3g}")
        if amp == sup["data"]["amplitude"]:
            runs["supercritical"] = ex
    needed["C_cal_supercritical"] = max(need_sup)

    sub = cfgmod.preset("subcritical")
    ex = run_configured(sub)
    bs = sub["bound"]
    needed["C_cal_subcritical"] = dg.subcritical_needed_constant(
        ex.traj, ex.exp, cfgmod.bound_point(sub, ex.grid), bs["t0"], bs["R"], bs["r"], bs["mode"])
    say(f"subcritical: needed C_cal = {needed['C_cal_subcritical']:.3g}")

    need_slack = []
    for n in (sup["grid"]["n"], 2 * sup["grid"]["n"]):
        ex = run_configured(sup, n=n)
        worst = min(vi_residuals(ex).values())
        need_slack.append(max(0.0, -worst) / (ex.grid.h + ex.grid.dt))
        say(f"n={n}: worst VI residual {worst:.3g}")
    needed["C_slack"] = max(need_slack)

    ex = runs["supercritical"]
    ys = dg.y_sequence(ex.traj, ex.exp, recursion_schedule(ex), sup["recursion"]["delta"])
    needed["C_rec"] = ys.C_fit
    say(f"recursion: fitted C = {ys.C_fit:.3g}")

    constants = {k: _store(v, FLOORS[k]) for k, v in needed.items()}
    return {
        "version": CONSTANTS_VERSION,
        "safety": SAFETY,
        "floors": dict(FLOORS),
        "needed": needed,
        "constants": constants,
        "suite": {
            "supercritical": cfgmod.preset("supercritical"),
            "subcritical": cfgmod.preset("subcritical"),
            "supercritical_amplitudes": [1.0, sup["data"]["amplitude"]],
            "slack_grids": [sup["grid"]["n"], 2 * sup["grid"]["n"]],
        },
    }


def packaged_constants_path():
    return Path(str(resources.files("doublephase") / "constants.json"))


def load_constants(path=None):
    """The ``constants`` mapping of a constants document (packaged by default)."""
    p = Path(path) if path else packaged_constants_path()
    doc = json.loads(p.read_text())
    if doc.get("version") != CONSTANTS_VERSION:
        raise ValueError(f"constants file {p} has version {doc.get('version')}, "
                         f"expected {CONSTANTS_VERSION}")
    out = {k: float(v) for k, v in doc["constants"].items()}
    missing = set(FLOORS) - set(out)
    if missing:
        raise ValueError(f"constants file {p} lacks {sorted(missing)}")
    if not all(math.isfinite(v) and v > 0 for v in out.values()):
        raise ValueError(f"constants file {p} holds a non-positive constant")
    return out
