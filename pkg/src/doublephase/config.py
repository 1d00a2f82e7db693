"""INI configuration: schema, presets and problem construction.

A config file holds ``[section]`` blocks of ``key = value`` lines. Every
key has a type and a default taken from the selected preset; unknown
sections or keys and unparsable values raise ConfigError naming the key.
The fully resolved mapping is what gets written to the manifest.
"""

from __future__ import annotations

import configparser
import copy
from pathlib import Path

import numpy as np

from .geometry import Grid
from .kernel_energy import Coefficient, Exponents


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = str(text).strip().lower()
    return None if t in ("", "none", "auto") else float(t)


SCHEMA = {
    "grid": {"dim": int, "half_width": float, "n": int, "omega": float, "dt": float, "steps": int},
    "exponents": {"p": float, "q": _opt_float, "q_over_pstar": _opt_float,
                  "s": float, "s_prime": float, "M": float},
    "coefficient": {"kind": str, "value": float, "width": float},
    "data": {"profile": str, "amplitude": float, "width": float, "center": _floats},
    "solver": {"tol": _opt_float, "max_iter": int},
    "bound": {"x0": _floats, "t0": float, "R": float, "sigma": float, "delta": float,
              "r": float, "mode": str, "perturb_amplitude": _opt_float, "k_tilde": _opt_float},
    "caccioppoli": {"tuples": int, "R_min": float, "R_max": float, "refine": _bool,
                    "max_change": float},
    "recursion": {"J": int, "delta": float, "k_factor": float, "min_y": float,
                  "slope_margin": float},
    "tail": {"n": int, "half_width": float, "m": float, "s": float, "R": float, "rtol": float},
    "sobolev": {"n": int, "dim": int, "fields": int, "s": float, "p": float,
                "radius": float, "max_change": float},
    "run": {"preset": str},
}

_COMMON = {
    "coefficient": {"kind": "constant", "value": 1.0, "width": 0.5},
    "solver": {"tol": None, "max_iter": 50_000},
    "caccioppoli": {"tuples": 10, "R_min": 0.3, "R_max": 0.6, "refine": True, "max_change": 0.25},
    "recursion": {"J": 8, "delta": 3.0, "k_factor": 1.5, "min_y": 1e-14, "slope_margin": 0.15},
    "tail": {"n": 256, "half_width": 1.0, "m": 2.0, "s": 0.5, "R": 0.25, "rtol": 0.01},
    "sobolev": {"n": 16, "dim": 1, "fields": 20, "s": 0.5, "p": 2.0, "radius": 0.75,
                "max_change": 0.25},
}

PRESETS = {
    # the calibration case: 1D, (p, q, s, s') = (2, 2.5, 1/2, 1/2)
    "supercritical": {
        "grid": {"dim": 1, "half_width": 1.0, "n": 16, "omega": 0.75, "dt": 0.025, "steps": 20},
        "exponents": {"p": 2.0, "q": 2.5, "q_over_pstar": None, "s": 0.5, "s_prime": 0.5, "M": 1.0},
        "data": {"profile": "bump", "amplitude": 2.0, "width": 0.6, "center": (0.0,)},
        "bound": {"x0": (0.0,), "t0": 0.5, "R": 0.5, "sigma": 0.5, "delta": 3.0, "r": 6.0,
                  "mode": "H1", "perturb_amplitude": 2.0, "k_tilde": None},
    },
    # 2D, s = 0.3, p = 1.2 < 2N/(2s+N), q = 0.9 p_*
    "subcritical": {
        "grid": {"dim": 2, "half_width": 1.0, "n": 12, "omega": 0.75, "dt": 0.05, "steps": 16},
        "exponents": {"p": 1.2, "q": None, "q_over_pstar": 0.9, "s": 0.3, "s_prime": 0.3, "M": 1.0},
        "data": {"profile": "bump", "amplitude": 10.0, "width": 0.6, "center": (0.0, 0.0)},
        "bound": {"x0": (0.0, 0.0), "t0": 0.8, "R": 0.5, "sigma": 0.5, "delta": 3.0, "r": 6.0,
                  "mode": "H1", "perturb_amplitude": None, "k_tilde": None},
    },
}


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"[run] preset: unknown preset {name!r} (choose {sorted(PRESETS)})")
    cfg = copy.deepcopy(_COMMON)
    cfg.update(copy.deepcopy(PRESETS[name]))
    cfg["run"] = {"preset": name}
    return cfg


def _parse_file(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (R vs r)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    raw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, text in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key [{sec}] {key}")
            try:
                raw.setdefault(sec, {})[key] = SCHEMA[sec][key](text)
            except ValueError as err:
                raise ConfigError(f"bad value for [{sec}] {key} = {text!r}: {err}") from err
    return raw


def load_config(path=None, regime="auto", overrides=None):
    """Resolve preset + file + overrides into a nested dict.

    ``regime`` picks the preset unless it is 'auto', in which case the
    file's ``[run] preset`` (default: supercritical) does.
    """
    raw = _parse_file(path) if path else {}
    if regime not in ("auto", "supercritical", "subcritical"):
        raise ConfigError(f"unknown regime {regime!r}")
    named = raw.get("run", {}).get("preset")
    if regime != "auto" and named not in (None, regime):
        raise ConfigError(f"[run] preset = {named} contradicts the requested regime {regime}")
    name = regime if regime != "auto" else (named or "supercritical")
    cfg = preset(name)
    for src in (raw, overrides or {}):
        for sec, vals in src.items():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in vals.items():
                if k not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key [{sec}] {k}")
                cfg[sec][k] = v
    cfg["run"]["preset"] = name
    return cfg


def build_exponents(cfg):
    e = cfg["exponents"]
    q = e["q"]
    try:
        if e["q_over_pstar"] is not None:
            base = Exponents(cfg["grid"]["dim"], e["p"], e["p"], e["s"], e["s_prime"], e["M"])
            q = e["q_over_pstar"] * base.p_star
            if e["q_over_pstar"] == 1.0:
                q = base.p_star
        if q is None:
            raise ConfigError("[exponents] q: set q or q_over_pstar")
        return Exponents(cfg["grid"]["dim"], e["p"], q, e["s"], e["s_prime"], e["M"])
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"[exponents]: {err}") from err


def build_problem(cfg, *, n=None, amplitude=None, clip=None):
    """(grid, exponents, coefficient, u0) for the configured experiment.

    ``clip`` caps u0 from above (bounded approximations of the datum).
    """
    from .stepper import initial_profile

    gc = cfg["grid"]
    try:
        grid = Grid.build(gc["dim"], gc["half_width"], gc["n"] if n is None else n,
                          gc["omega"], gc["dt"], gc["steps"])
    except ValueError as err:
        raise ConfigError(f"[grid]: {err}") from err
    exp = build_exponents(cfg)
    c = cfg["coefficient"]
    try:
        coef = Coefficient(c["kind"], c["value"], c["width"], exp.M)
    except ValueError as err:
        raise ConfigError(f"[coefficient] kind: {err}") from err
    d = cfg["data"]
    center = d["center"]
    if len(center) not in (1, grid.dim):
        raise ConfigError(f"[data] center needs 1 or {grid.dim} coordinates")
    try:
        u0 = initial_profile(grid, d["profile"], d["amplitude"] if amplitude is None else amplitude,
                             d["width"], np.broadcast_to(center, (grid.dim,)))
    except ValueError as err:
        raise ConfigError(f"[data] profile: {err}") from err
    if clip is not None:
        u0 = np.minimum(u0, clip)
    return grid, exp, coef, u0


def bound_point(cfg, grid):
    x0 = cfg["bound"]["x0"]
    if len(x0) not in (1, grid.dim):
        raise ConfigError(f"[bound] x0 needs 1 or {grid.dim} coordinates")
    return tuple(np.broadcast_to(np.asarray(x0, dtype=float), (grid.dim,)))


def write_config(cfg, path):
    """Write a resolved config back as INI (round-trips through load_config)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, vals in cfg.items():
        cp[sec] = {}
        for k, v in vals.items():
            if v is None:
                text = "auto"
            elif isinstance(v, tuple):
                text = ", ".join(repr(float(x)) for x in v)
            else:
                text = str(v)
            cp[sec][k] = text
    with Path(path).open("w") as fh:
        cp.write(fh)
    return path
