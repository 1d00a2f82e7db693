"""Serialisation: snapshot CSVs, JSON headers and manifests, summary CSVs.

Floats are written with 17 significant digits, so a CSV round-trips the
double exactly and identical runs give identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np


def _fmt(x):
    return f"{float(x):.17g}"


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if is_dataclass(obj):
        return asdict(obj)
    if isinstance(obj, Path):
        return str(obj)
    if callable(obj):
        return repr(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _finite(obj):
    # JSON has no inf/nan; spell them out
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def to_jsonable(obj):
    return _finite(json.loads(json.dumps(obj, default=_plain, allow_nan=True)))


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def snapshot_header(grid, exp=None, coef=None, **extra):
    head = {"grid": grid.metadata()}
    if exp is not None:
        head["exponents"] = exp.describe()
    if coef is not None:
        head["coefficient"] = coef.describe()
    head.update(extra)
    return head


def write_snapshot_csv(path, grid, values, time=None):
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_cells,):
        raise ValueError("snapshot needs one value per cell")
    names = ["x", "y"][: grid.dim]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if time is not None:
            fh.write(f"# t = {_fmt(time)}\n")
        w.writerow(names + ["interior", "u"])
        for c, inside, v in zip(grid.centers, grid.interior, values):
            w.writerow([_fmt(x) for x in c] + [int(inside), _fmt(v)])
    return path


def read_snapshot_csv(path):
    """Returns (coordinates, interior flags, values)."""
    rows = [r for r in Path(path).read_text().splitlines() if r and not r.startswith("#")]
    reader = csv.reader(rows)
    head = next(reader)
    dim = len(head) - 2
    data = [list(map(float, r)) for r in reader]
    arr = np.array(data, dtype=float).reshape(-1, dim + 2)
    return arr[:, :dim], arr[:, dim].astype(bool), arr[:, dim + 1]


def export_trajectory(outdir, traj, exp, coef, parameters=None):
    """One CSV per time level plus manifest.json; returns the manifest path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    g = traj.grid
    width = max(4, len(str(traj.steps)))
    files = []
    for n, row in enumerate(traj.values):
        name = f"snapshot_{n:0{width}d}.csv"
        write_snapshot_csv(out / name, g, row, time=n * g.dt)
        files.append(name)
    manifest = snapshot_header(
        g, exp, coef,
        parameters=parameters or {},
        snapshots=files,
        energies=list(traj.energies),
        diagnostics=[asdict(d) for d in traj.diagnostics],
        dissipation_slack=traj.dissipation_slack(),
        range_violation=traj.range_violation(),
    )
    return write_json(out / "manifest.json", manifest)


def write_summary_csv(path, rows):
    """Flat CSV with the union of keys (first-seen order) as header."""
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
    return path
