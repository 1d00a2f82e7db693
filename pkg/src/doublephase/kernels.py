"""Backend selection for the pair-sum kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``DOUBLEPHASE_PURE_PYTHON=1`` to force the fallback.
"""

import math
import os
from types import ModuleType

import numpy as np

from . import _kernels_py

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCE_PY = os.environ.get("DOUBLEPHASE_PURE_PYTHON", "") not in ("", "0")

_state = {"threads": 1}


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_backend(name=None):
    if name is None:
        name = "python" if (_FORCE_PY or _compiled is None) else "cython"
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}")


BACKEND = "python" if (_FORCE_PY or _compiled is None) else "cython"


def set_threads(n):
    _state["threads"] = max(int(n), 1)


def get_threads():
    return _state["threads"]


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.intp)


def pair_energy(u, kp, kq, p, q, rows, cols, backend=None, eps=0.0):
    """Sum of kp|u_i-u_j|^p + kq|u_i-u_j|^q over i in rows, j in cols, j != i.

    ``eps > 0`` smooths exponents below 2 (see the kernel modules).

    Row sums come from the kernel; the final reduction is exactly rounded
    (``math.fsum``) so the value is independent of thread scheduling.
    """
    impl = get_backend(backend)
    rows = _idx(rows)
    cols = _idx(cols)
    if rows.size == 0 or cols.size == 0:
        return 0.0
    u = np.ascontiguousarray(u, dtype=np.float64)
    rs = impl.pair_row_sums(u, kp, kq, float(p), float(q), rows, cols, get_threads(), float(eps))
    return math.fsum(rs)


def pair_gradient(u, kp, kq, p, q, rows, backend=None, eps=0.0):
    """Derivative of the symmetric all-pairs energy with respect to u[rows]."""
    impl = get_backend(backend)
    rows = _idx(rows)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if rows.size == 0:
        return np.zeros(0)
    return np.asarray(impl.pair_gradient(u, kp, kq, float(p), float(q), rows, get_threads(), float(eps)))


def c_omega_energy(u, kp, kq, p, q, interior, backend=None, eps=0.0):
    """Sum over ordered pairs with at least one index in ``interior`` (a mask).

    Uses kernel symmetry: twice the sum over unordered such pairs.
    """
    impl = get_backend(backend)
    inside = np.ascontiguousarray(interior, dtype=np.int8)
    rows = _idx(np.flatnonzero(inside))
    if rows.size == 0:
        return 0.0
    u = np.ascontiguousarray(u, dtype=np.float64)
    rs = impl.c_omega_row_sums(u, kp, kq, float(p), float(q), rows, inside,
                               get_threads(), float(eps))
    return 2.0 * math.fsum(rs)
