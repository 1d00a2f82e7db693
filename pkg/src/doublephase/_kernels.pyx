# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pair-sum kernels.

Row sums are computed independently per row (parallel over rows, fixed
inner order), so the result does not depend on the thread count.
With ``eps > 0`` every exponent below 2 is replaced by its smoothed
version (x^2 + eps^2)^{e/2} - eps^e.

Each row first gathers its differences and weights into contiguous
buffers; the passes over those buffers are branch-free so the compiler
can vectorise them (d = 0 is handled by masks, never by inf/nan).
"""

import numpy as np

from cython.parallel cimport parallel, prange
from libc.math cimport exp, expm1, fabs, log, log1p, pow
from libc.stdlib cimport free, malloc


cdef struct Law:
    double p
    double q
    int has_q
    double eps
    int smooth_p      # exponent p uses the smoothed law
    int smooth_q
    double eps_p      # eps^p, eps^q
    double eps_q
    double leps2      # log(eps^2)


cdef Law _law(double p, double q, int has_q, double eps):
    cdef Law L
    L.p = p
    L.q = q
    L.has_q = has_q
    L.eps = eps
    L.smooth_p = eps > 0.0 and p < 2.0
    L.smooth_q = eps > 0.0 and has_q and q < 2.0
    L.eps_p = pow(eps, p) if eps > 0.0 else 0.0
    L.eps_q = pow(eps, q) if eps > 0.0 else 0.0
    L.leps2 = 2.0 * log(eps) if eps > 0.0 else 0.0
    return L


# --- passes over gathered buffers ---------------------------------------------

cdef void _log_abs(const double* d, double* l, Py_ssize_t m) noexcept nogil:
    # log|d|, with log 1 = 0 standing in for d = 0 (masked later)
    cdef Py_ssize_t b
    for b in range(m):
        l[b] = log(fabs(d[b]) + (d[b] == 0.0))


cdef void _log1p_sq(const double* d, double* l1, double eps, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t b
    cdef double x
    for b in range(m):
        x = d[b] / eps
        l1[b] = log1p(x * x)


cdef double _phase_energy(const double* d, const double* k, const double* l,
                          const double* l1, Py_ssize_t m, double e, int smooth,
                          double eps_e) noexcept nogil:
    cdef Py_ssize_t b
    cdef double acc = 0.0
    if smooth:
        for b in range(m):
            acc += k[b] * (eps_e * expm1(0.5 * e * l1[b]))
    elif e == 2.0:
        for b in range(m):
            acc += k[b] * (d[b] * d[b])
    else:
        for b in range(m):
            acc += k[b] * (exp(e * l[b]) * (d[b] != 0.0))
    return acc


cdef double _phase_grad(const double* d, const double* k, const double* l,
                        const double* l1, Py_ssize_t m, double e, int smooth,
                        double leps2) noexcept nogil:
    # sum_b k_b * e * phi_e'(d_b)
    cdef Py_ssize_t b
    cdef double acc = 0.0
    if smooth:
        for b in range(m):
            acc += k[b] * (e * d[b] * exp((0.5 * e - 1.0) * (leps2 + l1[b])))
    elif e == 2.0:
        for b in range(m):
            acc += k[b] * (2.0 * d[b])
    else:
        for b in range(m):
            acc += k[b] * (e * exp((e - 1.0) * l[b]) * ((d[b] > 0.0) - (d[b] < 0.0)))
    return acc


cdef double _row(const double* d, const double* kp, const double* kq,
                 double* l, double* l1, Py_ssize_t m, Law* L, int grad) noexcept nogil:
    cdef double acc
    if not (L.smooth_p and (L.smooth_q or not L.has_q)):
        _log_abs(d, l, m)
    if L.smooth_p or L.smooth_q:
        _log1p_sq(d, l1, L.eps, m)
    if grad:
        acc = _phase_grad(d, kp, l, l1, m, L.p, L.smooth_p, L.leps2)
        if L.has_q:
            acc += _phase_grad(d, kq, l, l1, m, L.q, L.smooth_q, L.leps2)
    else:
        acc = _phase_energy(d, kp, l, l1, m, L.p, L.smooth_p, L.eps_p)
        if L.has_q:
            acc += _phase_energy(d, kq, l, l1, m, L.q, L.smooth_q, L.eps_q)
    return acc


# --- gathers ------------------------------------------------------------------

cdef Py_ssize_t _gather_cols(const double[::1] u, const double[:, ::1] kp,
                             const double[:, ::1] kq, int has_q, Py_ssize_t i,
                             const Py_ssize_t[::1] cols, double* d, double* a,
                             double* c) noexcept nogil:
    cdef Py_ssize_t b, j, m = 0
    for b in range(cols.shape[0]):
        j = cols[b]
        if j == i:
            continue
        d[m] = u[i] - u[j]
        a[m] = kp[i, j]
        if has_q:
            c[m] = kq[i, j]
        m = m + 1
    return m


cdef Py_ssize_t _gather_c_omega(const double[::1] u, const double[:, ::1] kp,
                                const double[:, ::1] kq, int has_q, Py_ssize_t i,
                                const signed char[::1] inside, double* d, double* a,
                                double* c) noexcept nogil:
    # pairs (i, j) with j outside Omega, or inside with j > i; doubled by caller
    cdef Py_ssize_t j, m = 0
    for j in range(u.shape[0]):
        if inside[j] and j <= i:
            continue
        d[m] = u[i] - u[j]
        a[m] = kp[i, j]
        if has_q:
            c[m] = kq[i, j]
        m = m + 1
    return m


cdef void _diffs(const double[::1] u, Py_ssize_t i, Py_ssize_t c0, Py_ssize_t m,
                 double* d) noexcept nogil:
    # contiguous columns c0 .. c0+m-1; a diagonal pair has d = 0 and adds nothing
    cdef Py_ssize_t b
    cdef double ui = u[i]
    for b in range(m):
        d[b] = ui - u[c0 + b]


# --- entry points -------------------------------------------------------------

cdef enum Mode:
    COLS = 0
    C_OMEGA = 1
    GRAD = 2


cdef Py_ssize_t _contiguous_start(const Py_ssize_t[::1] cols):
    # first column if cols is c0, c0+1, ..., else -1
    cdef Py_ssize_t b
    for b in range(1, cols.shape[0]):
        if cols[b] != cols[0] + b:
            return -1
    return cols[0] if cols.shape[0] > 0 else -1


cdef object _drive(const double[::1] u, const double[:, ::1] kp, kq, double p, double q,
                   const Py_ssize_t[::1] rows, const Py_ssize_t[::1] cols,
                   const signed char[::1] inside, int mode, int nthreads, double eps):
    cdef Law L = _law(p, q, kq is not None, eps)
    cdef const double[:, ::1] kqv = kq if kq is not None else kp
    cdef Py_ssize_t n = u.shape[0], a, i, m
    cdef Py_ssize_t c0 = 0 if mode == GRAD else -1
    if mode == COLS:
        c0 = _contiguous_start(cols)
    cdef Py_ssize_t width = n if mode != COLS else max(cols.shape[0], 1)
    cdef double* buf
    out = np.zeros(rows.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    with nogil, parallel(num_threads=max(nthreads, 1)):
        buf = <double*> malloc(5 * width * sizeof(double))
        if buf != NULL:
            for a in prange(rows.shape[0], schedule="static"):
                i = rows[a]
                if c0 >= 0:
                    # read the kernel rows in place
                    m = n - c0 if mode == GRAD else cols.shape[0]
                    _diffs(u, i, c0, m, buf)
                    o[a] = _row(buf, &kp[i, c0], &kqv[i, c0], buf + 3 * width,
                                buf + 4 * width, m, &L, mode == GRAD)
                    continue
                if mode == COLS:
                    m = _gather_cols(u, kp, kqv, L.has_q, i, cols, buf, buf + width,
                                     buf + 2 * width)
                else:
                    m = _gather_c_omega(u, kp, kqv, L.has_q, i, inside, buf,
                                        buf + width, buf + 2 * width)
                o[a] = _row(buf, buf + width, buf + 2 * width, buf + 3 * width,
                            buf + 4 * width, m, &L, mode == GRAD)
            free(buf)
        else:
            with gil:
                raise MemoryError()
    if mode == GRAD:
        out *= 2.0
    return out


def pair_row_sums(const double[::1] u, const double[:, ::1] kp, kq,
                  double p, double q, const Py_ssize_t[::1] rows,
                  const Py_ssize_t[::1] cols, int nthreads=1, double eps=0.0):
    cdef signed char[::1] none = np.zeros(1, dtype=np.int8)
    return _drive(u, kp, kq, p, q, rows, cols, none, COLS, nthreads, eps)


def c_omega_row_sums(const double[::1] u, const double[:, ::1] kp, kq,
                     double p, double q, const Py_ssize_t[::1] rows,
                     const signed char[::1] inside, int nthreads=1, double eps=0.0):
    """Row sums whose total is half the energy over C_Omega (kernels symmetric)."""
    cdef Py_ssize_t[::1] none = np.zeros(1, dtype=np.intp)
    return _drive(u, kp, kq, p, q, rows, none, inside, C_OMEGA, nthreads, eps)


def pair_gradient(const double[::1] u, const double[:, ::1] kp, kq,
                  double p, double q, const Py_ssize_t[::1] rows,
                  int nthreads=1, double eps=0.0):
    cdef Py_ssize_t[::1] none = np.zeros(1, dtype=np.intp)
    cdef signed char[::1] nomask = np.zeros(1, dtype=np.int8)
    return _drive(u, kp, kq, p, q, rows, none, nomask, GRAD, nthreads, eps)
