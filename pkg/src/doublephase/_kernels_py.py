"""Pure-numpy twin of the compiled pair-sum kernels."""

import numpy as np


def _phi(x, e, eps=0.0):
    if eps > 0.0 and e < 2.0:
        return eps**e * np.expm1(0.5 * e * np.log1p((x / eps) ** 2))
    x = np.abs(x)
    if e == 2.0:
        return x * x
    return x**e


def _dphi(x, e, eps=0.0):
    # derivative divided by e; zero at x == 0
    if eps > 0.0 and e < 2.0:
        return x * (x * x + eps * eps) ** (0.5 * e - 1.0)
    return np.sign(x) * np.abs(x) ** (e - 1.0)


def pair_row_sums(u, kp, kq, p, q, rows, cols, nthreads=1, eps=0.0):
    u = np.asarray(u, dtype=np.float64)
    d = u[rows][:, None] - u[cols][None, :]
    block = kp[np.ix_(rows, cols)] * _phi(d, p, eps)
    if kq is not None:
        block += kq[np.ix_(rows, cols)] * _phi(d, q, eps)
    block[rows[:, None] == cols[None, :]] = 0.0
    return block.sum(axis=1)


def pair_gradient(u, kp, kq, p, q, rows, nthreads=1, eps=0.0):
    u = np.asarray(u, dtype=np.float64)
    d = u[rows][:, None] - u[None, :]
    block = p * kp[rows] * _dphi(d, p, eps)
    if kq is not None:
        block += q * kq[rows] * _dphi(d, q, eps)
    block[rows[:, None] == np.arange(u.size)[None, :]] = 0.0
    return 2.0 * block.sum(axis=1)


def c_omega_row_sums(u, kp, kq, p, q, rows, inside, nthreads=1, eps=0.0):
    u = np.asarray(u, dtype=np.float64)
    inside = np.asarray(inside, dtype=bool)
    d = u[rows][:, None] - u[None, :]
    block = kp[rows] * _phi(d, p, eps)
    if kq is not None:
        block += kq[rows] * _phi(d, q, eps)
    n = u.size
    keep = ~inside[None, :] | (np.arange(n)[None, :] > rows[:, None])
    return np.where(keep, block, 0.0).sum(axis=1)
