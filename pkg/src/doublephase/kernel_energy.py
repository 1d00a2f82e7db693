"""Double-phase integrand, discrete nonlocal energies, seminorms and tails.

All double integrals use the cell-midpoint product rule on the grid with
the diagonal pair (i, i) excluded. Integrals over R^N are truncated to the
computational box.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels

_REL = 1e-12


@dataclass(frozen=True)
class Exponents:
    N: int
    p: float
    q: float
    s: float
    s_prime: float
    M: float = 1.0

    def __post_init__(self):
        if self.N not in (1, 2):
            raise ValueError(f"N must be 1 or 2, got {self.N}")
        if not 0 < self.s < 1 or not 0 < self.s_prime < 1:
            raise ValueError("s and s' must lie in (0, 1)")
        if self.M < 0:
            raise ValueError("M must be nonnegative")
        if not 1 < self.p <= self.q <= self.p_star * (1 + _REL):
            raise ValueError(
                f"need 1 < p <= q <= p_* = {self.p_star:.6g}, got p={self.p}, q={self.q}"
            )

    @property
    def kappa(self):
        return 1.0 + 2.0 * self.s / self.N

    @property
    def p_star(self):
        return self.p * (2.0 * self.s + self.N) / self.N

    @property
    def p_crit(self):
        return 2.0 * self.N / (2.0 * self.s + self.N)

    @property
    def regime(self):
        return "supercritical" if self.p > self.p_crit else "subcritical"

    @property
    def sp(self):
        return self.s * self.p

    @property
    def qs(self):
        return self.q * self.s_prime

    def describe(self):
        return {
            "N": self.N, "p": self.p, "q": self.q, "s": self.s,
            "s_prime": self.s_prime, "M": self.M, "kappa": self.kappa,
            "p_star": self.p_star, "p_crit": self.p_crit, "regime": self.regime,
        }


@dataclass(frozen=True)
class Coefficient:
    """Symmetric modulating coefficient a(x, y), clamped into [0, M].

    kinds: ``constant`` (a = value), ``bump`` (value * exp(-(|x|^2+|y|^2)/width^2)),
    ``checkerboard`` (value where the sign patterns of sin(pi x / width)
    agree for x and y, zero elsewhere).
    """

    kind: str = "constant"
    value: float = 1.0
    width: float = 0.5
    M: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "bump", "checkerboard"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    def __call__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.kind == "constant":
            a = np.full(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]), self.value)
        elif self.kind == "bump":
            r2 = (x**2).sum(-1) + (y**2).sum(-1)
            a = self.value * np.exp(-r2 / self.width**2)
        else:
            sx = np.prod(np.sign(np.sin(np.pi * x / self.width)), axis=-1)
            sy = np.prod(np.sign(np.sin(np.pi * y / self.width)), axis=-1)
            a = np.where(sx * sy > 0, self.value, 0.0)
        return np.clip(a, 0.0, self.M)

    @property
    def symmetric(self):
        return True

    def matrix(self, centers):
        return self(centers[:, None, :], centers[None, :, :])

    def describe(self):
        return {"kind": self.kind, "value": self.value, "width": self.width, "M": self.M}


def integrand_H(exp, a, x, y, xi):
    """|xi|^p / |x-y|^{ps} + a(x,y) |xi|^q / |x-y|^{q s'}."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = float(np.sqrt(((x - y) ** 2).sum()))
    if d == 0.0:
        raise ValueError("H is undefined on the diagonal x = y")
    axy = float(a(x, y).ravel()[0]) if callable(a) else float(a)
    xi = np.abs(np.asarray(xi, dtype=float))
    return xi**exp.p / d**exp.sp + axy * xi**exp.q / d**exp.qs


class GridFunction:
    """Values on grid cells at one or more time levels.

    ``values`` has shape (n_times, n_cells). When ``u0`` is given the
    exterior-data policy is active: exterior cells must equal u0 at every
    time level.
    """

    def __init__(self, grid, values, u0=None, times=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[1] != grid.n_cells:
            raise ValueError(f"expected {grid.n_cells} cells, got {values.shape[1]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        if u0 is not None:
            u0 = np.array(u0, dtype=np.float64)
            ext = grid.exterior_idx
            if not np.array_equal(values[:, ext], np.broadcast_to(u0[ext], (values.shape[0], ext.size))):
                raise ValueError("exterior values differ from the datum u0")
            u0.setflags(write=False)
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.u0 = u0
        self.times = grid.times[: values.shape[0]] if times is None else np.asarray(times)

    def __len__(self):
        return self.values.shape[0]

    def snapshot(self, n=-1):
        return self.values[n]

    def positive_part(self):
        return GridFunction(self.grid, np.maximum(self.values, 0.0), times=self.times)


def _as_idx(region, grid):
    if region is None:
        return np.arange(grid.n_cells)
    region = np.asarray(region)
    if region.dtype == bool:
        return np.flatnonzero(region)
    return region.astype(np.intp)


class NonlocalEnergy:
    """Discrete double-phase energy  sum_{i != j} H(x_i, x_j, u_i - u_j) / |x_i - x_j|^N h^{2N}.

    The weight matrices are built once per (grid, exponents, coefficient).
    """

    def __init__(self, grid, exp, coef):
        if exp.N != grid.dim:
            raise ValueError("exponent dimension does not match the grid")
        self.grid = grid
        self.exp = exp
        self.coef = coef

    @cached_property
    def kp(self):
        return _weights(self.grid, self.exp.N + self.exp.sp)

    @cached_property
    def kq(self):
        a = self.coef.matrix(self.grid.centers)
        if not np.any(a):
            return None
        return a * _weights(self.grid, self.exp.N + self.exp.qs)

    def energy(self, u, rows=None, cols=None, eps=0.0):
        g = self.grid
        return kernels.pair_energy(u, self.kp, self.kq, self.exp.p, self.exp.q,
                                   _as_idx(rows, g), _as_idx(cols, g), eps=eps)

    def energy_c_omega(self, u, eps=0.0):
        """Energy over C_Omega: ordered pairs with at least one point in Omega."""
        return kernels.c_omega_energy(u, self.kp, self.kq, self.exp.p, self.exp.q,
                                      self.grid.interior, eps=eps)

    def gradient_interior(self, u, eps=0.0):
        return kernels.pair_gradient(u, self.kp, self.kq, self.exp.p, self.exp.q,
                                     self.grid.interior_idx, eps=eps)

    @property
    def singular(self):
        """True when some active exponent is below 2 (non-Lipschitz gradient)."""
        return self.exp.p < 2.0 or (self.kq is not None and self.exp.q < 2.0)

    @cached_property
    def _c_omega_weight_sums(self):
        g = self.grid
        i, e = g.interior_idx, g.exterior_idx

        def tot(k):
            if k is None:
                return 0.0
            return float(k[i].sum() + k[np.ix_(e, i)].sum())

        return tot(self.kp), tot(self.kq)

    def smoothing_gap(self, eps):
        """Upper bound for E - E_eps over C_Omega (both are >= 0 and E_eps <= E)."""
        sp_, sq_ = self._c_omega_weight_sums
        gap = 0.0
        if self.exp.p < 2.0:
            gap += sp_ * eps**self.exp.p
        if self.exp.q < 2.0:
            gap += sq_ * eps**self.exp.q
        return gap


def _weights(grid, power):
    d = grid.distances
    w = np.zeros_like(d)
    off = d > 0
    w[off] = grid.cell_volume**2 / d[off] ** power
    return w


def nonlocal_energy(u, grid, exp, coef, region1=None, region2=None):
    """Midpoint double sum of H / |x-y|^N over region1 x region2 (diagonal excluded)."""
    r1 = _as_idx(region1, grid)
    r2 = _as_idx(region2, grid)
    if r1.size == 0 or r2.size == 0:
        warnings.warn("empty region in nonlocal_energy; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return NonlocalEnergy(grid, exp, coef).energy(u, r1, r2)


def fractional_seminorm(u, grid, s, p, region=None):
    """[u]_{W^{s,p}(region)} by the midpoint rule."""
    if not 0 < s < 1 or p < 1:
        raise ValueError("need 0 < s < 1 and p >= 1")
    idx = _as_idx(region, grid)
    kp = _weights(grid, grid.dim + p * s)
    total = kernels.pair_energy(u, kp, None, p, p, idx, idx)
    return total ** (1.0 / p)


def tail(values, grid, m, s, x0, R, levels=None):
    """Discrete Tail_{m,s,infty}: max over time levels of
    (R^{sm} sum_{|x_i - x0| >= R} |u_i|^{m-1} / |x_i - x0|^{N+sm} h^N)^{1/(m-1)}.

    ``values`` is one snapshot or an (n_times, n_cells) array; ``levels``
    selects rows. Cells inside the discrete ball B_R(x0) are excluded.
    """
    if m <= 1:
        raise ValueError(f"tail exponent m must exceed 1, got {m}")
    if R <= 0:
        raise ValueError("tail radius must be positive")
    v = np.atleast_2d(np.asarray(values, dtype=float))
    if levels is not None:
        v = v[np.asarray(levels)]
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.dim,))
    outside = ~grid.ball(x0, R)
    if not outside.any() or v.shape[0] == 0:
        return 0.0
    d = np.sqrt(((grid.centers[outside] - x0) ** 2).sum(axis=1))
    w = grid.cell_volume * R ** (s * m) / d ** (grid.dim + s * m)
    sums = [math.fsum(w * np.abs(row[outside]) ** (m - 1)) for row in v]
    return max(sums) ** (1.0 / (m - 1))


def tail_space_membership(u, grid, m, alpha):
    """Discretised integral of |u|^m / (1 + |x|^{N+alpha}) over the box."""
    if m <= 0 or alpha <= 0:
        raise ValueError("need m > 0 and alpha > 0")
    r = np.sqrt((grid.centers**2).sum(axis=1))
    w = grid.cell_volume / (1.0 + r ** (grid.dim + alpha))
    return math.fsum(w * np.abs(np.asarray(u, dtype=float)) ** m)


def indicator_tail_exact(R, L, m, s):
    """Tail_{m,s} of u = 1 on [-L, L] (N = 1, x0 = 0, R < L), in closed form.

    R^{sm} * 2 int_R^L x^{-1-sm} dx = 2 (1 - (R/L)^{sm}) / (sm), raised to 1/(m-1).
    """
    if not 0 < R < L:
        raise ValueError("need 0 < R < L")
    sm = s * m
    return (2.0 * (1.0 - (R / L) ** sm) / sm) ** (1.0 / (m - 1.0))
