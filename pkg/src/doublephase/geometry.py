"""Uniform cell-centred grids, parabolic cylinders and De Giorgi schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    """Cell-centred grid on the box [-L, L]^N with an axis-aligned interior.

    ``omega_lo``/``omega_hi`` are the interior bounds after snapping outward
    to cell faces; ``omega_requested`` keeps what the caller asked for.
    Cells are flattened in C order, axis 0 slowest.
    """

    dim: int
    half_width: float
    n: int
    omega_lo: tuple
    omega_hi: tuple
    dt: float
    steps: int
    omega_requested: tuple = field(default=(), compare=False)

    @classmethod
    def build(cls, dim, half_width, n, omega, dt, steps):
        if dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {dim}")
        if half_width <= 0 or n < 3:
            raise ValueError("need half_width > 0 and n >= 3")
        if dt <= 0 or steps < 0:
            raise ValueError("need dt > 0 and steps >= 0")
        h = 2.0 * half_width / n
        if np.isscalar(omega):
            omega = [(-float(omega), float(omega))] * dim
        omega = [tuple(map(float, b)) for b in omega]
        if len(omega) != dim:
            raise ValueError("omega needs one (lo, hi) pair per axis")
        lo, hi = [], []
        for a, b in omega:
            ia = math.floor((a + half_width) / h + _SNAP)
            ib = math.ceil((b + half_width) / h - _SNAP)
            if not (1 <= ia < ib <= n - 1):
                raise ValueError(
                    f"interior ({a}, {b}) must lie strictly inside the box with "
                    "at least one exterior layer of cells on each side"
                )
            lo.append(-half_width + ia * h)
            hi.append(-half_width + ib * h)
        return cls(dim, float(half_width), int(n), tuple(lo), tuple(hi),
                   float(dt), int(steps), tuple(omega))

    @property
    def h(self):
        return 2.0 * self.half_width / self.n

    @property
    def horizon(self):
        return self.dt * self.steps

    @property
    def cell_volume(self):
        return self.h**self.dim

    @property
    def n_cells(self):
        return self.n**self.dim

    @property
    def shape(self):
        return (self.n,) * self.dim

    @cached_property
    def axis(self):
        return -self.half_width + (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def centers(self):
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    @cached_property
    def interior(self):
        c = self.centers
        mask = np.ones(self.n_cells, dtype=bool)
        for a in range(self.dim):
            mask &= (c[:, a] > self.omega_lo[a]) & (c[:, a] < self.omega_hi[a])
        return mask

    @cached_property
    def interior_idx(self):
        return np.flatnonzero(self.interior)

    @cached_property
    def exterior_idx(self):
        return np.flatnonzero(~self.interior)

    @cached_property
    def distances(self):
        diff = self.centers[:, None, :] - self.centers[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))

    def ball(self, x0, radius):
        """Cells whose centre lies in the closed ball of the given radius."""
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (self.dim,))
        d = np.sqrt(((self.centers - x0) ** 2).sum(axis=1))
        return d <= radius + _SNAP * self.h

    def time_window(self, t0, theta):
        """Indices n with t0 - theta < t_n <= t0."""
        t = self.times
        tol = _SNAP * self.dt
        return np.flatnonzero((t > t0 - theta + tol) & (t <= t0 + tol))

    def snap_time(self, t):
        return self.dt * round(t / self.dt)

    def metadata(self):
        return {
            "dimension": self.dim,
            "half_width": self.half_width,
            "n": self.n,
            "h": self.h,
            "omega_lo": list(self.omega_lo),
            "omega_hi": list(self.omega_hi),
            "omega_requested": [list(b) for b in self.omega_requested],
            "dt": self.dt,
            "steps": self.steps,
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class Cylinder:
    """Q_{rho,theta}(z0) = B_rho(x0) x (t0 - theta, t0]."""

    x0: tuple
    t0: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder needs radius > 0 and height > 0")

    def check_inside(self, grid, *, in_omega=False):
        lo = np.asarray(grid.omega_lo if in_omega else (-grid.half_width,) * grid.dim)
        hi = np.asarray(grid.omega_hi if in_omega else (grid.half_width,) * grid.dim)
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (grid.dim,))
        tol = _SNAP * grid.h
        if np.any(x0 - self.radius < lo - tol) or np.any(x0 + self.radius > hi + tol):
            where = "interior" if in_omega else "box"
            raise ValueError(f"ball of radius {self.radius} at {tuple(x0)} leaves the {where}")
        if self.t0 - self.height < -_SNAP * grid.dt or self.t0 > grid.horizon + _SNAP * grid.dt:
            raise ValueError(
                f"time interval ({self.t0 - self.height}, {self.t0}] outside (0, {grid.horizon}]"
            )

    def snap(self, grid, *, in_omega=False):
        self.check_inside(grid, in_omega=in_omega)
        return DiscreteCylinder(self, grid)


class DiscreteCylinder:
    """Grid cells and time levels covered by a cylinder, plus snapped extents."""

    def __init__(self, cyl, grid):
        self.requested = cyl
        self.grid = grid
        self.cells = np.flatnonzero(grid.ball(cyl.x0, cyl.radius))
        self.levels = grid.time_window(cyl.t0, cyl.height)
        if self.cells.size == 0 or self.levels.size == 0:
            raise ValueError("cylinder covers no grid cell or no time level")
        x0 = np.broadcast_to(np.asarray(cyl.x0, dtype=float), (grid.dim,))
        far = np.sqrt(((grid.centers[self.cells] - x0) ** 2).sum(axis=1)).max()
        self.snapped_radius = float(far + 0.5 * grid.h)
        self.snapped_height = float(self.levels.size * grid.dt)

    @property
    def volume(self):
        return self.cells.size * self.grid.cell_volume

    def describe(self):
        c = self.requested
        return {
            "x0": list(np.atleast_1d(c.x0).astype(float)),
            "t0": c.t0,
            "radius": c.radius,
            "height": c.height,
            "snapped_radius": self.snapped_radius,
            "snapped_height": self.snapped_height,
            "n_cells": int(self.cells.size),
            "n_levels": int(self.levels.size),
        }


@dataclass(frozen=True)
class TimeRamp:
    """Continuous piecewise-linear profile: 0 up to ``start``, 1 from ``end``."""

    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("ramp needs end > start")

    @property
    def slope(self):
        return 1.0 / (self.end - self.start)

    def __call__(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.start) * self.slope, 0.0, 1.0)

    def discrete_slopes(self, times):
        """Backward differences (psi(t_n) - psi(t_{n-1})) / dt for n >= 1."""
        v = self(times)
        return np.diff(v) / np.diff(times)


@dataclass(frozen=True, eq=False)
class IterationSchedule:
    sigma: float
    R: float
    theta: float
    J: int
    k_tilde: float
    radii: np.ndarray
    heights: np.ndarray
    radii_mid: np.ndarray
    heights_mid: np.ndarray
    levels: np.ndarray
    levels_mid: np.ndarray
    x0: tuple = (0.0,)
    t0: float | None = None

    def cylinder(self, j, *, mid=False):
        r = self.radii_mid[j] if mid else self.radii[j]
        th = self.heights_mid[j] if mid else self.heights[j]
        return Cylinder(self.x0, self.t0, float(r), float(th))

    def describe(self):
        return {
            "sigma": self.sigma, "R": self.R, "theta": self.theta, "J": self.J,
            "k_tilde": self.k_tilde, "x0": list(self.x0), "t0": self.t0,
            "radii": self.radii.tolist(), "heights": self.heights.tolist(),
            "levels": self.levels.tolist(),
        }


def make_schedule(R, theta, sigma, k_tilde, J, x0=(0.0,), t0=None):
    """Shrinking radii/heights and rising levels for j = 0..J+1.

    Midpoint arrays (R~_j, theta~_j, k~_j) are defined for j = 0..J.
    """
    if not 0.5 <= sigma < 1.0:
        raise ValueError(f"sigma must lie in [1/2, 1), got {sigma}")
    if R <= 0 or theta <= 0 or k_tilde <= 0:
        raise ValueError("R, theta and k_tilde must be positive")
    if J < 1:
        raise ValueError("J must be at least 1")
    j = np.arange(J + 2, dtype=float)
    decay = 2.0**-j
    radii = sigma * R + (1 - sigma) * R * decay
    heights = sigma * theta + (1 - sigma) * theta * decay
    levels = (1 - decay) * k_tilde
    mid = lambda a: 0.5 * (a[:-1] + a[1:])  # noqa: E731
    return IterationSchedule(
        float(sigma), float(R), float(theta), int(J), float(k_tilde),
        radii, heights, mid(radii), mid(heights), levels, mid(levels),
        tuple(np.atleast_1d(np.asarray(x0, dtype=float))), t0,
    )


def cutoff_in_time(schedule, j):
    """eta_j: zero before t0 - theta~_j, one after t0 - theta_{j+1}."""
    if not 0 <= j <= schedule.J:
        raise IndexError(f"j={j} outside 0..{schedule.J}")
    t0 = 0.0 if schedule.t0 is None else schedule.t0
    return TimeRamp(t0 - schedule.heights_mid[j], t0 - schedule.heights[j + 1])


def slope_constant(schedule, j, sp):
    """Realised C in |d_t eta_j| <= C 2^{sp j} / ((1 - sigma)^{sp} theta).

    Equals 4 * 2^{(1 - sp) j} * (1 - sigma)^{sp - 1}; uniform in j only
    when sp >= 1.
    """
    ramp = cutoff_in_time(schedule, j)
    s = schedule.sigma
    return ramp.slope * (1 - s) ** sp * schedule.theta / 2.0 ** (sp * j)
