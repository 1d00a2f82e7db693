"""Minimizing-movements time stepping and a-posteriori solution checks.

Each step minimises

    F(v) = E[v] + 1/(2 dt) ||v - u_prev||^2_{L^2(Omega)},   v = u0 off Omega,

where E is the discrete double-phase energy over C_Omega. F is convex, so
a monotone accelerated proximal-gradient method with energy-based
backtracking is used; the quadratic proximal term is handled exactly.
See MinimizingMovements for the stopping certificate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernel_energy import GridFunction, NonlocalEnergy, fractional_seminorm

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_TOL_SINGULAR = 1e-4
DEFAULT_MAX_ITER = 50_000
_EPS = np.finfo(float).eps


def initial_profile(grid, kind="bump", amplitude=1.0, width=0.6, center=0.0):
    """Time-independent datum u0 on the whole box.

    ``bump``: amplitude * (1 - |x - c|^2 / width^2)_+ ;
    ``tent``: amplitude * (1 - |x - c| / width)_+ ;
    ``constant``: amplitude everywhere.
    """
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    r = np.sqrt(((grid.centers - c) ** 2).sum(axis=1))
    if kind == "bump":
        return amplitude * np.maximum(1.0 - (r / width) ** 2, 0.0)
    if kind == "tent":
        return amplitude * np.maximum(1.0 - r / width, 0.0)
    if kind == "constant":
        return np.full(grid.n_cells, float(amplitude))
    raise ValueError(f"unknown profile kind {kind!r}")


@dataclass
class CauchyDirichletData:
    u0: np.ndarray
    seminorm: float
    l2_interior: float
    energy: float

    @property
    def finite(self):
        return all(math.isfinite(x) for x in (self.seminorm, self.l2_interior, self.energy))

    @classmethod
    def from_profile(cls, grid, exp, coef, u0):
        u0 = np.asarray(u0, dtype=np.float64)
        if u0.shape != (grid.n_cells,):
            raise ValueError("u0 must give one value per cell")
        semi = fractional_seminorm(u0, grid, exp.s, exp.p)
        l2 = math.sqrt(grid.cell_volume * float(np.sum(u0[grid.interior] ** 2)))
        en = NonlocalEnergy(grid, exp, coef).energy(u0)
        data = cls(u0, semi, l2, en)
        if not data.finite:
            raise ValueError("datum violates the finiteness hypotheses")
        return data

    def describe(self):
        return {"seminorm": self.seminorm, "l2_interior": self.l2_interior,
                "energy": self.energy, "finite": self.finite}


@dataclass
class StepDiagnostics:
    iterations: int
    residual: float
    tolerance: float
    energy: float
    objective: float
    backtracks: int = 0
    gradient_norm: float = 0.0
    smoothing: float = 0.0


class StepFailure(RuntimeError):
    """The inner minimisation did not reach its tolerance."""

    def __init__(self, message, diagnostics, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.diagnostics = diagnostics
        self.step = step


@dataclass
class Trajectory:
    grid: object
    values: np.ndarray
    u0: np.ndarray
    energies: list
    diagnostics: list = field(default_factory=list)

    @property
    def steps(self):
        return self.values.shape[0] - 1

    def as_grid_function(self):
        return GridFunction(self.grid, self.values, u0=self.u0)

    def exterior_exact(self):
        ext = self.grid.exterior_idx
        return bool(np.array_equal(self.values[:, ext],
                                   np.broadcast_to(self.u0[ext], (self.values.shape[0], ext.size))))

    def dissipation_slack(self):
        """min_n (E[u^{n-1}] - E[u^n]); nonnegative for a dissipative run."""
        e = np.asarray(self.energies)
        return float(np.min(e[:-1] - e[1:])) if e.size > 1 else 0.0

    def range_violation(self):
        """How far the run leaves [min u0, max u0] (<= 0 means inside)."""
        lo, hi = self.u0.min(), self.u0.max()
        return float(max(lo - self.values.min(), self.values.max() - hi))


class MinimizingMovements:
    """Implicit Euler (proximal) stepping for one problem instance.

    Stopping uses a certified bound r >= ||v - v*||_{L^2(Omega)} on the
    distance to the exact step minimiser v*. F is (1/dt)-strongly convex
    in L^2(Omega), so r = dt ||grad F(v)|| when all exponents are >= 2.
    Exponents below 2 make grad F non-Lipschitz and its norm useless as a
    residual; those steps minimise the smoothed F_eps (continuation in
    eps) and use r^2 = dt^2 ||grad F_eps(v)||^2 + 2 dt gap(eps), where
    gap(eps) bounds F - F_eps.
    """

    def __init__(self, grid, exp, coef, data, tol=None, max_iter=DEFAULT_MAX_ITER):
        self.grid = grid
        self.exp = exp
        self.coef = coef
        self.data = data
        self.energy_op = NonlocalEnergy(grid, exp, coef)
        if tol is None:
            tol = DEFAULT_TOL_SINGULAR if self.energy_op.singular else DEFAULT_TOL
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        self.tol = tol
        self.max_iter = max_iter

    def _full(self, x):
        v = self.data.u0.copy()
        v[self.grid.interior_idx] = x
        return v

    def energy(self, v):
        return self.energy_op.energy_c_omega(v)

    def objective(self, v, u_prev, dt):
        i = self.grid.interior_idx
        return self.energy(v) + self.grid.cell_volume / (2 * dt) * float(np.sum((v[i] - u_prev[i]) ** 2))

    def _eps_for_gap(self, target):
        """Largest eps (to a factor 2^(1/4)) with smoothing_gap(eps) <= target."""
        gap = self.energy_op.smoothing_gap
        eps = 1.0
        while gap(eps) > target and eps > 1e-300:
            eps *= 2.0**-0.25
        return eps

    def implicit_step(self, u_prev, dt, tol=None):
        """Approximate minimiser of F; raises StepFailure on non-convergence."""
        g = self.grid
        w = g.cell_volume
        idx = g.interior_idx
        u_prev = np.asarray(u_prev, dtype=np.float64)
        if not np.array_equal(u_prev[g.exterior_idx], self.data.u0[g.exterior_idx]):
            raise ValueError("u_prev violates the exterior datum")
        xp = u_prev[idx].copy()
        op = self.energy_op
        gnorm0 = math.sqrt(w * float(np.sum((op.gradient_interior(u_prev) / w) ** 2)))
        if gnorm0 == 0.0:
            e0 = self.energy(u_prev)
            return u_prev.copy(), StepDiagnostics(0, 0.0, 0.0, e0, e0)
        scale = max(math.sqrt(w * float(xp @ xp)),
                    float(np.max(np.abs(self.data.u0))) * math.sqrt(w * xp.size),
                    dt * gnorm0)
        tol_abs = (self.tol if tol is None else tol) * scale

        if op.singular:
            eps_final = self._eps_for_gap(tol_abs**2 / (8.0 * dt))
            stages = []
            eps = max(1e-2 * scale, eps_final)
            while eps > eps_final:
                stages.append(eps)
                eps *= 1e-2
            stages.append(eps_final)
        else:
            stages = [0.0]

        x = xp.copy()
        total = backtracks = 0
        for eps in stages:
            gap = op.smoothing_gap(eps) if eps else 0.0
            # intermediate stages only need to resolve their own smoothing error
            target = tol_abs if eps == stages[-1] else max(tol_abs, 2.0 * math.sqrt(dt * gap))
            x, it, bt, res = self._fista(x, xp, dt, eps, gap, target, self.max_iter - total)
            total += it
            backtracks += bt
            log.debug("eps=%.2e: %d iterations, r=%.2e", eps, it, res)
            if res > target:
                fx = self.energy(self._full(x))
                raise StepFailure(
                    f"no convergence in {self.max_iter} iterations "
                    f"(residual {res:.3e} > {target:.3e}, eps={eps:.1e})",
                    StepDiagnostics(total, res, tol_abs, fx, fx, backtracks),
                )
        v = self._full(x)
        en = self.energy(v)
        d = x - xp
        return v, StepDiagnostics(total, res, tol_abs, en, en + w / (2 * dt) * float(d @ d),
                                  backtracks, self._grad_norm(x, xp, dt, 0.0), stages[-1])

    def _grad_norm(self, x, xp, dt, eps):
        w = self.grid.cell_volume
        gr = self.energy_op.gradient_interior(self._full(x), eps) / w + (x - xp) / dt
        return math.sqrt(w * float(gr @ gr))

    def _fista(self, x, xp, dt, eps, gap, target, budget):
        """Monotone FISTA with restarts on F_eps; returns (x, iters, backtracks, r)."""
        w = self.grid.cell_volume
        op = self.energy_op

        def energy(z):
            return op.energy_c_omega(self._full(z), eps)

        def grad(z):
            return op.gradient_interior(self._full(z), eps) / w

        def prox(z, a):
            return (z + (a / dt) * xp) / (1.0 + a / dt)

        def quad(z):
            d = z - xp
            return w / (2 * dt) * float(d @ d)

        def certificate(z):
            gz = grad(z) + (z - xp) / dt
            return math.sqrt(dt * dt * w * float(gz @ gz) + 2.0 * dt * gap)

        res = certificate(x)
        if res <= target:
            return x, 0, 0, res
        fx = energy(x) + quad(x)
        y, t = x.copy(), 1.0
        alpha = dt
        backtracks = 0
        for it in range(1, budget + 1):
            ey, gy = energy(y), grad(y)
            noise = 64 * _EPS * max(abs(ey), 1.0)
            while True:
                z = prox(y - alpha * gy, alpha)
                d = z - y
                dd = float(d @ d)
                if w * dd / alpha > noise:
                    if energy(z) <= ey + w * float(gy @ d) + w / (2 * alpha) * dd:
                        break
                # near the minimiser energy differences drown in rounding;
                # use the equivalent curvature test on gradients instead
                elif float((grad(z) - gy) @ d) <= dd / alpha:
                    break
                alpha *= 0.5
                backtracks += 1
                if alpha < 1e-300:
                    raise StepFailure("line search collapsed",
                                      StepDiagnostics(it, res, target, fx, fx, backtracks))
            fz = energy(z) + quad(z)
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            if fz <= fx + noise:
                y = z + ((t - 1.0) / t_next) * (z - x)
                x, fx, t = z, fz, t_next
                res = certificate(x)
                if res <= target:
                    return x, it, backtracks, res
            else:
                # momentum restart keeps the sequence monotone
                y, t = x.copy(), 1.0
            alpha *= 1.25
        return x, budget, backtracks, res

    def solve(self, steps=None):
        g = self.grid
        steps = g.steps if steps is None else steps
        u = self.data.u0.copy()
        values = [u]
        energies = [self.energy(u)]
        diags = []
        for n in range(1, steps + 1):
            try:
                u, d = self.implicit_step(u, g.dt)
            except StepFailure as err:
                raise StepFailure(str(err), err.diagnostics, step=n) from err
            values.append(u)
            energies.append(d.energy)
            diags.append(d)
            log.debug("step %d: it=%d res=%.2e E=%.6e", n, d.iterations, d.residual, d.energy)
        return Trajectory(g, np.array(values), self.data.u0.copy(), energies, diags)


def implicit_step(u_prev, dt, data, tol, grid, exp, coef):
    """One minimizing-movements step; see MinimizingMovements.implicit_step."""
    return MinimizingMovements(grid, exp, coef, data, tol=tol).implicit_step(u_prev, dt)


def solve(grid, exp, coef, data, steps=None, tol=None):
    return MinimizingMovements(grid, exp, coef, data, tol=tol).solve(steps)


def _l2sq(grid, a):
    a = a[grid.interior_idx]
    return grid.cell_volume * float(a @ a)


def _inner(grid, a, b):
    i = grid.interior_idx
    return grid.cell_volume * float(a[i] @ b[i])


def check_variational_inequality(traj, v, tau, exp, coef):
    """LHS - RHS of the variational inequality up to time tau.

    Time derivative of v: backward difference; time integral: right-endpoint
    sum over (0, tau]. The H-difference double integral is taken over
    C_Omega, which equals the whole-box difference since v = u off Omega.
    """
    g = traj.grid
    v = np.asarray(v, dtype=np.float64)
    u = traj.values
    if v.shape != u.shape:
        raise ValueError("comparison map must share the trajectory's time grid")
    ext = g.exterior_idx
    if not np.array_equal(v[:, ext], np.broadcast_to(traj.u0[ext], (v.shape[0], ext.size))):
        raise ValueError("comparison map is inadmissible: exterior values differ from u0")
    m = int(round(tau / g.dt))
    if not 0 <= m <= traj.steps or abs(m * g.dt - tau) > 1e-9 * g.dt:
        raise ValueError(f"tau={tau} is not a time level of the trajectory")
    op = NonlocalEnergy(g, exp, coef)
    lhs = 0.0
    for n in range(1, m + 1):
        lhs += _inner(g, v[n] - v[n - 1], v[n] - u[n])
        lhs += g.dt * (op.energy_c_omega(v[n]) - op.energy_c_omega(u[n]))
    rhs = 0.5 * _l2sq(g, v[m] - u[m]) - 0.5 * _l2sq(g, v[0] - u[0])
    return lhs - rhs


def check_parabolic_minimality(traj, phi, exp, coef):
    """RHS - LHS of the parabolic-minimiser inequality for perturbation phi.

    The term int u d_t phi is integrated by parts to -int d_t u phi
    (phi vanishes at both ends) and discretised with backward differences
    of u and a right-endpoint sum, matching the implicit stepping.
    """
    g = traj.grid
    phi = np.asarray(phi, dtype=np.float64)
    u = traj.values
    if phi.shape != u.shape:
        raise ValueError("perturbation must share the trajectory's time grid")
    if np.any(phi[:, g.exterior_idx] != 0.0):
        raise ValueError("perturbation must vanish outside Omega")
    if np.any(phi[0] != 0.0) or np.any(phi[-1] != 0.0):
        raise ValueError("perturbation must vanish at t = 0 and t = T")
    op = NonlocalEnergy(g, exp, coef)
    res = 0.0
    for n in range(1, traj.steps + 1):
        if not np.any(phi[n]):
            continue
        res += g.dt * (op.energy_c_omega(u[n] + phi[n]) - op.energy_c_omega(u[n]))
        res += _inner(g, u[n] - u[n - 1], phi[n])
    return res


def interior_bump(grid, center=0.0, width=None):
    """Smooth bump supported strictly inside Omega, max value 1."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    if width is None:
        width = 0.5 * min(hi - lo for lo, hi in zip(grid.omega_lo, grid.omega_hi))
    r = np.sqrt(((grid.centers - c) ** 2).sum(axis=1))
    b = np.maximum(1.0 - (r / width) ** 2, 0.0) ** 2
    b[~grid.interior] = 0.0
    return b


def step_diagnostics_table(traj):
    return [asdict(d) for d in traj.diagnostics]
