"""Analytic toolbox: parabolic Sobolev inequality, iteration lemmas and
two elementary convexity inequalities, with seeded adversarial generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


# --- parabolic fractional Sobolev inequality --------------------------------

def sobolev_sides(values, grid, cells, levels, s, p, r):
    """Both sides of the parabolic Sobolev inequality, RHS without its constant.

    ``values`` is (n_times, n_cells); ``cells`` are the cells of B_r and
    ``levels`` the time levels of (t1, t2], each weighted by dt.

    LHS = int fint_B |f|^{p(1+2s/N)}
    RHS = (r^{sp} int int_B fint_B |f(x)-f(y)|^p / |x-y|^{N+sp} + int fint_B |f|^p)
          * (max_t fint_B |f|^2)^{sp/N}
    """
    if not 0 < s < 1 or p < 1:
        raise ValueError("need 0 < s < 1 and p >= 1")
    levels = np.asarray(levels)
    cells = np.asarray(cells)
    if levels.size == 0:
        raise ValueError("degenerate time interval")
    if cells.size == 0:
        raise ValueError("empty ball")
    N = grid.dim
    f = np.atleast_2d(np.asarray(values, dtype=float))[levels][:, cells]
    dt = grid.dt
    kappa = 1.0 + 2.0 * s / N
    lhs = dt * math.fsum(np.mean(np.abs(f) ** (p * kappa), axis=1))
    d = grid.distances[np.ix_(cells, cells)]
    w = np.zeros_like(d)
    off = d > 0
    w[off] = grid.cell_volume**2 / d[off] ** (N + s * p)
    vol = cells.size * grid.cell_volume
    local = np.arange(cells.size)
    semi = dt * math.fsum(kernels.pair_energy(row, w, None, p, p, local, local) for row in f) / vol
    lp = dt * math.fsum(np.mean(np.abs(f) ** p, axis=1))
    sup2 = float(np.max(np.mean(f * f, axis=1)))
    rhs = (r ** (s * p) * semi + lp) * sup2 ** (s * p / N)
    return lhs, rhs


# --- Lemma: absorption (iteration over shrinking intervals) -----------------

@dataclass(frozen=True)
class AbsorptionResult:
    c: float
    lam: float
    bound: float


def absorption_constant(exponents, vartheta):
    """c = (1 - lam)^{-m} (1 + vartheta) / (1 - vartheta), lam = ((1+vartheta)/2)^{1/m}.

    m is the largest exponent. Chaining the hypothesis along
    t_{i+1} = t_i + (1 - lam) lam^i (R - rho) gives the conclusion with this c.
    """
    if not 0 <= vartheta < 1:
        raise ValueError("vartheta must lie in [0, 1)")
    exponents = tuple(float(e) for e in exponents)
    if any(e <= 0 for e in exponents):
        raise ValueError("exponents must be positive")
    m = max(exponents)
    lam = ((1.0 + vartheta) / 2.0) ** (1.0 / m)
    return (1.0 - lam) ** (-m) * (1.0 + vartheta) / (1.0 - vartheta), lam


def absorption_iteration(A, B, C, D, E, alpha, beta, gamma, delta, vartheta, rho, R):
    if min(A, B, C, D, E) < 0:
        raise ValueError("A..E must be nonnegative")
    if not rho < R:
        raise ValueError("need rho < R")
    c, lam = absorption_constant((alpha, beta, gamma, delta), vartheta)
    L = R - rho
    bound = c * (A * L**-alpha + B * L**-beta + C * L**-gamma + D * L**-delta + E)
    return AbsorptionResult(c, lam, bound)


def absorption_adversary(rng, n_grid=400):
    """Largest Z on a uniform grid of [rho, R] satisfying the hypothesis.

    Backward recursion Z(t_i) = min_{j > i} [F(t_j - t_i) + vartheta Z(t_j)],
    starting from a random bounded Z(R). Returns (Z(rho), conclusion bound).
    """
    ex = rng.uniform(0.2, 3.0, size=4)
    coef = rng.uniform(0.0, 1.0, size=5) * (rng.random(5) < 0.8)
    vartheta = rng.uniform(0.0, 0.9)
    rho = rng.uniform(0.0, 1.0)
    R = rho + rng.uniform(0.1, 2.0)
    t = np.linspace(rho, R, n_grid + 1)

    def F(gap):
        return (coef[0] * gap ** -ex[0] + coef[1] * gap ** -ex[1] + coef[2] * gap ** -ex[2]
                + coef[3] * gap ** -ex[3] + coef[4])

    res = absorption_iteration(*coef, *ex, vartheta, rho, R)
    Z = np.empty(t.size)
    Z[-1] = rng.uniform(0.0, 1.0) * max(F(R - rho), 1e-300) * 10
    for i in range(t.size - 2, -1, -1):
        Z[i] = np.min(F(t[i + 1:] - t[i]) + vartheta * Z[i + 1:])
    return float(Z[0]), res.bound


# --- Lemma: geometric convergence -------------------------------------------

def geometric_threshold(C, b, alpha):
    """C^{-1/alpha} b^{-1/alpha^2}."""
    if C <= 1 or b <= 1:
        raise ValueError("need C > 1 and b > 1")
    if alpha <= 0:
        raise ValueError("need alpha > 0")
    return C ** (-1.0 / alpha) * b ** (-1.0 / alpha**2)


def geometric_recursion(Y0, C, b, alpha, steps, cap=math.inf):
    """Y_{n+1} = C b^n Y_n^{1+alpha}; stops early once Y exceeds ``cap``."""
    ys = [float(Y0)]
    for n in range(steps):
        y = ys[-1]
        if y > cap:
            break
        if y == 0.0:
            ys.append(0.0)
            continue
        # direct product unless it would overflow
        ly = math.log(C) + n * math.log(b) + (1 + alpha) * math.log(y)
        ys.append(C * b**n * y ** (1 + alpha) if ly < 700 else math.inf)
    return np.array(ys)


# --- Lemma: interpolation ---------------------------------------------------

def interpolation_bound(C, b, K, alpha):
    """(2C / b^{1-1/alpha})^{1/alpha} + 2K."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if C <= 1 or b <= 1 or K <= 0:
        raise ValueError("need C > 1, b > 1 and K > 0")
    return (2.0 * C * b ** (1.0 / alpha - 1.0)) ** (1.0 / alpha) + 2.0 * K


def interpolation_adversary(rng, length=40):
    """Equibounded sequence with equality Y_n = C b^n Y_{n+1}^{1-alpha} + K.

    Built backward from Y_L on the natural growth scale (C b^L)^{1/alpha},
    in log space. Returns (Y_0, bound, (C, b, K, alpha)).
    """
    C = math.exp(rng.uniform(0.0, 3.0)) + 1e-3
    b = math.exp(rng.uniform(0.01, 2.0))
    K = math.exp(rng.uniform(-3.0, 3.0))
    alpha = rng.uniform(0.05, 0.95)
    ly = (math.log(C) + length * math.log(b)) / alpha + rng.uniform(-3.0, 3.0)
    for n in range(length - 1, -1, -1):
        ly = np.logaddexp(math.log(C) + n * math.log(b) + (1 - alpha) * ly, math.log(K))
    return math.exp(ly), interpolation_bound(C, b, K, alpha), (C, b, K, alpha)


# --- elementary inequalities ------------------------------------------------

def cozzi_ineq_1(a, b, r):
    """Slack of a^r - (a+b)^r <= -b^r/2 - r a^{r-1} b / 2 (nonnegative when it holds)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r < 1):
        raise ValueError("need r >= 1")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("need a, b >= 0")
    return (a + b) ** r - a**r - 0.5 * b**r - 0.5 * r * a ** (r - 1) * b


def cozzi_ineq_2(a, b, delta, r):
    """Slack of |delta a - b|^r - |a - b|^r <= r b^{r-1} a."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    delta = np.asarray(delta, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r < 1):
        raise ValueError("need r >= 1")
    if np.any((delta < 0) | (delta > 1)):
        raise ValueError("need delta in [0, 1]")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("need a, b >= 0")
    return r * b ** (r - 1) * a - (np.abs(delta * a - b) ** r - np.abs(a - b) ** r)


def cozzi_draws(rng, n):
    """Random (a, b, delta, r) with a, b in [0, 2] (some exact zeros), r in [1, 4]."""
    a = rng.uniform(0.0, 2.0, n)
    b = rng.uniform(0.0, 2.0, n)
    a[rng.random(n) < 0.02] = 0.0
    b[rng.random(n) < 0.02] = 0.0
    r = rng.uniform(1.0, 4.0, n)
    r[rng.random(n) < 0.02] = 1.0
    delta = rng.uniform(0.0, 1.0, n)
    return a, b, delta, r


# --- self test --------------------------------------------------------------

def selftest(seed=0, n_adversarial=100, n_cozzi=100_000):
    """Run every lemma check; returns a list of (name, passed, detail) rows."""
    rng = np.random.default_rng(seed)
    rows = []

    th = geometric_threshold(2.0, 2.0, 1.0)
    rows.append(("geometric_threshold(2,2,1) == 0.25", th == 0.25, th))
    ys = geometric_recursion(th, 2.0, 2.0, 1.0, 50)
    rows.append(("Y_50 < 1e-12 from threshold", ys[50] < 1e-12, float(ys[50])))
    ys = geometric_recursion(1.0, 2.0, 2.0, 1.0, 200, cap=1e6)
    rows.append(("divergence from Y_0 = 1 within 200 steps", bool(ys[-1] > 1e6), len(ys) - 1))

    worst = math.inf
    for _ in range(n_adversarial):
        y0, bound, _ = interpolation_adversary(rng)
        worst = min(worst, (bound - y0) / bound)
    rows.append(("interpolation lemma adversarial", worst >= -1e-10, worst))

    worst = math.inf
    for _ in range(n_adversarial):
        z, bound = absorption_adversary(rng)
        worst = min(worst, (bound - z) / max(bound, 1e-300))
    rows.append(("absorption lemma adversarial", worst >= -1e-10, worst))

    a, b, d, r = cozzi_draws(rng, n_cozzi)
    m1 = float(np.min(cozzi_ineq_1(a, b, r)))
    m2 = float(np.min(cozzi_ineq_2(a, b, d, r)))
    rows.append(("cozzi inequality 1", m1 >= -1e-12, m1))
    rows.append(("cozzi inequality 2", m2 >= -1e-12, m2))
    return rows


# --- Sobolev constant fit ---------------------------------------------------

def fourier_field(rng, modes=4):
    """Seeded smooth space-time field on [-1, 1]^N x [0, 1] as a callable f(x, t)."""
    amp = rng.normal(size=modes) / (1.0 + np.arange(modes))
    kx = rng.integers(1, 6, size=(modes, 2))
    phase = rng.uniform(0.0, 2.0 * math.pi, size=(modes, 2))
    freq_t = rng.uniform(0.5, 3.0, size=modes)

    def f(x, t):
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0])
        for a, k, ph, w in zip(amp, kx, phase, freq_t):
            sx = np.ones(x.shape[0])
            for d in range(x.shape[1]):
                sx = sx * np.cos(0.5 * math.pi * k[d] * x[:, d] + ph[d])
            out += a * sx * (1.0 + 0.5 * math.sin(w * t + ph[0]))
        return out

    return f


def sobolev_fit(n, *, seed=0, fields=20, dim=1, s=0.5, p=2.0, radius=0.75, dt=0.05, steps=10):
    """Per-field ratio LHS/RHS of the Sobolev inequality on B_radius x (0, steps dt].

    The same seeded continuous fields are sampled at every n, so fits at n
    and 2n are comparable. Returns the array of ratios; its max is C_fit.
    """
    from .geometry import Grid

    g = Grid.build(dim, 1.0, n, 0.75, dt, steps)
    cells = np.flatnonzero(g.ball(np.zeros(dim), radius))
    levels = np.arange(1, steps + 1)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(fields):
        f = fourier_field(rng)
        vals = np.array([f(g.centers, t) for t in g.times])
        lhs, rhs = sobolev_sides(vals, g, cells, levels, s, p, radius)
        ratios.append(lhs / rhs)
    return np.array(ratios)
