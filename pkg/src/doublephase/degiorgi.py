"""Level-set machinery: truncations, the Caccioppoli inequality, recursive
level estimates and the explicit local-boundedness bounds.

Every function takes a trajectory-like object ``u`` with ``.grid`` and
``.values`` (shape (n_times, n_cells)); Trajectory and GridFunction both
qualify. Space integrals use the cell-midpoint rule, time integrals the
right-endpoint rule over the levels t0 - theta < t_n <= t0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Cylinder, TimeRamp, cutoff_in_time
from .kernel_energy import Coefficient, NonlocalEnergy, tail
from .lemmas import geometric_threshold

_RELTOL = 1e-12


def _unpack(u):
    return u.grid, np.asarray(u.values, dtype=float)


# --- truncations ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelTruncation:
    """w = (u - k)_+ (sign '+') or (u - k)_- = (k - u)_+ (sign '-')."""

    level: float
    sign: str
    values: np.ndarray
    mask: np.ndarray

    def level_set(self, cells, levels):
        """A_sign(k, r, I) restricted to the given cells and time levels."""
        return self.mask[np.ix_(np.asarray(levels), np.asarray(cells))]


def truncate(u, k, sign="+"):
    v = np.asarray(getattr(u, "values", u), dtype=float)
    if sign == "+":
        w = np.maximum(v - k, 0.0)
        mask = v > k
    elif sign == "-":
        w = np.maximum(k - v, 0.0)
        mask = v < k
    else:
        raise ValueError("sign must be '+' or '-'")
    w.setflags(write=False)
    return LevelTruncation(float(k), sign, w, mask)


def reconstruct(k, w_plus, w_minus):
    """k + w_+ - w_-; equals u exactly whenever u - k is representable."""
    return k + np.asarray(w_plus) - np.asarray(w_minus)


# --- small helpers ----------------------------------------------------------

def _cells(grid, x0, radius):
    c = np.flatnonzero(grid.ball(x0, radius))
    if c.size == 0:
        raise ValueError(f"ball of radius {radius} contains no cell centre")
    return c


def _levels(grid, t0, height):
    lv = grid.time_window(t0, height)
    if lv.size == 0:
        raise ValueError(f"time window ({t0 - height}, {t0}] contains no level")
    return lv


def _int_avg(grid, w, cells, levels, power=1.0):
    """int_I fint_B w^power (time integral, space average)."""
    block = w[np.ix_(levels, cells)]
    if power != 1.0:
        block = block**power
    return grid.dt * math.fsum(block.mean(axis=1))


def _int_int(grid, w, cells, levels, power=1.0):
    """int_I int_B w^power."""
    return _int_avg(grid, w, cells, levels, power) * cells.size * grid.cell_volume


def _avg_avg(grid, w, cells, levels, power=1.0):
    block = w[np.ix_(levels, cells)]
    if power != 1.0:
        block = block**power
    return math.fsum(block.mean(axis=1)) / levels.size


def _check_ball_in_omega(grid, x0, R):
    Cylinder(tuple(np.atleast_1d(x0)), grid.horizon, R, grid.horizon).check_inside(grid, in_omega=True)


def _local_energy(op, w_row, cells):
    return op.energy(w_row, cells, cells)


def sigma_bracket(exp, sigma):
    """1/(sigma^{ps}(1-sigma)^{N+ps}) + 1/(sigma^{qs'}(1-sigma)^{N+qs'}) + 1/(1-sigma)^q."""
    N, sp, qs = exp.N, exp.sp, exp.qs
    return (1.0 / (sigma**sp * (1 - sigma) ** (N + sp))
            + 1.0 / (sigma**qs * (1 - sigma) ** (N + qs))
            + 1.0 / (1 - sigma) ** exp.q)


def b_tilde(exp, sigma, delta):
    """The bracket raised to (1 + sp/N)(delta/(p kappa))."""
    return sigma_bracket(exp, sigma) ** ((1 + exp.sp / exp.N) * delta / (exp.p * exp.kappa))


# --- Caccioppoli ------------------------------------------------------------

@dataclass
class CaccioppoliReport:
    lhs_sup: float
    lhs_energy: float
    T1: float
    T2: float
    T3: float
    T4: float
    T5: float
    geometry: dict = field(default_factory=dict)

    @property
    def lhs(self):
        return self.lhs_sup + self.lhs_energy

    @property
    def rhs(self):
        return self.T1 + self.T2 + self.T3 + self.T4 + self.T5

    @property
    def C_fit(self):
        if self.lhs == 0.0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else math.inf

    def holds_with(self, C):
        return self.lhs <= C * self.rhs * (1 + _RELTOL)

    def to_dict(self):
        d = asdict(self)
        d.update(lhs=self.lhs, rhs=self.rhs, C_fit=self.C_fit)
        return d


def check_cutoff(psi, grid, t0, theta, tau1, tau2):
    """psi in [0,1], psi = 0 on (t0-theta, t0-tau2], psi = 1 on [t0-tau1, t0] (grid times)."""
    t = grid.times
    v = np.asarray(psi(t), dtype=float)
    tol = 1e-12
    inside = (t > t0 - theta) & (t <= t0 + 1e-9 * grid.dt)
    if np.any((v < -tol) | (v > 1 + tol)):
        raise ValueError("cutoff leaves [0, 1]")
    if np.any(np.abs(v[inside & (t <= t0 - tau2 + 1e-9 * grid.dt)]) > tol):
        raise ValueError("cutoff must vanish on (t0 - theta, t0 - tau2]")
    if np.any(np.abs(v[inside & (t >= t0 - tau1 - 1e-9 * grid.dt)] - 1) > tol):
        raise ValueError("cutoff must equal 1 on [t0 - tau1, t0]")


def caccioppoli_sides(u, exp, coef, x0, t0, R, r, theta, tau1, tau2, k, psi=None):
    """Both sides of the Caccioppoli inequality for w_+ = (u - k)_+.

    Constraints follow the displayed statement: 0 < r < R, B_R inside
    Omega, theta/2 <= tau1 < tau2 < theta, t0 - theta >= 0. ``psi``
    defaults to the linear ramp from t0 - tau2 to t0 - tau1. The tails
    in T3/T4 are taken over I_{tau2}, the window the RHS integrates over.
    """
    grid, values = _unpack(u)
    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    if not theta / 2 <= tau1 < tau2 < theta:
        raise ValueError("need theta/2 <= tau1 < tau2 < theta")
    _check_ball_in_omega(grid, x0, R)
    Cylinder(tuple(np.atleast_1d(x0)), t0, R, theta).check_inside(grid)
    psi = TimeRamp(t0 - tau2, t0 - tau1) if psi is None else psi
    check_cutoff(psi, grid, t0, theta, tau1, tau2)

    N, p, q, s, s2 = exp.N, exp.p, exp.q, exp.s, exp.s_prime
    w = truncate(values, k).values
    hN = grid.cell_volume
    small = _cells(grid, x0, r)
    big = _cells(grid, x0, R)
    lv1 = _levels(grid, t0, tau1)
    lv2 = _levels(grid, t0, tau2)

    op = NonlocalEnergy(grid, exp, coef)
    lhs_sup = max(hN * math.fsum(w[n, small] ** 2) for n in lv1)
    lhs_energy = grid.dt * math.fsum(_local_energy(op, w[n], small) for n in lv1)

    T1 = R ** (p * (1 - s)) / (R - r) ** p * _int_int(grid, w, big, lv2, p)
    T2 = R ** (q * (1 - s2)) / (R - r) ** q * _int_int(grid, w, big, lv2, q)
    l1 = _int_int(grid, w, big, lv2)
    tail_p = tail(w, grid, p, s, x0, r, lv2)
    tail_q = tail(w, grid, q, s2, x0, r, lv2)
    T3 = R**N / (R - r) ** (N + s * p) * l1 * tail_p ** (p - 1)
    T4 = R**N / (R - r) ** (N + s2 * q) * l1 * tail_q ** (q - 1)
    t = grid.times
    pv = np.asarray(psi(t), dtype=float)
    slopes = np.abs(np.diff(pv)) / grid.dt  # slope at level n is slopes[n-1]
    T5 = grid.dt * math.fsum(
        slopes[n - 1] * hN * math.fsum(w[n, big] ** 2) for n in lv2 if n >= 1
    )
    geo = {
        "x0": list(np.atleast_1d(x0).astype(float)), "t0": t0, "R": R, "r": r,
        "theta": theta, "tau1": tau1, "tau2": tau2, "k": k,
        "n_cells_r": int(small.size), "n_cells_R": int(big.size),
        "n_levels_tau1": int(lv1.size), "n_levels_tau2": int(lv2.size),
        "tail_p": tail_p, "tail_q": tail_q,
    }
    return CaccioppoliReport(lhs_sup, lhs_energy, T1, T2, T3, T4, T5, geo)


def caccioppoli_groups(rep, exp, coef, u, k):
    """Terms grouped by homogeneity degree under (u, k) -> (lam u, lam k).

    degree 2: sup term and T5; degree p: T1 and T3 (plus the energy when
    a = 0); degree q: T2 and T4.
    """
    return {
        "2": (rep.lhs_sup, rep.T5),
        "p": (rep.lhs_energy, rep.T1 + rep.T3),
        "q": (0.0, rep.T2 + rep.T4),
    }


def random_caccioppoli_tuple(rng, grid, *, R_range=(0.3, 0.6), t0=None):
    """Seeded admissible (x0, t0, R, r, theta, tau1, tau2, k_fraction, psi).

    The level is stored as a fraction of max u on B_r x I_{tau1}; see
    level_from_fraction. Keeping it relative makes one tuple meaningful
    on grids of different resolution.
    """
    lo = np.asarray(grid.omega_lo)
    hi = np.asarray(grid.omega_hi)
    h = grid.h
    # radii and centre sit on cell edges, so every dyadic refinement of
    # the grid covers exactly the same balls (in 1D)
    R = h * max(3, round(rng.uniform(*R_range) / h))
    R = min(R, h * math.floor(float(np.min(hi - lo)) / 2 / h + 1e-9))
    x0 = tuple(h * np.round(rng.uniform(lo + R, hi - R) / h))
    r = h * min(max(2, round(R * rng.uniform(0.5, 0.8) / h)), round(R / h) - 1)
    T = grid.horizon if t0 is None else t0
    theta = rng.uniform(0.4, 0.9) * T
    if t0 is None:
        t0 = min(max(grid.snap_time(rng.uniform(theta, T)), theta), T)
    tau1 = theta * rng.uniform(0.5, 0.7)
    tau2 = theta * rng.uniform(0.75, 0.95)
    frac = float(rng.uniform(0.1, 0.7))
    if rng.random() < 0.5:
        psi = TimeRamp(t0 - tau2, t0 - tau1)
    else:
        psi = _SmoothStep(t0 - tau2, t0 - tau1)
    return dict(x0=x0, t0=t0, R=R, r=r, theta=theta, tau1=tau1, tau2=tau2, k_fraction=frac, psi=psi)


def level_from_fraction(u, x0, r, t0, tau1, fraction):
    """k = fraction * max of u on B_r x I_{tau1}."""
    grid, values = _unpack(u)
    top = _esssup(grid, values, x0, r, t0, tau1)
    return fraction * top


def caccioppoli_from_tuple(u, exp, coef, tup):
    """caccioppoli_sides for a tuple from random_caccioppoli_tuple."""
    t = dict(tup)
    frac = t.pop("k_fraction")
    t["k"] = level_from_fraction(u, t["x0"], t["r"], t["t0"], t["tau1"], frac)
    return caccioppoli_sides(u, exp, coef, **t)


@dataclass(frozen=True)
class _SmoothStep:
    start: float
    end: float

    def __call__(self, t):
        x = np.clip((np.asarray(t, dtype=float) - self.start) / (self.end - self.start), 0.0, 1.0)
        return x * x * (3.0 - 2.0 * x)


# --- recursive estimates ----------------------------------------------------

def _require_delta(exp, delta):
    if delta < max(exp.p, exp.q, 2.0):
        raise ValueError(f"need delta >= max(p, q, 2) = {max(exp.p, exp.q, 2.0)}, got {delta}")


def _schedule_geometry(schedule):
    if schedule.t0 is None:
        raise ValueError("schedule needs a reference time t0")
    return np.asarray(schedule.x0, dtype=float), float(schedule.t0)


def admissible_level(u, exp, schedule):
    """The two half-tails at sigma R over I_0 that k~ must dominate."""
    grid, values = _unpack(u)
    x0, t0 = _schedule_geometry(schedule)
    lv0 = _levels(grid, t0, schedule.theta)
    up = np.maximum(values, 0.0)
    r = schedule.sigma * schedule.R
    return (tail(up, grid, exp.p, exp.s, x0, r, lv0) / 2,
            tail(up, grid, exp.q, exp.s_prime, x0, r, lv0) / 2)


@dataclass
class RecursionRecord:
    j: int
    lhs: float
    rhs: float
    bracket_sigma: float
    bracket_levels: float
    integral: float

    @property
    def C_fit(self):
        if self.lhs == 0.0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


def recursive_rhs(u, exp, coef, schedule, delta, j):
    """Both sides of the first recursive estimate (C-free RHS).

    LHS = sup_{I_{j+1}} fint_{B_{j+1}} w~_j^2 + int_{I_{j+1}} int_{B_{j+1}} fint_{B_{j+1}} H(w~_j)/|x-y|^N
    RHS = [sigma bracket] [level bracket] int_{I_j} fint_{B_j} w~_j^delta
    """
    grid, values = _unpack(u)
    _require_delta(exp, delta)
    if not 0 <= j < schedule.J:
        raise ValueError(f"j must lie in 0..{schedule.J - 1}")
    x0, t0 = _schedule_geometry(schedule)
    kt = schedule.k_tilde
    need = max(admissible_level(u, exp, schedule))
    if kt < need * (1 - _RELTOL):
        raise ValueError(f"k_tilde={kt} below the admissible tail level {need}")
    N, p, q, sp, qs = exp.N, exp.p, exp.q, exp.sp, exp.qs
    R, theta = schedule.R, schedule.theta
    w = truncate(values, schedule.levels_mid[j]).values
    Bj, Bj1 = _cells(grid, x0, schedule.radii[j]), _cells(grid, x0, schedule.radii[j + 1])
    Ij, Ij1 = _levels(grid, t0, schedule.heights[j]), _levels(grid, t0, schedule.heights[j + 1])
    op = NonlocalEnergy(grid, exp, coef)
    vol1 = Bj1.size * grid.cell_volume
    sup = max(math.fsum(w[n, Bj1] ** 2) / Bj1.size for n in Ij1)
    en = grid.dt * math.fsum(_local_energy(op, w[n], Bj1) for n in Ij1) / vol1
    brs = sigma_bracket(exp, schedule.sigma)
    brl = (2.0 ** ((N + sp + delta - 1) * j) / (R**sp * kt ** (delta - p))
           + 2.0 ** ((N + qs + delta - 1) * j) / (R**qs * kt ** (delta - q))
           + 2.0 ** ((sp + delta - 2) * j) / (theta * kt ** (delta - 2)))
    integral = _int_avg(grid, w, Bj, Ij, delta)
    return RecursionRecord(j, sup + en, brs * brl * integral, brs, brl, integral)


def truncation_domination(u, schedule, q, tau, j):
    """Max pointwise violation of w~_j^tau <= 4^{q-tau} 2^{(q-tau) j} k~^{tau-q} w_j^q.

    The constant comes from k~_j - k_j = k~ 2^{-j-2}. For tau = 0 the left
    side is the indicator of {u >= k~_j}. Returns max(lhs - rhs) scaled by
    max(1, rhs); nonpositive means no violation.
    """
    if not 0 <= tau < q:
        raise ValueError("need 0 <= tau < q")
    values = np.asarray(getattr(u, "values", u), dtype=float)
    kt = schedule.k_tilde
    kj, kmid = (1 - 2.0**-j) * kt, schedule.levels_mid[j] if j <= schedule.J else None
    if kmid is None:
        raise IndexError("j outside the schedule")
    wj = np.maximum(values - kj, 0.0)
    wt = np.maximum(values - kmid, 0.0)
    lhs = (values >= kmid).astype(float) if tau == 0 else wt**tau
    C = 4.0 ** (q - tau)
    rhs = C * 2.0 ** ((q - tau) * j) / kt ** (q - tau) * wj**q
    viol = (lhs - rhs) / np.maximum(1.0, rhs)
    return {"j": j, "tau": tau, "C": C, "max_violation": float(viol.max())}


# --- Y sequence -------------------------------------------------------------

@dataclass
class YSequenceReport:
    Y: np.ndarray
    A_k: float
    B_tilde: float
    b: float
    exponent: float
    slope_raw: float
    slope_model: float
    C_fit: float
    used: list

    def to_dict(self):
        d = asdict(self)
        d["Y"] = self.Y.tolist()
        return d


def _slope(x, y):
    if len(x) < 2:
        return math.nan
    x = np.asarray(x)
    y = np.asarray(y)
    xc = x - x.mean()
    den = float(xc @ xc)
    return float(xc @ (y - y.mean()) / den) if den > 0 else math.nan


def recursion_b(exp, delta):
    return (1 + exp.sp / exp.N) * (exp.N + max(exp.sp, exp.qs) + delta)


def theorem_b(exp, delta):
    return exp.kappa * (exp.N + max(exp.sp, exp.qs) + delta)


def y_sequence(u, exp, schedule, delta, floor=1e-14):
    """Y_j = R^{-sp} int_{I_j} fint_{B_j} w_j^delta for j = 0..J, with fits.

    slope_raw regresses log Y_{j+1} on log Y_j. slope_model regresses
    log(Y_{j+1} / (2^{bj} B~)) on log(A_k Y_j), i.e. it fits the exponent
    of the second recursive estimate with its explicit 2^{bj} factor. Only
    pairs with both Y values above ``floor`` enter the fits. C_fit is the
    smallest C making the estimate hold at every j.
    """
    grid, values = _unpack(u)
    _require_delta(exp, delta)
    x0, t0 = _schedule_geometry(schedule)
    N, p, q, sp, qs = exp.N, exp.p, exp.q, exp.sp, exp.qs
    R, theta, kt = schedule.R, schedule.theta, schedule.k_tilde
    Y = np.empty(schedule.J + 1)
    for j in range(schedule.J + 1):
        w = np.maximum(values - schedule.levels[j], 0.0)
        Bj = _cells(grid, x0, schedule.radii[j])
        Ij = _levels(grid, t0, schedule.heights[j])
        Y[j] = _int_avg(grid, w, Bj, Ij, delta) / R**sp
    A_k = 1.0 / kt ** (delta - p) + R ** (sp - qs) / kt ** (delta - q) + R**sp / (theta * kt ** (delta - 2))
    Bt = b_tilde(exp, schedule.sigma, delta)
    b = recursion_b(exp, delta)
    e = 1.0 + exp.s * delta / (N * exp.kappa)
    used = [j for j in range(schedule.J) if Y[j] > floor and Y[j + 1] > floor]
    xs = [math.log(Y[j]) for j in used]
    ys = [math.log(Y[j + 1]) for j in used]
    slope_raw = _slope(xs, ys)
    xm = [math.log(A_k * Y[j]) for j in used]
    ym = [math.log(Y[j + 1]) - b * j * math.log(2.0) - math.log(Bt) for j in used]
    slope_model = _slope(xm, ym)
    ratios = [Y[j + 1] / (2.0 ** (b * j) * Bt * (A_k * Y[j]) ** e)
              for j in range(schedule.J) if Y[j] > 0]
    C_fit = max(ratios) if ratios else 0.0
    return YSequenceReport(Y, A_k, Bt, b, e, slope_raw, slope_model, C_fit, used)


# --- bounds -----------------------------------------------------------------

@dataclass
class BoundReport:
    regime: str
    tail_p: float
    tail_q: float
    data_average: float
    third_term: float
    bound: float
    esssup: float
    constants: dict
    k_tilde: float = math.nan
    admissible: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def margin(self):
        return self.bound - self.esssup

    def to_dict(self):
        d = asdict(self)
        d["margin"] = self.margin
        return d

    def summary_row(self):
        return {
            "regime": self.regime, "bound": self.bound, "esssup": self.esssup,
            "margin": self.margin, "tail_p": self.tail_p, "tail_q": self.tail_q,
            "data_average": self.data_average, "third_term": self.third_term,
            "k_tilde": self.k_tilde,
        }


def _tails(grid, values, exp, x0, radius, levels):
    up = np.maximum(values, 0.0)
    return (tail(up, grid, exp.p, exp.s, x0, radius, levels),
            tail(up, grid, exp.q, exp.s_prime, x0, radius, levels))


def _esssup(grid, values, x0, radius, t0, height):
    c = _cells(grid, x0, radius)
    lv = _levels(grid, t0, height)
    return float(values[np.ix_(lv, c)].max())


def supercritical_constants(exp, R, sigma, delta):
    if exp.regime != "supercritical":
        raise ValueError("supercritical bound needs p > 2N/(2s+N)")
    if not exp.q < delta < exp.p_star:
        raise ValueError(f"delta must lie in (q, p_*) = ({exp.q}, {exp.p_star})")
    tau = min(delta - exp.q, delta - exp.p, delta - 2.0)
    if tau <= 0:
        raise ValueError("tau = min(delta-q, delta-p, delta-2) must be positive; perturb delta")
    N, s, kappa = exp.N, exp.s, exp.kappa
    b = theorem_b(exp, delta)
    denom = N * kappa + s * delta
    return {
        "kappa": kappa, "b": b, "b_recursion": recursion_b(exp, delta), "tau": tau,
        "A": 2.0 + R ** (exp.sp - exp.qs), "B_tilde": b_tilde(exp, sigma, delta),
        "exp_two": b * N**2 * kappa**2 / (s * delta * tau * denom),
        "exp_B": N * kappa / (tau * denom),
        "exp_A": 1.0 / tau,
        "exp_avg": s * delta / (tau * denom),
        "theta": R**exp.sp, "delta": delta, "sigma": sigma,
    }


def supercritical_prefactor(cst):
    """Everything in the third term except C and the data average."""
    return 2.0 ** cst["exp_two"] * cst["B_tilde"] ** cst["exp_B"] * cst["A"] ** cst["exp_A"]


def supercritical_bound(u, exp, x0, t0, R, sigma, delta, C_cal, k_tilde=None):
    """Assemble the supercritical estimate with theta = R^{sp}.

    bound = Tail_p(u_+; R/2) + Tail_q(u_+; R/2) + max(C_cal X avg^e, 1), where
    the last max is the declared meaning of the wedge. ess-sup is taken on
    Q_{sigma R, sigma R^{sp}}. A ``k_tilde`` above the rule's level may be
    imposed; the bound then becomes max(bound, k_tilde).
    """
    grid, values = _unpack(u)
    cst = supercritical_constants(exp, R, sigma, delta)
    theta = cst["theta"]
    _check_ball_in_omega(grid, x0, R)
    Cylinder(tuple(np.atleast_1d(x0)), t0, R, theta).check_inside(grid)
    lv0 = _levels(grid, t0, theta)
    big = _cells(grid, x0, R)
    tp, tq = _tails(grid, values, exp, x0, R / 2, lv0)
    avg = _avg_avg(grid, np.maximum(values, 0.0), big, lv0, delta)
    raw = C_cal * supercritical_prefactor(cst) * avg ** cst["exp_avg"]
    third = max(raw, 1.0)
    bound = tp + tq + third
    esssup = _esssup(grid, values, x0, sigma * R, t0, sigma * theta)
    hp, hq = _tails(grid, values, exp, x0, sigma * R, lv0)
    rule = max(tp, tq, hp / 2, hq / 2, third)
    if k_tilde is None:
        k_tilde = rule
    elif k_tilde < rule * (1 - _RELTOL):
        raise ValueError(f"k_tilde={k_tilde} below the rule's level {rule}")
    else:
        bound = max(bound, k_tilde)
    admissible = k_tilde >= max(hp, hq) / 2 and k_tilde > 0
    cst.update(C_cal=C_cal, third_raw=raw, k_tilde_rule=rule, half_tail_p_sigmaR=hp / 2, half_tail_q_sigmaR=hq / 2)
    return BoundReport("supercritical", tp, tq, avg, third, bound, esssup, cst,
                       k_tilde, admissible,
                       {"n_cells": int(big.size), "n_levels": int(lv0.size)})


def supercritical_needed_constant(u, exp, x0, t0, R, sigma, delta):
    """Smallest C_cal for which the supercritical bound holds on this run."""
    rep = supercritical_bound(u, exp, x0, t0, R, sigma, delta, 0.0)
    gap = rep.esssup - rep.tail_p - rep.tail_q
    if gap <= 1.0:
        return 0.0
    X = supercritical_prefactor(rep.constants) * rep.data_average ** rep.constants["exp_avg"]
    return gap / X if X > 0 else math.inf


# --- limit case q = p_* -----------------------------------------------------

@dataclass
class LimitCaseRecord:
    k_tilde: float
    Y0: float
    threshold: float
    sweep: list
    constants: dict

    @property
    def found(self):
        return math.isfinite(self.k_tilde)

    def to_dict(self):
        return asdict(self)


def limit_case_check(u, exp, k_tilde, R, x0, t0, sigma=0.5, C_rec=1.0, max_doublings=60):
    """Doubling sweep for k~ until Y_0(k~) = fint fint (u - k~/2)_+^q drops below
    the geometric-convergence threshold of Y_{j+1} <= C_rec 2^{bj} B~ (A Y_j)^{1+alpha}.

    Here delta = q = p_*, alpha = s q / (N kappa), and the threshold is
    geometric_threshold(max(C_rec B~ A^{1+alpha}, 1+), 2^b, alpha).
    """
    if abs(exp.q - exp.p_star) > 1e-12 * exp.p_star:
        raise ValueError(f"limit case needs q = p_* = {exp.p_star}, got q = {exp.q}")
    if k_tilde <= 0:
        raise ValueError("starting k_tilde must be positive")
    grid, values = _unpack(u)
    theta = R**exp.sp
    _check_ball_in_omega(grid, x0, R)
    Cylinder(tuple(np.atleast_1d(x0)), t0, R, theta).check_inside(grid)
    big = _cells(grid, x0, R)
    lv0 = _levels(grid, t0, theta)
    delta = exp.q
    alpha = exp.s * delta / (exp.N * exp.kappa)
    A = 2.0 + R ** (exp.sp - exp.qs)
    Bt = b_tilde(exp, sigma, delta)
    b = recursion_b(exp, delta)
    Cg = max(C_rec * Bt * A ** (1 + alpha), 1.0 + 1e-12)
    thr = geometric_threshold(Cg, 2.0**b, alpha)
    sweep = []
    k = float(k_tilde)
    for _ in range(max_doublings + 1):
        y0 = _avg_avg(grid, np.maximum(values - k / 2, 0.0), big, lv0, delta)
        sweep.append((k, y0))
        if y0 <= thr:
            return LimitCaseRecord(k, y0, thr, sweep,
                                   {"alpha": alpha, "A": A, "B_tilde": Bt, "b": b, "C_rec": C_rec})
        k *= 2.0
    return LimitCaseRecord(math.inf, sweep[-1][1], thr, sweep,
                           {"alpha": alpha, "A": A, "B_tilde": Bt, "b": b, "C_rec": C_rec})


# --- subcritical case -------------------------------------------------------

def subcritical_r_branches(exp):
    N, s, p, q = exp.N, exp.s, exp.p, exp.q
    return {
        "two": 2.0,
        "q_branch": N * (2 - q) / (s * q) + 4.0 / q,
        "p_branch": N * (2 - p) / (s * p),
    }


def subcritical_r_threshold(exp):
    """max{2, N(2-q)/(sq) + 4/q, N(2-p)/(sp)}."""
    return max(subcritical_r_branches(exp).values())


def subcritical_exponent(exp, r):
    """sp / ((r-2)(N+sp) - N(r-p_*)); positive iff the absorption prerequisite holds."""
    N, sp = exp.N, exp.sp
    den = (r - 2) * (N + sp) - N * (r - exp.p_star)
    return sp / den if den > 0 else math.inf


def absorption_ratio(exp, r):
    """(r - p_*) N / ((r - 2)(N + ps)); must be < 1."""
    return (r - exp.p_star) * exp.N / ((r - 2) * (exp.N + exp.sp))


def interpolation_diagnostics(exp, r):
    """alpha with 1 = 2 alpha/q + 2(1-alpha)/r and gamma = (1 + sq/(kappa N)) 2alpha/q - 1."""
    q = exp.q
    alpha = q * (r - 2) / (2 * (r - q))
    gamma = (1 + exp.s * q / (exp.kappa * exp.N)) * (2 * alpha / q) - 1
    check = 2 * alpha / q + 2 * (1 - alpha) / r
    return {"alpha": alpha, "gamma": gamma, "interpolation_identity": check, "gamma_positive": gamma > 0}


def _check_r(exp, r, mode):
    br = subcritical_r_branches(exp)
    if mode == "H2":
        br = {"two": br["two"], "p_branch": br["p_branch"]}
    elif mode != "H1":
        raise ValueError("mode must be 'H1' or 'H2'")
    for name, val in br.items():
        if not r > val:
            raise ValueError(f"r={r} violates the {name} condition r > {val:.6g} ({mode})")


def subcritical_bound(u, exp, x0, t0, R, r, C_cal, mode="H1", sequence=None, tail_cap=None):
    """Assemble the subcritical estimate on Q_{R, R^{sp}}.

    bound = Tail_p(u_+; R/2) + Tail_q(u_+; R/2) + C_cal (fint fint |u|^r)^{e},
    e = sp / ((r-2)(N+sp) - N(r-p_*)); ess-sup on Q_{R/2, (R/2)^{sp}}.
    Under H2 ``sequence`` lists approximating trajectories; their tails must
    be finite (and below ``tail_cap`` if given), and u is the last one.
    """
    if exp.regime != "subcritical":
        raise ValueError("subcritical bound needs 1 < p <= 2N/(2s+N)")
    _check_r(exp, r, mode)
    ratio = absorption_ratio(exp, r)
    if not ratio < 1:
        raise ValueError(f"absorption prerequisite fails: (r-p_*)N/((r-2)(N+ps)) = {ratio}")
    diagnostics = {"absorption_ratio": ratio, "mode": mode}
    if mode == "H1":
        diagnostics.update(interpolation_diagnostics(exp, r))
    else:
        if not sequence:
            raise ValueError("H2 mode needs a sequence of bounded trajectories")
        tails = []
        for member in sequence:
            g, v = _unpack(member)
            lv = _levels(g, t0, R**exp.sp)
            tails.append(max(_tails(g, v, exp, x0, R / 2, lv)))
        if not all(math.isfinite(t) for t in tails):
            raise ValueError("H2 sequence has an infinite tail")
        if tail_cap is not None and max(tails) > tail_cap:
            raise ValueError(f"H2 tails not uniformly bounded by {tail_cap}")
        diagnostics["sequence_tails"] = tails
        u = sequence[-1]
    grid, values = _unpack(u)
    theta = R**exp.sp
    _check_ball_in_omega(grid, x0, R)
    Cylinder(tuple(np.atleast_1d(x0)), t0, R, theta).check_inside(grid)
    lv0 = _levels(grid, t0, theta)
    big = _cells(grid, x0, R)
    tp, tq = _tails(grid, values, exp, x0, R / 2, lv0)
    avg = _avg_avg(grid, np.abs(values), big, lv0, r)
    e = subcritical_exponent(exp, r)
    third = C_cal * avg**e
    bound = tp + tq + third
    esssup = _esssup(grid, values, x0, R / 2, t0, (R / 2) ** exp.sp)
    N, sp, qs = exp.N, exp.sp, exp.qs
    cst = {
        "exponent": e, "r": r, "r_threshold": subcritical_r_threshold(exp),
        "b_prime": (1 + sp / N) * (N + max(sp, qs) + r),
        "tau": min(r - exp.p, r - exp.q, r - 2),
        "A": (2 + R ** (sp - qs)) * sigma_bracket(exp, 0.5),
        "theta": theta, "C_cal": C_cal,
    }
    return BoundReport("subcritical", tp, tq, avg, third, bound, esssup, cst,
                       diagnostics=diagnostics)


def subcritical_needed_constant(u, exp, x0, t0, R, r, mode="H1"):
    rep = subcritical_bound(u, exp, x0, t0, R, r, 0.0, mode)
    gap = rep.esssup - rep.tail_p - rep.tail_q
    if gap <= 0:
        return 0.0
    X = rep.data_average ** rep.constants["exponent"]
    return gap / X if X > 0 else math.inf


__all__ = [
    "LevelTruncation", "truncate", "reconstruct", "CaccioppoliReport", "caccioppoli_sides",
    "recursive_rhs", "truncation_domination", "y_sequence", "BoundReport",
    "supercritical_bound", "limit_case_check", "subcritical_r_threshold", "subcritical_bound",
    "cutoff_in_time", "Coefficient",
]
