import math

import numpy as np
import pytest

from doublephase import degiorgi as dg
from doublephase.geometry import Grid, make_schedule
from doublephase.kernel_energy import Coefficient, Exponents, GridFunction

SUP = Exponents(1, 2.0, 2.5, 0.5, 0.5)
SUB = Exponents(2, 1.2, 1.2 * 1.3 * 0.9, 0.3, 0.3)


def _gf(grid, values):
    return GridFunction(grid, np.broadcast_to(values, (grid.steps + 1, grid.n_cells)))


@pytest.fixture(scope="module")
def g1():
    return Grid.build(1, 1.0, 16, 0.75, 0.025, 20)


# --- truncations ------------------------------------------------------------

def test_truncation_invariants(rng):
    u = rng.normal(size=(3, 40))
    for k in (-0.5, 0.0, 0.7):
        wp, wm = dg.truncate(u, k, "+"), dg.truncate(u, k, "-")
        assert np.all(wp.values >= 0) and np.all(wm.values >= 0)
        assert np.all(wp.values * wm.values == 0)
        assert np.allclose(dg.reconstruct(k, wp.values, wm.values), u, rtol=0, atol=1e-15)
        assert np.array_equal(wp.mask, u > k)
    with pytest.raises(ValueError):
        dg.truncate(u, 0.0, "*")


def test_truncation_exact_for_dyadic_values(rng):
    u = rng.integers(-64, 64, size=(4, 32)) / 16.0
    wp, wm = dg.truncate(u, 0.375, "+"), dg.truncate(u, 0.375, "-")
    assert np.array_equal(dg.reconstruct(0.375, wp.values, wm.values), u)
    flat = dg.truncate(np.full((2, 5), 1.5), 1.5)
    assert not flat.values.any() and not flat.mask.any()


def test_truncation_level_set():
    w = dg.truncate(np.arange(12.0).reshape(3, 4), 5.0)
    assert w.level_set([0, 3], [1, 2]).tolist() == [[False, True], [True, True]]


# --- Caccioppoli --------------------------------------------------------------

CACC = dict(x0=(0.0,), t0=0.5, R=0.5, r=0.25, theta=0.4, tau1=0.25, tau2=0.35)


def test_caccioppoli_zero_above_max(sup_run):
    tr = sup_run.traj
    rep = dg.caccioppoli_sides(tr, SUP, sup_run.coef, k=tr.values.max() + 1, **CACC)
    assert rep.lhs == 0.0 and rep.C_fit == 0.0 and rep.holds_with(0.0)


def test_caccioppoli_scaling_single_phase(sup_run):
    tr = sup_run.traj
    exp = Exponents(1, 2.0, 2.5, 0.5, 0.5)
    a0 = Coefficient("constant", 0.0)
    k = 0.3 * tr.values.max()
    base = dg.caccioppoli_sides(tr, exp, a0, k=k, **CACC)
    lam = 3.0
    big = dg.caccioppoli_sides(GridFunction(tr.grid, lam * tr.values), exp, a0, k=lam * k, **CACC)
    # with a = 0 and p = 2 every term is 2-homogeneous
    assert big.lhs == pytest.approx(lam**2 * base.lhs, rel=1e-10)
    assert big.rhs == pytest.approx(lam**2 * base.rhs, rel=1e-10)
    assert big.T2 == big.T4 == 0.0
    groups = dg.caccioppoli_groups(base, exp, a0, tr, k)
    assert set(groups) == {"2", "p", "q"}


def test_caccioppoli_rejects(sup_run):
    tr = sup_run.traj
    bad = [dict(CACC, r=0.5), dict(CACC, tau1=0.1), dict(CACC, tau2=0.2), dict(CACC, tau2=0.4)]
    for kw in bad:
        with pytest.raises(ValueError):
            dg.caccioppoli_sides(tr, SUP, sup_run.coef, k=0.1, **kw)


def test_caccioppoli_single_constant(sup_run):
    rng = np.random.default_rng(7)
    reps = [dg.caccioppoli_from_tuple(sup_run.traj, SUP, sup_run.coef,
                                      dg.random_caccioppoli_tuple(rng, sup_run.grid))
            for _ in range(3)]
    C = max(r.C_fit for r in reps)
    assert math.isfinite(C)
    assert all(r.holds_with(C) for r in reps)


# --- recursion ----------------------------------------------------------------

def _schedule(kt, J=4):
    return make_schedule(0.5, 0.5**SUP.sp, 0.5, kt, J, (0.0,), 0.5)


def test_recursive_rhs(g1, sup_run):
    zero = dg.recursive_rhs(_gf(g1, 0.0), SUP, sup_run.coef, _schedule(1.0), 3.0, 0)
    assert zero.lhs == 0.0 and zero.integral == 0.0 and zero.C_fit == 0.0
    tr = sup_run.traj
    need = max(dg.admissible_level(tr, SUP, _schedule(1.0)))
    kt = max(need, 0.5 * tr.values.max())
    a = dg.recursive_rhs(tr, SUP, sup_run.coef, _schedule(kt), 3.0, 1)
    b = dg.recursive_rhs(tr, SUP, sup_run.coef, _schedule(2 * kt), 3.0, 1)
    # a higher level shrinks both sides
    assert b.lhs <= a.lhs and b.integral <= a.integral
    assert b.bracket_levels < a.bracket_levels
    with pytest.raises(ValueError):
        dg.recursive_rhs(tr, SUP, sup_run.coef, _schedule(kt), 2.0, 0)
    with pytest.raises(ValueError):
        dg.recursive_rhs(tr, SUP, sup_run.coef, _schedule(kt), 3.0, 4)


def test_truncation_domination(rng):
    s = _schedule(1.3, J=6)
    u = rng.uniform(-1, 2, size=(5, 30))
    for j in range(6):
        for tau in (0.0, 0.5, 1.5):
            assert dg.truncation_domination(u, s, 2.5, tau, j)["max_violation"] <= 1e-12
    for tau in (2.5, 3.0, -0.1):
        with pytest.raises(ValueError):
            dg.truncation_domination(u, s, 2.5, tau, 0)


def test_y_sequence_basic(g1, sup_run):
    zero = dg.y_sequence(_gf(g1, -1.0), SUP, _schedule(1.0), 3.0)
    assert not zero.Y.any() and zero.used == []
    ys = dg.y_sequence(sup_run.traj, SUP, _schedule(0.5 * sup_run.traj.values.max(), J=6), 3.0)
    assert np.all(np.diff(ys.Y) <= 0)
    assert ys.exponent == pytest.approx(1 + 0.5 * 3 / (1 * SUP.kappa))


# --- supercritical bound ------------------------------------------------------

BOUND = dict(x0=(0.0,), t0=0.5, R=0.5, sigma=0.5, delta=3.0)


def test_supercritical_zero_field(g1):
    rep = dg.supercritical_bound(_gf(g1, 0.0), SUP, C_cal=1.0, **BOUND)
    assert rep.tail_p == rep.tail_q == rep.esssup == 0.0
    # max(., 1) keeps the third term at 1
    assert rep.third_term == 1.0 and rep.bound == 1.0 and rep.margin == 1.0


def test_supercritical_constant_field(g1):
    c = 0.8
    rep = dg.supercritical_bound(_gf(g1, c), SUP, C_cal=1.0, **BOUND)
    assert rep.esssup == c
    assert rep.tail_p > 0 and rep.tail_q > 0
    twice = dg.supercritical_bound(_gf(g1, 2 * c), SUP, C_cal=1.0, **BOUND)
    assert twice.tail_p == pytest.approx(2 * rep.tail_p, rel=1e-12)
    assert twice.tail_q == pytest.approx(2 * rep.tail_q, rel=1e-12)
    assert rep.bound >= rep.tail_p + rep.tail_q


def test_supercritical_rejects(g1):
    u = _gf(g1, 0.5)
    for delta in (2.5, 4.0, 2.0):
        with pytest.raises(ValueError):
            dg.supercritical_bound(u, SUP, **dict(BOUND, delta=delta), C_cal=1.0)
    with pytest.raises(ValueError):
        dg.supercritical_bound(u, Exponents(1, 1.05, 1.1, 0.1, 0.1), C_cal=1.0, **BOUND)
    with pytest.raises(ValueError):
        dg.supercritical_bound(u, SUP, C_cal=1.0, **dict(BOUND, R=0.9))


def test_supercritical_tau_zero_rejected():
    with pytest.raises(ValueError, match="perturb delta"):
        dg.supercritical_constants(Exponents(1, 1.6, 1.8, 0.5, 0.5), 0.5, 0.5, 2.0)


def test_supercritical_k_tilde_monotone(sup_run):
    tr = sup_run.traj
    rep = dg.supercritical_bound(tr, SUP, C_cal=1.0, **BOUND)
    assert rep.admissible
    assert rep.k_tilde >= rep.constants["half_tail_p_sigmaR"]
    assert rep.k_tilde >= rep.constants["half_tail_q_sigmaR"]
    prev = rep.margin
    for f in (1.0, 1.5, 4.0):
        r = dg.supercritical_bound(tr, SUP, C_cal=1.0, k_tilde=f * rep.k_tilde, **BOUND)
        assert r.esssup == rep.esssup and r.margin >= prev
        prev = r.margin
    with pytest.raises(ValueError):
        dg.supercritical_bound(tr, SUP, C_cal=1.0, k_tilde=0.5 * rep.k_tilde, **BOUND)


def test_b_displays_agree():
    # the theorem's and the lemma's b coincide whenever kappa = 1 + sp/N
    e = Exponents(1, 2.0, 2.5, 0.5, 0.5)
    assert e.kappa == pytest.approx(1 + e.sp / e.N)
    assert dg.theorem_b(e, 3.0) == pytest.approx(2.0 * (1 + 1.25 + 3.0))
    assert dg.recursion_b(e, 3.0) == pytest.approx(dg.theorem_b(e, 3.0))


# --- limit case ---------------------------------------------------------------

LIM = Exponents(1, 2.0, 4.0, 0.5, 0.5)


def test_limit_case_basic(sup_run):
    tr = sup_run.traj
    top = tr.values.max()
    rec = dg.limit_case_check(tr, LIM, 2 * top, 0.5, (0.0,), 0.5)
    assert rec.found and rec.Y0 == 0.0 and len(rec.sweep) == 1
    rec = dg.limit_case_check(tr, LIM, 1e-3 * top, 0.5, (0.0,), 0.5, C_rec=1e-6)
    ys = [y for _, y in rec.sweep]
    assert rec.found and all(a >= b for a, b in zip(ys, ys[1:]))
    with pytest.raises(ValueError):
        dg.limit_case_check(tr, SUP, 1.0, 0.5, (0.0,), 0.5)
    with pytest.raises(ValueError):
        dg.limit_case_check(tr, LIM, 0.0, 0.5, (0.0,), 0.5)


# --- subcritical --------------------------------------------------------------

def test_r_threshold_examples():
    assert dg.subcritical_r_threshold(Exponents(1, 2.0, 2.0, 0.5, 0.5)) == 2.0
    e = Exponents(2, 4 / 3, 4 / 3, 0.5, 0.5)
    N, s, p, q = 2, 0.5, 4 / 3, 4 / 3
    hand = max(2.0, N * (2 - q) / (s * q) + 4 / q, N * (2 - p) / (s * p))
    assert hand == pytest.approx(5.0)
    assert dg.subcritical_r_threshold(e) == pytest.approx(hand, rel=1e-14)
    for p in (1.1, 1.5, 2.0, 3.0):
        assert dg.subcritical_r_threshold(Exponents(1, p, p, 0.7, 0.7)) >= 2.0


def test_subcritical_exponent_monotone():
    rs = np.linspace(6.0, 60.0, 50)
    e = [dg.subcritical_exponent(SUB, r) for r in rs]
    assert all(x > 0 for x in e) and np.all(np.diff(e) < 0)
    d = dg.interpolation_diagnostics(SUB, 6.0)
    assert d["interpolation_identity"] == pytest.approx(1.0)


@pytest.fixture(scope="module")
def g2():
    return Grid.build(2, 1.0, 12, 0.75, 0.05, 16)


SUBB = dict(x0=(0.0, 0.0), t0=0.8, R=0.5)


def test_subcritical_zero_and_rejects(g2):
    z = _gf(g2, 0.0)
    rep = dg.subcritical_bound(z, SUB, r=6.0, C_cal=1.0, **SUBB)
    assert rep.bound == 0.0 == rep.esssup and rep.margin == 0.0
    with pytest.raises(ValueError, match="q_branch"):
        dg.subcritical_bound(z, SUB, r=5.0, C_cal=1.0, **SUBB)
    with pytest.raises(ValueError, match="two"):
        dg.subcritical_bound(z, Exponents(2, 1.5, 1.5, 0.3, 0.3), r=1.9, C_cal=1.0, **SUBB)
    with pytest.raises(ValueError):
        dg.subcritical_bound(z, SUP, r=6.0, C_cal=1.0, **SUBB)


def test_subcritical_h2_sequence(g2, rng):
    # r = 5 fails the q branch, which H2 drops
    seq = [_gf(g2, c) for c in (0.1, 0.2, 0.3)]
    rep = dg.subcritical_bound(None, SUB, r=5.0, C_cal=1.0, mode="H2", sequence=seq, **SUBB)
    assert len(rep.diagnostics["sequence_tails"]) == 3
    assert rep.esssup == pytest.approx(0.3)
    with pytest.raises(ValueError):
        dg.subcritical_bound(None, SUB, r=5.0, C_cal=1.0, mode="H2", **SUBB)
    with pytest.raises(ValueError, match="uniformly"):
        dg.subcritical_bound(None, SUB, r=5.0, C_cal=1.0, mode="H2", sequence=seq,
                             tail_cap=1e-6, **SUBB)
    with pytest.raises(ValueError):
        dg.subcritical_bound(None, SUB, r=6.0, C_cal=1.0, mode="H3", **SUBB)
