import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doublephase.geometry import Grid
from doublephase.kernel_energy import (
    Coefficient,
    Exponents,
    GridFunction,
    NonlocalEnergy,
    fractional_seminorm,
    indicator_tail_exact,
    integrand_H,
    nonlocal_energy,
    tail,
    tail_space_membership,
)


def test_exponents_derived():
    e = Exponents(1, 2.0, 2.5, 0.5, 0.5)
    assert e.kappa == 2.0
    assert e.p_star == 4.0
    assert e.p_crit == pytest.approx(1.0)
    assert e.regime == "supercritical"
    sub = Exponents(2, 1.2, 1.3, 0.3, 0.3)
    assert sub.p_crit == pytest.approx(4 / 2.6)
    assert sub.regime == "subcritical"


@pytest.mark.parametrize("args", [
    (3, 2.0, 2.0, 0.5, 0.5), (1, 1.0, 1.5, 0.5, 0.5), (1, 2.0, 1.5, 0.5, 0.5),
    (1, 2.0, 4.5, 0.5, 0.5), (1, 2.0, 2.0, 1.0, 0.5), (1, 2.0, 2.0, 0.5, 0.0),
])
def test_exponents_reject(args):
    with pytest.raises(ValueError):
        Exponents(*args)


def test_integrand_examples():
    e = Exponents(1, 2.0, 3.0, 0.5, 0.5)
    one = Coefficient("constant", 1.0)
    assert integrand_H(e, one, 0.0, 1.0, 0.0) == 0.0
    assert integrand_H(e, one, 0.0, 1.0, 2.0) == 12.0
    zero = Coefficient("constant", 0.0)
    x, y, xi = 0.1, 0.7, -1.3
    assert integrand_H(e, zero, x, y, xi) == abs(xi) ** 2 / 0.6 ** 1.0
    assert integrand_H(e, one, x, y, xi) == integrand_H(e, one, x, y, -xi)
    with pytest.raises(ValueError):
        integrand_H(e, one, 0.3, 0.3, 1.0)


def test_integrand_convex(rng):
    e = Exponents(2, 1.2, 1.5, 0.3, 0.4)
    a = Coefficient("bump", 0.8, 0.7)
    for _ in range(500):
        x, y = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        u, v = rng.normal(scale=3, size=2)
        mid = integrand_H(e, a, x, y, 0.5 * (u + v))
        avg = 0.5 * (integrand_H(e, a, x, y, u) + integrand_H(e, a, x, y, v))
        assert mid <= avg * (1 + 1e-12)


def test_coefficient_kinds(grid2d):
    for kind in ("constant", "bump", "checkerboard"):
        a = Coefficient(kind, 2.0, 0.5, M=1.5).matrix(grid2d.centers)
        assert a.min() >= 0 and a.max() <= 1.5
        assert np.array_equal(a, a.T)
    with pytest.raises(ValueError):
        Coefficient("stripes")


def test_grid_function_policy(grid1d):
    u0 = np.linspace(-1, 1, grid1d.n_cells)
    vals = np.tile(u0, (3, 1))
    vals[1, grid1d.interior_idx] += 0.5
    f = GridFunction(grid1d, vals, u0=u0)
    assert len(f) == 3
    assert not f.values.flags.writeable
    assert f.positive_part().values.min() == 0.0
    bad = vals.copy()
    bad[2, grid1d.exterior_idx[0]] += 1e-12
    with pytest.raises(ValueError):
        GridFunction(grid1d, bad, u0=u0)
    with pytest.raises(ValueError):
        GridFunction(grid1d, np.full(grid1d.n_cells, np.nan))


def test_energy_constant_is_zero(grid2d, unit_coef):
    e = Exponents(2, 2.0, 2.5, 0.5, 0.5)
    assert nonlocal_energy(np.full(grid2d.n_cells, 3.7), grid2d, e, unit_coef) == 0.0


def test_energy_empty_region_warns(grid1d, exp1d, unit_coef):
    with pytest.warns(RuntimeWarning):
        assert nonlocal_energy(np.ones(16), grid1d, exp1d, unit_coef, region1=[]) == 0.0


def test_energy_homogeneous_single_phase(grid1d, rng):
    e = Exponents(1, 1.7, 2.2, 0.4, 0.6)
    zero = Coefficient("constant", 0.0)
    u = rng.normal(size=grid1d.n_cells)
    for lam in (0.5, 3.0):
        assert nonlocal_energy(lam * u, grid1d, e, zero) == pytest.approx(
            lam**1.7 * nonlocal_energy(u, grid1d, e, zero), rel=1e-12)


def test_energy_additive_over_disjoint_rows(grid2d, rng):
    e = Exponents(2, 1.5, 1.8, 0.4, 0.3)
    a = Coefficient("checkerboard", 1.0, 0.5)
    u = rng.normal(size=grid2d.n_cells)
    perm = rng.permutation(grid2d.n_cells)
    d1, d1b, d2 = perm[:20], perm[20:35], perm[30:]
    split = (nonlocal_energy(u, grid2d, e, a, d1, d2) + nonlocal_energy(u, grid2d, e, a, d1b, d2))
    joint = nonlocal_energy(u, grid2d, e, a, np.concatenate([d1, d1b]), d2)
    assert split == pytest.approx(joint, rel=1e-12)


def test_energy_symmetric_regions(grid2d, rng):
    e = Exponents(2, 2.0, 2.4, 0.5, 0.5)
    a = Coefficient("bump", 1.0, 0.6)
    u = rng.normal(size=grid2d.n_cells)
    d1, d2 = np.arange(10), np.arange(5, 40)
    assert nonlocal_energy(u, grid2d, e, a, d1, d2) == pytest.approx(
        nonlocal_energy(u, grid2d, e, a, d2, d1), rel=1e-12)


def test_double_phase_ordering(grid1d, rng):
    e = Exponents(1, 2.0, 2.5, 0.5, 0.5, M=2.0)
    u = rng.normal(size=grid1d.n_cells)
    lo = nonlocal_energy(u, grid1d, e, Coefficient("constant", 0.0, M=2.0))
    mid = nonlocal_energy(u, grid1d, e, Coefficient("bump", 2.0, 0.5, M=2.0))
    hi = nonlocal_energy(u, grid1d, e, Coefficient("constant", 2.0, M=2.0))
    assert lo <= mid <= hi


def test_energy_refinement_oracle():
    # 1D, u(x) = x, a = 1 on the 8-cell region [-1, 1]: the n=8 value
    # against n=512 on the same region; the diagonal exclusion costs O(h)
    e = Exponents(1, 2.0, 2.5, 0.5, 0.5)
    a = Coefficient("constant", 1.0)
    vals = {}
    for n in (8, 32, 512):
        g = Grid.build(1, 1.0, n, 0.5, 0.1, 1)
        vals[n] = nonlocal_energy(g.axis, g, e, a)
    ref = vals[512]
    assert abs(vals[8] / ref - 1) <= 2.0 / 8
    assert abs(vals[32] / ref - 1) <= 2.0 / 32
    # integrand 1 + |x-y|^{1/4}: closed form over [-1, 1]^2
    exact = 4 + 2 * 2**2.25 / (1.25 * 2.25)
    assert abs(ref / exact - 1) <= 2.0 / 512


def test_seminorm_properties(grid1d, rng):
    u = rng.normal(size=grid1d.n_cells)
    assert fractional_seminorm(np.ones(16), grid1d, 0.5, 2.0) == 0.0
    assert fractional_seminorm(-u, grid1d, 0.5, 2.0) == fractional_seminorm(u, grid1d, 0.5, 2.0)
    assert fractional_seminorm(-2.5 * u, grid1d, 0.3, 1.5) == pytest.approx(
        2.5 * fractional_seminorm(u, grid1d, 0.3, 1.5), rel=1e-12)
    with pytest.raises(ValueError):
        fractional_seminorm(u, grid1d, 1.0, 2.0)


def test_seminorm_converges_linear():
    # u(x) = x on [-1/2, 1/2], s = 0.3, p = 2: exact value
    # int int |x-y|^{2-1-0.6} = 2 / (1.4 * 2.4)
    s, p = 0.3, 2.0
    exact = math.sqrt(2.0 / ((2 - 2 * s) * (3 - 2 * s)))
    vals = []
    for n in (64, 256, 1024):
        g = Grid.build(1, 1.0, n, 0.5, 0.1, 1)
        region = np.abs(g.axis) < 0.5
        vals.append(fractional_seminorm(g.axis, g, s, p, region))
    assert abs(vals[-1] / exact - 1) < 0.02
    assert abs(vals[-1] - exact) < abs(vals[0] - exact)


def test_tail_zero_and_homogeneous(grid1d, rng):
    assert tail(np.zeros(16), grid1d, 2.0, 0.5, 0.0, 0.3) == 0.0
    u = rng.normal(size=(3, 16))
    for m in (1.5, 2.0, 3.0):
        assert tail(4.0 * u, grid1d, m, 0.5, 0.0, 0.3) == pytest.approx(
            4.0 * tail(u, grid1d, m, 0.5, 0.0, 0.3), rel=1e-12)
    with pytest.raises(ValueError):
        tail(u, grid1d, 1.0, 0.5, 0.0, 0.3)


def test_tail_levels_take_max(grid1d):
    u = np.zeros((3, 16))
    u[1] = 1.0
    u[2] = 2.0
    assert tail(u, grid1d, 2.0, 0.5, 0.0, 0.3, levels=[0, 1]) == tail(u[1], grid1d, 2.0, 0.5, 0.0, 0.3)
    assert tail(u, grid1d, 2.0, 0.5, 0.0, 0.3) == tail(u[2], grid1d, 2.0, 0.5, 0.0, 0.3)


def test_tail_closed_form():
    g = Grid.build(1, 1.0, 256, 0.5, 1.0, 0)
    val = tail(np.ones(g.n_cells), g, 2.0, 0.5, 0.0, 0.25)
    exact = indicator_tail_exact(0.25, 1.0, 2.0, 0.5)
    assert exact == pytest.approx(0.25 * 2 * (1 / 0.25 - 1))
    assert abs(val / exact - 1) < 0.01


def test_tail_space_membership():
    g = Grid.build(1, 1.0, 400, 0.5, 0.1, 1)
    assert tail_space_membership(np.zeros(400), g, 2.0, 1.0) == 0.0
    assert tail_space_membership(np.ones(400), g, 2.0, 1.0) == pytest.approx(math.pi / 2, rel=1e-5)
    u = np.abs(np.sin(g.axis * 5))
    assert tail_space_membership(u, g, 2.0, 1.0) <= tail_space_membership(u + 0.1, g, 2.0, 1.0)


def test_nonlocal_energy_singular_flag(grid1d):
    assert not NonlocalEnergy(grid1d, Exponents(1, 2.0, 2.5, 0.5, 0.5), Coefficient()).singular
    assert NonlocalEnergy(grid1d, Exponents(1, 1.5, 2.5, 0.5, 0.5), Coefficient()).singular
    # the q-phase only counts when a is not identically zero
    op = NonlocalEnergy(grid1d, Exponents(1, 2.0, 2.0, 0.5, 0.5), Coefficient("constant", 0.0))
    assert op.kq is None and not op.singular


def test_smoothing_gap_bounds_energy_difference(grid1d, rng):
    op = NonlocalEnergy(grid1d, Exponents(1, 1.3, 1.6, 0.5, 0.5), Coefficient())
    u = rng.normal(size=16)
    for eps in (1e-1, 1e-3):
        diff = op.energy_c_omega(u) - op.energy_c_omega(u, eps)
        assert 0 <= diff <= op.smoothing_gap(eps) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(
    p=st.floats(1.05, 3.0),
    dq=st.floats(0.0, 1.0),
    s=st.floats(0.1, 0.9),
    scale=st.floats(1e-3, 1e3),
    seed=st.integers(0, 2**32 - 1),
)
def test_energy_scale_covariance(p, dq, s, scale, seed):
    # E(lam u) = lam^p E_p(u) + lam^q E_q(u) for the two phases separately
    g = Grid.build(1, 1.0, 12, 0.5, 0.1, 1)
    q = min(p + dq, p * (2 * s + 1))
    e = Exponents(1, p, q, s, s)
    u = np.random.default_rng(seed).normal(size=g.n_cells)
    zero, one = Coefficient("constant", 0.0), Coefficient("constant", 1.0)
    ep = nonlocal_energy(u, g, e, zero)
    eq = nonlocal_energy(u, g, e, one) - ep
    both = nonlocal_energy(scale * u, g, e, one)
    assert both == pytest.approx(scale**p * ep + scale**q * eq, rel=1e-9)
