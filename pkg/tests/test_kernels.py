"""Heat kernels, Green functions, exhaustion limits.

Claims:
    - scalar and 2x2 closed forms are reproduced to tight tolerances
    - the lattice kernel matches the series-evaluated e^(-2t) I_0(2t) oracle
    - Green values match path/killing closed forms; divergence is detected
    - semigroup identities hold: Chapman-Kolmogorov, adjoint duality,
      shift law, conservation, domain monotonicity, maximum principle
    - green values agree with time quadrature of the kernel
"""

import numpy as np
import pytest
from scipy import integrate

import heatlab as hl
from heatlab.domains import closed_path_domain, single_vertex_domain
from heatlab.kernels import LimitStatus, factorize

from conftest import bessel_i0_scaled


# -- fixed-subdomain closed forms --------------------------------------------

def test_scalar_kernel_exact():
    fx = single_vertex_domain()
    op = hl.assemble(fx.domain, hl.Potential.constant(fx.domain, 1.0))
    sub = hl.restrict(fx.domain, [0])
    assert hl.heat_kernel_finite(op, sub, 0, 0, 1.0) == pytest.approx(np.exp(-1.0), abs=1e-12)
    op2 = hl.assemble(fx.domain, hl.Potential.constant(fx.domain, 2.5))
    assert hl.heat_kernel_finite(op2, sub, 0, 0, 0.7) == pytest.approx(np.exp(-1.75), abs=1e-12)


def test_two_vertex_closed_graph():
    fx = closed_path_domain(2)
    op = hl.assemble(fx.domain)
    sub = hl.restrict(fx.domain, [0, 1])
    expected = (1.0 + np.exp(-2.0)) / 2.0
    assert hl.heat_kernel_finite(op, sub, 0, 0, 1.0) == pytest.approx(expected, abs=1e-10)
    m = hl.heat_matrix_finite(op, sub, 1.0)
    off = (1.0 - np.exp(-2.0)) / 2.0
    assert m == pytest.approx(np.array([[expected, off], [off, expected]]), abs=1e-7)


def test_single_interior_vertex_dirichlet(lat1, lat1_op):
    sub = hl.restrict(lat1.domain, [0])
    assert hl.heat_kernel_finite(lat1_op, sub, 0, 0, 1.0) == pytest.approx(np.exp(-2.0), abs=1e-12)


def test_heat_matrix_at_zero_time():
    d = hl.WeightedDomain([0, 1], {0: 2.0, 1: 0.5}, {(0, 1): 1.0, (1, 0): 1.0})
    sub = hl.restrict(d, [0, 1])
    m = hl.heat_matrix_finite(hl.assemble(d), sub, 0.0)
    assert m == pytest.approx(np.diag([0.5, 2.0]))


def test_heat_matrix_nonnegative():
    fx = closed_path_domain(9)
    m = hl.heat_matrix_finite(hl.assemble(fx.domain), hl.restrict(fx.domain, range(9)), 1.0)
    assert np.all(m >= 0.0)


def test_time_validation_and_membership(lat1, lat1_op):
    sub = hl.restrict(lat1.domain, range(-2, 3))
    with pytest.raises(hl.ValidationError):
        hl.heat_kernel_finite(lat1_op, sub, 0, 0, -1.0)
    with pytest.raises(hl.ValidationError):
        hl.heat_kernel_finite(lat1_op, sub, 0, 99, 1.0)


# -- exhaustion limits --------------------------------------------------------

@pytest.mark.parametrize("t", [0.5, 1.0, 5.0, 20.0])
def test_lattice_kernel_matches_bessel_oracle(lat1_ev, t):
    r = lat1_ev.heat_kernel(0, 0, t)
    assert r.converged
    exact = bessel_i0_scaled(2.0 * t)
    assert r.value == pytest.approx(exact, rel=1e-8)


def test_killing_shift_of_bessel(lat1, lat1_plus1_ev):
    r = lat1_plus1_ev.heat_kernel(0, 0, 1.0)
    assert r.converged
    assert r.value == pytest.approx(np.exp(-1.0) * bessel_i0_scaled(2.0), rel=1e-9)


def test_heat_kernel_zero_time_convention(lat1_ev):
    r = lat1_ev.heat_kernel(0, 0, 0.0)
    assert r.converged and r.value == pytest.approx(1.0)
    assert lat1_ev.heat_kernel(0, 1, 0.0).value == 0.0


def test_single_vertex_domain_converges_at_level_one():
    fx = single_vertex_domain()
    op = hl.assemble(fx.domain, hl.Potential.constant(fx.domain, 0.5))
    ev = hl.HeatKernelEvaluator(op, fx.exhaustion)
    r = ev.heat_kernel(0, 0, 2.0)
    assert r.converged and r.level == 0 and r.model == "exact"
    assert r.value == pytest.approx(np.exp(-1.0))


def test_small_ambient_is_inconclusive_at_large_time():
    fx = hl.build_lattice_1d(8, "unit")
    ev = hl.HeatKernelEvaluator(hl.assemble(fx.domain), fx.exhaustion)
    r = ev.heat_kernel(0, 0, 50.0)
    assert r.status is LimitStatus.INCONCLUSIVE
    assert "ambient truncation" in r.evidence


def test_cached_levels_reproduce_fresh_computation(lat1, lat1_op, lat1_ev):
    j = 4
    sub = lat1.exhaustion[j]
    cached = lat1_ev.heat_finite(j, 0, 1, 2.0)
    fresh = hl.heat_kernel_finite(lat1_op, sub, 0, 1, 2.0)
    assert cached == pytest.approx(fresh, rel=1e-12)


# -- green values -------------------------------------------------------------

def test_green_single_vertex():
    fx = single_vertex_domain()
    op = hl.assemble(fx.domain, hl.Potential.constant(fx.domain, 4.0))
    assert hl.green_finite(op, hl.restrict(fx.domain, [0]), 0, 0) == pytest.approx(0.25)


@pytest.mark.parametrize("n", [3, 10, 40])
def test_green_path_closed_form(lat1, lat1_op, n):
    sub = hl.restrict(lat1.domain, range(-n, n + 1))
    assert hl.green_finite(lat1_op, sub, 0, 0) == pytest.approx((n + 1) / 2.0, rel=1e-12)


def test_green_killing_closed_form(lat1, lat1_plus1_ev):
    r = lat1_plus1_ev.green(0, 0)
    assert r.converged
    assert r.value == pytest.approx(1.0 / np.sqrt(5.0), abs=1e-6)


def test_green_diverges_on_lattice(lat1_ev):
    r = lat1_ev.green(0, 0)
    assert r.diverging


def test_green_radial_transience_recurrence(rad3, rad3_op):
    ev = hl.HeatKernelEvaluator(rad3_op, rad3.exhaustion)
    r = ev.green(1, 1, tol=1e-6)
    assert r.converged
    # resistance to infinity: sum_{i>=1} (i+1/2)^-2 = pi^2/2 - 4
    assert r.value == pytest.approx(np.pi**2 / 2 - 4, rel=1e-6)
    f2 = hl.fixture("rad(2)")
    ev2 = hl.HeatKernelEvaluator(hl.assemble(f2.domain), f2.exhaustion)
    assert ev2.green(1, 1).diverging


def test_green_rejects_nonpositive_restriction():
    fx = single_vertex_domain()
    op = hl.assemble(fx.domain, hl.Potential.constant(fx.domain, -1.0))
    with pytest.raises(hl.NumericalError):
        hl.green_finite(op, hl.restrict(fx.domain, [0]), 0, 0)


def test_green_agrees_with_time_quadrature(lat1):
    # independent route: adaptive quadrature of the kernel in t, plus the
    # identity sliver below t_min and a spectral tail bound beyond T
    op = hl.add_potential(hl.assemble(lat1.domain),
                          hl.Potential.constant(lat1.domain, 0.3))
    sub = hl.restrict(lat1.domain, range(-8, 9))
    fac = factorize(op, sub)
    x, y = 0, 1
    g_solve = hl.green_finite(op, sub, x, y, factor=fac)
    lam_min = fac.lambda_min
    t_min, T = 1e-6, 80.0 / lam_min

    def kernel(t):
        return fac.kernel(sub.local_of(x), sub.local_of(y), t)

    bulk, quad_err = integrate.quad(kernel, t_min, T, limit=400)
    sliver = 0.5 * t_min * (0.0 + kernel(t_min))  # k(x!=y, 0) = 0
    tail_bound = kernel(T) / lam_min
    assert abs(g_solve - (bulk + sliver)) <= 1e-8 * g_solve + tail_bound + 10 * quad_err


# -- semigroup identities -----------------------------------------------------

def test_chapman_kolmogorov_seeded(lat1, lat1_op):
    sub = hl.restrict(lat1.domain, range(-12, 13))
    fac = factorize(lat1_op, sub)
    mu = sub.mu
    rng = np.random.default_rng(23)
    n = sub.size
    checked = 0
    for _ in range(210):
        t, s = rng.uniform(0.05, 3.0, size=2)
        m_t = fac.kernel_matrix(t)
        m_s = fac.kernel_matrix(s)
        m_ts = fac.kernel_matrix(t + s)
        ix, iy = rng.integers(0, n, size=2)
        composed = float(m_t[ix] @ (mu * m_s[:, iy]))
        assert composed == pytest.approx(m_ts[ix, iy], rel=1e-10)
        checked += 1
    assert checked >= 200


def test_domain_monotonicity_seeded(lat1, lat1_op, lat1_ev):
    rng = np.random.default_rng(5)
    levels = [2, 3, 4, 5]
    count = 0
    for _ in range(250):
        j = int(rng.choice(levels))
        sub_a, sub_b = lat1.exhaustion[j], lat1.exhaustion[j + 1]
        r = int(sub_a.labels.max())
        x = int(rng.integers(-r, r + 1))
        y = int(rng.integers(-r, r + 1))
        t = float(rng.uniform(0.1, 5.0))
        ka = lat1_ev.heat_finite(j, x, y, t)
        kb = lat1_ev.heat_finite(j + 1, x, y, t)
        assert ka <= kb + 1e-12
        count += 1
    assert count >= 200


def test_adjoint_duality_symmetric_and_drift(lat1, lat1_op, drift):
    sub = hl.restrict(lat1.domain, range(-6, 7))
    fac = factorize(lat1_op, sub)
    fac_star = factorize(hl.adjoint(lat1_op), sub)
    for (x, y, t) in [(0, 1, 0.5), (-3, 5, 2.0), (2, 2, 1.0)]:
        assert fac_star.kernel(sub.local_of(x), sub.local_of(y), t) == pytest.approx(
            fac.kernel(sub.local_of(y), sub.local_of(x), t), rel=1e-12)

    dop = hl.assemble(drift.domain)
    dsub = hl.restrict(drift.domain, range(-10, 11))
    dfac = factorize(dop, dsub)
    dfac_star = factorize(hl.adjoint(dop), dsub)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, y = rng.integers(-5, 6, size=2)
        t = float(rng.uniform(0.5, 2.0))
        lhs = dfac_star.kernel(dsub.local_of(x), dsub.local_of(y), t)
        rhs = dfac.kernel(dsub.local_of(y), dsub.local_of(x), t)
        scale = np.sqrt(dfac.kernel(dsub.local_of(x), dsub.local_of(x), t)
                        * dfac.kernel(dsub.local_of(y), dsub.local_of(y), t))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-16 * scale)


def test_shift_law(lat1, lat1_op):
    lam = -0.7
    shifted = hl.shift(lat1_op, lam)
    sub = hl.restrict(lat1.domain, range(-8, 9))
    fac = factorize(lat1_op, sub)
    fac_s = factorize(shifted, sub)
    for (x, y, t) in [(0, 0, 1.0), (1, -2, 0.5), (0, 3, 4.0)]:
        base = fac.kernel(sub.local_of(x), sub.local_of(y), t)
        assert fac_s.kernel(sub.local_of(x), sub.local_of(y), t) == pytest.approx(
            np.exp(lam * t) * base, rel=1e-10)


def test_conservation_on_closed_domain():
    fx = closed_path_domain(11)
    sub = hl.restrict(fx.domain, range(11))
    m = hl.heat_matrix_finite(hl.assemble(fx.domain), sub, 2.5)
    mass = m @ sub.mu
    assert mass == pytest.approx(np.ones(11), abs=1e-10)


def test_maximum_principle_pointwise(lat1, lat1_op):
    sub = hl.restrict(lat1.domain, range(-10, 11))
    bumped = hl.add_potential(lat1_op, hl.Potential.indicator(lat1.domain, [0, 3], 0.8))
    fac = factorize(lat1_op, sub)
    fac_v = factorize(bumped, sub)
    for t in (0.3, 1.0, 5.0):
        assert np.all(fac_v.kernel_matrix(t) <= fac.kernel_matrix(t) + 1e-12)


def test_inverse_route_matches_direct_route(lat1, lat1_op):
    import heatlab.kernels as hk

    sub = hl.restrict(lat1.domain, range(-15, 16))
    direct = hk.SymmetricFactor(lat1_op, sub)
    assert direct.route == "direct"  # force the lazy build before patching
    saved = hk.WELL_SCALED_RATE
    hk.WELL_SCALED_RATE = 0.0
    try:
        inverse = hk.SymmetricFactor(lat1_op, sub)
        assert inverse.route == "inverse"
    finally:
        hk.WELL_SCALED_RATE = saved
    for (x, y, t) in [(0, 0, 0.5), (-3, 7, 2.0)]:
        a = direct.kernel(sub.local_of(x), sub.local_of(y), t)
        b = inverse.kernel(sub.local_of(x), sub.local_of(y), t)
        assert b == pytest.approx(a, rel=1e-11)


def test_concurrent_cache_population(lat1, lat1_op):
    from concurrent.futures import ThreadPoolExecutor

    ev = hl.HeatKernelEvaluator(lat1_op, lat1.exhaustion)
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda t: ev.heat_kernel(0, 0, t).value,
                                [0.5, 1.0, 2.0, 0.5, 1.0, 2.0, 0.5, 1.0]))
    assert results[0] == results[3] == results[6]
    assert results[1] == results[4] == results[7]
