"""
Test script for the analytic coverage and association engine
"""

import sys
from pathlib import Path

import numpy as np
from scipy import integrate as sp_integrate
from scipy import special

# Add src directory to path
sys.path.append(str(Path(__file__).parent / "src"))

from analytics import (
    CLOSED_FORM_EPSILON,
    InvalidTier,
    KappaOutOfRange,
    PreconditionViolation,
    association_factor,
    association_knots,
    association_probability,
    association_table,
    complete_bell,
    coverage_approx,
    coverage_closed_form,
    coverage_curve,
    coverage_exact,
    db_to_linear,
    dbm_to_watts,
    default_epsilon,
    first_touch_pdf,
    fit_kappa,
    incomplete_gamma_bounds,
    interference_limited,
    kappa_lower_bound,
    kappa_mean_matched,
    laplace_derivatives,
    laplace_interference,
    linear_to_db,
    make_tier,
    resolve_kappa,
    tier_ratios,
    watts_to_dbm,
)
from fading import AS, FHS, ILS, RAYLEIGH


def _raises(exc, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except exc:
        return True
    return False


def default_tiers(sat_fading=AS, n_terr=50.0, n_sat=10.0, alpha_terr=4.0, terr_fading=RAYLEIGH):
    """Two-tier network with the default link budget."""
    terrestrial = make_tier("terrestrial", 0.03, 3.5, 46.0, 100.0, alpha_terr, terr_fading,
                            mean_visible_count=n_terr)
    satellite = make_tier("satellite", 530.0, 1.9925, 50.0, 5.0, 2.0, sat_fading,
                          tx_gain_main_dbi=38.0, tx_gain_side_dbi=28.0, mean_visible_count=n_sat)
    return [terrestrial, satellite]


def _complex_laplace(tier, r, z):
    """Laplace transform at complex arguments, shadowed-Rician interferers, Gauss-Legendre inner rule."""
    law = tier.fading
    ann = tier.annulus
    nodes, weights = np.polynomial.legendre.leggauss(400)
    tau = 0.5 * (nodes + 1.0)
    log_span = np.log(ann.r_max_km / r)
    v = r * np.exp(log_span * tau)
    jac = 0.5 * weights * v * v * log_span
    g = tier.normalized_gain * v ** (-tier.path_loss_exp)
    t = np.asarray(z, dtype=complex)[:, None] * g[None, :]
    c1 = 2.0 * law.b * law.m + law.omega
    mgf = (1.0 + 2.0 * law.b * t) ** (law.m - 1) * (1.0 + c1 * t / law.m) ** (-law.m)
    inner = np.sum((1.0 - mgf) * jac, axis=1)
    return np.exp(-z * tier.normalized_noise - 2.0 * np.pi * ann.density_per_km2 * inner)


def test_unit_conversions():
    assert np.isclose(dbm_to_watts(46.0), 39.8107, rtol=1e-5)
    assert np.isclose(watts_to_dbm(dbm_to_watts(50.0)), 50.0)
    assert np.isclose(linear_to_db(db_to_linear(-7.5)), -7.5)


def test_make_tier():
    terr, sat = default_tiers()
    assert np.isclose(terr.tx_power_w, 39.8107, rtol=1e-5)
    assert np.isclose(sat.normalized_gain, 0.1)
    assert np.isclose(terr.normalized_gain, 1.0)
    assert np.isclose(sat.mean_visible_count, 10.0)
    assert np.isclose(sat.annulus.mean_count, 10.0, rtol=1e-9)
    assert terr.bias == 1.0
    assert np.isclose(sat.with_mean_visible_count(3.0).mean_visible_count, 3.0)

    assert _raises(InvalidTier, make_tier, "bad", 530.0, 2.0, 50.0, 5.0, 2.0, AS,
                   tx_gain_main_dbi=28.0, tx_gain_side_dbi=38.0, mean_visible_count=5.0)
    assert _raises(InvalidTier, make_tier, "bad", 530.0, 2.0, 50.0, 5.0, 1.5, AS,
                   mean_visible_count=5.0)
    assert _raises(InvalidTier, make_tier, "bad", 530.0, 2.0, 50.0, 5.0, 2.0, AS)

    quiet = interference_limited([terr, sat])
    assert all(t.normalized_noise == 0.0 for t in quiet)
    assert terr.normalized_noise > 0.0


def test_first_touch_pdf():
    for tier in default_tiers():
        ann = tier.annulus
        total, _ = sp_integrate.quad(lambda r: first_touch_pdf(ann, r), ann.r_min_km, ann.r_max_km,
                                     limit=200)
        assert np.isclose(total, 1.0, rtol=1e-7), tier.name


def test_association_factor_branches():
    tiers = default_tiers()
    ratios = tier_ratios(tiers, 0, 1)
    void = np.exp(-tiers[1].annulus.mean_count)
    lo, hi = ratios.l_bound_km, ratios.u_bound_km
    assert lo < hi

    assert np.isclose(association_factor(tiers, 0, 1, lo * (1 - 1e-9)), 1.0)
    assert np.isclose(association_factor(tiers, 0, 1, lo * (1 + 1e-9)), 1.0, rtol=1e-6)
    below_u = association_factor(tiers, 0, 1, hi * (1 - 1e-10))
    assert np.isclose(below_u, void, rtol=1e-5)
    assert association_factor(tiers, 0, 1, hi * (1 + 1e-9), "printed") == 0.0
    assert np.isclose(association_factor(tiers, 0, 1, hi * (1 + 1e-9), "void_corrected"), void)
    assert _raises(ValueError, association_factor, tiers, 0, 1, lo, "nearest")

    r = np.linspace(lo, hi, 50)
    values = association_factor(tiers, 0, 1, r)
    assert np.all(np.diff(values) <= 1e-15)


def test_association_mass():
    tiers = default_tiers(n_terr=2.0, n_sat=1.5)
    table = association_table(tiers, "void_corrected")
    assert np.isclose(table.sum(), 1.0)
    # every user with a visible BS is served by someone
    assert np.isclose(table[-1], np.exp(-3.5), rtol=1e-6)

    printed = association_table(tiers, "printed")
    assert np.all(printed[:-1] <= table[:-1] + 1e-9)


def test_association_integral_matches_quad():
    """The association integral agrees with scipy's scalar quad split at the knots."""
    for law in (FHS, AS):
        tiers = default_tiers(law)
        for k, j in ((0, 1), (1, 0)):
            ann = tiers[k].annulus
            knots = association_knots(tiers, k)
            oracle, _ = sp_integrate.quad(
                lambda r: first_touch_pdf(ann, r) * association_factor(tiers, k, j, r),
                ann.r_min_km, ann.r_max_km, points=knots or None, limit=500, epsrel=1e-10)
            assert np.isclose(association_probability(tiers, k), oracle, rtol=1e-6), (law, k)


def test_bias_density_equivalence():
    """Scaling a tier's bias by c moves association like scaling its density by c^(2/alpha)."""
    terr, sat = default_tiers(n_terr=20.0)
    for c in (0.25, 4.0):
        biased = association_table([terr.replace(bias=c), sat])
        denser = terr.replace(density_per_km2=terr.density_per_km2 * c ** (2.0 / terr.path_loss_exp))
        scaled = association_table([denser, sat])
        assert np.allclose(biased[:2], scaled[:2], atol=1e-3), c


def test_association_orderings():
    shares = []
    for law in (FHS, AS, ILS):
        shares.append(association_table(default_tiers(law))[0])
    # a stronger line-of-sight component pulls users to the satellite tier
    assert shares[0] > shares[1] > shares[2]

    base = default_tiers()
    by_bias = [association_probability([base[0].replace(bias=b), base[1]], 0) for b in (0.1, 1.0, 10.0)]
    assert by_bias[0] < by_bias[1] < by_bias[2]


def test_zero_density_tier():
    terr, sat = default_tiers()
    empty = make_tier("empty", 530.0, 1.9925, 50.0, 5.0, 2.0, AS, tx_gain_main_dbi=38.0,
                      tx_gain_side_dbi=28.0, density_per_km2=0.0)
    tiers = [terr, empty]
    assert np.all(association_factor(tiers, 0, 1, [0.5, 2.0, 10.0]) == 1.0)
    assert association_probability(tiers, 1) == 0.0
    point = coverage_exact(tiers, 1.0)
    assert point.per_tier[1] == 0.0
    alone = coverage_exact([terr], 1.0)
    assert np.isclose(point.total, alone.total, rtol=1e-8)


def test_bell_polynomials():
    assert np.allclose(complete_bell([1.0, 1.0, 1.0, 1.0]), [1, 1, 2, 5, 15])
    assert np.allclose(complete_bell([2.0, 0.0, 0.0]), [1, 2, 4, 8])
    # B_3 = x1^3 + 3 x1 x2 + x3
    assert np.isclose(complete_bell([1.5, 0.5, 2.0])[3], 1.5 ** 3 + 3 * 1.5 * 0.5 + 2.0)


def test_laplace_basics():
    _, sat = default_tiers()
    r = 800.0
    values = laplace_interference(sat, None, r, [0.0, 1e5, 1e6, 1e7])
    assert np.isclose(values[0], 1.0)
    assert np.all(np.diff(values) < 0)
    assert np.all(values > 0)


def test_laplace_rejects_out_of_ring():
    _, sat = default_tiers()
    ann = sat.annulus
    at_edge = laplace_interference(sat, None, ann.r_max_km, 1e6)[0]
    assert np.isclose(at_edge, np.exp(-1e6 * sat.normalized_noise))
    assert _raises(PreconditionViolation, laplace_interference, sat, None, 1.01 * ann.r_max_km, 1e6)
    assert _raises(PreconditionViolation, laplace_interference, sat, None, 0.99 * ann.r_min_km, 1e6)
    assert _raises(PreconditionViolation, laplace_interference, sat, None, ann.r_max_km, -1.0)


def test_laplace_derivatives_contour():
    """Derivatives agree with a Cauchy-integral oracle."""
    _, sat = default_tiers(ILS)
    ann = sat.annulus
    rate = sat.fading.rate
    n_contour = 64
    theta = 2.0 * np.pi * np.arange(n_contour) / n_contour
    q_max = sat.fading.m - 1
    q = np.arange(q_max + 1)
    for r in (1.2 * ann.r_min_km, 0.5 * (ann.r_min_km + ann.r_max_km)):
        for t_lin in (0.1, 1.0, 10.0):
            s0 = rate * r ** sat.path_loss_exp * t_lin
            rho = 0.8 * s0
            f = _complex_laplace(sat, r, s0 + rho * np.exp(1j * theta))
            coeffs = np.array([np.mean(f * np.exp(-1j * k * theta)).real for k in q])
            # compare Taylor coefficients
            oracle = coeffs * (s0 / rho) ** q
            got = laplace_derivatives(sat, None, r, s0, q_max, scale=s0)
            assert np.allclose(got / special.factorial(q), oracle, rtol=1e-4, atol=1e-9), (r, t_lin)
            assert np.isclose(got[0], laplace_interference(sat, None, r, s0)[0], rtol=1e-8)
            assert np.all((-1.0) ** q * got >= 0)

    assert _raises(PreconditionViolation, laplace_derivatives, sat, None, 800.0, 1.0, q_max + 1)


def test_kappa_policies():
    assert np.isclose(kappa_lower_bound(0), 1.0)
    assert np.isclose(kappa_lower_bound(1), 1.0 / np.sqrt(2.0))
    assert np.all(np.diff(kappa_lower_bound(np.arange(19))) < 0)

    assert np.allclose(resolve_kappa("upper_bound", 4), 1.0)
    lower = resolve_kappa("lower_bound", 4)
    assert lower[0] == 1.0 and np.isclose(lower[3], kappa_lower_bound(3))
    assert np.allclose(resolve_kappa(0.9, 3), [1.0, 0.9, 0.9])
    assert _raises(KappaOutOfRange, resolve_kappa, 0.5, 3)
    assert _raises(KappaOutOfRange, resolve_kappa, [1.0, 0.8], 3)
    assert _raises(KappaOutOfRange, resolve_kappa, "median", 3)


def test_mean_matched_kappa():
    kappa = kappa_mean_matched(19)
    assert kappa[0] == 1.0
    assert np.isclose(kappa[1], 0.75)
    assert np.all(kappa >= kappa_lower_bound(np.arange(19)))
    assert np.all(kappa <= 1.0)
    assert np.array_equal(resolve_kappa("mean_matched", 19), kappa)
    # (1 - exp(-kappa x))^(l+1) then has the Gamma(l+1, 1) mean
    for l in (1, 4, 18):
        mean, _ = sp_integrate.quad(lambda x: 1.0 - (-np.expm1(-kappa[l] * x)) ** (l + 1), 0.0, np.inf)
        assert np.isclose(mean, l + 1.0, rtol=1e-6), l


def test_incomplete_gamma_bounds():
    x = np.logspace(-3, 2, 60)
    for l in range(19):
        lower, exact, upper = incomplete_gamma_bounds(l, x)
        assert np.all(lower <= exact + 1e-12), l
        assert np.all(exact <= upper + 1e-12), l


def test_exact_equals_approx_for_rayleigh():
    tiers = default_tiers(FHS)
    for t_db in (-5.0, 0.0, 10.0):
        t_lin = float(db_to_linear(t_db))
        exact = coverage_exact(tiers, t_lin)
        approx = coverage_approx(tiers, t_lin)
        assert abs(exact.total - approx.total) < 1e-6, t_db
        assert np.allclose(exact.per_tier, approx.per_tier, atol=1e-6)


def test_approx_brackets_exact():
    """The lower-bound kappa over-estimates coverage and kappa = 1 under-estimates it."""
    for law in (AS, ILS):
        tiers = default_tiers(law)
        for t_db in (-5.0, 5.0):
            t_lin = float(db_to_linear(t_db))
            exact = coverage_exact(tiers, t_lin).total
            high = coverage_approx(tiers, t_lin, "lower_bound").total
            low = coverage_approx(tiers, t_lin, "upper_bound").total
            assert low - 1e-6 <= exact <= high + 1e-6, (law, t_db)
            assert high - low < 0.25


def test_approx_tracks_exact():
    """The default kappa keeps the approximation within 0.02 of the exact coverage."""
    thresholds = [-5.0, 0.0, 2.5, 5.0, 7.5, 10.0, 15.0]
    for law in (AS, ILS):
        for n_sat in (10.0, 50.0):
            tiers = default_tiers(law, n_sat=n_sat)
            exact = coverage_curve(tiers, thresholds, "exact")
            approx = coverage_curve(tiers, thresholds, "approx")
            assert not (exact.failed.any() or approx.failed.any())
            gap = np.max(np.abs(approx.total - exact.total))
            assert gap <= 0.02, (law, n_sat, gap)


def test_fit_kappa_never_worse():
    tiers = default_tiers(AS)
    grid = (-5.0, 5.0)
    fitted = fit_kappa(tiers, grid)
    assert fitted.shape == (AS.m,) and fitted[0] == 1.0
    resolve_kappa(fitted, AS.m)

    t_lin = db_to_linear(np.asarray(grid))
    exact = np.array([coverage_exact(tiers, t).total for t in t_lin])

    def worst_gap(policy):
        return max(abs(coverage_approx(tiers, t, policy).total - e) for t, e in zip(t_lin, exact))

    best_fixed = min(worst_gap("lower_bound"), worst_gap("mean_matched"))
    assert worst_gap(fitted) <= best_fixed + 1e-9
    assert np.allclose(fit_kappa(default_tiers(FHS), grid), 1.0)


def test_exact_coverage_shape():
    tiers = default_tiers()
    curve = coverage_curve(tiers, [-10.0, 0.0, 10.0, 20.0], "exact")
    assert not curve.failed.any()
    assert np.all((curve.total >= 0) & (curve.total <= 1))
    assert np.all(np.diff(curve.total) < 0)
    assoc = association_table(tiers)
    assert np.all(curve.per_tier <= assoc[None, :2] + 1e-9)
    frame = curve.to_frame()
    assert set(frame["tier"]) == {"total", "terrestrial", "satellite"}


def test_closed_form():
    tiers = interference_limited(default_tiers(RAYLEIGH, 30.0, 30.0, alpha_terr=2.0))
    assert default_epsilon(tiers) == (1.9521, 0.0)
    values = [coverage_closed_form(tiers, float(db_to_linear(t))) for t in (-10.0, 0.0, 10.0)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert values[0] > values[1] > values[2]

    assert _raises(PreconditionViolation, coverage_closed_form, default_tiers(), 1.0)
    assert _raises(PreconditionViolation, coverage_closed_form, tiers[:1], 1.0)


def test_closed_form_tracks_exact():
    """Interference-limited closed form within 0.05 of the exact coverage at three altitudes."""
    thresholds = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
    for altitude in (200.0, 530.0, 1000.0):
        terrestrial = make_tier("terrestrial", 0.03, 3.5, 46.0, 100.0, 2.0, RAYLEIGH,
                                mean_visible_count=30.0)
        satellite = make_tier("satellite", altitude, 1.9925, 50.0, 5.0, 2.0, RAYLEIGH,
                              tx_gain_main_dbi=38.0, tx_gain_side_dbi=28.0, mean_visible_count=30.0)
        tiers = interference_limited([terrestrial, satellite])
        assert default_epsilon(tiers) == CLOSED_FORM_EPSILON[altitude]
        exact = coverage_curve(tiers, thresholds, "exact")
        closed = coverage_curve(tiers, thresholds, "closed_form")
        assert not (exact.failed.any() or closed.failed.any())
        gap = np.max(np.abs(closed.total - exact.total))
        assert gap <= 0.05, (altitude, gap)


def test_curve_errors():
    tiers = default_tiers()
    assert _raises(ValueError, coverage_curve, tiers, [], "exact")
    assert _raises(ValueError, coverage_curve, tiers, [5.0, 0.0], "exact")

    failed = coverage_curve(tiers, [0.0, 5.0], "closed_form")
    assert failed.failed.all()
    assert np.all(np.isnan(failed.total))
    assert all("PreconditionViolation" in e for e in failed.errors)


def main():
    """Run all tests"""
    print("🧪 Analytics Test Suite")
    print("=" * 40)

    tests = [
        ("Unit Conversions", test_unit_conversions),
        ("Tier Construction", test_make_tier),
        ("First-Touch PDF", test_first_touch_pdf),
        ("Association Factor", test_association_factor_branches),
        ("Association Mass", test_association_mass),
        ("Association Integral vs Quad", test_association_integral_matches_quad),
        ("Bias-Density Equivalence", test_bias_density_equivalence),
        ("Association Orderings", test_association_orderings),
        ("Zero-Density Tier", test_zero_density_tier),
        ("Bell Polynomials", test_bell_polynomials),
        ("Laplace Basics", test_laplace_basics),
        ("Laplace Serving Range", test_laplace_rejects_out_of_ring),
        ("Laplace Derivatives", test_laplace_derivatives_contour),
        ("Kappa Policies", test_kappa_policies),
        ("Mean-Matched Kappa", test_mean_matched_kappa),
        ("Incomplete Gamma Bounds", test_incomplete_gamma_bounds),
        ("Exact = Approx (m = 1)", test_exact_equals_approx_for_rayleigh),
        ("Approx Brackets Exact", test_approx_brackets_exact),
        ("Approx Tracks Exact", test_approx_tracks_exact),
        ("Kappa Fit Never Worse", test_fit_kappa_never_worse),
        ("Exact Coverage Shape", test_exact_coverage_shape),
        ("Closed Form", test_closed_form),
        ("Closed Form Tracks Exact", test_closed_form_tracks_exact),
        ("Curve Errors", test_curve_errors),
    ]

    results = []
    for test_name, test_func in tests:
        try:
            test_func()
            results.append((test_name, True))
        except Exception as e:
            print(f"❌ {test_name} test crashed: {e!r}")
            results.append((test_name, False))

    print("\n📋 TEST RESULTS SUMMARY:")
    print("=" * 30)

    passed = 0
    for test_name, result in results:
        status = "✅ PASS" if result else "❌ FAIL"
        print(f"{status} - {test_name}")
        if result:
            passed += 1

    print(f"\n🎯 Overall: {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
