"""
Test script for the Monte-Carlo simulator

Checks the sampler against the analytic engine: nearest-distance laws,
association shares, serving distances, the interference Laplace transform
and the coverage curve itself.
"""

import sys
from pathlib import Path

import numpy as np
from scipy import integrate, stats

# Add src directory to path
sys.path.append(str(Path(__file__).parent / "src"))

from analytics import (
    association_table,
    conditional_distance_pdf,
    coverage_curve,
    laplace_interference,
    make_tier,
)
from fading import AS, RAYLEIGH
from simulator import (
    block_rng,
    block_sizes,
    empirical_laplace,
    estimate_association_proportions,
    estimate_coverage,
    evaluate_links,
    run_snapshot,
    sample_nearest_distances,
    sample_serving_distances,
)


def _raises(exc, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except exc:
        return True
    return False


def default_tiers(n_terr=50.0, n_sat=10.0, sat_theta=None):
    terrestrial = make_tier("terrestrial", 0.03, 3.5, 46.0, 100.0, 4.0, RAYLEIGH,
                            mean_visible_count=n_terr)
    satellite = make_tier("satellite", 530.0, 1.9925, 50.0, 5.0, 2.0, AS,
                          tx_gain_main_dbi=38.0, tx_gain_side_dbi=28.0,
                          mean_visible_count=n_sat, theta_rad=sat_theta)
    return [terrestrial, satellite]


def test_blocks_and_streams():
    assert block_sizes(20000) == [8192, 8192, 3616]
    assert block_sizes(8192) == [8192]
    a = block_rng(5, 3).random(4)
    b = block_rng(5, 3).random(4)
    c = block_rng(5, 4).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_determinism_across_workers():
    tiers = default_tiers()
    serial = estimate_coverage(tiers, [-5.0, 5.0], 20000, seed=7, n_jobs=1)
    parallel = estimate_coverage(tiers, [-5.0, 5.0], 20000, seed=7, n_jobs=2)
    assert np.array_equal(serial.per_tier, parallel.per_tier)
    assert np.array_equal(serial.total, parallel.total)
    other = estimate_coverage(tiers, [-5.0, 5.0], 20000, seed=8)
    assert not np.array_equal(serial.total, other.total)


def test_input_errors():
    tiers = default_tiers()
    assert _raises(ValueError, estimate_coverage, tiers, [0.0], 0, 1)
    assert _raises(ValueError, estimate_coverage, tiers, [0.0], 10, 1, representation="disk")
    assert _raises(ValueError, estimate_association_proportions, tiers, 0, 1)


def test_run_snapshot():
    tiers = default_tiers()
    rng = np.random.default_rng(1)
    for representation in ("annulus", "sphere"):
        snap = run_snapshot(tiers, rng, representation)
        assert [len(p) for p in snap.points] == [d.size for d in snap.distances]
        if snap.serving_tier is not None:
            assert snap.serving_tier == int(np.argmax(snap.erp))
            assert snap.is_covered(0.5 * snap.covered_sinr) or snap.covered_sinr == 0.0

    serving, nearest, sinr, _ = evaluate_links(tiers, [np.empty(0), np.empty(0)],
                                               [np.empty(0), np.empty(0)])
    assert serving is None
    assert np.all(np.isnan(nearest)) and np.all(np.isnan(sinr))

    # a lone BS is noise limited
    serving, _, sinr, _ = evaluate_links(tiers, [np.array([1.0]), np.empty(0)],
                                         [np.array([1.0]), np.empty(0)])
    assert serving == 0
    assert np.isclose(sinr[0], 1.0 / tiers[0].normalized_noise)


def test_nearest_distance_representations():
    """Sphere and displaced-annulus samplers give the same nearest-distance law."""
    cases = [
        default_tiers()[0],
        default_tiers()[1],
        default_tiers(sat_theta=0.5 * np.arccos(6371.0 / 6901.0))[1],
    ]
    for i, tier in enumerate(cases):
        sphere = sample_nearest_distances(tier, 10000, seed=100 + i, representation="sphere")
        flat = sample_nearest_distances(tier, 10000, seed=200 + i, representation="annulus")
        assert stats.ks_2samp(sphere, flat).pvalue > 0.01, tier.name

    tier = cases[1]
    ann = tier.annulus
    lam = ann.density_per_km2

    def first_touch_cdf(r):
        r = np.clip(r, ann.r_min_km, ann.r_max_km)
        return -np.expm1(-np.pi * lam * (r ** 2 - ann.r_min_km ** 2)) / -np.expm1(-ann.mean_count)

    draws = sample_nearest_distances(tier, 20000, seed=300, representation="sphere")
    assert stats.kstest(draws, first_touch_cdf).pvalue > 0.01


def test_association_matches_analytic():
    tiers = default_tiers(n_terr=5.0, n_sat=3.0)
    estimate = estimate_association_proportions(tiers, 60000, seed=11)
    assert estimate.counts.sum() == 60000
    assert np.isclose(estimate.fractions.sum(), 1.0)
    analytic = association_table(tiers, "void_corrected")
    sigma = estimate.half_width_95 / 1.96
    assert np.all(np.abs(estimate.fractions - analytic) <= 4 * sigma + 1e-3), (estimate.fractions, analytic)


def test_serving_distance_law():
    tiers = default_tiers()
    k = 1
    ann = tiers[k].annulus
    draws = sample_serving_distances(tiers, k, 40000, seed=21)
    assert draws.size > 1000

    grid = np.linspace(ann.r_min_km, ann.r_max_km, 20001)
    pdf = conditional_distance_pdf(tiers, k, grid, "void_corrected")
    cdf = integrate.cumulative_trapezoid(pdf, grid, initial=0.0)
    cdf /= cdf[-1]
    assert stats.kstest(draws, lambda x: np.interp(x, grid, cdf)).pvalue > 0.01


def test_empirical_laplace():
    _, sat = default_tiers()
    ann = sat.annulus
    rate = sat.fading.rate
    for r in (1.1 * ann.r_min_km, 0.5 * (ann.r_min_km + ann.r_max_km)):
        s = rate * r ** 2 * np.array([0.1, 1.0, 10.0])
        mean, stderr = empirical_laplace(sat, r, s, 20000, seed=31)
        analytic = laplace_interference(sat, None, r, s)
        assert np.all(np.abs(mean - analytic) <= 3 * stderr + 1e-9), (r, mean, analytic)


def test_coverage_matches_exact():
    tiers = default_tiers()
    thresholds = [-5.0, 5.0, 15.0]
    mc = estimate_coverage(tiers, thresholds, 100000, seed=2024)
    exact = coverage_curve(tiers, thresholds, "exact", association_rule="void_corrected")
    sigma = mc.half_width_95 / 1.96
    assert np.all(np.abs(mc.total - exact.total) <= 4 * sigma + 2e-3), (mc.total, exact.total)
    assert len(mc.metadata["estimates"]) == len(thresholds)
    assert sum(mc.metadata["association_counts"]) == 100000


def main():
    """Run all tests"""
    print("🧪 Simulator Test Suite")
    print("=" * 40)

    tests = [
        ("Blocks/Streams", test_blocks_and_streams),
        ("Determinism Across Workers", test_determinism_across_workers),
        ("Input Errors", test_input_errors),
        ("Single Snapshot", test_run_snapshot),
        ("Nearest-Distance Law", test_nearest_distance_representations),
        ("Association vs Analytic", test_association_matches_analytic),
        ("Serving-Distance Law", test_serving_distance_law),
        ("Empirical Laplace", test_empirical_laplace),
        ("Coverage vs Exact", test_coverage_matches_exact),
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
