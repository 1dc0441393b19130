"""
Test script for the Walker-star grid baseline
"""

import sys
from pathlib import Path

import numpy as np

# Add src directory to path
sys.path.append(str(Path(__file__).parent / "src"))

import constellation
from analytics import coverage_curve, make_tier
from constellation import (
    ConfigError,
    WalkerStarConfig,
    estimate_grid_coverage,
    matched_density,
    nearest_satellite,
    place_user,
    terrestrial_grid,
    walker_star_positions,
    walker_star_snapshot,
)
from fading import AS, RAYLEIGH
from geometry import sample_cap_ppp


def _raises(exc, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except exc:
        return True
    return False


def default_tiers(n_terr=50.0, n_sat=10.0):
    terrestrial = make_tier("terrestrial", 0.03, 3.5, 46.0, 100.0, 4.0, RAYLEIGH,
                            mean_visible_count=n_terr)
    satellite = make_tier("satellite", 530.0, 1.9925, 50.0, 5.0, 2.0, AS,
                          tx_gain_main_dbi=38.0, tx_gain_side_dbi=28.0, mean_visible_count=n_sat)
    return [terrestrial, satellite]


def test_config_validation():
    cfg = WalkerStarConfig()
    assert cfg.per_orbit == 50
    assert cfg.inclination_deg == 90.0
    assert np.isclose(np.linalg.norm(cfg.reference_direction), 1.0)
    try:
        WalkerStarConfig(n_sats=1001, terrestrial_spacing_km=0.0, satellite_layout="hex")
        raised = None
    except ConfigError as e:
        raised = str(e)
    assert raised is not None
    assert raised.count(";") == 2


def test_positions():
    cfg = WalkerStarConfig()
    sats = walker_star_positions(cfg, phase_offset=0.01)
    assert sats.shape == (1000, 3)
    assert np.allclose(np.linalg.norm(sats, axis=1), cfg.satellite_radius_km)
    # each orbit is a polar great circle
    for plane in range(cfg.n_orbits):
        raan = plane * np.pi / cfg.n_orbits
        normal = np.array([-np.sin(raan), np.cos(raan), 0.0])
        members = sats[plane * cfg.per_orbit:(plane + 1) * cfg.per_orbit]
        assert np.allclose(members @ normal, 0.0, atol=1e-8)
    assert walker_star_positions(WalkerStarConfig(n_sats=0)).shape == (0, 3)


def test_user_placement():
    cfg = WalkerStarConfig()
    sats = walker_star_positions(cfg, 0.02)
    rng = np.random.default_rng(4)
    for _ in range(20):
        user, ref = place_user(cfg, sats, rng)
        assert np.isclose(np.linalg.norm(user), 1.0)
        assert ref == nearest_satellite(sats, cfg.reference_direction)
        assert nearest_satellite(sats, user) == ref


def test_terrestrial_grid():
    cfg = WalkerStarConfig()
    user = cfg.reference_direction
    pts = terrestrial_grid(cfg, user, np.random.default_rng(0), 20.0)
    assert np.allclose(np.linalg.norm(pts, axis=1), cfg.terrestrial_radius_km)
    # about pi R^2 / d^2 sites within the radius
    expected = np.pi * 20.0 ** 2 / cfg.terrestrial_spacing_km ** 2
    assert abs(len(pts) - expected) < 0.25 * expected
    gaps = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    np.fill_diagonal(gaps, np.inf)
    assert np.allclose(gaps.min(axis=1), cfg.terrestrial_spacing_km, rtol=0.01)


def test_snapshot():
    tiers = default_tiers()
    rng = np.random.default_rng(9)
    for layouts in (("grid", "grid"), ("ppp", "ppp"), ("grid", "ppp")):
        cfg = WalkerStarConfig(terrestrial_layout=layouts[0], satellite_layout=layouts[1])
        snap = walker_star_snapshot(cfg, tiers, rng)
        assert len(snap.points) == 2
        assert len(snap.points[1]) > 0
        for k, pts in enumerate(snap.points):
            assert pts.tier_index == k
        if snap.serving_tier is not None:
            assert snap.serving_tier in (0, 1)


def test_matched_density():
    tiers = default_tiers()
    cfg = WalkerStarConfig()
    matched = matched_density(cfg, 20, np.random.default_rng(3), tiers)
    assert matched.n_probe == 20
    assert np.all(matched.mean_visible_counts > 0)
    areas = np.array([tiers[0].cap.area_km2, tiers[1].cap.area_km2])
    assert np.allclose(matched.densities_per_km2 * areas, matched.mean_visible_counts)
    # roughly one terrestrial site per spacing^2 of cap
    assert abs(matched.mean_visible_counts[0] - areas[0] / 4.9 ** 2) < 0.2 * areas[0] / 4.9 ** 2


def test_grid_coverage():
    tiers = default_tiers()
    cfg = WalkerStarConfig()
    curve = estimate_grid_coverage(cfg, tiers, [-10.0, 0.0, 10.0], 300, seed=5)
    again = estimate_grid_coverage(cfg, tiers, [-10.0, 0.0, 10.0], 300, seed=5)
    assert curve.method == "grid_baseline"
    assert np.array_equal(curve.total, again.total)
    assert np.all((curve.total >= 0) & (curve.total <= 1))
    assert np.all(np.diff(curve.total) <= 0)
    assert curve.metadata["layouts"] == ["grid", "grid"]


def test_snapshot_checks_reference_satellite():
    """A user outside the reference satellite's nearest region is rejected."""
    tiers = default_tiers()
    cfg = WalkerStarConfig()
    original = constellation.place_user

    def misplaced(cfg, sats, rng):
        return -sats[0] / np.linalg.norm(sats[0]), 0

    constellation.place_user = misplaced
    try:
        failed = _raises(RuntimeError, walker_star_snapshot, cfg, tiers, np.random.default_rng(2))
    finally:
        constellation.place_user = original
    assert failed
    walker_star_snapshot(cfg, tiers, np.random.default_rng(2))


def test_matched_density_round_trip():
    tiers = default_tiers()
    cfg = WalkerStarConfig()
    matched = matched_density(cfg, 5000, np.random.default_rng(11), tiers)
    rng = np.random.default_rng(12)
    for k, tier in enumerate(tiers):
        counts = [len(sample_cap_ppp(tier.cap, matched.densities_per_km2[k], rng)) for _ in range(5000)]
        assert abs(np.mean(counts) / matched.mean_visible_counts[k] - 1.0) < 0.02, tier.name

    other = matched_density(cfg, 5000, np.random.default_rng(99), tiers)
    ratio = other.densities_per_km2 / matched.densities_per_km2
    assert np.all(np.abs(ratio - 1.0) < 0.01), ratio


def test_ppp_lower_bounds_grid():
    """Exact PPP coverage at the matched densities stays below the grid baseline."""
    cfg = WalkerStarConfig()
    matched = matched_density(cfg, 500, np.random.default_rng(21), default_tiers())
    terrestrial = make_tier("terrestrial", 0.03, 3.5, 46.0, 100.0, 4.0, RAYLEIGH,
                            density_per_km2=matched.densities_per_km2[0])
    satellite = make_tier("satellite", 530.0, 1.9925, 50.0, 5.0, 2.0, AS,
                          tx_gain_main_dbi=38.0, tx_gain_side_dbi=28.0,
                          density_per_km2=matched.densities_per_km2[1])
    tiers = [terrestrial, satellite]
    thresholds = [0.0, 10.0]
    grid = estimate_grid_coverage(cfg, tiers, thresholds, 2000, seed=8)
    ppp = coverage_curve(tiers, thresholds, "exact")
    assert not ppp.failed.any()
    for t_db, p, g, hw in zip(thresholds, ppp.total, grid.total, grid.half_width_95):
        assert p <= g + 1.5 * hw, (t_db, p, g)


def main():
    """Run all tests"""
    print("🧪 Walker-Star Baseline Test Suite")
    print("=" * 40)

    tests = [
        ("Config Validation", test_config_validation),
        ("Satellite Positions", test_positions),
        ("User Placement", test_user_placement),
        ("Terrestrial Grid", test_terrestrial_grid),
        ("Grid/PPP Snapshot", test_snapshot),
        ("Matched Density", test_matched_density),
        ("Grid Coverage", test_grid_coverage),
        ("Reference Satellite Check", test_snapshot_checks_reference_satellite),
        ("Matched Density Round Trip", test_matched_density_round_trip),
        ("PPP Below Grid", test_ppp_lower_bounds_grid),
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
