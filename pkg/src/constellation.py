"""
Walker-star grid baseline

Deterministic polar constellation plus a square terrestrial grid, used to
check that the PPP model lower-bounds a regular deployment. Satellites sit
on n_orbits polar planes spaced pi / n_orbits apart in right ascension and are
evenly phased in each plane; a random common phase offset is drawn per
snapshot. The typical user is placed uniformly in the region where the
satellite nearest to the reference point is also the user's nearest.
"""

import numpy as np
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple
from tqdm import tqdm

from geometry import (
    EARTH_RADIUS_KM,
    PointSet3D,
    SphereShell,
    latlon_to_unit,
    rotation_to,
    sample_cap_ppp,
    visible_cap,
)
from analytics import CoverageCurve, TierConfig, db_to_linear
from simulator import McEstimate, NetworkSnapshot, block_rng, block_sizes, evaluate_links

LAYOUTS = ("grid", "ppp")


class ConfigError(ValueError):
    """Invalid Walker-star configuration."""


@dataclass(frozen=True)
class WalkerStarConfig:
    n_sats: int = 1000
    n_orbits: int = 20
    altitude_km: float = 530.0
    reference_lat_deg: float = 36.0
    reference_lon_deg: float = 126.0
    phasing_factor: int = 0
    terrestrial_spacing_km: float = 4.9
    terrestrial_altitude_km: float = 0.03
    earth_radius_km: float = EARTH_RADIUS_KM
    satellite_layout: str = "grid"
    terrestrial_layout: str = "grid"
    max_placement_tries: int = 10000

    def __post_init__(self):
        problems = []
        if self.n_orbits < 1:
            problems.append(f"n_orbits must be >= 1, got {self.n_orbits}")
        elif self.n_sats < 0 or self.n_sats % self.n_orbits != 0:
            problems.append(f"n_sats ({self.n_sats}) must be a nonnegative multiple of "
                            f"n_orbits ({self.n_orbits})")
        if not self.terrestrial_spacing_km > 0:
            problems.append("terrestrial_spacing_km must be positive")
        for label in ("satellite_layout", "terrestrial_layout"):
            if getattr(self, label) not in LAYOUTS:
                problems.append(f"{label} must be one of {LAYOUTS}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def inclination_deg(self) -> float:
        return 90.0

    @property
    def per_orbit(self) -> int:
        return self.n_sats // self.n_orbits

    @property
    def phase_spacing_rad(self) -> float:
        return 2.0 * np.pi / self.per_orbit if self.per_orbit else 0.0

    @property
    def satellite_radius_km(self) -> float:
        return self.earth_radius_km + self.altitude_km

    @property
    def terrestrial_radius_km(self) -> float:
        return self.earth_radius_km + self.terrestrial_altitude_km

    @property
    def reference_direction(self) -> np.ndarray:
        return latlon_to_unit(self.reference_lat_deg, self.reference_lon_deg)


def walker_star_positions(cfg: WalkerStarConfig, phase_offset: float = 0.0) -> np.ndarray:
    """ECEF positions (km) of all satellites, shape (n_sats, 3)."""
    if cfg.n_sats == 0:
        return np.empty((0, 3))
    plane = np.repeat(np.arange(cfg.n_orbits), cfg.per_orbit)
    slot = np.tile(np.arange(cfg.per_orbit), cfg.n_orbits)
    raan = plane * np.pi / cfg.n_orbits
    phase = (slot * cfg.phase_spacing_rad
             + plane * cfg.phasing_factor * 2.0 * np.pi / cfg.n_sats
             + phase_offset)
    r = cfg.satellite_radius_km
    return r * np.column_stack([
        np.cos(phase) * np.cos(raan),
        np.cos(phase) * np.sin(raan),
        np.sin(phase),
    ])


def nearest_satellite(sats: np.ndarray, direction: np.ndarray) -> int:
    """Index of the satellite closest to a ground point given by its direction."""
    return int(np.argmax(sats @ direction))


def _search_radius(cfg: WalkerStarConfig) -> float:
    return float(min(np.pi, np.hypot(np.pi / cfg.n_orbits, cfg.phase_spacing_rad)))


def place_user(cfg: WalkerStarConfig, sats: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """
    Uniform user direction inside the reference satellite's nearest region

    Returns:
        (unit direction of the user, index of the reference satellite)
    """
    ref = nearest_satellite(sats, cfg.reference_direction)
    rot = rotation_to(sats[ref])
    lo = np.cos(_search_radius(cfg))
    for _ in range(cfg.max_placement_tries):
        cos_psi = 1.0 - rng.random() * (1.0 - lo)
        az = rng.random() * 2.0 * np.pi
        sin_psi = np.sqrt(max(0.0, 1.0 - cos_psi ** 2))
        local = np.array([sin_psi * np.cos(az), sin_psi * np.sin(az), cos_psi])
        user = rot @ local
        if nearest_satellite(sats, user) == ref:
            return user, ref
    raise ConfigError(f"User placement failed after {cfg.max_placement_tries} tries")


def terrestrial_grid(cfg: WalkerStarConfig, user_dir: np.ndarray, rng: np.random.Generator,
                     radius_km: float) -> np.ndarray:
    """
    Square grid of terrestrial BSs around the user

    The grid lives on the tangent plane at the user with a uniform random
    offset and is projected radially onto the terrestrial shell. Only points
    within radius_km (plane distance) are generated.
    """
    d = cfg.terrestrial_spacing_km
    rot = rotation_to(user_dir)
    e1, e2 = rot[:, 0], rot[:, 1]
    offset = rng.random(2) * d
    n = int(np.ceil(radius_km / d)) + 1
    idx = np.arange(-n, n + 1)
    gx, gy = np.meshgrid(idx * d + offset[0], idx * d + offset[1])
    gx, gy = gx.ravel(), gy.ravel()
    keep = np.hypot(gx, gy) <= radius_km
    gx, gy = gx[keep], gy[keep]
    plane = cfg.earth_radius_km * user_dir[None, :] + gx[:, None] * e1[None, :] + gy[:, None] * e2[None, :]
    return cfg.terrestrial_radius_km * plane / np.linalg.norm(plane, axis=1)[:, None]


def _visible(points: np.ndarray, user_dir: np.ndarray, theta_rad: float) -> np.ndarray:
    if points.shape[0] == 0:
        return points
    cos_angle = (points @ user_dir) / np.linalg.norm(points, axis=1)
    return points[cos_angle >= np.cos(theta_rad)]


def _tier_points(tier: Optional[TierConfig], layout: str, grid_points,
                 user_dir: np.ndarray, rng: np.random.Generator, theta: float) -> np.ndarray:
    if layout == "grid":
        return _visible(grid_points, user_dir, theta)
    # PPP on the visible cap, rotated so the cap is centred on the user
    pts = sample_cap_ppp(tier.cap, tier.density_per_km2, rng).coordinates
    return pts @ rotation_to(user_dir).T


def _satellite_cap_theta(cfg: WalkerStarConfig, tier: Optional[TierConfig]) -> float:
    if tier is not None:
        return tier.theta_rad
    return visible_cap(SphereShell(cfg.satellite_radius_km, cfg.earth_radius_km)).theta_rad


def _terrestrial_cap(cfg: WalkerStarConfig, tier: Optional[TierConfig]):
    if tier is not None:
        return tier.cap
    return visible_cap(SphereShell(cfg.terrestrial_radius_km, cfg.earth_radius_km))


def _snapshot_geometry(cfg: WalkerStarConfig, tiers: Optional[Sequence[TierConfig]],
                       rng: np.random.Generator):
    """Visible terrestrial and satellite positions plus the user position."""
    terr_tier = tiers[0] if tiers else None
    sat_tier = tiers[1] if tiers else None
    sat_theta = _satellite_cap_theta(cfg, sat_tier)
    terr_cap = _terrestrial_cap(cfg, terr_tier)

    if cfg.satellite_layout == "grid":
        phase = rng.random() * cfg.phase_spacing_rad
        sats = walker_star_positions(cfg, phase)
        if sats.shape[0]:
            user_dir, ref = place_user(cfg, sats, rng)
            if nearest_satellite(sats, user_dir) != ref:
                raise RuntimeError(f"Reference satellite {ref} is not the nearest to the placed user")
        else:
            user_dir = cfg.reference_direction
    else:
        sats = np.empty((0, 3))
        user_dir = cfg.reference_direction

    sat_pts = _tier_points(sat_tier, cfg.satellite_layout, sats, user_dir, rng, sat_theta)
    if cfg.terrestrial_layout == "grid":
        radius = terr_cap.shell.radius_km * np.sin(terr_cap.theta_rad) * 1.05
        grid = terrestrial_grid(cfg, user_dir, rng, radius)
    else:
        grid = None
    terr_pts = _tier_points(terr_tier, cfg.terrestrial_layout, grid, user_dir, rng,
                            terr_cap.theta_rad)
    user = cfg.earth_radius_km * user_dir
    return terr_pts, sat_pts, user


def walker_star_snapshot(cfg: WalkerStarConfig, tiers: Sequence[TierConfig],
                         rng: np.random.Generator) -> NetworkSnapshot:
    """
    One grid-model snapshot

    Args:
        cfg: constellation and grid layout
        tiers: [terrestrial, satellite] radio parameters; densities are only
            used for tiers laid out as PPP
        rng: random stream

    Returns:
        NetworkSnapshot with visible points per tier
    """
    terr_pts, sat_pts, user = _snapshot_geometry(cfg, tiers, rng)
    points = [PointSet3D(terr_pts, 0), PointSet3D(sat_pts, 1)]
    distances = [np.linalg.norm(p.coordinates - user, axis=1) for p in points]
    fading = [np.asarray(t.fading.sample(rng, d.size), dtype=float) for t, d in zip(tiers, distances)]
    serving, nearest, sinr, erp = evaluate_links(tiers, distances, fading)
    return NetworkSnapshot(points, distances, fading, serving, nearest, sinr, erp)


@dataclass(frozen=True)
class MatchedDensity:
    """PPP densities reproducing the grid model's mean visible counts."""
    densities_per_km2: np.ndarray
    mean_visible_counts: np.ndarray
    n_probe: int


def matched_density(cfg: WalkerStarConfig, n_probe: int, rng: np.random.Generator,
                    tiers: Optional[Sequence[TierConfig]] = None,
                    progress: bool = False) -> MatchedDensity:
    """
    Average visible counts over grid snapshots and convert them to cap densities

    Order is [terrestrial, satellite].
    """
    grid_cfg = replace(cfg, satellite_layout="grid", terrestrial_layout="grid")
    counts = np.zeros(2)
    probes = range(n_probe)
    if progress:
        probes = tqdm(probes, desc="Probing grid", leave=False)
    for _ in probes:
        terr_pts, sat_pts, _ = _snapshot_geometry(grid_cfg, tiers, rng)
        counts += [terr_pts.shape[0], sat_pts.shape[0]]
    mean_counts = counts / n_probe
    areas = np.array([
        _terrestrial_cap(cfg, tiers[0] if tiers else None).area_km2,
        visible_cap(SphereShell(cfg.satellite_radius_km, cfg.earth_radius_km),
                    _satellite_cap_theta(cfg, tiers[1] if tiers else None)).area_km2,
    ])
    return MatchedDensity(mean_counts / areas, mean_counts, n_probe)


def estimate_grid_coverage(cfg: WalkerStarConfig, tiers: Sequence[TierConfig],
                           thresholds_db: Sequence[float], n_snapshots: int, seed: int,
                           progress: bool = False) -> CoverageCurve:
    """Coverage of the Walker-star / grid deployment, one snapshot at a time."""
    t_db = np.asarray(thresholds_db, dtype=float)
    t_lin = db_to_linear(t_db)
    hits = np.zeros((t_db.size, len(tiers)), dtype=np.int64)
    blocks = list(enumerate(block_sizes(n_snapshots)))
    if progress:
        blocks = tqdm(blocks, desc="Grid blocks", leave=False)
    for b, size in blocks:
        rng = block_rng(seed, b)
        for _ in range(size):
            snap = walker_star_snapshot(cfg, tiers, rng)
            if snap.serving_tier is not None:
                hits[:, snap.serving_tier] += snap.sinr[snap.serving_tier] > t_lin
    per_tier = hits / n_snapshots
    totals = hits.sum(axis=1)
    estimates = [McEstimate.from_count(int(c), n_snapshots, seed) for c in totals]
    return CoverageCurve(
        thresholds_db=t_db,
        total=per_tier.sum(axis=1),
        per_tier=per_tier,
        method="grid_baseline",
        tier_names=[t.name for t in tiers],
        half_width_95=np.array([e.half_width_95 for e in estimates]),
        metadata={"seed": seed, "n_snapshots": n_snapshots, "estimates": estimates,
                  "layouts": [cfg.terrestrial_layout, cfg.satellite_layout]},
    )
