"""
Spherical Network Geometry

Concentric BS shells around the user sphere, the cap of each shell that is
visible from the typical user, the displacement of that cap onto a planar
annulus with the same user-distance law, and Poisson samplers for both
representations.

The typical user sits at (0, 0, R_E). All lengths are in km.
"""

import numpy as np
from dataclasses import dataclass
from typing import Optional

EARTH_RADIUS_KM = 6371.0


class OutOfRangeTheta(ValueError):
    """Visible angle override outside (0, theta_max]."""


class DegenerateShell(ValueError):
    """Shell coincides with the user sphere, so the visible cap is empty."""


class InvalidShell(ValueError):
    """Shell radii violate R_k >= R_E > 0."""


@dataclass(frozen=True)
class SphereShell:
    """Sphere of radius R_k carrying one tier of BSs."""
    radius_km: float
    earth_radius_km: float = EARTH_RADIUS_KM

    def __post_init__(self):
        if not self.earth_radius_km > 0:
            raise InvalidShell(f"Earth radius must be positive, got {self.earth_radius_km}")
        if not self.radius_km >= self.earth_radius_km:
            raise InvalidShell(
                f"Shell radius {self.radius_km} km is below the user sphere "
                f"({self.earth_radius_km} km)"
            )

    @classmethod
    def from_altitude(cls, altitude_km: float, earth_radius_km: float = EARTH_RADIUS_KM) -> "SphereShell":
        return cls(radius_km=earth_radius_km + altitude_km, earth_radius_km=earth_radius_km)

    @property
    def altitude_km(self) -> float:
        return self.radius_km - self.earth_radius_km

    @property
    def theta_max_rad(self) -> float:
        return float(np.arccos(self.earth_radius_km / self.radius_km))


@dataclass(frozen=True)
class VisibleCap:
    shell: SphereShell
    theta_max_rad: float
    theta_rad: float

    @property
    def area_km2(self) -> float:
        r = self.shell.radius_km
        return 4.0 * np.pi * r * r * np.sin(0.5 * self.theta_rad) ** 2


@dataclass(frozen=True)
class AnnulusGeometry:
    """Displaced planar ring equivalent of a visible cap."""
    r_min_km: float
    r_max_km: float
    density_per_km2: float

    @property
    def area_km2(self) -> float:
        return np.pi * (self.r_max_km ** 2 - self.r_min_km ** 2)

    @property
    def mean_count(self) -> float:
        return self.density_per_km2 * self.area_km2


def _frozen(coords: np.ndarray, width: int) -> np.ndarray:
    arr = np.array(coords, dtype=float).reshape(-1, width)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointSet3D:
    coordinates: np.ndarray
    tier_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coordinates", _frozen(self.coordinates, 3))

    def __len__(self) -> int:
        return self.coordinates.shape[0]


@dataclass(frozen=True, eq=False)
class PointSet2D:
    coordinates: np.ndarray
    tier_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coordinates", _frozen(self.coordinates, 2))

    def __len__(self) -> int:
        return self.coordinates.shape[0]

    @property
    def radii(self) -> np.ndarray:
        return np.hypot(self.coordinates[:, 0], self.coordinates[:, 1])


def visible_cap(shell: SphereShell, theta_override: Optional[float] = None) -> VisibleCap:
    """
    Visible spherical cap of a shell as seen from the typical user

    Args:
        shell: BS shell
        theta_override: visible angle in (0, theta_max]; defaults to theta_max

    Returns:
        VisibleCap with theta_max = arccos(R_E / R_k)
    """
    theta_max = shell.theta_max_rad
    if theta_max <= 0.0:
        raise DegenerateShell(
            f"Shell radius {shell.radius_km} km equals the user sphere radius; no visible cap"
        )
    if theta_override is None:
        return VisibleCap(shell=shell, theta_max_rad=theta_max, theta_rad=theta_max)
    theta = float(theta_override)
    if not (0.0 < theta <= theta_max):
        raise OutOfRangeTheta(
            f"Visible angle {theta:.6g} rad outside (0, {theta_max:.6g}] for a "
            f"{shell.altitude_km:g} km shell"
        )
    return VisibleCap(shell=shell, theta_max_rad=theta_max, theta_rad=theta)


def displace(cap: VisibleCap, density_per_km2: float) -> AnnulusGeometry:
    """Map a cap PPP of density lambda to the distance-equivalent annulus PPP."""
    r_k = cap.shell.radius_km
    r_e = cap.shell.earth_radius_km
    # law of cosines written to stay accurate for terrestrial shells
    chord2 = (r_k - r_e) ** 2 + 4.0 * r_e * r_k * np.sin(0.5 * cap.theta_rad) ** 2
    return AnnulusGeometry(
        r_min_km=r_k - r_e,
        r_max_km=float(np.sqrt(chord2)),
        density_per_km2=(r_k / r_e) * density_per_km2,
    )


def density_for_count(cap: VisibleCap, mean_count: float) -> float:
    """Sphere density giving the requested mean number of visible BSs."""
    return mean_count / cap.area_km2


def typical_user(earth_radius_km: float = EARTH_RADIUS_KM) -> np.ndarray:
    return np.array([0.0, 0.0, earth_radius_km])


def user_distance(point, user) -> np.ndarray:
    """Euclidean distance in km; broadcasts over leading axes."""
    diff = np.asarray(point, dtype=float) - np.asarray(user, dtype=float)
    return np.linalg.norm(diff, axis=-1)


def cap_polar_cosines(cap: VisibleCap, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw cos(polar angle) uniformly on [cos theta, 1]."""
    lo = np.cos(cap.theta_rad)
    return 1.0 - rng.random(size) * (1.0 - lo)


def annulus_radii(annulus: AnnulusGeometry, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw radii with density 2r / (r_max^2 - r_min^2)."""
    lo2 = annulus.r_min_km ** 2
    hi2 = annulus.r_max_km ** 2
    return np.sqrt(lo2 + rng.random(size) * (hi2 - lo2))


def cap_distances(cap: VisibleCap, cos_polar: np.ndarray) -> np.ndarray:
    """User-to-point distance for points on the cap with the given polar cosines."""
    r_k = cap.shell.radius_km
    r_e = cap.shell.earth_radius_km
    d2 = (r_k - r_e) ** 2 + 2.0 * r_e * r_k * (1.0 - cos_polar)
    return np.sqrt(d2)


def sample_cap_ppp(cap: VisibleCap, density: float, rng: np.random.Generator,
                   tier_index: int = 0) -> PointSet3D:
    """Homogeneous PPP of the given density on a visible cap."""
    if density <= 0.0:
        return PointSet3D(np.empty((0, 3)), tier_index)
    n = rng.poisson(density * cap.area_km2)
    cos_phi = cap_polar_cosines(cap, rng, n)
    azimuth = rng.random(n) * 2.0 * np.pi
    sin_phi = np.sqrt(np.clip(1.0 - cos_phi ** 2, 0.0, None))
    r = cap.shell.radius_km
    coords = np.column_stack([
        r * sin_phi * np.cos(azimuth),
        r * sin_phi * np.sin(azimuth),
        r * cos_phi,
    ])
    return PointSet3D(coords, tier_index)


def sample_annulus_ppp(annulus: AnnulusGeometry, rng: np.random.Generator,
                       tier_index: int = 0) -> PointSet2D:
    """Homogeneous PPP on the displaced annulus."""
    mean = annulus.mean_count
    if mean <= 0.0:
        return PointSet2D(np.empty((0, 2)), tier_index)
    n = rng.poisson(mean)
    radius = annulus_radii(annulus, rng, n)
    azimuth = rng.random(n) * 2.0 * np.pi
    coords = np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth)])
    return PointSet2D(coords, tier_index)


def latlon_to_unit(lat_deg, lon_deg) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def rotation_to(direction) -> np.ndarray:
    """Rotation matrix taking the +z axis onto the given direction."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, d)
    c = float(np.dot(z, d))
    if np.linalg.norm(v) < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)
