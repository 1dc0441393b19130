"""
Monte-Carlo snapshot engine

Samples every tier's visible BSs, draws per-link fading, associates the
typical user by biased max-ERP over mean fading, and evaluates the SINR of
the serving link. Snapshots are processed in fixed-size blocks, each with its
own Philox stream derived from (seed, block index), so estimates do not depend
on how blocks are spread across joblib workers.
"""

import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
from joblib import Parallel, delayed
from tqdm import tqdm

from geometry import (
    annulus_radii,
    cap_distances,
    cap_polar_cosines,
    sample_annulus_ppp,
    sample_cap_ppp,
    typical_user,
    user_distance,
)
from analytics import CoverageCurve, TierConfig, db_to_linear

BLOCK_SIZE = 8192
REPRESENTATIONS = ("annulus", "sphere")


@dataclass(frozen=True)
class McEstimate:
    value: float
    half_width_95: float
    n_snapshots: int
    seed: int

    @classmethod
    def from_count(cls, hits: int, n: int, seed: int) -> "McEstimate":
        p = hits / n
        return cls(p, 1.96 * np.sqrt(p * (1.0 - p) / n), n, seed)


@dataclass
class NetworkSnapshot:
    """One realization of all tiers as seen by the typical user."""
    points: List
    distances: List[np.ndarray]
    fading: List[np.ndarray]
    serving_tier: Optional[int]
    serving_distance_km: np.ndarray
    sinr: np.ndarray
    erp: np.ndarray = field(default=None)

    @property
    def covered_sinr(self) -> float:
        if self.serving_tier is None:
            return 0.0
        return float(self.sinr[self.serving_tier])

    def is_covered(self, t_linear: float) -> bool:
        return self.serving_tier is not None and self.sinr[self.serving_tier] > t_linear


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of snapshots."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def block_sizes(n_snapshots: int) -> List[int]:
    full, rest = divmod(n_snapshots, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def evaluate_links(tiers: Sequence[TierConfig], distances: Sequence[np.ndarray],
                   fading: Sequence[np.ndarray]) -> Tuple[Optional[int], np.ndarray, np.ndarray, np.ndarray]:
    """
    Association and per-tier SINR for one user

    Args:
        tiers: network tiers
        distances: per-tier user-to-BS distances (km)
        fading: per-tier fading power draws aligned with distances

    Returns:
        (serving tier or None, nearest distance per tier, SINR per tier, ERP per tier)
    """
    k = len(tiers)
    nearest = np.full(k, np.nan)
    sinr = np.full(k, np.nan)
    erp = np.full(k, -np.inf)
    for i, tier in enumerate(tiers):
        d = np.asarray(distances[i], dtype=float)
        if d.size == 0:
            continue
        h = np.asarray(fading[i], dtype=float)
        idx = int(np.argmin(d))
        nearest[i] = d[idx]
        gain = h * d ** (-tier.path_loss_exp)
        interference = tier.normalized_gain * np.delete(gain, idx).sum() if d.size > 1 else 0.0
        denom = interference + tier.normalized_noise
        sinr[i] = gain[idx] / denom if denom > 0 else np.inf
        erp[i] = tier.erp_scale * d[idx] ** (-tier.path_loss_exp)
    serving = None if np.all(np.isinf(erp)) else int(np.argmax(erp))
    return serving, nearest, sinr, erp


def run_snapshot(tiers: Sequence[TierConfig], rng: np.random.Generator,
                 representation: str = "annulus") -> NetworkSnapshot:
    """Sample one snapshot with explicit point sets."""
    if representation not in REPRESENTATIONS:
        raise ValueError(f"Unknown representation '{representation}'")
    user = typical_user(tiers[0].shell.earth_radius_km) if tiers else None
    points, distances, fading = [], [], []
    for i, tier in enumerate(tiers):
        if representation == "annulus":
            pts = sample_annulus_ppp(tier.annulus, rng, tier_index=i)
            d = pts.radii
        else:
            pts = sample_cap_ppp(tier.cap, tier.density_per_km2, rng, tier_index=i)
            d = user_distance(pts.coordinates, user)
        points.append(pts)
        distances.append(d)
        fading.append(np.asarray(tier.fading.sample(rng, d.size), dtype=float))
    serving, nearest, sinr, erp = evaluate_links(tiers, distances, fading)
    return NetworkSnapshot(points, distances, fading, serving, nearest, sinr, erp)


def _tier_batch(tier: TierConfig, n: int, rng: np.random.Generator, representation: str):
    """Distances and fading for n snapshots of one tier, flattened with owner ids."""
    if tier.annulus.mean_count <= 0.0:
        return np.zeros(n, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
    if representation == "annulus":
        counts = rng.poisson(tier.annulus.mean_count, size=n)
        total = int(counts.sum())
        d = annulus_radii(tier.annulus, rng, total)
    else:
        counts = rng.poisson(tier.density_per_km2 * tier.cap.area_km2, size=n)
        total = int(counts.sum())
        d = cap_distances(tier.cap, cap_polar_cosines(tier.cap, rng, total))
    owner = np.repeat(np.arange(n), counts)
    h = np.asarray(tier.fading.sample(rng, total), dtype=float)
    return counts, owner, d, h


def _simulate_block(tiers: Sequence[TierConfig], n: int, rng: np.random.Generator,
                    representation: str):
    """
    Vectorized snapshots for one block

    Returns:
        serving tier per snapshot (-1 when nothing is visible), SINR of the
        serving link, serving distance
    """
    k = len(tiers)
    erp = np.full((k, n), -np.inf)
    sinr = np.full((k, n), np.nan)
    nearest = np.full((k, n), np.nan)
    for i, tier in enumerate(tiers):
        counts, owner, d, h = _tier_batch(tier, n, rng, representation)
        if d.size == 0:
            continue
        order = np.lexsort((d, owner))
        owner_sorted = owner[order]
        first = np.flatnonzero(np.r_[True, owner_sorted[1:] != owner_sorted[:-1]])
        serving_idx = order[first]
        snaps = owner_sorted[first]
        gain = h * d ** (-tier.path_loss_exp)
        interferers = gain.copy()
        interferers[serving_idx] = 0.0
        interference = tier.normalized_gain * np.bincount(owner, weights=interferers, minlength=n)
        denom = interference[snaps] + tier.normalized_noise
        with np.errstate(divide="ignore"):
            sinr[i, snaps] = gain[serving_idx] / denom
        nearest[i, snaps] = d[serving_idx]
        erp[i, snaps] = tier.erp_scale * d[serving_idx] ** (-tier.path_loss_exp)
    any_visible = np.any(np.isfinite(erp), axis=0)
    serving = np.where(any_visible, np.argmax(erp, axis=0), -1)
    cols = np.arange(n)
    pick = np.clip(serving, 0, None)
    serving_sinr = np.where(any_visible, sinr[pick, cols], -np.inf)
    serving_dist = np.where(any_visible, nearest[pick, cols], np.nan)
    return serving, serving_sinr, serving_dist


def _coverage_block(tiers, n, seed, block, t_linear, representation):
    rng = block_rng(seed, block)
    serving, serving_sinr, _ = _simulate_block(tiers, n, rng, representation)
    k = len(tiers)
    hits = np.zeros((t_linear.size, k), dtype=np.int64)
    for i in range(k):
        mine = serving_sinr[serving == i]
        hits[:, i] = (mine[None, :] > t_linear[:, None]).sum(axis=1)
    assoc = np.bincount(serving + 1, minlength=k + 1)
    return hits, assoc


def _run_blocks(func, tiers, n_snapshots, seed, n_jobs, progress, *args):
    sizes = list(enumerate(block_sizes(n_snapshots)))
    if n_jobs == 1:
        iterator = tqdm(sizes, desc="MC blocks", leave=False) if progress else sizes
        return [func(tiers, size, seed, b, *args) for b, size in iterator]
    return Parallel(n_jobs=n_jobs)(delayed(func)(tiers, size, seed, b, *args) for b, size in sizes)


def estimate_coverage(tiers: Sequence[TierConfig], thresholds_db: Sequence[float],
                      n_snapshots: int, seed: int, n_jobs: int = 1,
                      representation: str = "annulus", progress: bool = False) -> CoverageCurve:
    """
    Monte-Carlo coverage curve

    Args:
        tiers: network tiers
        thresholds_db: SINR thresholds in dB
        n_snapshots: number of independent snapshots (>= 1)
        seed: master seed
        n_jobs: joblib workers; results do not depend on it
        representation: 'annulus' (displaced) or 'sphere' (cap)

    Returns:
        CoverageCurve with half_width_95 and McEstimate entries in metadata
    """
    if n_snapshots < 1:
        raise ValueError(f"n_snapshots must be >= 1, got {n_snapshots}")
    if representation not in REPRESENTATIONS:
        raise ValueError(f"Unknown representation '{representation}'")
    tiers = list(tiers)
    t_db = np.asarray(thresholds_db, dtype=float)
    t_lin = db_to_linear(t_db)
    results = _run_blocks(_coverage_block, tiers, n_snapshots, seed, n_jobs, progress,
                          t_lin, representation)
    hits = sum(r[0] for r in results)
    assoc = sum(r[1] for r in results)
    per_tier = hits / n_snapshots
    totals = hits.sum(axis=1)
    estimates = [McEstimate.from_count(int(c), n_snapshots, seed) for c in totals]
    return CoverageCurve(
        thresholds_db=t_db,
        total=per_tier.sum(axis=1),
        per_tier=per_tier,
        method="mc",
        tier_names=[t.name for t in tiers],
        half_width_95=np.array([e.half_width_95 for e in estimates]),
        metadata={"seed": seed, "n_snapshots": n_snapshots, "representation": representation,
                  "estimates": estimates, "association_counts": assoc.tolist()},
    )


@dataclass(frozen=True)
class AssociationEstimate:
    counts: np.ndarray
    n_snapshots: int
    seed: int

    @property
    def fractions(self) -> np.ndarray:
        """P[J = k] per tier followed by P[J = None]."""
        return self.counts / self.n_snapshots

    @property
    def half_width_95(self) -> np.ndarray:
        p = self.fractions
        return 1.96 * np.sqrt(p * (1.0 - p) / self.n_snapshots)


def _association_block(tiers, n, seed, block, representation):
    rng = block_rng(seed, block)
    serving, _, _ = _simulate_block(tiers, n, rng, representation)
    k = len(tiers)
    counts = np.bincount(serving + 1, minlength=k + 1)
    # reorder so the no-service count comes last
    return np.append(counts[1:], counts[0])


def estimate_association_proportions(tiers: Sequence[TierConfig], n_snapshots: int, seed: int,
                                     n_jobs: int = 1, representation: str = "annulus",
                                     progress: bool = False) -> AssociationEstimate:
    if n_snapshots < 1:
        raise ValueError(f"n_snapshots must be >= 1, got {n_snapshots}")
    tiers = list(tiers)
    results = _run_blocks(_association_block, tiers, n_snapshots, seed, n_jobs, progress,
                          representation)
    return AssociationEstimate(sum(results), n_snapshots, seed)


def sample_serving_distances(tiers: Sequence[TierConfig], k: int, n_snapshots: int, seed: int,
                             representation: str = "annulus") -> np.ndarray:
    """Serving distances of snapshots whose serving tier is k."""
    out = []
    for b, size in enumerate(block_sizes(n_snapshots)):
        serving, _, dist = _simulate_block(list(tiers), size, block_rng(seed, b), representation)
        out.append(dist[serving == k])
    return np.concatenate(out) if out else np.empty(0)


def sample_nearest_distances(tier: TierConfig, n_snapshots: int, seed: int,
                             representation: str = "annulus") -> np.ndarray:
    """Nearest-BS distance of each nonempty snapshot of a single tier."""
    out = []
    for b, size in enumerate(block_sizes(n_snapshots)):
        rng = block_rng(seed, b)
        counts, owner, d, _ = _tier_batch(tier, size, rng, representation)
        if d.size == 0:
            continue
        nearest = np.full(size, np.inf)
        np.minimum.at(nearest, owner, d)
        out.append(nearest[counts > 0])
    return np.concatenate(out) if out else np.empty(0)


def empirical_laplace(tier: TierConfig, r: float, s_values: Sequence[float], n_snapshots: int,
                      seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    E[exp(-s (I + sigma^2))] with interferers on (r, r_max] and the serving BS pinned at r

    Returns:
        (mean, standard error) per s value
    """
    ann = tier.annulus
    lam = ann.density_per_km2
    rng = block_rng(seed, 0)
    mean_count = lam * np.pi * (ann.r_max_km ** 2 - r ** 2)
    counts = rng.poisson(mean_count, size=n_snapshots)
    total = int(counts.sum())
    d = np.sqrt(r ** 2 + rng.random(total) * (ann.r_max_km ** 2 - r ** 2))
    h = np.asarray(tier.fading.sample(rng, total), dtype=float)
    owner = np.repeat(np.arange(n_snapshots), counts)
    interference = tier.normalized_gain * np.bincount(
        owner, weights=h * d ** (-tier.path_loss_exp), minlength=n_snapshots)
    s = np.asarray(s_values, dtype=float)
    samples = np.exp(-s[:, None] * (interference[None, :] + tier.normalized_noise))
    return samples.mean(axis=1), samples.std(axis=1, ddof=1) / np.sqrt(n_snapshots)
