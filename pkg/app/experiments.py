"""
Experiment runner

Reads JSON experiment configs written in link-budget units, expands the tier
presets, scenarios and sweeps into tier lists, runs the requested analytic
and Monte-Carlo methods and collects everything into a long-format result
table that can be written as CSV or plot data.
"""

import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

# Add src directory to path for imports
sys.path.append(str(Path(__file__).parent.parent / "src"))

from analytics import (
    ASSOCIATION_RULES,
    KAPPA_POLICIES,
    CoverageCurve,
    TierConfig,
    association_table,
    coverage_curve,
    db_to_linear,
    interference_limited,
    make_tier,
)
from constellation import ConfigError, WalkerStarConfig, estimate_grid_coverage, matched_density
from fading import InvalidFadingParams, NakagamiParams, ShadowedRicianParams
from simulator import REPRESENTATIONS, block_rng, estimate_association_proportions, estimate_coverage

ROOT_DIR = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT_DIR / "configs"
PRESETS_PATH = CONFIG_DIR / "presets.json"
RECIPES_DIR = CONFIG_DIR / "recipes"

METHODS = ("exact", "approx", "closed_form", "mc", "grid_baseline")
ANALYTIC_METHODS = ("exact", "approx", "closed_form")
ASSOCIATION_METHODS = ("exact", "mc")
METRICS = ("coverage", "association")
RATIO_VARIABLES = ("bias_ratio", "density_ratio")
TIER_VARIABLES = ("bias", "bias_db", "mean_visible_count", "altitude_km")
SWEEP_VARIABLES = ("threshold_db",) + RATIO_VARIABLES + TIER_VARIABLES
OUTPUT_FORMATS = ("csv", "plotdata")

CSV_COLUMNS = ["sweep_value", "method", "tier", "value", "ci95"]
FLOAT_FORMAT = "%.9g"
RESERVED_TIER_NAMES = ("total", "none")

TIER_FIELDS = (
    "name", "altitude_km", "carrier_ghz", "tx_power_dbm", "bandwidth_mhz", "path_loss_exp",
    "fading", "tx_gain_main_dbi", "tx_gain_side_dbi", "user_gain_main_dbi", "user_gain_side_dbi",
    "bias", "bias_db", "theta_rad", "mean_visible_count", "density_per_km2", "matched_density",
    "noise_psd_dbm_hz",
)
REQUIRED_TIER_FIELDS = ("altitude_km", "carrier_ghz", "tx_power_dbm", "bandwidth_mhz",
                        "path_loss_exp", "fading")
DENSITY_FIELDS = ("mean_visible_count", "density_per_km2", "matched_density")
TOP_LEVEL_KEYS = ("name", "description", "tiers", "sweep", "threshold_db", "metric", "methods",
                  "mc", "analytics", "grid", "scenarios", "output")
GRID_FIELDS = ("n_sats", "n_orbits", "altitude_km", "phasing_factor", "reference_lat_deg",
               "reference_lon_deg", "terrestrial_spacing_km", "terrestrial_altitude_km",
               "satellite_layout", "terrestrial_layout", "n_probe")

class ParseError(ValueError):
    """Config file is not readable JSON of the expected shape."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(ValueError):
    """Config parsed but broke one or more invariants; all of them are listed."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__(f"{len(self.problems)} problem(s) in config: " + "; ".join(self.problems))


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: Tuple[float, ...]
    tier: Optional[int] = None


@dataclass(frozen=True)
class McSettings:
    snapshots: int = 100_000
    seed: int = 2024
    n_jobs: int = 1
    representation: str = "annulus"


@dataclass(frozen=True)
class AnalyticsSettings:
    kappa: Any = "mean_matched"
    association_rule: str = "printed"
    interference_limited: bool = False
    epsilon: Optional[Tuple[float, float]] = None
    n_jobs: int = 1


@dataclass(frozen=True)
class Scenario:
    """One fully resolved set of tiers and method settings."""
    name: str
    tier_specs: Tuple[Dict[str, Any], ...]
    fixed: Tuple[Tuple[str, float, Optional[int]], ...]
    analytics: AnalyticsSettings
    mc: McSettings
    grid: WalkerStarConfig
    n_probe: int = 200

    def specs_at(self, variable: Optional[str] = None, value: Optional[float] = None,
                 tier: Optional[int] = None) -> List[Dict[str, Any]]:
        specs = [dict(s) for s in self.tier_specs]
        for fixed_var, fixed_value, fixed_tier in self.fixed:
            specs = apply_variable(specs, fixed_var, fixed_value, fixed_tier)
        if variable is not None:
            specs = apply_variable(specs, variable, value, tier)
        return specs

    def tiers_at(self, variable: Optional[str] = None, value: Optional[float] = None,
                 tier: Optional[int] = None) -> List[TierConfig]:
        tiers = build_tiers(self.specs_at(variable, value, tier))
        if self.analytics.interference_limited:
            tiers = interference_limited(tiers)
        return tiers


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    description: str
    tiers: Tuple[TierConfig, ...]
    sweep: SweepSpec
    threshold_db: float
    metric: str
    methods: Tuple[str, ...]
    scenarios: Tuple[Scenario, ...]
    output_dir: Path
    formats: Tuple[str, ...]
    source: Optional[Path] = None

    @property
    def tier_names(self) -> List[str]:
        return [t.name for t in self.tiers]


# ---------------------------------------------------------------------------
# Tier specs

def load_presets(path: Path = PRESETS_PATH) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def build_fading(raw, preset_table: Dict[str, Any]):
    """FadingLaw from a preset name or an explicit parameter object."""
    if isinstance(raw, str):
        presets = {k.lower(): v for k, v in preset_table.get("fading", {}).items()}
        if raw.lower() not in presets:
            raise InvalidFadingParams(
                f"Unknown fading preset '{raw}' (available: {', '.join(preset_table.get('fading', {}))})"
            )
        raw = presets[raw.lower()]
    if not isinstance(raw, dict):
        raise InvalidFadingParams("fading must be a preset name or an object")
    law = raw.get("law", "shadowed_rician")
    try:
        if law == "shadowed_rician":
            return ShadowedRicianParams(m=raw["m"], b=raw["b"], omega=raw["omega"])
        if law == "nakagami":
            return NakagamiParams(m=raw["m"], mean_power=raw.get("mean_power", 1.0))
    except KeyError as e:
        raise InvalidFadingParams(f"fading law '{law}' is missing {e}") from None
    raise InvalidFadingParams(f"Unknown fading law '{law}'")


def build_tiers(specs: Sequence[Dict[str, Any]]) -> List[TierConfig]:
    return [make_tier(**spec) for spec in specs]


def _set_count(spec: Dict[str, Any], count: float):
    spec.pop("density_per_km2", None)
    spec["mean_visible_count"] = float(count)


def apply_variable(specs: Sequence[Dict[str, Any]], variable: str, value: float,
                   tier: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    Tier specs with one sweep variable set

    Args:
        specs: make_tier keyword sets, terrestrial first
        variable: one of SWEEP_VARIABLES
        value: sweep value
        tier: tier index for the per-tier variables

    Returns:
        new list of specs; a ratio of 0 drops the second tier
    """
    specs = [dict(s) for s in specs]
    if variable == "threshold_db":
        return specs
    if variable in RATIO_VARIABLES:
        if len(specs) < 2:
            raise ValueError(f"{variable} needs a second tier")
        if value == 0:
            return specs[:1]
        if variable == "bias_ratio":
            specs[1]["bias"] = float(value) * specs[0].get("bias", 1.0)
        else:
            base = make_tier(**specs[0]).mean_visible_count
            _set_count(specs[1], float(value) * base)
        return specs

    idx = 0 if tier is None else int(tier)
    if not 0 <= idx < len(specs):
        raise ValueError(f"Tier index {idx} out of range for {len(specs)} tier(s)")
    spec = specs[idx]
    if variable == "bias":
        spec["bias"] = float(value)
    elif variable == "bias_db":
        spec["bias"] = float(db_to_linear(value))
    elif variable == "mean_visible_count":
        _set_count(spec, value)
    elif variable == "altitude_km":
        spec["altitude_km"] = float(value)
    else:
        raise ValueError(f"Unknown sweep variable '{variable}'")
    return specs


def _merge_tier(raw: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(raw)
    if any(k in override for k in DENSITY_FIELDS):
        for k in DENSITY_FIELDS:
            merged.pop(k, None)
    if "bias" in override or "bias_db" in override:
        merged.pop("bias", None)
        merged.pop("bias_db", None)
    merged.update(override)
    return merged


def _resolve_tier(raw: Dict[str, Any], index: int, preset_table: Dict[str, Any],
                  problems: List[str]) -> Tuple[Optional[Dict[str, Any]], bool]:
    """make_tier keyword set for one tier entry, plus whether its density is matched."""
    where = f"tiers[{index}]"
    presets = preset_table.get("tiers", {})
    merged: Dict[str, Any] = {}
    preset = raw.get("preset")
    if preset is not None:
        if preset not in presets:
            problems.append(f"{where}: unknown preset '{preset}' (available: {', '.join(presets)})")
            return None, False
        merged.update(presets[preset])
    merged.update({k: v for k, v in raw.items() if k != "preset"})

    n_before = len(problems)
    unknown = sorted(set(merged) - set(TIER_FIELDS))
    if unknown:
        problems.append(f"{where}: unknown field(s) {', '.join(unknown)}")
    missing = [k for k in REQUIRED_TIER_FIELDS if k not in merged]
    if missing:
        problems.append(f"{where}: missing field(s) {', '.join(missing)}")

    density_keys = [k for k in DENSITY_FIELDS if k in merged and merged[k] not in (None, False)]
    if len(density_keys) != 1:
        problems.append(f"{where}: needs exactly one of {', '.join(DENSITY_FIELDS)}, "
                        f"got {len(density_keys)}")
    if "bias" in merged and "bias_db" in merged:
        problems.append(f"{where}: give bias or bias_db, not both")

    fading = None
    if "fading" in merged:
        try:
            fading = build_fading(merged["fading"], preset_table)
        except InvalidFadingParams as e:
            problems.append(f"{where}: {e}")
    if len(problems) > n_before:
        return None, False

    matched = density_keys == ["matched_density"]
    try:
        spec = _tier_spec(merged, preset, index, fading, matched, preset_table)
        make_tier(**spec)
    except (TypeError, ValueError) as e:
        problems.append(f"{where}: {e}")
        return None, False
    return spec, matched


def _tier_spec(merged: Dict[str, Any], preset: Optional[str], index: int, fading, matched: bool,
               preset_table: Dict[str, Any]) -> Dict[str, Any]:
    bias = float(db_to_linear(merged["bias_db"])) if "bias_db" in merged else float(merged.get("bias", 1.0))
    spec = {
        "name": str(merged.get("name", preset or f"tier{index}")),
        "altitude_km": float(merged["altitude_km"]),
        "carrier_ghz": float(merged["carrier_ghz"]),
        "tx_power_dbm": float(merged["tx_power_dbm"]),
        "bandwidth_mhz": float(merged["bandwidth_mhz"]),
        "path_loss_exp": float(merged["path_loss_exp"]),
        "fading": fading,
        "tx_gain_main_dbi": float(merged.get("tx_gain_main_dbi", 0.0)),
        "tx_gain_side_dbi": float(merged.get("tx_gain_side_dbi", 0.0)),
        "user_gain_main_dbi": float(merged.get("user_gain_main_dbi", 0.0)),
        "user_gain_side_dbi": float(merged.get("user_gain_side_dbi", 0.0)),
        "bias": bias,
        "theta_rad": merged.get("theta_rad"),
        "noise_psd_dbm_hz": float(merged.get("noise_psd_dbm_hz", preset_table.get("noise_psd_dbm_hz", -174.0))),
        "earth_radius_km": float(preset_table.get("earth_radius_km", 6371.0)),
    }
    if matched:
        spec["density_per_km2"] = 0.0
    elif merged.get("mean_visible_count") is not None:
        spec["mean_visible_count"] = float(merged["mean_visible_count"])
    else:
        spec["density_per_km2"] = float(merged["density_per_km2"])
    return spec


# ---------------------------------------------------------------------------
# Sections

def _sweep_values(raw: Dict[str, Any]) -> List[float]:
    if "values" in raw:
        return [float(v) for v in raw["values"]]
    start, stop, step = float(raw["start"]), float(raw["stop"]), float(raw["step"])
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(max(n, 0))]


def _parse_sweep(raw, n_tiers: int, problems: List[str]) -> Optional[SweepSpec]:
    if not isinstance(raw, dict):
        problems.append("sweep: must be an object")
        return None
    variable = raw.get("variable")
    n_before = len(problems)
    if variable not in SWEEP_VARIABLES:
        problems.append(f"sweep: unknown variable '{variable}' (use one of {', '.join(SWEEP_VARIABLES)})")
    try:
        values = _sweep_values(raw)
    except (KeyError, TypeError, ValueError) as e:
        problems.append(f"sweep: give 'values' or 'start'/'stop'/'step' ({e})")
        values = []
    if not values and len(problems) == n_before:
        problems.append("sweep: grid is empty")
    if values and np.any(np.diff(values) <= 0):
        problems.append("sweep: values must be sorted in strictly ascending order")
    if variable in RATIO_VARIABLES + ("mean_visible_count",) and any(v < 0 for v in values):
        problems.append(f"sweep: {variable} values must be nonnegative")
    if variable in ("bias", "altitude_km") and any(v <= 0 for v in values):
        problems.append(f"sweep: {variable} values must be positive")
    if variable in RATIO_VARIABLES and n_tiers < 2:
        problems.append(f"sweep: {variable} needs two tiers")
    tier = raw.get("tier")
    if variable in TIER_VARIABLES:
        if tier is None:
            problems.append(f"sweep: variable '{variable}' needs a 'tier' index")
        elif not isinstance(tier, int) or not 0 <= tier < n_tiers:
            problems.append(f"sweep: tier index {tier} out of range for {n_tiers} tier(s)")
    if len(problems) > n_before:
        return None
    return SweepSpec(variable=variable, values=tuple(values), tier=tier)


def _parse_mc(raw: Dict[str, Any], base: McSettings, where: str, problems: List[str]) -> McSettings:
    if not isinstance(raw, dict):
        problems.append(f"{where}: must be an object")
        return base
    unknown = sorted(set(raw) - {"snapshots", "seed", "n_jobs", "representation"})
    if unknown:
        problems.append(f"{where}: unknown field(s) {', '.join(unknown)}")
    changes = {k: v for k, v in raw.items() if k not in unknown}
    for key in ("snapshots", "seed", "n_jobs"):
        # JSON writes 1e5 as a float
        if isinstance(changes.get(key), float) and changes[key].is_integer():
            changes[key] = int(changes[key])
    settings = replace(base, **changes)
    if not isinstance(settings.snapshots, int) or settings.snapshots < 1:
        problems.append(f"{where}: snapshots must be an integer >= 1")
    if not isinstance(settings.seed, int) or settings.seed < 0:
        problems.append(f"{where}: seed must be a nonnegative integer")
    if not isinstance(settings.n_jobs, int) or settings.n_jobs == 0:
        problems.append(f"{where}: n_jobs must be a nonzero integer")
    if settings.representation not in REPRESENTATIONS:
        problems.append(f"{where}: representation must be one of {', '.join(REPRESENTATIONS)}")
    return settings


def _parse_analytics(raw: Dict[str, Any], base: AnalyticsSettings, where: str,
                     problems: List[str]) -> AnalyticsSettings:
    if not isinstance(raw, dict):
        problems.append(f"{where}: must be an object")
        return base
    allowed = {"kappa", "association_rule", "interference_limited", "epsilon", "n_jobs"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        problems.append(f"{where}: unknown field(s) {', '.join(unknown)}")
    changes = {k: v for k, v in raw.items() if k in allowed}
    if changes.get("epsilon") is not None:
        eps = changes["epsilon"]
        if not isinstance(eps, (list, tuple)) or len(eps) != 2:
            problems.append(f"{where}: epsilon must be a pair")
            changes.pop("epsilon")
        else:
            changes["epsilon"] = (float(eps[0]), float(eps[1]))
    settings = replace(base, **changes)
    kappa = settings.kappa
    if isinstance(kappa, str):
        if kappa not in KAPPA_POLICIES:
            problems.append(f"{where}: kappa must be one of {', '.join(KAPPA_POLICIES)} or a number")
    elif not isinstance(kappa, (int, float)) or not 0 < kappa <= 1:
        problems.append(f"{where}: numeric kappa must lie in (0, 1]")
    if settings.association_rule not in ASSOCIATION_RULES:
        problems.append(f"{where}: association_rule must be one of {', '.join(ASSOCIATION_RULES)}")
    if not isinstance(settings.interference_limited, bool):
        problems.append(f"{where}: interference_limited must be true or false")
    if not isinstance(settings.n_jobs, int) or settings.n_jobs == 0:
        problems.append(f"{where}: n_jobs must be a nonzero integer")
    return settings


def _parse_grid(raw: Dict[str, Any], specs: List[Dict[str, Any]], where: str,
                problems: List[str]) -> Tuple[Optional[WalkerStarConfig], int]:
    if not isinstance(raw, dict):
        problems.append(f"{where}: must be an object")
        return None, 0
    unknown = sorted(set(raw) - set(GRID_FIELDS))
    if unknown:
        problems.append(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k in GRID_FIELDS and k != "n_probe"}
    # the grid shares altitudes with the tiers unless told otherwise
    if len(specs) >= 1 and specs[0] is not None:
        kwargs.setdefault("terrestrial_altitude_km", specs[0]["altitude_km"])
        kwargs.setdefault("earth_radius_km", specs[0]["earth_radius_km"])
    if len(specs) >= 2 and specs[1] is not None:
        kwargs.setdefault("altitude_km", specs[1]["altitude_km"])
    n_probe = raw.get("n_probe", 200)
    if not isinstance(n_probe, int) or n_probe < 1:
        problems.append(f"{where}: n_probe must be an integer >= 1")
    try:
        return WalkerStarConfig(**kwargs), n_probe
    except (TypeError, ValueError) as e:
        problems.append(f"{where}: {e}")
        return None, n_probe


def _parse_fixed(raw, n_tiers: int, where: str, problems: List[str]) -> Tuple[Tuple[str, float, Optional[int]], ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        problems.append(f"{where}: 'set' must be a list")
        return ()
    fixed = []
    for i, item in enumerate(raw):
        variable = item.get("variable") if isinstance(item, dict) else None
        if variable not in SWEEP_VARIABLES[1:] or "value" not in item:
            problems.append(f"{where}.set[{i}]: needs a variable from "
                            f"{', '.join(SWEEP_VARIABLES[1:])} and a value")
            continue
        tier = item.get("tier")
        try:
            value = float(item["value"])
            if variable in TIER_VARIABLES and (tier is None or not 0 <= int(tier) < n_tiers):
                raise ValueError
        except (TypeError, ValueError):
            problems.append(f"{where}.set[{i}]: variable '{variable}' needs a numeric 'value'"
                            + (" and a valid 'tier' index" if variable in TIER_VARIABLES else ""))
            continue
        fixed.append((variable, value, int(tier) if variable in TIER_VARIABLES else None))
    return tuple(fixed)


def _tier_overrides(raw, n_tiers: int, where: str, problems: List[str]) -> Dict[int, Dict[str, Any]]:
    if raw is None:
        return {}
    if isinstance(raw, list):
        raw = {str(i): v for i, v in enumerate(raw)}
    if not isinstance(raw, dict):
        problems.append(f"{where}: 'tiers' must map tier indices to overrides")
        return {}
    out = {}
    for key, value in raw.items():
        try:
            idx = int(key)
        except ValueError:
            problems.append(f"{where}: tier key '{key}' is not an index")
            continue
        if not 0 <= idx < n_tiers or not isinstance(value, dict):
            problems.append(f"{where}: bad override for tier {key}")
            continue
        out[idx] = value
    return out


def _resolve_matched(specs: List[Dict[str, Any]], matched: List[bool], grid: WalkerStarConfig,
                     n_probe: int, seed: int) -> List[Dict[str, Any]]:
    """Fill densities flagged as matched from the Walker-star grid model."""
    if not any(matched):
        return specs
    result = matched_density(grid, n_probe, block_rng(seed, 0), build_tiers(specs))
    specs = [dict(s) for s in specs]
    for i, flag in enumerate(matched):
        if flag:
            specs[i]["density_per_km2"] = float(result.densities_per_km2[min(i, 1)])
    return specs


def parse_config(doc: Dict[str, Any], source: Optional[Path] = None,
                 overrides: Optional[Dict[str, Any]] = None,
                 preset_table: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Validate a decoded config document

    Args:
        doc: decoded JSON object
        source: file the document came from
        overrides: command-line values (seed, snapshots, methods, n_jobs, output_dir)
        preset_table: preset table, loaded from configs/presets.json when omitted

    Returns:
        ExperimentConfig with every scenario resolved to make_tier keyword sets
    """
    if not isinstance(doc, dict):
        raise ParseError("Config root must be a JSON object", field="<root>")
    preset_table = preset_table if preset_table is not None else load_presets()
    overrides = overrides or {}
    problems: List[str] = []

    unknown = sorted(set(doc) - set(TOP_LEVEL_KEYS))
    if unknown:
        problems.append(f"unknown top-level field(s) {', '.join(unknown)}")

    raw_tiers = doc.get("tiers")
    if not isinstance(raw_tiers, list) or not raw_tiers:
        raise ParseError("'tiers' must be a nonempty list", field="tiers")
    for i, t in enumerate(raw_tiers):
        if not isinstance(t, dict):
            raise ParseError(f"tier entry {i} must be an object", field=f"tiers[{i}]")
    n_tiers = len(raw_tiers)

    sweep = _parse_sweep(doc.get("sweep"), n_tiers, problems)
    threshold_db = doc.get("threshold_db", 0.0)
    if not isinstance(threshold_db, (int, float)):
        problems.append("threshold_db must be a number")
        threshold_db = 0.0

    metric = doc.get("metric", "coverage")
    if metric not in METRICS:
        problems.append(f"metric must be one of {', '.join(METRICS)}")

    methods = overrides.get("methods") or doc.get("methods", [])
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    if not methods:
        problems.append("at least one method is required")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        problems.append(f"unknown method(s) {', '.join(bad)} (use {', '.join(METHODS)})")
    if metric == "association":
        off = [m for m in methods if m in METHODS and m not in ASSOCIATION_METHODS]
        if off:
            problems.append(f"association metric supports {', '.join(ASSOCIATION_METHODS)} only, "
                            f"not {', '.join(off)}")
    if "grid_baseline" in methods and n_tiers != 2:
        problems.append("grid_baseline needs exactly two tiers [terrestrial, satellite]")

    base_mc = _parse_mc(doc.get("mc", {}), McSettings(), "mc", problems)
    base_an = _parse_analytics(doc.get("analytics", {}), AnalyticsSettings(), "analytics", problems)
    base_grid = doc.get("grid", {})
    if not isinstance(base_grid, dict):
        problems.append("grid: must be an object")
        base_grid = {}

    raw_scenarios = doc.get("scenarios") or [{"name": "base"}]
    if not isinstance(raw_scenarios, list):
        raise ParseError("'scenarios' must be a list", field="scenarios")

    scenarios: List[Scenario] = []
    base_tiers: Optional[List[TierConfig]] = None
    seen_names = set()
    for s_idx, raw_s in enumerate(raw_scenarios):
        where = f"scenarios[{s_idx}]"
        if not isinstance(raw_s, dict):
            problems.append(f"{where}: must be an object")
            continue
        s_name = str(raw_s.get("name", f"scenario{s_idx}"))
        if s_name in seen_names:
            problems.append(f"{where}: duplicate scenario name '{s_name}'")
        seen_names.add(s_name)
        extra = sorted(set(raw_s) - {"name", "tiers", "set", "analytics", "mc", "grid"})
        if extra:
            problems.append(f"{where}: unknown field(s) {', '.join(extra)}")

        tier_over = _tier_overrides(raw_s.get("tiers"), n_tiers, where, problems)
        specs, matched = [], []
        for i, raw_t in enumerate(raw_tiers):
            merged = _merge_tier(raw_t, tier_over.get(i, {}))
            spec, is_matched = _resolve_tier(merged, i, preset_table, problems)
            specs.append(spec)
            matched.append(is_matched)
        names = [s["name"] for s in specs if s is not None]
        if len(set(names)) != len(names):
            problems.append(f"{where}: tier names must be unique")
        if any(n in RESERVED_TIER_NAMES for n in names):
            problems.append(f"{where}: tier names {', '.join(RESERVED_TIER_NAMES)} are reserved")

        mc = _parse_mc(raw_s.get("mc", {}), base_mc, f"{where}.mc", problems)
        analytics = _parse_analytics(raw_s.get("analytics", {}), base_an, f"{where}.analytics", problems)
        raw_grid = raw_s.get("grid", {})
        if not isinstance(raw_grid, dict):
            problems.append(f"{where}.grid: must be an object")
            raw_grid = {}
        grid, n_probe = _parse_grid({**base_grid, **raw_grid}, specs, f"{where}.grid", problems)
        fixed = _parse_fixed(raw_s.get("set"), n_tiers, where, problems)

        mc = replace(mc, **{k: overrides[o] for k, o in (("seed", "seed"), ("snapshots", "snapshots"),
                                                         ("n_jobs", "n_jobs")) if overrides.get(o) is not None})
        if overrides.get("n_jobs") is not None:
            analytics = replace(analytics, n_jobs=overrides["n_jobs"])

        if any(s is None for s in specs) or grid is None:
            continue
        try:
            specs = _resolve_matched(specs, matched, grid, n_probe, mc.seed)
        except (ConfigError, ValueError) as e:
            problems.append(f"{where}: matched density failed: {e}")
            continue
        scenario = Scenario(name=s_name, tier_specs=tuple(specs), fixed=fixed, analytics=analytics,
                            mc=mc, grid=grid, n_probe=n_probe)
        try:
            tiers = scenario.tiers_at()
        except (ValueError, RuntimeError) as e:
            problems.append(f"{where}: {e}")
            continue
        if base_tiers is None:
            base_tiers = tiers
        scenarios.append(scenario)

    output = doc.get("output", {})
    if not isinstance(output, dict):
        problems.append("output: must be an object")
        output = {}
    formats = output.get("formats", ["csv"])
    if isinstance(formats, str):
        formats = [formats]
    bad_formats = [f for f in formats if f not in OUTPUT_FORMATS]
    if bad_formats or not formats:
        problems.append(f"output: formats must be a nonempty subset of {', '.join(OUTPUT_FORMATS)}")
    output_dir = Path(overrides.get("output_dir") or output.get("dir", "results"))

    if problems:
        raise ValidationError(problems)
    return ExperimentConfig(
        name=str(doc.get("name", source.stem if source else "experiment")),
        description=str(doc.get("description", "")),
        tiers=tuple(base_tiers),
        sweep=sweep,
        threshold_db=float(threshold_db),
        metric=metric,
        methods=tuple(methods),
        scenarios=tuple(scenarios),
        output_dir=output_dir,
        formats=tuple(formats),
        source=source,
    )


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Read and validate an experiment config file

    Raises:
        ParseError: unreadable file or malformed JSON (with the line number)
        ValidationError: every broken invariant at once
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"Cannot read config {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON in {path.name}: {e.msg}", line=e.lineno) from None
    return parse_config(doc, source=path, overrides=overrides)


def list_recipes(recipes_dir: Path = RECIPES_DIR) -> List[Tuple[str, str]]:
    """(name, description) of every built-in recipe."""
    out = []
    for path in sorted(recipes_dir.glob("*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            out.append((path.stem, doc.get("description", "")))
        except (OSError, json.JSONDecodeError):
            out.append((path.stem, "(unreadable)"))
    return out


def resolve_config_path(name_or_path: str, recipes_dir: Path = RECIPES_DIR) -> Path:
    """A config path as given, or a built-in recipe by name."""
    path = Path(name_or_path)
    if path.exists():
        return path
    stem = path.stem if path.suffix == ".json" else name_or_path
    candidate = recipes_dir / f"{stem}.json"
    if candidate.exists():
        return candidate
    raise ParseError(f"No config file or recipe named '{name_or_path}'")


# ---------------------------------------------------------------------------
# Results

@dataclass
class ResultTable:
    """
    Long-format results: one row per (scenario, sweep value, method, tier)

    The tier column holds the tier names plus 'total' for coverage and
    'none' (no visible BS) for association shares.
    """
    name: str
    variable: str
    metric: str
    frame: pd.DataFrame
    failures: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    @property
    def scenarios(self) -> List[str]:
        if "scenario" not in self.frame:
            return [self.metadata.get("scenario", "base")]
        return list(dict.fromkeys(self.frame["scenario"]))

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(self.frame["method"]))

    def for_scenario(self, scenario: str) -> "ResultTable":
        frame = self.frame
        if "scenario" in frame:
            frame = frame[frame["scenario"] == scenario].drop(columns="scenario")
        meta = {k: v for k, v in self.metadata.items() if k != "scenarios"}
        meta["scenario"] = scenario
        meta.update(self.metadata.get("scenarios", {}).get(scenario, {}))
        return ResultTable(
            name=self.name,
            variable=self.variable,
            metric=self.metric,
            frame=frame.reset_index(drop=True),
            failures=[f for f in self.failures if f.get("scenario") == scenario],
            metadata=meta,
        )

    def wide(self) -> pd.DataFrame:
        """One row per (sweep value, method) with a column per tier label."""
        tiers = list(dict.fromkeys(self.frame["tier"]))
        wide = self.frame.pivot_table(index=["sweep_value", "method"], columns="tier",
                                      values="value", dropna=False)
        return wide[[t for t in tiers if t in wide.columns]]

    def to_csv_text(self) -> str:
        return self.frame[CSV_COLUMNS].to_csv(index=False, float_format=FLOAT_FORMAT,
                                              lineterminator="\n")

    def meta_document(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "variable": self.variable,
            "metric": self.metric,
            "failures": self.failures,
            **self.metadata,
        }

    @classmethod
    def from_csv(cls, path, name: Optional[str] = None, variable: str = "threshold_db",
                 metric: str = "coverage") -> "ResultTable":
        frame = pd.read_csv(path, dtype={"method": str, "tier": str})
        return cls(name=name or Path(path).stem, variable=variable, metric=metric, frame=frame)


def _binomial_half_width(p: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return 1.96 * np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / n)


def _clip_probability(x: float) -> float:
    return float(np.clip(x, 0.0, 1.0)) if np.isfinite(x) else float("nan")


def _coverage_rows(curve: CoverageCurve, sweep_values: Sequence[float], method: str,
                   tier_names: Sequence[str], n_snapshots: Optional[int]) -> List[Dict[str, Any]]:
    rows = []
    present = {name: k for k, name in enumerate(curve.tier_names)}
    for i, sv in enumerate(sweep_values):
        total_ci = np.nan
        if curve.half_width_95 is not None:
            total_ci = float(curve.half_width_95[i])
        rows.append({"sweep_value": sv, "method": method, "tier": "total",
                     "value": _clip_probability(curve.total[i]), "ci95": total_ci})
        if method == "closed_form":
            continue
        for name in tier_names:
            if name in present:
                value = float(curve.per_tier[i, present[name]])
            else:
                # dropped by a zero ratio
                value = 0.0 if not curve.failed[i] else np.nan
            ci = np.nan
            if n_snapshots is not None and np.isfinite(value):
                ci = float(_binomial_half_width(value, n_snapshots))
            rows.append({"sweep_value": sv, "method": method, "tier": name,
                         "value": _clip_probability(value), "ci95": ci})
    return rows


def _association_rows(fractions: np.ndarray, half_width: Optional[np.ndarray], sweep_value: float,
                      method: str, tiers: Sequence[TierConfig],
                      tier_names: Sequence[str]) -> List[Dict[str, Any]]:
    present = {t.name: k for k, t in enumerate(tiers)}
    rows = []
    for name in list(tier_names) + ["none"]:
        k = len(tiers) if name == "none" else present.get(name)
        value = 0.0 if k is None else float(fractions[k])
        ci = np.nan
        if half_width is not None and k is not None:
            ci = float(half_width[k])
        rows.append({"sweep_value": sweep_value, "method": method, "tier": name,
                     "value": _clip_probability(value), "ci95": ci})
    return rows


def _failure_rows(sweep_values: Sequence[float], method: str, tier_names: Sequence[str],
                  metric: str) -> List[Dict[str, Any]]:
    labels = ["total"] + list(tier_names) if metric == "coverage" else list(tier_names) + ["none"]
    if method == "closed_form":
        labels = ["total"]
    return [{"sweep_value": sv, "method": method, "tier": label, "value": np.nan, "ci95": np.nan}
            for sv in sweep_values for label in labels]


def _json_safe(meta: Dict[str, Any]) -> Dict[str, Any]:
    keep = ("association_rule", "kappa", "epsilon", "seed", "n_snapshots", "representation",
            "layouts", "association_counts")
    return {k: v for k, v in meta.items() if k in keep}


def _run_coverage(method: str, tiers: List[TierConfig], thresholds_db: Sequence[float],
                  scenario: Scenario, progress: bool) -> CoverageCurve:
    an, mc = scenario.analytics, scenario.mc
    if method in ANALYTIC_METHODS:
        return coverage_curve(tiers, thresholds_db, method=method, kappa=an.kappa,
                              epsilon=an.epsilon, association_rule=an.association_rule,
                              n_jobs=an.n_jobs)
    if method == "mc":
        return estimate_coverage(tiers, thresholds_db, mc.snapshots, mc.seed, n_jobs=mc.n_jobs,
                                 representation=mc.representation, progress=progress)
    if method == "grid_baseline":
        if len(tiers) != 2:
            raise ValueError("grid baseline needs both the terrestrial and the satellite tier")
        return estimate_grid_coverage(scenario.grid, tiers, thresholds_db, mc.snapshots, mc.seed,
                                      progress=progress)
    raise ValueError(f"Unknown method '{method}'")


def _run_association(method: str, tiers: List[TierConfig], scenario: Scenario, progress: bool):
    if method == "exact":
        return association_table(tiers, scenario.analytics.association_rule), None, {
            "association_rule": scenario.analytics.association_rule}
    est = estimate_association_proportions(tiers, scenario.mc.snapshots, scenario.mc.seed,
                                           n_jobs=scenario.mc.n_jobs,
                                           representation=scenario.mc.representation,
                                           progress=progress)
    return est.fractions, est.half_width_95, {"seed": est.seed, "n_snapshots": est.n_snapshots}


def _cells(cfg: ExperimentConfig) -> List[Tuple[Optional[float], Tuple[float, ...]]]:
    """(sweep value or None, thresholds) per evaluation cell."""
    if cfg.sweep.variable == "threshold_db":
        return [(None, cfg.sweep.values)]
    return [(v, (cfg.threshold_db,)) for v in cfg.sweep.values]


def run_experiment(cfg: ExperimentConfig, progress: bool = False,
                   report: Optional[Callable[[str], None]] = None) -> ResultTable:
    """
    Run every method over every scenario and sweep point

    Per-cell failures do not stop the run: the cell's rows are NaN and the
    error is kept in ResultTable.failures.

    Args:
        cfg: validated config
        progress: show tqdm bars for the sweep and Monte-Carlo blocks
        report: callback receiving one status line per event

    Returns:
        ResultTable with a scenario column
    """
    say = report or (lambda _msg: None)
    tier_names = cfg.tier_names
    rows: List[Dict[str, Any]] = []
    failures: List[Dict[str, Any]] = []
    scenario_meta: Dict[str, Any] = {}
    sweep = cfg.sweep

    for scenario in cfg.scenarios:
        say(f"🚀 Scenario '{scenario.name}': {len(sweep.values)} {sweep.variable} value(s), "
            f"methods {', '.join(cfg.methods)}")
        cell_meta = []
        for method in cfg.methods:
            cells = _cells(cfg)
            iterator = cells
            if progress and len(cells) > 1:
                iterator = tqdm(cells, desc=f"{scenario.name}:{method}", leave=False)
            n_failed = 0
            for sweep_value, thresholds in iterator:
                sweep_values = list(thresholds) if sweep_value is None else [sweep_value]
                scenario_rows = []
                try:
                    tiers = scenario.tiers_at(sweep.variable, sweep_value, sweep.tier) \
                        if sweep_value is not None else scenario.tiers_at()
                    if cfg.metric == "coverage":
                        curve = _run_coverage(method, tiers, thresholds, scenario, progress)
                        n = scenario.mc.snapshots if method in ("mc", "grid_baseline") else None
                        scenario_rows = _coverage_rows(curve, sweep_values, method, tier_names, n)
                        for i, flag in enumerate(curve.failed):
                            if flag:
                                n_failed += 1
                                failures.append({"scenario": scenario.name, "sweep_value": sweep_values[i],
                                                 "method": method, "error": curve.errors[i]})
                        meta = _json_safe(curve.metadata)
                    else:
                        fractions, half_width, meta = _run_association(method, tiers, scenario, progress)
                        for sv in sweep_values:
                            scenario_rows += _association_rows(fractions, half_width, sv, method,
                                                               tiers, tier_names)
                except (ValueError, RuntimeError) as e:
                    n_failed += len(sweep_values)
                    failures.append({"scenario": scenario.name,
                                     "sweep_value": None if sweep_value is None else sweep_value,
                                     "method": method, "error": f"{type(e).__name__}: {e}"})
                    scenario_rows = _failure_rows(sweep_values, method, tier_names, cfg.metric)
                    meta = {}
                cell_meta.append({"sweep_value": sweep_value, "method": method, **meta})
                for row in scenario_rows:
                    rows.append({"scenario": scenario.name, **row})
            status = "⚠️" if n_failed else "📊"
            suffix = f" ({n_failed} failed)" if n_failed else ""
            say(f"{status} {scenario.name}: {method} done{suffix}")
        scenario_meta[scenario.name] = {
            "mc": asdict(scenario.mc),
            "analytics": {**asdict(scenario.analytics),
                          "epsilon": None if scenario.analytics.epsilon is None else list(scenario.analytics.epsilon)},
            "tiers": [{**{k: v for k, v in spec.items() if k != "fading"}, "fading": repr(spec["fading"])}
                      for spec in scenario.tier_specs],
            "cells": cell_meta,
        }

    frame = pd.DataFrame(rows, columns=["scenario"] + CSV_COLUMNS)
    return ResultTable(
        name=cfg.name,
        variable=sweep.variable,
        metric=cfg.metric,
        frame=frame,
        failures=failures,
        metadata={"config": cfg.name, "description": cfg.description,
                  "source": None if cfg.source is None else str(cfg.source),
                  "sweep": {"variable": sweep.variable, "tier": sweep.tier, "values": list(sweep.values)},
                  "threshold_db": cfg.threshold_db, "methods": list(cfg.methods),
                  "scenarios": scenario_meta},
    )


def _stem(table: ResultTable, scenario: str) -> str:
    return table.name if len(table.scenarios) == 1 else f"{table.name}_{scenario}"


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return repr(obj)


def emit(table: ResultTable, fmt: str, out_dir) -> List[Path]:
    """
    Write a result table, one file set per scenario

    csv: <name>.csv with header sweep_value,method,tier,value,ci95 and
    <name>.meta.json. plotdata: one whitespace-separated file per method.

    Returns:
        paths written
    """
    if fmt not in OUTPUT_FORMATS:
        raise ValueError(f"Unknown output format '{fmt}' (use {', '.join(OUTPUT_FORMATS)})")
    from plots import write_plotdata

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: List[Path] = []
    for scenario in table.scenarios:
        part = table.for_scenario(scenario)
        stem = _stem(table, scenario)
        if fmt == "csv":
            csv_path = out / f"{stem}.csv"
            with open(csv_path, "w", encoding="utf-8", newline="") as f:
                f.write(part.to_csv_text())
            meta_path = out / f"{stem}.meta.json"
            with open(meta_path, "w", encoding="utf-8") as f:
                json.dump(part.meta_document(), f, indent=2, sort_keys=True, default=_json_default)
                f.write("\n")
            paths.extend([csv_path, meta_path])
        else:
            paths.extend(write_plotdata(part, out, stem))
    return paths
