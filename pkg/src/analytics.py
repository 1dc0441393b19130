"""
Coverage Analytics for K-tier Integrated Satellite-Terrestrial Networks

Evaluates the stochastic-geometry results for the typical user on the
displaced annulus model: void and first-touch laws, biased max-ERP
association, the interference Laplace transform with its high-order
derivatives, exact and approximated coverage, and the two-tier closed form.

Every tier's fading law is consumed through its Erlang-mixture form
(rate a, weights c_l), so shadowed-Rician satellite tiers and Nakagami
terrestrial tiers run through the same coverage code.
"""

import warnings
import numpy as np
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union
from joblib import Parallel, delayed
from scipy import integrate, optimize, special

from geometry import (
    EARTH_RADIUS_KM,
    AnnulusGeometry,
    SphereShell,
    VisibleCap,
    density_for_count,
    displace,
    visible_cap,
)
from fading import FadingLaw, mean_power

SPEED_OF_LIGHT_KM_S = 3.0e5
NOISE_PSD_DBM_HZ = -174.0

INNER_EPSREL = 1e-9
OUTER_EPSREL = 1e-8
OUTER_EPSABS = 1e-12
_TINY = 1e-300

ASSOCIATION_RULES = ("printed", "void_corrected")
KAPPA_POLICIES = ("mean_matched", "lower_bound", "upper_bound", "fit")

# Correction constants for the closed form, keyed by satellite altitude in km
CLOSED_FORM_EPSILON = {
    200.0: (2.9282, 1.4089),
    530.0: (1.9521, 0.0),
    1000.0: (2.1474, 1.3535),
}


class DerivativeOverflow(RuntimeError):
    """A Laplace-derivative term or an integrand evaluated to a non-finite value."""


class KappaOutOfRange(ValueError):
    """Tuning parameter outside [Gamma(l+2)^(-1/(l+1)), 1] for some l."""


class PreconditionViolation(ValueError):
    """Structural conditions of a closed-form result are not met."""


class InvalidTier(ValueError):
    """TierConfig invariants broken."""


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watts(value_dbm):
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(value_w):
    return 10.0 * np.log10(np.asarray(value_w, dtype=float)) + 30.0


@dataclass(frozen=True)
class TierConfig:
    """
    Physical and statistical description of one network tier

    Gains include the user antenna gain and the free-space constant
    (c / 4 pi f)^2, so P * main_lobe_gain * r^-alpha is the received power.
    """
    name: str
    shell: SphereShell
    theta_rad: float
    density_per_km2: float
    tx_power_w: float
    carrier_hz: float
    bandwidth_hz: float
    main_lobe_gain: float
    side_lobe_gain: float
    path_loss_exp: float
    bias: float
    fading: FadingLaw
    noise_psd_w_per_hz: float

    def __post_init__(self):
        problems = []
        if not self.side_lobe_gain <= self.main_lobe_gain:
            problems.append(f"side lobe gain {self.side_lobe_gain:.4g} exceeds main lobe gain "
                            f"{self.main_lobe_gain:.4g}")
        if not self.path_loss_exp >= 2:
            problems.append(f"path-loss exponent {self.path_loss_exp} below 2")
        if not self.bias > 0:
            problems.append(f"bias {self.bias} must be positive")
        for label in ("tx_power_w", "main_lobe_gain", "side_lobe_gain", "carrier_hz", "bandwidth_hz"):
            if not getattr(self, label) > 0:
                problems.append(f"{label} must be positive")
        if not self.density_per_km2 >= 0:
            problems.append(f"density {self.density_per_km2} must be nonnegative")
        if not self.noise_psd_w_per_hz >= 0:
            problems.append("noise PSD must be nonnegative")
        if problems:
            raise InvalidTier(f"Tier '{self.name}': " + "; ".join(problems))
        # raises OutOfRangeTheta / DegenerateShell on a bad angle
        visible_cap(self.shell, self.theta_rad)

    @cached_property
    def cap(self) -> VisibleCap:
        return visible_cap(self.shell, self.theta_rad)

    @cached_property
    def annulus(self) -> AnnulusGeometry:
        return displace(self.cap, self.density_per_km2)

    @property
    def normalized_gain(self) -> float:
        return self.side_lobe_gain / self.main_lobe_gain

    @property
    def noise_power_w(self) -> float:
        return self.noise_psd_w_per_hz * self.bandwidth_hz

    @property
    def normalized_noise(self) -> float:
        return self.noise_power_w / (self.main_lobe_gain * self.tx_power_w)

    @property
    def mean_fading(self) -> float:
        return mean_power(self.fading)

    @property
    def erp_scale(self) -> float:
        """P G B E, the distance-free part of the biased ERP."""
        return self.tx_power_w * self.main_lobe_gain * self.bias * self.mean_fading

    @property
    def mean_visible_count(self) -> float:
        return self.density_per_km2 * self.cap.area_km2

    @property
    def visible_probability(self) -> float:
        return float(-np.expm1(-self.annulus.mean_count))

    def replace(self, **changes) -> "TierConfig":
        return replace(self, **changes)

    def with_mean_visible_count(self, count: float) -> "TierConfig":
        return replace(self, density_per_km2=density_for_count(self.cap, count))


def path_loss_constant(carrier_hz: float) -> float:
    """(c / 4 pi f)^2 in km^2."""
    return (SPEED_OF_LIGHT_KM_S / (4.0 * np.pi * carrier_hz)) ** 2


def make_tier(name: str, altitude_km: float, carrier_ghz: float, tx_power_dbm: float,
              bandwidth_mhz: float, path_loss_exp: float, fading: FadingLaw,
              tx_gain_main_dbi: float = 0.0, tx_gain_side_dbi: float = 0.0,
              user_gain_main_dbi: float = 0.0, user_gain_side_dbi: float = 0.0,
              bias: float = 1.0, mean_visible_count: Optional[float] = None,
              density_per_km2: Optional[float] = None, theta_rad: Optional[float] = None,
              noise_psd_dbm_hz: float = NOISE_PSD_DBM_HZ,
              earth_radius_km: float = EARTH_RADIUS_KM) -> TierConfig:
    """
    Build a TierConfig from link-budget units

    Args:
        name: tier label
        altitude_km: BS height above the user sphere
        carrier_ghz, tx_power_dbm, bandwidth_mhz: radio parameters
        path_loss_exp: alpha
        fading: FadingLaw instance
        tx_gain_*_dbi, user_gain_*_dbi: antenna gains of the two-lobe model
        bias: linear association bias
        mean_visible_count: expected number of visible BSs (takes precedence)
        density_per_km2: BS density on the shell
        theta_rad: visible angle, theta_max when omitted
        noise_psd_dbm_hz: N0

    Returns:
        TierConfig
    """
    shell = SphereShell.from_altitude(altitude_km, earth_radius_km)
    cap = visible_cap(shell, theta_rad)
    if mean_visible_count is not None:
        density = density_for_count(cap, mean_visible_count)
    elif density_per_km2 is not None:
        density = float(density_per_km2)
    else:
        raise InvalidTier(f"Tier '{name}' needs mean_visible_count or density_per_km2")
    carrier_hz = carrier_ghz * 1e9
    const = path_loss_constant(carrier_hz)
    return TierConfig(
        name=name,
        shell=shell,
        theta_rad=cap.theta_rad,
        density_per_km2=density,
        tx_power_w=float(dbm_to_watts(tx_power_dbm)),
        carrier_hz=carrier_hz,
        bandwidth_hz=bandwidth_mhz * 1e6,
        main_lobe_gain=float(db_to_linear(tx_gain_main_dbi + user_gain_main_dbi)) * const,
        side_lobe_gain=float(db_to_linear(tx_gain_side_dbi + user_gain_side_dbi)) * const,
        path_loss_exp=float(path_loss_exp),
        bias=float(bias),
        fading=fading,
        noise_psd_w_per_hz=float(dbm_to_watts(noise_psd_dbm_hz)),
    )


def interference_limited(tiers: Sequence[TierConfig]) -> List[TierConfig]:
    """Copies of the tiers with the noise floor removed."""
    return [t.replace(noise_psd_w_per_hz=0.0) for t in tiers]


# ---------------------------------------------------------------------------
# Visibility and nearest distance

def void_probability(annulus: AnnulusGeometry) -> float:
    return float(np.exp(-annulus.mean_count))


def _first_touch_unnormalized(annulus: AnnulusGeometry, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    lam = annulus.density_per_km2
    inside = (r > annulus.r_min_km) & (r < annulus.r_max_km)
    val = 2.0 * np.pi * lam * r * np.exp(-np.pi * lam * (r ** 2 - annulus.r_min_km ** 2))
    return np.where(inside, val, 0.0)


def first_touch_pdf(annulus: AnnulusGeometry, r) -> np.ndarray:
    """PDF of the nearest distance given at least one visible BS; 0 outside (r_min, r_max)."""
    visible = -np.expm1(-annulus.mean_count)
    if visible <= 0.0:
        return np.zeros_like(np.asarray(r, dtype=float))
    return _first_touch_unnormalized(annulus, r) / visible


# ---------------------------------------------------------------------------
# Association

@dataclass(frozen=True)
class TierRatios:
    """Ratios of tier j to anchor tier k, with the knots of the association factor."""
    p_hat: float
    g_hat: float
    b_hat: float
    e_hat: float
    alpha_hat: float
    u_bound_km: float
    l_bound_km: float

    @property
    def product(self) -> float:
        return self.p_hat * self.g_hat * self.b_hat * self.e_hat


def tier_ratios(tiers: Sequence[TierConfig], k: int, j: int) -> TierRatios:
    tk, tj = tiers[k], tiers[j]
    if j == k:
        return TierRatios(1.0, 1.0, 1.0, 1.0, 1.0, tk.annulus.r_max_km, tk.annulus.r_min_km)
    p_hat = tj.tx_power_w / tk.tx_power_w
    g_hat = tj.main_lobe_gain / tk.main_lobe_gain
    b_hat = tj.bias / tk.bias
    e_hat = tj.mean_fading / tk.mean_fading
    prod = p_hat * g_hat * b_hat * e_hat
    a_j, a_k = tj.path_loss_exp, tk.path_loss_exp
    u = np.exp((a_j * np.log(tj.annulus.r_max_km) - np.log(prod)) / a_k)
    l = np.exp((a_j * np.log(tj.annulus.r_min_km) - np.log(prod)) / a_k)
    return TierRatios(p_hat, g_hat, b_hat, e_hat, a_j / a_k, float(u), float(l))


def association_factor(tiers: Sequence[TierConfig], k: int, j: int, r,
                       rule: str = "printed") -> np.ndarray:
    """
    Probability that no tier-j BS beats the tier-k BS at distance r

    Branches: 1 below L_{k,j}; exp(-pi lam_j (x^2 - R_min,j^2)) between the
    knots, with x the equal-ERP distance in tier j; beyond U_{k,j} the printed
    rule gives 0 and the void-corrected rule gives the tier-j void probability.
    """
    r = np.asarray(r, dtype=float)
    tj = tiers[j]
    ann = tj.annulus
    if ann.density_per_km2 <= 0.0:
        return np.ones_like(r)
    ratios = tier_ratios(tiers, k, j)
    a_k = tiers[k].path_loss_exp
    with np.errstate(divide="ignore"):
        x = np.exp((np.log(ratios.product) + a_k * np.log(r)) / tj.path_loss_exp)
    middle = np.exp(-np.pi * ann.density_per_km2 * (x ** 2 - ann.r_min_km ** 2))
    if rule == "printed":
        outer = 0.0
    elif rule == "void_corrected":
        outer = void_probability(ann)
    else:
        raise ValueError(f"Unknown association rule '{rule}' (use one of {ASSOCIATION_RULES})")
    return np.where(x < ann.r_min_km, 1.0, np.where(x > ann.r_max_km, outer, middle))


def association_weight(tiers: Sequence[TierConfig], k: int, r, rule: str = "printed") -> np.ndarray:
    """Product over j != k of the association factors."""
    weight = np.ones_like(np.asarray(r, dtype=float))
    for j in range(len(tiers)):
        if j != k:
            weight = weight * association_factor(tiers, k, j, r, rule)
    return weight


def association_knots(tiers: Sequence[TierConfig], k: int) -> List[float]:
    ann = tiers[k].annulus
    knots = []
    for j in range(len(tiers)):
        if j == k or tiers[j].annulus.density_per_km2 <= 0.0:
            continue
        ratios = tier_ratios(tiers, k, j)
        knots.extend([ratios.l_bound_km, ratios.u_bound_km])
    return sorted(x for x in knots if ann.r_min_km < x < ann.r_max_km)


def _integrate(func, a: float, b: float, epsrel: float, epsabs: float,
               points: Optional[Sequence[float]] = None, what: str = "integral"):
    """
    Adaptive Gauss-Kronrod integral of a scalar- or vector-valued function

    Non-finite integrand values raise DerivativeOverflow. Hitting the
    subdivision limit only warns; the best estimate is returned.
    """
    points = list(points) if points else None
    value, _, info = integrate.quad_vec(func, a, b, epsabs=epsabs, epsrel=epsrel, points=points,
                                        full_output=True)
    if info.status == 2 or not np.all(np.isfinite(value)):
        raise DerivativeOverflow(f"Non-finite values in the {what} on [{a:.6g}, {b:.6g}]")
    if info.status == 1:
        warnings.warn(f"{what} on [{a:.6g}, {b:.6g}]: {info.message}", integrate.IntegrationWarning)
    return value


def _outer_integral(tiers: Sequence[TierConfig], k: int, bracket=None,
                    rule: str = "printed") -> float:
    """
    Integral of first-touch (unnormalized) x association weight x bracket over tier k's ring

    Equals P[J=k | visible] P[visible] times the mean of the bracket given J = k.
    """
    ann = tiers[k].annulus
    if ann.mean_count <= 0.0 or ann.r_max_km <= ann.r_min_km:
        return 0.0

    def integrand(r):
        r = np.atleast_1d(float(r))
        base = _first_touch_unnormalized(ann, r) * association_weight(tiers, k, r, rule)
        if bracket is None or base[0] <= 0.0:
            return float(base[0])
        return float(base[0] * np.clip(bracket(r)[0], 0.0, 1.0))

    value = _integrate(integrand, ann.r_min_km, ann.r_max_km, OUTER_EPSREL, OUTER_EPSABS,
                       points=association_knots(tiers, k), what=f"association integral of tier {k}")
    return float(value)


def association_probability(tiers: Sequence[TierConfig], k: int, rule: str = "printed") -> float:
    """
    P[J = k | tier k has a visible BS]

    Args:
        tiers: all tiers of the network
        k: anchor tier index
        rule: 'printed' or 'void_corrected' outer branch

    Returns:
        Probability in [0, 1]; 0 when tier k can never be visible
    """
    visible = tiers[k].visible_probability
    if visible <= 0.0:
        return 0.0
    return float(np.clip(_outer_integral(tiers, k, rule=rule) / visible, 0.0, 1.0))


def association_table(tiers: Sequence[TierConfig], rule: str = "printed") -> np.ndarray:
    """Unconditional P[J = k] per tier followed by the no-service mass."""
    served = np.array([association_probability(tiers, k, rule) * tiers[k].visible_probability
                       for k in range(len(tiers))])
    return np.append(served, max(0.0, 1.0 - served.sum()))


def conditional_distance_pdf(tiers: Sequence[TierConfig], k: int, r, rule: str = "printed",
                             assoc: Optional[float] = None) -> np.ndarray:
    """Serving-distance PDF given J = k."""
    if assoc is None:
        assoc = association_probability(tiers, k, rule)
    if assoc <= 0.0:
        return np.zeros_like(np.asarray(r, dtype=float))
    ann = tiers[k].annulus
    return first_touch_pdf(ann, r) * association_weight(tiers, k, r, rule) / assoc


# ---------------------------------------------------------------------------
# Interference Laplace transform

def _interference_integrals(tier: TierConfig, annulus: AnnulusGeometry, r: np.ndarray,
                            s: np.ndarray, scale: Optional[np.ndarray], n_max: int) -> np.ndarray:
    """
    Inner integrals over the interferer ring (r, r_max], batched over r

    With scale None, returns int (1 - M(s g(v))) v dv with shape s.shape.
    Otherwise returns int w^n M^(n)(s g(v)) v dv, w = scale g(v), for n = 0..n_max,
    shape (n_max + 1,) + r.shape; entry 0 is again the (1 - M) integral.
    Uses v = r (r_max / r)^tau, which keeps the integrand smooth near v = r.
    """
    r = np.asarray(r, dtype=float)
    law = tier.fading
    g_tilde = tier.normalized_gain
    alpha = tier.path_loss_exp
    log_span = np.log(annulus.r_max_km / r)
    extra = s.ndim - r.ndim

    def integrand(tau):
        v = r * np.exp(log_span * tau)
        jac = v * v * log_span
        g = g_tilde * v ** (-alpha)
        if scale is None:
            shape = r.shape + (1,) * extra
            t = s * g.reshape(shape)
            return -np.expm1(law.log_mgf(t)) * jac.reshape(shape)
        t = s * g
        derivs = law.mgf_derivatives(t, scale * g, n_max)
        derivs[0] = -np.expm1(law.log_mgf(t))
        return derivs * jac

    return _integrate(integrand, 0.0, 1.0, INNER_EPSREL, _TINY,
                      what=f"interference integral of tier '{tier.name}'")


def laplace_interference(tier: TierConfig, annulus: Optional[AnnulusGeometry], r, s) -> np.ndarray:
    """
    Laplace transform of interference plus normalized noise at serving distance r

    Args:
        tier: serving tier (its fading law drives the interferer MGF)
        annulus: displaced ring of the tier; defaults to tier.annulus
        r: serving distance in [r_min, r_max]
        s: Laplace argument(s) >= 0

    Returns:
        exp(-s sigma^2 - 2 pi lam int_r^r_max (1 - M(s G v^-alpha)) v dv), shaped like s
    """
    annulus = annulus or tier.annulus
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if not annulus.r_min_km <= float(r) <= annulus.r_max_km:
        raise PreconditionViolation(
            f"Serving distance {float(r):.6g} km outside [{annulus.r_min_km:.6g}, {annulus.r_max_km:.6g}] km"
        )
    if np.any(s < 0):
        raise PreconditionViolation("Laplace argument must be >= 0")
    r_arr = np.asarray([float(r)])
    inner = _interference_integrals(tier, annulus, r_arr, s[None, :], None, 0)[0]
    eta = -s * tier.normalized_noise - 2.0 * np.pi * annulus.density_per_km2 * inner
    return np.exp(eta)


def bell_series(y: np.ndarray) -> np.ndarray:
    """
    Normalized complete Bell polynomials B_q(y_1..y_q) / q!

    Args:
        y: array of shape (n, ...) holding y_1..y_n along axis 0

    Returns:
        array of shape (n + 1, ...) with entry q = B_q / q!
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    out = np.empty((n + 1,) + y.shape[1:])
    out[0] = 1.0
    inv_fact = 1.0 / special.factorial(np.arange(n))
    for q in range(1, n + 1):
        acc = np.zeros(y.shape[1:])
        for i in range(1, q + 1):
            acc = acc + out[q - i] * y[i - 1] * inv_fact[i - 1]
        out[q] = acc / q
    return out


def complete_bell(x: Sequence[float]) -> np.ndarray:
    """Complete Bell polynomials B_0..B_n of x_1..x_n."""
    x = np.asarray(x, dtype=float)
    return bell_series(x) * special.factorial(np.arange(x.shape[0] + 1))


def _scaled_eta(tier: TierConfig, annulus: AnnulusGeometry, r: np.ndarray, s: np.ndarray,
                scale: np.ndarray, n_max: int) -> np.ndarray:
    """scale^n d^n eta / ds^n for n = 0..n_max, batched over r."""
    inner = _interference_integrals(tier, annulus, r, s, scale, n_max)
    lam2 = 2.0 * np.pi * annulus.density_per_km2
    eta = lam2 * inner
    eta[0] = -s * tier.normalized_noise - lam2 * inner[0]
    if n_max >= 1:
        eta[1] = eta[1] - scale * tier.normalized_noise
    return eta


def _laplace_series(tier: TierConfig, annulus: AnnulusGeometry, r: np.ndarray, s: np.ndarray,
                    scale: np.ndarray, n_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """L(s) and the nonnegative series B_q(y)/q! with y_n = (-scale)^n eta^(n)."""
    eta = _scaled_eta(tier, annulus, r, s, scale, n_max)
    signs = (-1.0) ** np.arange(1, n_max + 1).reshape((-1,) + (1,) * r.ndim)
    series = bell_series(signs * eta[1:])
    laplace = np.exp(eta[0])
    if not (np.all(np.isfinite(series)) and np.all(np.isfinite(laplace))):
        raise DerivativeOverflow(
            f"Non-finite Laplace derivative terms up to order {n_max} for tier '{tier.name}'"
        )
    return laplace, series


def laplace_derivatives(tier: TierConfig, annulus: Optional[AnnulusGeometry], r: float, s: float,
                        q_max: int, scale: float = 1.0) -> np.ndarray:
    """
    Derivatives of the interference Laplace transform in s

    Args:
        tier, annulus: as laplace_interference
        r: serving distance
        s: Laplace argument
        q_max: highest order, at most m - 1 of the tier's fading law
        scale: returns scale^q d^qL/ds^q; 1 gives plain derivatives

    Returns:
        array of length q_max + 1
    """
    if q_max > tier.fading.m - 1:
        raise PreconditionViolation(
            f"Derivative order {q_max} exceeds m - 1 = {tier.fading.m - 1} for tier '{tier.name}'"
        )
    annulus = annulus or tier.annulus
    r_arr = np.asarray([float(r)])
    s_arr = np.asarray([float(s)])
    laplace, series = _laplace_series(tier, annulus, r_arr, s_arr, np.asarray([float(scale)]), q_max)
    q = np.arange(q_max + 1)
    return laplace[0] * (-1.0) ** q * special.factorial(q) * series[:, 0]


# ---------------------------------------------------------------------------
# Coverage

@dataclass(frozen=True)
class CoveragePoint:
    threshold_linear: float
    total: float
    per_tier: np.ndarray
    method: str
    kappa: Optional[Dict[str, List[float]]] = None


@dataclass
class CoverageCurve:
    """Coverage per threshold with per-tier decomposition and provenance."""
    thresholds_db: np.ndarray
    total: np.ndarray
    per_tier: np.ndarray
    method: str
    tier_names: List[str]
    failed: np.ndarray = None
    errors: List[Optional[str]] = None
    half_width_95: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.thresholds_db)
        if self.failed is None:
            self.failed = np.zeros(n, dtype=bool)
        if self.errors is None:
            self.errors = [None] * n

    def to_frame(self):
        import pandas as pd
        rows = []
        for i, t_db in enumerate(self.thresholds_db):
            ci = np.nan if self.half_width_95 is None else self.half_width_95[i]
            rows.append({"threshold_db": t_db, "tier": "total", "value": self.total[i], "ci95": ci})
            for k, name in enumerate(self.tier_names):
                rows.append({"threshold_db": t_db, "tier": name, "value": self.per_tier[i, k],
                             "ci95": np.nan})
        return pd.DataFrame(rows)


def _exact_bracket(tier: TierConfig, t_linear: float):
    rate, weights = tier.fading.erlang_mixture()
    l_max = int(np.flatnonzero(weights > 0).max())
    ann = tier.annulus
    alpha = tier.path_loss_exp

    def bracket(r):
        nu = rate * r ** alpha * t_linear
        laplace, series = _laplace_series(tier, ann, r, nu, nu, l_max)
        partial = np.cumsum(series, axis=0)
        w = weights[: l_max + 1].reshape((-1,) + (1,) * r.ndim)
        return 1.0 - np.sum(w * (1.0 - laplace * partial), axis=0)

    return bracket


def kappa_lower_bound(l) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    return np.exp(-special.gammaln(l + 2.0) / (l + 1.0))


def kappa_mean_matched(m: int) -> np.ndarray:
    """
    Per-l kappa that gives (1 - exp(-kappa x))^(l+1) the mean of a Gamma(l+1, 1) law

    That CDF has mean H_(l+1) / kappa, with H_n the n-th harmonic number, so
    kappa_l = H_(l+1) / (l + 1). It always lies inside [lower bound, 1].
    """
    n = np.arange(1, m + 1, dtype=float)
    kappa = np.cumsum(1.0 / n) / n
    return np.clip(kappa, kappa_lower_bound(n - 1.0), 1.0)


def resolve_kappa(policy, m: int) -> np.ndarray:
    """
    Per-l tuning values for l = 0..m-1

    Args:
        policy: 'mean_matched', 'lower_bound', 'upper_bound', a scalar, or a per-l sequence
        m: fading shape of the tier

    Returns:
        array of length m; l = 0 is always 1
    """
    l = np.arange(m)
    lower = kappa_lower_bound(l)
    if isinstance(policy, str):
        if policy == "mean_matched":
            kappa = kappa_mean_matched(m)
        elif policy == "lower_bound":
            kappa = lower.copy()
        elif policy == "upper_bound":
            kappa = np.ones(m)
        else:
            raise KappaOutOfRange(f"Unknown kappa policy '{policy}' (use one of {KAPPA_POLICIES} or a number)")
    else:
        values = np.atleast_1d(np.asarray(policy, dtype=float))
        kappa = np.full(m, values[0]) if values.size == 1 else values[:m].copy()
        if kappa.size < m:
            raise KappaOutOfRange(f"Need {m} kappa values, got {kappa.size}")
        bad = [int(i) for i in l[1:] if not (lower[i] - 1e-12 <= kappa[i] <= 1.0 + 1e-12)]
        if bad:
            raise KappaOutOfRange(
                "kappa outside [Gamma(l+2)^(-1/(l+1)), 1] for l = "
                + ", ".join(f"{i} (kappa={kappa[i]:.4g}, lower={lower[i]:.4g})" for i in bad)
            )
    kappa[0] = 1.0
    return kappa


def incomplete_gamma_bounds(l: int, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower bound, regularized lower incomplete gamma, upper bound) at shape l + 1."""
    x = np.asarray(x, dtype=float)
    k_lo = kappa_lower_bound(l)
    lower = (-np.expm1(-k_lo * x)) ** (l + 1)
    exact = special.gammainc(l + 1, x)
    upper = (-np.expm1(-x)) ** (l + 1)
    return lower, exact, upper


def _approx_bracket(tier: TierConfig, t_linear: float, kappa: np.ndarray):
    rate, weights = tier.fading.erlang_mixture()
    active = np.flatnonzero(weights > 0)
    ann = tier.annulus
    alpha = tier.path_loss_exp
    # flattened (l, q) grid of Laplace arguments, q = 1..l+1
    l_idx = np.concatenate([np.full(l + 1, l) for l in active])
    q_idx = np.concatenate([np.arange(1, l + 2) for l in active])
    coef = (weights[l_idx] * special.comb(l_idx + 1, q_idx) * (-1.0) ** q_idx)
    rho_unit = kappa[l_idx] * q_idx
    const = float(np.sum(weights[active]))

    def bracket(r):
        base = rate * r ** alpha * t_linear
        s = base[:, None] * rho_unit[None, :]
        inner = _interference_integrals(tier, ann, r, s, None, 0)
        laplace = np.exp(-s * tier.normalized_noise - 2.0 * np.pi * ann.density_per_km2 * inner)
        # sum_q C(l+1,q)(-1)^q L(rho q) with the q = 0 term equal to 1
        return 1.0 - const - laplace @ coef

    return bracket


def coverage_exact(tiers: Sequence[TierConfig], t_linear: float,
                   association_rule: str = "printed") -> CoveragePoint:
    """
    Exact coverage at one threshold

    Args:
        tiers: network tiers
        t_linear: SINR threshold (linear, > 0)
        association_rule: outer branch of the association factor

    Returns:
        CoveragePoint with per-tier P_k^cov P[J=k | vis] P[vis]
    """
    if not t_linear > 0:
        raise ValueError(f"Threshold must be positive, got {t_linear}")
    per_tier = np.array([
        _outer_integral(tiers, k, _exact_bracket(tiers[k], t_linear), association_rule)
        for k in range(len(tiers))
    ])
    return CoveragePoint(t_linear, float(per_tier.sum()), per_tier, "exact")


def coverage_approx(tiers: Sequence[TierConfig], t_linear: float, kappa_policy="mean_matched",
                    association_rule: str = "printed") -> CoveragePoint:
    """Approximated coverage with the binomial expansion of the gamma CDF."""
    if not t_linear > 0:
        raise ValueError(f"Threshold must be positive, got {t_linear}")
    if isinstance(kappa_policy, str) and kappa_policy == "fit":
        kappa_policy = fit_kappa(tiers, association_rule=association_rule)
    kappas = {t.name: resolve_kappa(kappa_policy, t.fading.m) for t in tiers}
    per_tier = np.array([
        _outer_integral(tiers, k, _approx_bracket(tiers[k], t_linear, kappas[tiers[k].name]),
                        association_rule)
        for k in range(len(tiers))
    ])
    return CoveragePoint(t_linear, float(per_tier.sum()), per_tier, "approx",
                         kappa={name: [float(x) for x in v] for name, v in kappas.items()})


def fit_kappa(tiers: Sequence[TierConfig], thresholds_db: Sequence[float] = (-10.0, 0.0, 10.0, 20.0),
              association_rule: str = "printed") -> Union[np.ndarray, str]:
    """
    Per-l kappa minimizing the worst gap to the exact coverage on a coarse grid

    Candidates are the lower-bound and mean-matched policies plus the
    mean-matched values scaled by a factor in [0.8, 1.25] (clipped into the
    admissible band per l). The candidate with the smallest worst gap wins,
    so the fit is never worse than either fixed policy on the fit grid.

    Returns:
        per-l array of length max m, or 'mean_matched' when the exact
        coverage cannot be evaluated
    """
    m_max = max(t.fading.m for t in tiers)
    if m_max == 1:
        return np.ones(1)
    t_lin = db_to_linear(np.asarray(thresholds_db, dtype=float))
    try:
        exact = np.array([coverage_exact(tiers, t, association_rule).total for t in t_lin])
    except _NUMERICAL_FAILURES as e:
        warnings.warn(f"kappa fit skipped, exact coverage failed ({type(e).__name__}: {e}); "
                      f"using the mean-matched policy")
        return "mean_matched"

    lower = kappa_lower_bound(np.arange(m_max))
    matched = kappa_mean_matched(m_max)

    def scaled(factor):
        kappa = np.clip(matched * factor, lower, 1.0)
        kappa[0] = 1.0
        return kappa

    def worst_gap(kappa):
        approx = np.array([coverage_approx(tiers, t, kappa, association_rule).total for t in t_lin])
        return float(np.max(np.abs(approx - exact)))

    candidates = [lower.copy(), matched]
    result = optimize.minimize_scalar(lambda f: worst_gap(scaled(f)), bounds=(0.8, 1.25),
                                      method="bounded", options={"xatol": 1e-3})
    candidates.append(scaled(float(result.x)))
    gaps = [worst_gap(candidates[0]), worst_gap(candidates[1]), float(result.fun)]
    return candidates[int(np.argmin(gaps))]


# ---------------------------------------------------------------------------
# Two-tier closed form

@dataclass(frozen=True)
class ClosedFormParams:
    xi: Tuple[float, float]
    psi: Tuple[float, float]
    omega_terms: Tuple[float, float, float]
    mu_terms: Tuple[float, float, float]
    chi_terms: Tuple[float, float, float]
    epsilon: Tuple[float, float]


def _check_closed_form(tiers: Sequence[TierConfig]):
    problems = []
    if len(tiers) != 2:
        problems.append(f"needs exactly 2 tiers, got {len(tiers)}")
    else:
        for t in tiers:
            if t.path_loss_exp != 2:
                problems.append(f"tier '{t.name}' has alpha = {t.path_loss_exp}, needs 2")
            if t.fading.m != 1:
                problems.append(f"tier '{t.name}' has m = {t.fading.m}, needs Rayleigh (m = 1)")
            if t.annulus.mean_count <= 0:
                problems.append(f"tier '{t.name}' has no visible BSs")
    if problems:
        raise PreconditionViolation("Closed form preconditions unmet: " + "; ".join(problems))


def closed_form_params(tiers: Sequence[TierConfig], t_linear: float,
                       eps: Tuple[float, float]) -> ClosedFormParams:
    _check_closed_form(tiers)
    anns = [t.annulus for t in tiers]
    lam = [a.density_per_km2 for a in anns]
    xi = tuple(2.0 * np.pi * lam[k] / tiers[k].visible_probability for k in range(2))
    chi = tuple(np.pi * lam[k] * anns[k].r_min_km ** 2 for k in range(2))
    psi = []
    for k in range(2):
        tg = t_linear * tiers[k].normalized_gain
        ratio = (anns[k].r_max_km / (anns[k].r_min_km + eps[k])) ** 2
        psi.append(-np.pi * lam[k] * tg * np.log((tg + ratio) / (1.0 + tg)))
    omega = tuple(-np.pi * lam[j] * tier_ratios(tiers, 0, j).product for j in range(2))
    mu = tuple(-np.pi * lam[j] * tier_ratios(tiers, 1, j).product for j in range(2))
    return ClosedFormParams(
        xi=xi,
        psi=tuple(psi),
        omega_terms=(omega[0], omega[1], omega[0] + omega[1]),
        mu_terms=(mu[0], mu[1], mu[0] + mu[1]),
        chi_terms=(chi[0], chi[1], chi[0] + chi[1]),
        epsilon=(float(eps[0]), float(eps[1])),
    )


def _ring_term(xi: float, chi: float, c: float, lo: float, hi: float) -> float:
    """xi e^chi / c * e^{c(lo^2+hi^2)/2} sinh(c(hi^2-lo^2)/2), the integral of xi r e^{c r^2 + chi}."""
    if hi <= lo:
        return 0.0
    half_gap = 0.5 * c * (hi ** 2 - lo ** 2)
    if abs(half_gap) < 1e-12:
        return xi * np.exp(chi + c * lo ** 2) * 0.5 * (hi ** 2 - lo ** 2)
    return xi * np.exp(chi + 0.5 * c * (lo ** 2 + hi ** 2)) * np.sinh(half_gap) / c


def default_epsilon(tiers: Sequence[TierConfig]) -> Tuple[float, float]:
    altitude = round(tiers[1].shell.altitude_km, 6)
    return CLOSED_FORM_EPSILON.get(altitude, (0.0, 0.0))


def coverage_closed_form(two_tier_cfg: Sequence[TierConfig], t_linear: float,
                         eps: Optional[Tuple[float, float]] = None) -> float:
    """
    Interference-limited two-tier closed form

    Tier 0 is the terrestrial tier and tier 1 the satellite tier. Noise is
    ignored. Knots L_{1,2}, U_{1,2} are clipped to tier 0's ring.
    """
    tiers = list(two_tier_cfg)
    if eps is None:
        eps = default_epsilon(tiers) if len(tiers) == 2 else (0.0, 0.0)
    p = closed_form_params(tiers, t_linear, eps)
    a1, a2 = tiers[0].annulus, tiers[1].annulus
    ratios = tier_ratios(tiers, 0, 1)
    l12 = float(np.clip(ratios.l_bound_km, a1.r_min_km, a1.r_max_km))
    u12 = float(np.clip(ratios.u_bound_km, a1.r_min_km, a1.r_max_km))
    psi1, psi2 = p.psi
    omega1, _, omega = p.omega_terms
    _, _, mu = p.mu_terms
    chi1, _, chi = p.chi_terms

    tier1 = tiers[0].visible_probability * (
        _ring_term(p.xi[0], chi1, psi1 + omega1, a1.r_min_km, l12)
        + _ring_term(p.xi[0], chi, psi1 + omega, l12, u12)
    )
    tier2 = tiers[1].visible_probability * _ring_term(p.xi[1], chi, psi2 + mu, a2.r_min_km, a2.r_max_km)
    return float(tier1 + tier2)


# ---------------------------------------------------------------------------
# Sweeps

_NUMERICAL_FAILURES = (DerivativeOverflow, PreconditionViolation,
                       FloatingPointError, ZeroDivisionError)


def _curve_point(tiers, t_lin, method, kappa, epsilon, rule):
    try:
        if method == "exact":
            pt = coverage_exact(tiers, t_lin, rule)
        elif method == "approx":
            pt = coverage_approx(tiers, t_lin, kappa, rule)
        elif method == "closed_form":
            total = coverage_closed_form(tiers, t_lin, epsilon)
            # the closed form is not split by tier; report it under tier 0
            per = np.zeros(len(tiers))
            per[0] = total
            pt = CoveragePoint(t_lin, total, per, "closed_form")
        else:
            raise ValueError(f"Unknown analytic method '{method}'")
        return pt, None
    except _NUMERICAL_FAILURES as e:
        return None, f"{type(e).__name__}: {e}"


def coverage_curve(tiers: Sequence[TierConfig], thresholds_db: Sequence[float],
                   method: str = "exact", kappa="mean_matched",
                   epsilon: Optional[Tuple[float, float]] = None,
                   association_rule: str = "printed", n_jobs: int = 1) -> CoverageCurve:
    """
    Evaluate an analytic method over a sorted threshold grid

    Per-point numerical failures become NaN entries with a failure flag.
    """
    tiers = list(tiers)
    t_db = np.asarray(thresholds_db, dtype=float)
    if t_db.size == 0:
        raise ValueError("Threshold grid is empty")
    if np.any(np.diff(t_db) < 0):
        raise ValueError("Thresholds must be sorted in ascending order")
    if association_rule not in ASSOCIATION_RULES:
        raise ValueError(f"Unknown association rule '{association_rule}'")

    metadata = {"association_rule": association_rule}
    if method == "approx":
        if isinstance(kappa, str) and kappa == "fit":
            kappa = fit_kappa(tiers, association_rule=association_rule)
        kappas = {t.name: resolve_kappa(kappa, t.fading.m).tolist() for t in tiers}
        metadata["kappa"] = kappas
    if method == "closed_form":
        metadata["epsilon"] = list(epsilon if epsilon is not None else default_epsilon(tiers))

    t_lin = db_to_linear(t_db)
    if n_jobs == 1:
        results = [_curve_point(tiers, t, method, kappa, epsilon, association_rule) for t in t_lin]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_curve_point)(tiers, t, method, kappa, epsilon, association_rule) for t in t_lin
        )

    k = len(tiers)
    per_tier = np.full((t_db.size, k), np.nan)
    failed = np.zeros(t_db.size, dtype=bool)
    errors: List[Optional[str]] = []
    for i, (pt, err) in enumerate(results):
        errors.append(err)
        if pt is None:
            failed[i] = True
        else:
            per_tier[i] = pt.per_tier
    total = per_tier.sum(axis=1)
    return CoverageCurve(thresholds_db=t_db, total=total, per_tier=per_tier, method=method,
                         tier_names=[t.name for t in tiers], failed=failed, errors=errors,
                         metadata=metadata)
