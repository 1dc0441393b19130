"""
Fading laws for the satellite and terrestrial links

Shadowed-Rician (land-mobile-satellite) power fading and Nakagami-m power
fading. Both laws expose the same surface: pdf, cdf, ccdf, MGF, mean power,
an exact sampler, and an Erlang-mixture form

    ccdf(x) = 1 - sum_l c_l (1 - exp(-a x) sum_{q<=l} (a x)^q / q!)

which is the representation the coverage formulas consume. Shadowed-Rician
coefficients are carried in log space so the m = 19 preset stays finite.
"""

import numpy as np
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple, Union
from scipy import special, stats


class NegativeInput(ValueError):
    """Fading power argument below zero."""


class InvalidFadingParams(ValueError):
    """Shape or power parameters outside the admissible range."""


def _check_nonnegative(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise NegativeInput(f"Fading power must be nonnegative, got min {np.min(arr):.6g}")
    return arr


def _check_shape(m) -> int:
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise InvalidFadingParams(f"Shape parameter m must be a positive integer, got {m}")
    return int(m)


def _rising_falling_matrix(m: int, n_max: int) -> np.ndarray:
    """Leibniz coefficients C(n,j) (m-1)_j^falling (-1)^(n-j) (m)_(n-j)^rising."""
    coef = np.zeros((n_max + 1, min(n_max, m - 1) + 1))
    for n in range(n_max + 1):
        for j in range(min(n, m - 1) + 1):
            coef[n, j] = (special.comb(n, j, exact=False)
                          * special.poch(m - j, j)
                          * (-1.0) ** (n - j)
                          * special.poch(m, n - j))
    return coef


def mixture_ccdf(rate: float, weights: np.ndarray, x) -> np.ndarray:
    """Series CCDF of an Erlang mixture with common rate."""
    x = _check_nonnegative(x)
    ax = rate * x
    l_max = len(weights) - 1
    q = np.arange(l_max + 1).reshape((-1,) + (1,) * ax.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = -ax + q * np.log(ax) - special.gammaln(q + 1)
    log_terms = np.where((q == 0) & (ax == 0), 0.0, log_terms)
    partial = np.cumsum(np.exp(log_terms), axis=0)
    w = np.asarray(weights).reshape((-1,) + (1,) * ax.ndim)
    out = 1.0 - np.sum(w * (1.0 - partial), axis=0)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class ShadowedRicianParams:
    """Shadowed-Rician power law with shape m, half multipath power b and LOS power omega."""
    m: int
    b: float
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "m", _check_shape(self.m))
        if not self.b > 0:
            raise InvalidFadingParams(f"Half multipath power b must be positive, got {self.b}")
        if not self.omega >= 0:
            raise InvalidFadingParams(f"LOS power omega must be nonnegative, got {self.omega}")

    @property
    def z(self) -> float:
        two_bm = 2.0 * self.b * self.m
        return (two_bm / (two_bm + self.omega)) ** self.m / (2.0 * self.b)

    @property
    def beta(self) -> float:
        return 1.0 / (2.0 * self.b)

    @property
    def delta(self) -> float:
        return self.omega / (2.0 * self.b * (2.0 * self.b * self.m + self.omega))

    @property
    def rate(self) -> float:
        """beta - delta, written without cancellation."""
        return self.m / (2.0 * self.b * self.m + self.omega)

    @cached_property
    def log_zeta(self) -> np.ndarray:
        """log zeta(l) for l = 0..m-1; every zeta(l) is nonnegative."""
        l = np.arange(self.m)
        log_z = self.m * np.log(2.0 * self.b * self.m / (2.0 * self.b * self.m + self.omega)) \
            - np.log(2.0 * self.b)
        if self.delta == 0.0:
            out = np.full(self.m, -np.inf)
            out[0] = log_z
            return out
        return (log_z + l * np.log(self.delta)
                + special.gammaln(self.m) - special.gammaln(self.m - l)
                - 2.0 * special.gammaln(l + 1))

    def erlang_mixture(self) -> Tuple[float, np.ndarray]:
        a = self.rate
        l = np.arange(self.m)
        log_c = self.log_zeta + special.gammaln(l + 1) - (l + 1) * np.log(a)
        return a, np.exp(log_c)

    @property
    def mean(self) -> float:
        return 2.0 * self.b + self.omega

    def pdf(self, x):
        return sr_pdf(self, x)

    def cdf(self, x):
        return sr_cdf(self, x)

    def ccdf(self, x):
        return sr_ccdf_expanded(self, x)

    def log_mgf(self, t):
        """log E[exp(-t H)]"""
        t = np.asarray(t, dtype=float)
        c1 = 2.0 * self.b * self.m + self.omega
        return (self.m - 1) * np.log1p(2.0 * self.b * t) - self.m * np.log1p(c1 * t / self.m)

    def mgf(self, t):
        return np.exp(self.log_mgf(t))

    def mgf_derivatives(self, t, w, n_max: int) -> np.ndarray:
        """
        Scaled derivatives of the MGF

        Uses M(t + w x) / M(t) = sum_j C(m-1, j) rho^(m-1-j) gamma^j (1 + B x)^-(j+1)
        with rho + gamma = 1, so every term is positive and high orders do not
        cancel. leibniz_derivatives evaluates the same quantity term by term.

        Args:
            t: MGF argument(s)
            w: scale factor(s), broadcast against t
            n_max: highest derivative order

        Returns:
            Array of shape (n_max + 1, ...) holding w^n d^n/dt^n E[exp(-t H)]
        """
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        t, w = np.broadcast_arrays(t, w)
        m = self.m
        c1 = 2.0 * self.b * m + self.omega
        u = 1.0 + 2.0 * self.b * t
        v = 1.0 + c1 * t / m
        b_ratio = (c1 / m) * w / v
        rho = 2.0 * self.b * m * v / (c1 * u)
        gamma = self.omega / (c1 * u)
        j = np.arange(m).reshape((-1,) + (1,) * t.ndim)
        mix = special.comb(m - 1, j) * rho[None] ** (m - 1 - j) * gamma[None] ** j
        base = self.mgf(t)
        out = np.empty((n_max + 1,) + t.shape)
        for n in range(n_max + 1):
            moments = np.sum(mix * special.comb(n + j, j), axis=0)
            out[n] = base * (-1.0) ** n * special.factorial(n) * b_ratio ** n * moments
        return out

    def leibniz_derivatives(self, t, w, n_max: int) -> np.ndarray:
        """Same as mgf_derivatives via the Leibniz rule on u^(m-1) (c1 u - c0)^-m."""
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        t, w = np.broadcast_arrays(t, w)
        c1 = 2.0 * self.b * self.m + self.omega
        u = 1.0 + 2.0 * self.b * t
        v = 1.0 + c1 * t / self.m
        a_ratio = 2.0 * self.b * w / u
        b_ratio = (c1 / self.m) * w / v
        coef = _rising_falling_matrix(self.m, n_max)
        j_max = coef.shape[1] - 1
        a_pow = a_ratio[None] ** np.arange(j_max + 1).reshape((-1,) + (1,) * t.ndim)
        b_pow = b_ratio[None] ** np.arange(n_max + 1).reshape((-1,) + (1,) * t.ndim)
        base = self.mgf(t)
        out = np.empty((n_max + 1,) + t.shape)
        for n in range(n_max + 1):
            j = np.arange(min(n, j_max) + 1)
            cj = coef[n, j].reshape((-1,) + (1,) * t.ndim)
            out[n] = base * np.sum(cj * a_pow[j] * b_pow[n - j], axis=0)
        return out

    def sample(self, rng: np.random.Generator, size=None):
        return sr_sample(self, rng, size)


@dataclass(frozen=True)
class NakagamiParams:
    """Gamma-distributed power (Rayleigh when m = 1)."""
    m: int
    mean_power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "m", _check_shape(self.m))
        if not self.mean_power > 0:
            raise InvalidFadingParams(f"Mean power must be positive, got {self.mean_power}")

    @property
    def rate(self) -> float:
        return self.m / self.mean_power

    @property
    def mean(self) -> float:
        return self.mean_power

    def erlang_mixture(self) -> Tuple[float, np.ndarray]:
        weights = np.zeros(self.m)
        weights[-1] = 1.0
        return self.rate, weights

    def pdf(self, x):
        x = _check_nonnegative(x)
        return stats.gamma.pdf(x, a=self.m, scale=self.mean_power / self.m)

    def cdf(self, x):
        x = _check_nonnegative(x)
        return special.gammainc(self.m, self.rate * x)

    def ccdf(self, x):
        rate, weights = self.erlang_mixture()
        return mixture_ccdf(rate, weights, x)

    def log_mgf(self, t):
        t = np.asarray(t, dtype=float)
        return -self.m * np.log1p(t / self.rate)

    def mgf(self, t):
        return np.exp(self.log_mgf(t))

    def mgf_derivatives(self, t, w, n_max: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        t, w = np.broadcast_arrays(t, w)
        ratio = (w / self.rate) / (1.0 + t / self.rate)
        base = self.mgf(t)
        n = np.arange(n_max + 1).reshape((-1,) + (1,) * t.ndim)
        signed = (-1.0) ** n * special.poch(self.m, n)
        return base[None] * signed * ratio[None] ** n

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(shape=self.m, scale=self.mean_power / self.m, size=size)


FadingLaw = Union[ShadowedRicianParams, NakagamiParams]

# Land-mobile-satellite presets
FHS = ShadowedRicianParams(m=1, b=0.063, omega=8.97e-4)
AS = ShadowedRicianParams(m=10, b=0.126, omega=0.835)
ILS = ShadowedRicianParams(m=19, b=0.158, omega=1.29)
RAYLEIGH = NakagamiParams(m=1, mean_power=1.0)

LMS_PRESETS = {"FHS": FHS, "AS": AS, "ILS": ILS}
FADING_PRESETS = {**LMS_PRESETS, "rayleigh": RAYLEIGH}


def fading_preset(name: str) -> FadingLaw:
    """Look up a named preset; LMS names are case-insensitive."""
    for key, law in FADING_PRESETS.items():
        if key.lower() == str(name).lower():
            return law
    raise KeyError(f"Unknown fading preset '{name}' (known: {', '.join(FADING_PRESETS)})")


def sr_pdf(p: ShadowedRicianParams, x):
    x = _check_nonnegative(x)
    l = np.arange(p.m).reshape((-1,) + (1,) * x.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = p.log_zeta.reshape(l.shape) + l * np.log(x) - p.rate * x
    terms = np.where(l == 0, np.exp(p.log_zeta[0] - p.rate * x),
                     np.where(x > 0, np.exp(log_terms), 0.0))
    return np.sum(terms, axis=0)


def sr_cdf(p: ShadowedRicianParams, x):
    x = _check_nonnegative(x)
    rate, weights = p.erlang_mixture()
    l = np.arange(p.m).reshape((-1,) + (1,) * x.ndim)
    w = weights.reshape(l.shape)
    return np.clip(np.sum(w * special.gammainc(l + 1, rate * x), axis=0), 0.0, 1.0)


def sr_ccdf_expanded(p: ShadowedRicianParams, x):
    rate, weights = p.erlang_mixture()
    return mixture_ccdf(rate, weights, x)


def sr_mgf_term(p: ShadowedRicianParams, s, g):
    """E[exp(-s g H)] for the shadowed-Rician power H."""
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    return p.mgf(s * g)


def sr_sample(p: ShadowedRicianParams, rng: np.random.Generator, size=None):
    """Draw |X + xi exp(j phi)|^2 with X complex Gaussian of power 2b and xi^2 ~ Gamma(m, omega/m)."""
    sd = np.sqrt(p.b)
    x_re = rng.normal(0.0, sd, size)
    x_im = rng.normal(0.0, sd, size)
    if p.omega > 0:
        xi = np.sqrt(rng.gamma(shape=p.m, scale=p.omega / p.m, size=size))
    else:
        xi = np.zeros_like(x_re)
    phi = rng.random(size) * 2.0 * np.pi
    return (x_re + xi * np.cos(phi)) ** 2 + (x_im + xi * np.sin(phi)) ** 2


def mean_power(law: FadingLaw) -> float:
    """Average fading gain E_j used in the ERP rule."""
    return float(law.mean)
