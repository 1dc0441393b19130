"""
Test script for the shadowed-Rician and Nakagami fading laws
"""

import sys
from pathlib import Path

import numpy as np
from scipy import integrate, stats

# Add src directory to path
sys.path.append(str(Path(__file__).parent / "src"))

from fading import (
    AS,
    FHS,
    ILS,
    RAYLEIGH,
    InvalidFadingParams,
    NakagamiParams,
    NegativeInput,
    ShadowedRicianParams,
    fading_preset,
    mean_power,
    sr_mgf_term,
)

LMS = {"FHS": FHS, "AS": AS, "ILS": ILS}


def _raises(exc, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except exc:
        return True
    return False


def test_presets():
    assert (AS.m, AS.b, AS.omega) == (10, 0.126, 0.835)
    assert (ILS.m, ILS.b, ILS.omega) == (19, 0.158, 1.29)
    assert FHS.m == 1
    assert fading_preset("as") is AS
    assert fading_preset("Rayleigh") is RAYLEIGH
    assert _raises(KeyError, fading_preset, "urban")
    assert np.isclose(mean_power(AS), 2 * 0.126 + 0.835)


def test_invalid_params():
    assert _raises(InvalidFadingParams, ShadowedRicianParams, 0, 0.1, 1.0)
    assert _raises(InvalidFadingParams, ShadowedRicianParams, 1.5, 0.1, 1.0)
    assert _raises(InvalidFadingParams, ShadowedRicianParams, 2, 0.0, 1.0)
    assert _raises(InvalidFadingParams, ShadowedRicianParams, 2, 0.1, -1.0)
    assert _raises(InvalidFadingParams, NakagamiParams, 2, 0.0)
    assert _raises(NegativeInput, AS.pdf, [-0.1, 1.0])
    assert _raises(NegativeInput, RAYLEIGH.ccdf, -1.0)


def test_pdf_normalised():
    for name, law in LMS.items():
        total, _ = integrate.quad(law.pdf, 0.0, np.inf, limit=200)
        mean, _ = integrate.quad(lambda x: x * law.pdf(x), 0.0, np.inf, limit=200)
        assert np.isclose(total, 1.0, rtol=1e-7), name
        assert np.isclose(mean, law.mean, rtol=1e-6), name


def test_erlang_mixture_weights():
    for law in list(LMS.values()) + [NakagamiParams(3, 2.0)]:
        rate, weights = law.erlang_mixture()
        assert rate > 0
        assert np.all(weights >= 0)
        assert np.isclose(weights.sum(), 1.0, rtol=1e-10)


def test_cdf_ccdf():
    x = np.array([0.0, 0.05, 0.3, 1.0, 2.5, 6.0])
    for name, law in LMS.items():
        assert np.allclose(law.cdf(x) + law.ccdf(x), 1.0, atol=1e-12), name
        for xi in (0.3, 2.5):
            direct, _ = integrate.quad(law.pdf, 0.0, xi)
            assert np.isclose(law.cdf(xi), direct, rtol=1e-8, atol=1e-12), name
    nak = NakagamiParams(4, 1.5)
    assert np.allclose(nak.ccdf(x), stats.gamma.sf(x, a=4, scale=1.5 / 4), atol=1e-12)


def test_mgf_matches_pdf():
    for name, law in LMS.items():
        for t in (0.1, 1.0, 7.0):
            direct, _ = integrate.quad(lambda x: np.exp(-t * x) * law.pdf(x), 0.0, np.inf, limit=200)
            assert np.isclose(law.mgf(t), direct, rtol=1e-7), name
    assert np.isclose(sr_mgf_term(AS, 2.0, 0.5), AS.mgf(1.0))


def test_mgf_derivatives_agree():
    t = np.array([0.0, 0.3, 4.0, 60.0])
    for name, law in LMS.items():
        mixture = law.mgf_derivatives(t, 1.0, 6)
        leibniz = law.leibniz_derivatives(t, 1.0, 6)
        assert np.allclose(mixture, leibniz, rtol=1e-6, atol=0.0), name
        # completely monotone: signs alternate
        signs = (-1.0) ** np.arange(7)
        assert np.all(signs[:, None] * mixture >= 0), name


def test_mgf_derivatives_finite_difference():
    h = 1e-4
    for law in (AS, ILS, NakagamiParams(3, 1.0)):
        t0 = 0.7
        d = law.mgf_derivatives(t0, 1.0, 2)
        first = (law.mgf(t0 + h) - law.mgf(t0 - h)) / (2 * h)
        second = (law.mgf(t0 + h) - 2 * law.mgf(t0) + law.mgf(t0 - h)) / h ** 2
        assert np.isclose(d[0], law.mgf(t0), rtol=1e-12)
        assert np.isclose(d[1], first, rtol=1e-6)
        assert np.isclose(d[2], second, rtol=1e-4)

        # the scale factor multiplies the n-th derivative by w^n
        scaled = law.mgf_derivatives(t0, 3.0, 2)
        assert np.allclose(scaled, d * np.array([1.0, 3.0, 9.0]))


def test_nakagami_limit():
    """A vanishing scattered component leaves a Gamma(m) law with mean omega."""
    x = np.linspace(0.0, 4.0, 81)
    t = np.logspace(-2, 2, 9)
    for m in (1, 3, 10):
        sr = ShadowedRicianParams(m=m, b=1e-6, omega=1.0)
        gamma = NakagamiParams(m=m, mean_power=1.0)
        assert np.allclose(sr.cdf(x), gamma.cdf(x), atol=1e-4), m
        assert np.allclose(sr.mgf(t), gamma.mgf(t), rtol=1e-4), m
        assert np.isclose(sr.mean, 1.0, rtol=1e-5)


def test_sampler_law():
    rng = np.random.default_rng(2024)
    for name, law in LMS.items():
        draws = law.sample(rng, 20000)
        assert np.all(draws >= 0)
        assert stats.kstest(draws, law.cdf).pvalue > 0.01, name
        sem = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - law.mean) < 4 * sem, name
    draws = NakagamiParams(2, 1.0).sample(rng, 20000)
    assert stats.kstest(draws, NakagamiParams(2, 1.0).cdf).pvalue > 0.01


def main():
    """Run all tests"""
    print("🧪 Fading Test Suite")
    print("=" * 40)

    tests = [
        ("Presets", test_presets),
        ("Invalid Parameters", test_invalid_params),
        ("PDF Normalisation", test_pdf_normalised),
        ("Erlang Mixture", test_erlang_mixture_weights),
        ("CDF/CCDF", test_cdf_ccdf),
        ("MGF vs PDF", test_mgf_matches_pdf),
        ("Derivative Forms Agree", test_mgf_derivatives_agree),
        ("Derivative Finite Difference", test_mgf_derivatives_finite_difference),
        ("Sampler Law", test_sampler_law),
        ("Nakagami Limit", test_nakagami_limit),
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
