import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize, stats

from hospmix import distributions as dist
from hospmix.distributions import DistributionSpec, Family, apply_covariate_shift, density
from hospmix.errors import ValidationError


def scipy_frozen(spec: DistributionSpec):
    """Independent reference implementation of each family."""
    if spec.family is Family.GAMMA:
        a, b = spec.params
        return stats.gamma(a, scale=1.0 / b)
    if spec.family is Family.LOGNORMAL:
        mu, s = spec.params
        return stats.lognorm(s, scale=math.exp(mu))
    mu, s, q = spec.params
    return stats.gengamma(1.0 / q**2, q / s, scale=math.exp(mu) * (q * q) ** (s / q))


def central_diff(f, t, h=1e-5):
    return (f(t + h) - f(t - h)) / (2 * h)


gamma_specs = st.builds(DistributionSpec.gamma, st.floats(0.3, 8.0), st.floats(0.05, 3.0))
lognormal_specs = st.builds(DistributionSpec.lognormal, st.floats(-1.0, 3.0), st.floats(0.2, 2.0))
gengamma_specs = st.builds(
    DistributionSpec.gengamma,
    st.floats(-1.0, 3.0),
    st.floats(0.2, 1.5),
    st.floats(-2.0, 2.0).filter(lambda q: abs(q) > 0.05),
)
any_spec = st.one_of(gamma_specs, lognormal_specs, gengamma_specs)


class TestDensity:
    def test_exponential_near_zero_and_below_support(self):
        spec = DistributionSpec.gamma(1.0, 1.0)
        assert density(spec, 1e-12) == pytest.approx(1.0, abs=1e-9)
        assert density(spec, -1.0) == 0.0
        assert density(spec, 0.0) == 0.0

    def test_lognormal_peak(self):
        assert density(DistributionSpec.lognormal(0.0, 1.0), 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)

    def test_gengamma_matches_derivative_of_cdf(self):
        spec = DistributionSpec.gengamma(0.3, 0.8, 0.5)
        assert density(spec, 2.0) == pytest.approx(central_diff(spec.cdf, 2.0), abs=1e-6)

    @given(any_spec, st.floats(0.05, 40.0))
    def test_agrees_with_scipy(self, spec, t):
        ref = scipy_frozen(spec)
        assert spec.pdf(t) == pytest.approx(ref.pdf(t), rel=1e-8, abs=1e-300)
        assert spec.cdf(t) == pytest.approx(ref.cdf(t), rel=1e-8, abs=1e-12)
        assert spec.sf(t) == pytest.approx(ref.sf(t), rel=1e-7, abs=1e-300)

    def test_vectorised_and_nonpositive_support(self):
        spec = DistributionSpec.gengamma(1.0, 0.7, -0.4)
        t = np.array([-3.0, 0.0, 0.5, 5.0])
        out = spec.pdf(t)
        assert out.shape == (4,)
        assert out[0] == 0.0 and out[1] == 0.0
        assert np.all(spec.logpdf(t[:2]) == -np.inf)

    @pytest.mark.parametrize("q", [2e-5, -3e-4, 0.01, 0.4, -1.3, 3.0])
    def test_gengamma_logpdf_against_high_precision(self, q):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 60
        mu, sigma = 1.0, 0.7

        def oracle(t):
            Q, k = mpmath.mpf(q), 1 / mpmath.mpf(q) ** 2
            w = (mpmath.log(t) - mu) / sigma
            return float(
                mpmath.log(abs(Q)) + k * mpmath.log(k) - mpmath.log(sigma * t) - mpmath.loggamma(k) + k * (Q * w - mpmath.exp(Q * w))
            )

        spec = DistributionSpec.gengamma(mu, sigma, q)
        for t in (0.3, 2.7, 30.0):
            assert spec.logpdf(t) == pytest.approx(oracle(t), abs=1e-9)


class TestCdf:
    def test_exponential_median(self):
        assert DistributionSpec.gamma(1.0, 1.0).cdf(math.log(2)) == pytest.approx(0.5, abs=1e-14)

    def test_lognormal_median(self):
        assert DistributionSpec.lognormal(0.5, 0.3).cdf(math.exp(0.5)) == pytest.approx(0.5, abs=1e-14)

    def test_gengamma_tiny_q_is_lognormal(self):
        gg = DistributionSpec.gengamma(1.0, 0.7, 1e-9)
        ln = DistributionSpec.lognormal(1.0, 0.7)
        t = np.geomspace(0.01, 200, 50)
        np.testing.assert_allclose(gg.cdf(t), ln.cdf(t), atol=1e-6)

    @pytest.mark.parametrize("q", [1e-4, -1e-4, 5e-5])
    def test_gengamma_small_q_close_to_lognormal(self, q):
        gg = DistributionSpec.gengamma(1.0, 0.7, q)
        ln = DistributionSpec.lognormal(1.0, 0.7)
        t = np.geomspace(0.05, 100, 30)
        np.testing.assert_allclose(gg.cdf(t), ln.cdf(t), atol=1e-4)

    @given(any_spec)
    def test_cdf_limits_and_monotone(self, spec):
        t = np.geomspace(1e-6, 1e6, 400)
        f = spec.cdf(t)
        assert spec.cdf(0.0) == 0.0
        assert np.all(np.diff(f) >= -1e-15)
        assert np.all((f >= 0) & (f <= 1))
        np.testing.assert_allclose(f + spec.sf(t), 1.0, atol=1e-12)

    @given(st.floats(-1, 3), st.floats(0.2, 1.5))
    def test_gengamma_with_q_equal_sigma_is_gamma(self, mu, sigma):
        gg = DistributionSpec.gengamma(mu, sigma, sigma)
        g = DistributionSpec.gamma(1 / sigma**2, math.exp(-mu) / sigma**2)
        t = np.geomspace(0.01, 100, 40) * math.exp(mu)
        np.testing.assert_allclose(gg.cdf(t), g.cdf(t), atol=1e-10)
        np.testing.assert_allclose(gg.pdf(t), g.pdf(t), rtol=1e-9)


class TestQuantile:
    def test_lognormal_median(self):
        assert DistributionSpec.lognormal(0.0, 1.0).quantile(0.5) == pytest.approx(1.0, abs=1e-12)

    def test_gamma_lower_quartile_against_root_finding(self):
        spec = DistributionSpec.gamma(2.0, 0.5)
        oracle = optimize.brentq(lambda x: stats.gamma(2.0, scale=2.0).cdf(x) - 0.25, 1e-9, 100, xtol=1e-14)
        q = spec.quantile(0.25)
        assert q == pytest.approx(oracle, abs=1e-8)
        assert spec.cdf(q) == pytest.approx(0.25, abs=1e-8)

    def test_gengamma_exponential_case(self):
        assert DistributionSpec.gengamma(0.0, 1.0, 1.0).quantile(0.5) == pytest.approx(math.log(2), abs=1e-10)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
    def test_probability_outside_unit_interval(self, p):
        with pytest.raises(ValidationError):
            DistributionSpec.gamma(2.0, 1.0).quantile(p)

    @given(any_spec, st.floats(1e-6, 1 - 1e-6))
    def test_inverts_cdf(self, spec, p):
        assert spec.cdf(spec.quantile(p)) == pytest.approx(p, abs=1e-8)

    @given(any_spec)
    def test_nondecreasing_in_p(self, spec):
        p = np.linspace(0.01, 0.99, 25)
        assert np.all(np.diff(spec.quantile(p)) > 0)


class TestSample:
    def test_gamma_mean(self):
        x = DistributionSpec.gamma(2.0, 1.0).sample(np.random.default_rng(1), 100_000)
        assert abs(x.mean() - 2.0) < 3 * math.sqrt(2.0) / math.sqrt(x.size)

    def test_seeded_runs_identical(self):
        spec = DistributionSpec.gengamma(0.5, 0.8, -0.7)
        a = spec.sample(np.random.default_rng(9), 50)
        b = spec.sample(np.random.default_rng(9), 50)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize(
        "spec",
        [
            DistributionSpec.gengamma(0.0, 1.0, 0.5),
            DistributionSpec.gengamma(1.0, 0.6, -0.8),
            DistributionSpec.gengamma(1.0, 0.6, 0.0),
            DistributionSpec.lognormal(1.2, 0.9),
        ],
    )
    def test_empirical_cdf_close(self, spec):
        x = np.sort(spec.sample(np.random.default_rng(3), 100_000))
        f = spec.cdf(x)
        n = x.size
        ks = max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n))
        assert ks < 0.01


class TestCovariateShift:
    @given(any_spec)
    def test_zero_shift_is_identity(self, spec):
        assert apply_covariate_shift(spec, 0.0) == spec

    def test_lognormal_doubling(self):
        spec = DistributionSpec.lognormal(0.0, 1.0)
        shifted = apply_covariate_shift(spec, math.log(2))
        p = np.array([0.1, 0.5, 0.9])
        np.testing.assert_allclose(shifted.quantile(p), 2 * spec.quantile(p), rtol=1e-10)

    def test_gamma_mean_doubles(self):
        assert apply_covariate_shift(DistributionSpec.gamma(2.0, 1.0), math.log(2)).mean() == pytest.approx(4.0, rel=1e-12)

    @given(any_spec, st.floats(-1.5, 1.5))
    def test_quantiles_and_mean_scale_by_exp_eta(self, spec, eta):
        shifted = apply_covariate_shift(spec, eta)
        p = np.array([0.2, 0.5, 0.8])
        np.testing.assert_allclose(shifted.quantile(p), math.exp(eta) * spec.quantile(p), rtol=1e-8)
        m = spec.mean()
        if math.isfinite(m):
            assert shifted.mean() == pytest.approx(math.exp(eta) * m, rel=1e-9)


class TestSpecConstruction:
    @pytest.mark.parametrize(
        "args",
        [("Gamma", (0.0, 1.0)), ("Gamma", (1.0, -1.0)), ("LogNormal", (0.0, 0.0)), ("GenGamma", (0.0, -1.0, 0.5)), ("Gamma", (1.0,)), ("LogNormal", (math.nan, 1.0))],
    )
    def test_invalid_parameters_rejected(self, args):
        with pytest.raises(ValidationError):
            DistributionSpec(*args)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            Family.parse("Weibull")

    def test_family_aliases(self):
        assert Family.parse("gengamma") is Family.GENGAMMA
        assert Family.parse("lognormal") is Family.LOGNORMAL

    @given(any_spec)
    def test_unconstrained_round_trip(self, spec):
        back = DistributionSpec.from_unconstrained(spec.family, spec.to_unconstrained())
        np.testing.assert_allclose(back.params, spec.params, rtol=1e-12)

    def test_mean_against_scipy(self):
        for spec in (DistributionSpec.gamma(2.5, 0.4), DistributionSpec.lognormal(1.0, 0.5), DistributionSpec.gengamma(1.0, 0.6, 0.8), DistributionSpec.gengamma(1.0, 0.6, -0.5)):
            assert spec.mean() == pytest.approx(scipy_frozen(spec).mean(), rel=1e-9)


class TestScore:
    @pytest.mark.parametrize(
        "family,anc",
        [(Family.GAMMA, (math.log(1.7),)), (Family.LOGNORMAL, (math.log(0.8),)), (Family.GENGAMMA, (math.log(0.8), 0.6)), (Family.GENGAMMA, (math.log(1.1), -0.9)), (Family.GENGAMMA, (math.log(0.9), 1e-3))],
    )
    def test_gradients_match_finite_differences(self, family, anc):
        y = np.array([0.3, 1.0, 4.0, 15.0, 60.0])
        eta = np.full_like(y, 1.2)
        ancs = [np.full_like(y, a) for a in anc]

        def nat(e, a):
            return dist.natural_from_linked(family, e, a)

        for fun, grad in ((dist.logpdf, dist.logpdf_grad), (dist.logsf, dist.logsf_grad)):
            g = grad(family, eta, ancs, y)
            h = 1e-6
            fd = [(fun(family, nat(eta + h, ancs), y) - fun(family, nat(eta - h, ancs), y)) / (2 * h)]
            for k in range(len(ancs)):
                up = [a + (h if j == k else 0) for j, a in enumerate(ancs)]
                dn = [a - (h if j == k else 0) for j, a in enumerate(ancs)]
                fd.append((fun(family, nat(eta, up), y) - fun(family, nat(eta, dn), y)) / (2 * h))
            np.testing.assert_allclose(g, np.column_stack(fd), rtol=1e-5, atol=1e-6)
