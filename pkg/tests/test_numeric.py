import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdlogit.numeric import (
    RngStream,
    chi2_1_quantile,
    expit,
    expit_deriv,
    log1pexp,
    logistic_link,
    normal_cdf,
    normal_quantile,
)


def bisect_quantile(p, tol=1e-15):
    """Independent oracle: bisection on the erfc-based normal CDF.

    Upper-tail probabilities are handled through 1 - p (exact for
    p >= 0.5) so the oracle keeps full precision near 1.
    """
    if p > 0.5:
        return -bisect_quantile(1.0 - p, tol)
    lo, hi = -40.0, 0.0
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestLogisticLink:
    def test_symmetry_point(self):
        g = logistic_link(0.0)
        assert g.value == 0.5
        assert g.derivative == 0.25

    def test_log3(self):
        g = logistic_link(math.log(3.0))
        assert g.value == pytest.approx(0.75, abs=1e-15)
        assert g.derivative == pytest.approx(0.1875, abs=1e-15)

    def test_saturation(self):
        g = logistic_link(710.0)
        # 1 - 1e-300 rounds to 1.0 in double precision, so the open
        # upper bound cannot be represented; require finite and <= 1.
        assert math.isfinite(g.value) and 1.0 - 1e-15 < g.value <= 1.0
        assert math.isfinite(g.derivative) and g.derivative >= 0.0
        low = logistic_link(-710.0)
        assert 0.0 <= low.value < 1e-300

    @pytest.mark.parametrize("t", [math.inf, -math.inf, math.nan])
    def test_non_finite_rejected(self, t):
        with pytest.raises(ValueError):
            logistic_link(t)

    @given(st.floats(min_value=-1e6, max_value=1e6))
    def test_never_nan(self, t):
        g = logistic_link(t)
        assert math.isfinite(g.value) and math.isfinite(g.derivative)
        assert 0.0 <= g.value <= 1.0
        assert 0.0 <= g.derivative <= 0.25

    @given(st.floats(min_value=-40, max_value=40))
    def test_reflection(self, t):
        assert abs(logistic_link(-t).value - (1.0 - logistic_link(t).value)) <= 1e-15

    @given(st.floats(min_value=-30, max_value=30))
    def test_derivative_identity(self, t):
        g = logistic_link(t)
        # G(t) G(-t) avoids the cancellation in 1 - G(t)
        assert g.derivative == pytest.approx(g.value * logistic_link(-t).value, rel=1e-13)

    @given(st.lists(st.floats(min_value=-800, max_value=800), min_size=1, max_size=20))
    def test_vectorised_matches_scalar(self, ts):
        v = expit(np.array(ts))
        dv = expit_deriv(np.array(ts))
        for t, a, b in zip(ts, v, dv):
            g = logistic_link(t)
            assert a == pytest.approx(g.value, rel=1e-14, abs=1e-300)
            assert b == pytest.approx(g.derivative, rel=1e-14, abs=1e-300)

    def test_log1pexp_large(self):
        assert log1pexp(np.array([1000.0]))[0] == 1000.0
        assert log1pexp(np.array([-1000.0]))[0] == 0.0
        assert log1pexp(np.array([0.0]))[0] == pytest.approx(math.log(2.0), abs=1e-16)


class TestNormalQuantile:
    def test_median(self):
        assert normal_quantile(0.5) == 0.0

    def test_975(self):
        assert abs(normal_quantile(0.975) - 1.959963984540054) <= 1e-13
        assert abs(normal_quantile(0.975) - bisect_quantile(0.975)) <= 1e-10

    def test_lambda_quantile(self):
        q = normal_quantile(1.0 - 3.7747e-5)
        assert 3.95 <= q <= 3.97
        assert abs(q - bisect_quantile(1.0 - 3.7747e-5)) <= 1e-10

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.1, math.nan])
    def test_domain(self, p):
        with pytest.raises(ValueError):
            normal_quantile(p)

    def test_grid_roundtrip(self):
        ps = np.linspace(1e-8, 1 - 1e-8, 10_000)
        err = max(abs(normal_cdf(normal_quantile(p)) - p) for p in ps)
        assert err <= 1e-10

    @given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
    def test_cdf_residual(self, p):
        assert abs(normal_cdf(normal_quantile(p)) - p) <= 1e-12

    @given(st.floats(min_value=1e-10, max_value=1 - 1e-10))
    def test_bisection_oracle(self, p):
        assert abs(normal_quantile(p) - bisect_quantile(p)) <= 1e-10

    @given(st.floats(min_value=0.5, max_value=1 - 1e-6))
    def test_antisymmetry(self, q):
        p = 1.0 - q  # exact for q in [0.5, 1]
        assert normal_quantile(p) == pytest.approx(-normal_quantile(q), abs=1e-12)


class TestChi2Quantile:
    def test_95(self):
        assert abs(chi2_1_quantile(0.95) - 3.841458820694124) <= 1e-10
        assert abs(chi2_1_quantile(0.95) - bisect_quantile(0.975) ** 2) <= 1e-10

    def test_zero(self):
        assert chi2_1_quantile(0.0) == 0.0

    def test_one_sigma(self):
        # P(chi2_1 <= 1) = 0.6826895; the lower-tail point 0.3173105 maps
        # to Phi^-1(0.65865...)^2 instead.
        assert chi2_1_quantile(0.6826895) == pytest.approx(1.0, abs=1e-6)
        assert chi2_1_quantile(0.3173105) == pytest.approx(
            bisect_quantile((1 + 0.3173105) / 2) ** 2, abs=1e-10)

    @pytest.mark.parametrize("p", [1.0, -0.5, 2.0])
    def test_domain(self, p):
        with pytest.raises(ValueError):
            chi2_1_quantile(p)

    @given(st.floats(min_value=1e-9, max_value=1 - 1e-9))
    def test_definitional_identity(self, p):
        assert chi2_1_quantile(p) == normal_quantile((1.0 + p) / 2.0) ** 2


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(11, 3).generator().standard_normal(50)
        b = RngStream(11, 3).generator().standard_normal(50)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = RngStream(11, 3).generator().standard_normal(2000)
        b = RngStream(11, 4).generator().standard_normal(2000)
        assert not np.array_equal(a, b)
        # independent streams: sample correlation within ~4 standard errors
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(2000)

    @given(st.integers(0, 2**63), st.integers(0, 2**63))
    def test_order_independent(self, seed, stream):
        first = RngStream(seed, stream).generator().random(3)
        RngStream(seed, stream + 1).generator().random(10)
        again = RngStream(seed, stream).generator().random(3)
        assert np.array_equal(first, again)
