"""Model primitives: payoffs, claim laws, intensity maps, validation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_hazard_params, make_params
from rccr_engine.model import (
    ClaimLaw,
    IntensityFn,
    IntensityMap,
    JumpSpec,
    PayoffSpec,
    payoff_eval,
    validate,
)


class TestPayoff:
    def test_stop_loss_values(self):
        spec = PayoffSpec.stop_loss(90.0, 200.0)
        assert payoff_eval(spec, 50.0) == 0.0
        assert payoff_eval(spec, 150.0) == 60.0
        assert payoff_eval(spec, 400.0) == 200.0

    def test_vectorized(self):
        spec = PayoffSpec.stop_loss(90.0, 200.0)
        out = spec.evaluate(np.array([0.0, 90.0, 100.0, 290.0, 1e6]))
        assert np.allclose(out, [0.0, 0.0, 10.0, 200.0, 200.0])

    def test_capped_xl_transform(self):
        spec = PayoffSpec.capped_xl(2.0, 50.0)
        sizes = np.array([1.0, 2.0, 5.0])
        assert np.allclose(spec.transform_claims(sizes), [0.0, 0.0, 3.0])
        # the payoff acts on the transformed aggregate with zero attachment
        assert spec.evaluate(3.0) == 3.0
        assert spec.evaluate(80.0) == 50.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            PayoffSpec.stop_loss(-1.0, 200.0)
        with pytest.raises(ValueError):
            PayoffSpec.stop_loss(90.0, 0.0)

    @given(
        l1=st.floats(min_value=0, max_value=1e4),
        l2=st.floats(min_value=0, max_value=1e4),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_lipschitz(self, l1, l2):
        spec = PayoffSpec.stop_loss(90.0, 200.0)
        v1, v2 = float(spec.evaluate(l1)), float(spec.evaluate(l2))
        if l1 <= l2:
            assert v1 <= v2 + 1e-12
        assert abs(v1 - v2) <= abs(l1 - l2) + 1e-9
        assert 0.0 <= v1 <= spec.cap


class TestClaimLaw:
    def test_gamma_moments(self):
        law = ClaimLaw.gamma(1.0, 1.0)
        assert law.m1 == pytest.approx(1.0)
        assert law.m2 == pytest.approx(2.0)

    def test_gamma_case2_moments(self):
        law = ClaimLaw.gamma(10.0, 1.0)
        assert law.m1 == pytest.approx(10.0)
        assert law.m2 == pytest.approx(110.0)

    def test_discrete_roundtrip(self):
        law = ClaimLaw.discrete([(1.0, 0.25), (3.0, 0.75)])
        assert law.m1 == pytest.approx(0.25 + 2.25)
        u = np.array([0.1, 0.3, 0.9])
        assert np.allclose(law.ppf(u), [1.0, 3.0, 3.0])
        assert float(law.cdf(2.0)) == pytest.approx(0.25)

    def test_gamma_ppf_matches_cdf(self):
        law = ClaimLaw.gamma(10.0, 1.0)
        u = np.linspace(0.05, 0.95, 7)
        z = law.ppf(u)
        assert np.allclose(law.cdf(z), u, atol=1e-10)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ClaimLaw.gamma(0.0, 1.0)
        with pytest.raises(ValueError):
            ClaimLaw.discrete([(1.0, 0.5), (2.0, 0.4)])


class TestIntensity:
    def test_identity_clips(self):
        fn = IntensityFn.identity(ceiling=10.0)
        v = fn(np.array([-1.0, 2.0, 50.0]))
        assert np.allclose(v, [0.0, 2.0, 10.0])
        assert float(fn.raw(50.0)) == 50.0

    @given(y=st.floats(min_value=-100, max_value=1e6))
    @settings(max_examples=100, deadline=None)
    def test_nonnegative(self, y):
        for fn in (IntensityFn.identity(), IntensityFn.constant(0.3)):
            assert float(fn(y)) >= 0.0

    def test_jump_kinds(self):
        assert float(JumpSpec.relative(0.2).jump(100.0)) == pytest.approx(20.0)
        assert float(JumpSpec.absolute(5.0).jump(100.0)) == pytest.approx(5.0)


class TestValidate:
    def test_baseline_passes(self):
        report = validate(make_params())
        assert report.ok
        assert not report.warnings
        assert report["feller"].status == "pass"
        assert report["A4_claim_moments"].status == "pass"

    def test_degenerate_diffusion_warns(self):
        report = validate(make_params(sigma_y=0.0))
        assert report.ok
        assert report["A2_ellipticity"].status == "warn"

    def test_geometric_volatility_warns(self):
        report = validate(make_params(kappa_x=1.0, sigma_x=0.2, rho=0.2))
        assert report.ok
        assert report["A2_ellipticity"].status == "warn"

    def test_hard_failures(self):
        report = validate(make_params(maturity=-1.0))
        assert not report.ok
        assert report["maturity"].status == "fail"
        report = validate(make_params(delta_r=1.5))
        assert report["delta_r"].status == "fail"
        report = validate(make_params(rho=1.5))
        assert report["rho"].status == "fail"
        report = validate(make_params(zeta=-0.01))
        assert report["zeta"].status == "fail"

    def test_feller_violation_is_warning_not_error(self):
        report = validate(make_params(sigma_y=0.5))
        assert report["feller"].status == "warn"
        assert report.ok

    def test_pure(self):
        p = make_params()
        assert validate(p) == validate(p)


class TestIntensityMapContainer:
    def test_ceiling(self):
        m = IntensityMap(
            loss=IntensityFn.identity(ceiling=100.0),
            default=IntensityFn.constant(0.1, ceiling=5.0),
        )
        assert m.ceiling == 100.0

    def test_constant_requires_nonnegative(self):
        with pytest.raises(ValueError):
            IntensityFn.constant(-0.1)


class TestFlatHazardHelper:
    def test_flat_params_freeze_y(self):
        p = flat_hazard_params(0.07)
        assert p.kappa_y == 0.0 and p.sigma_y == 0.0 and p.y0 == 0.07
