import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfpe import eval_b_star, make_model, regularize, validate_hypotheses
from nfpe.coefficients import CoefficientSet, load_coefficients_csv
from nfpe.errors import ConfigError


def result_for(report, hyp):
    return next(r for r in report.results if r.hypothesis == hyp)


class TestEvalBStar:
    def test_zero_b(self):
        assert eval_b_star(make_model("heat"), 2.0) == 0.0

    def test_self_consistent_square(self):
        # b(r) = beta(r)/r with beta = r^2 on r > 0 gives b*(r) = r^2
        c = make_model("porous_medium", m=2, b_mode="self")
        assert eval_b_star(c, 3.0) == pytest.approx(9.0, rel=1e-14)

    def test_bose_einstein_log(self):
        c = make_model("bose_einstein", a=1.0, b_mode="self")
        assert eval_b_star(c, 1.0) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_b_star_equals_beta_for_self_models(self):
        r = np.linspace(-3, 3, 41)
        for name, kw in [("heat", {}), ("porous_medium", dict(m=2)), ("bose_einstein", dict(a=0.7))]:
            c = make_model(name, b_mode="self", **kw)
            assert np.allclose(c.b_star(r), c.beta(r), atol=1e-13)


class TestValidation:
    def test_heat_all_pass(self):
        report = validate_hypotheses(make_model("heat"))
        assert report.passed
        assert report.fitted_alpha1 == pytest.approx(1.0, rel=1e-12)
        assert report.fitted_alpha2 == 0.0

    def test_builtin_suite_passes(self):
        for name, kw in [
            ("porous_medium", dict(m=2)),
            ("porous_medium", dict(m=3)),
            ("bose_einstein", dict(a=1.0)),
            ("heat", dict(b_mode="self", drift="tanh")),
            ("porous_medium", dict(m=2, b_mode="self", drift="tanh")),
            ("bose_einstein", dict(a=1.0, b_mode="self", drift="tanh")),
        ]:
            report = validate_hypotheses(make_model(name, **kw))
            assert report.passed, report.lines()

    def test_constant_b_on_degenerate_beta_fails_iv(self):
        # beta = r^3 has beta'(0) = 0; b = 1 gives b* = r, not slaved to beta
        c = make_model("power_law", p=3, b_mode="const", b_value=1.0, r_range=(-1, 1))
        report = validate_hypotheses(c)
        res = result_for(report, "iv")
        assert not res.passed
        assert res.witness is not None
        assert max(abs(res.witness[0]), abs(res.witness[1])) < 1e-2  # fails near zero
        assert report.fitted_alpha2 > 1e6

    def test_declared_alpha2_violation_witnessed(self):
        base = make_model("power_law", p=3, r_range=(-1, 1))
        c = CoefficientSet(
            name="bad",
            beta=base.beta,
            beta_prime=base.beta_prime,
            b=lambda r: np.ones_like(np.asarray(r, dtype=float)),
            D=base.D,
            alpha1=base.alpha1,
            alpha2=100.0,
            r_range=(-1, 1),
            b_sup=1.0,
        )
        res = result_for(validate_hypotheses(c), "iv")
        assert not res.passed and res.witness is not None

    def test_cubic_with_matching_b_passes_iv(self):
        # b = beta / r makes b* = beta: slaving ratio exactly one
        c = make_model("power_law", p=3, b_mode="self", r_range=(-1, 1))
        report = validate_hypotheses(c)
        assert result_for(report, "iv").passed
        assert report.fitted_alpha2 == pytest.approx(1.0, abs=1e-9)

    def test_sublinear_power_law_fails_growth(self):
        report = validate_hypotheses(make_model("power_law", p=0.5))
        assert not result_for(report, "i").passed

    def test_negative_b_fails_iii(self):
        c = make_model("heat", b_mode="const", b_value=-0.5, drift="tanh")
        assert not result_for(validate_hypotheses(c), "iii").passed

    def test_sampler_validation(self):
        with pytest.raises(ConfigError):
            validate_hypotheses(make_model("heat"), {"n_samples": 1})
        with pytest.raises(ConfigError):
            validate_hypotheses(make_model("heat"), {"r_min": 1.0, "r_max": 1.0})

    def test_drift_surrogate_reported(self):
        report = validate_hypotheses(make_model("heat", b_mode="self", drift="tanh"))
        assert 0.9 < report.drift_sup <= 1.0
        assert 0.5 < report.div_drift_neg_sup <= 1.1
        assert any("surrogate" in n for n in report.notes)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=10, deadline=None)
    def test_fitted_alpha2_bounds_fresh_pairs(self, seed):
        # fitted constant from the report must cover 10^4 independent pairs,
        # for every built-in model that validates
        rng = np.random.default_rng(seed)
        for name, kw in [
            ("heat", {}),
            ("porous_medium", dict(m=2, b_mode="self")),
            ("bose_einstein", dict(a=1.3, b_mode="self")),
            ("heat", dict(b_mode="self")),
        ]:
            c = make_model(name, **kw)
            report = validate_hypotheses(c)
            assert report.passed
            r1, r2 = rng.uniform(-4, 4, size=(2, 10_000))
            dbs = np.abs(c.b_star(r1) - c.b_star(r2))
            dbe = np.abs(c.beta(r1) - c.beta(r2))
            assert np.all(dbs <= report.fitted_alpha2 * dbe * (1 + 1e-9) + 1e-12)


class TestRegularize:
    def test_zero_b_fixed_point(self):
        reg = regularize(make_model("heat"), 0.3, 0.1)
        r = np.linspace(-2, 2, 17)
        assert np.all(reg.b_star_eps(r) == 0.0)

    def test_constant_b_damping_formula(self):
        # mollifying a constant returns it; only the damping acts
        c = make_model("heat", b_mode="const", b_value=1.0, drift="tanh")
        reg = regularize(c, 0.1, 0.05)
        val = float(reg.b_star_eps(np.array([1.0]))[0])
        assert val == pytest.approx(1.0 / 1.1, abs=1e-6)

    def test_cutoff_profile_identity_inside(self):
        # eta_eps(x) = 1 for |x| < 1/eps, so D is untouched there
        c = make_model("heat", b_mode="const", b_value=1.0, drift="tanh")
        reg = regularize(c, 0.5, 0.01)
        x = np.array([[1.0, 0.0]])
        assert np.allclose(reg.D_eps(x), c.D(x), atol=1e-15)
        assert float(reg.eta_eps(np.array([[1.0, 0.0]]))[0]) == 1.0

    def test_cutoff_vanishes_far_out(self):
        c = make_model("heat", b_mode="const", b_value=1.0, drift="tanh")
        reg = regularize(c, 0.5, 0.01)
        far = np.array([[10.0, 0.0]])
        assert np.all(reg.D_eps(far) == 0.0)
        assert np.all(np.abs(reg.D_eps(far)) <= np.abs(c.D(far)))

    def test_cutoff_magnitude_never_exceeds_D(self):
        c = make_model("bose_einstein", a=1, b_mode="self", drift="tanh")
        reg = regularize(c, 0.4, 0.01)
        x = np.linspace(-10, 10, 101)[:, None]
        assert np.all(np.abs(reg.D_eps(x)) <= np.abs(c.D(x)) + 1e-15)

    @given(
        eps_pair=st.tuples(st.floats(0.01, 0.5), st.floats(0.01, 0.5)),
        r=st.floats(0.0, 5.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_eps_for_constant_b(self, eps_pair, r):
        e1, e2 = sorted(eps_pair)
        c = make_model("heat", b_mode="const", b_value=2.0, drift="tanh")
        v1 = float(regularize(c, e1, 0.02).b_star_eps(np.array([r]))[0])
        v2 = float(regularize(c, e2, 0.02).b_star_eps(np.array([r]))[0])
        assert v1 >= v2 - 1e-12

    def test_pointwise_convergence_to_b_star(self):
        c = make_model("bose_einstein", a=1, b_mode="self", drift="tanh")
        r = np.linspace(-2, 2, 21)
        errs = []
        for eps in (0.1, 0.01, 0.001):
            reg = regularize(c, eps, eps)
            errs.append(np.max(np.abs(reg.b_star_eps(r) - c.b_star(r))))
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] < 1e-2

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_lipschitz_bound_on_sampled_pairs(self, seed):
        rng = np.random.default_rng(seed)
        c = make_model("bose_einstein", a=1, b_mode="self", drift="tanh")
        reg = regularize(c, 0.2, 0.05)
        bound = reg.lipschitz_bound()
        assert np.isfinite(bound)
        r1, r2 = rng.uniform(-5, 5, size=(2, 200))
        lhs = np.abs(reg.b_star_eps(r1) - reg.b_star_eps(r2))
        assert np.all(lhs <= bound * np.abs(r1 - r2) + 1e-12)

    def test_linear_growth_of_b_star_eps(self):
        c = make_model("bose_einstein", a=1, b_mode="self", drift="tanh")
        reg = regularize(c, 0.2, 0.05)
        r = np.linspace(-6, 6, 101)
        assert np.all(np.abs(reg.b_star_eps(r)) <= (c.b_sup + 1.0) * np.abs(r) + 1e-12)

    def test_mollifier_quadrature_normalized(self):
        reg = regularize(make_model("heat", b_mode="const", b_value=3.0, drift="tanh"), 0.1, 0.2)
        assert reg.weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert float(reg.b_mollified(np.array([0.7]))[0]) == pytest.approx(3.0, abs=1e-12)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            regularize(make_model("heat"), 0.0, 0.1)
        with pytest.raises(ValueError):
            regularize(make_model("heat"), 0.1, -1.0)


class TestCsvCoefficients:
    def test_round_trip_interpolation(self, tmp_path):
        # knots of beta = r^3 with exact derivatives: cubic Hermite is exact
        r = np.linspace(-2, 2, 33)
        rows = ["r,beta,beta_prime"] + [
            f"{v},{v**3},{3*v**2}" for v in r
        ]
        path = tmp_path / "cubic.csv"
        path.write_text("\n".join(rows))
        c = load_coefficients_csv(path, name="cubic")
        x = np.linspace(-1.9, 1.9, 50)
        assert np.allclose(c.beta(x), x**3, atol=1e-10)
        assert np.allclose(c.beta_prime(x), 3 * x**2, atol=1e-9)

    def test_optional_b_column(self, tmp_path):
        r = np.linspace(0.0, 2.0, 9)
        rows = ["r,beta,beta_prime,b"] + [f"{v},{v},{1.0},{0.5}" for v in r]
        path = tmp_path / "withb.csv"
        path.write_text("\n".join(rows))
        c = load_coefficients_csv(path)
        assert not c.b_is_zero
        assert float(c.b(np.array([1.0]))[0]) == pytest.approx(0.5)

    def test_rejects_unsorted_knots(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("r,beta,beta_prime\n1.0,1.0,1.0\n0.0,0.0,1.0\n")
        with pytest.raises(ConfigError):
            load_coefficients_csv(path)


class TestModelRegistry:
    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            make_model("modle")

    def test_porous_medium_m_below_one(self):
        with pytest.raises(ConfigError):
            make_model("porous_medium", m=0.5)

    def test_diffusion_ratio_floor(self):
        c = make_model("porous_medium", m=2)
        # beta(rho)/rho -> beta'(0) = 0 below the floor
        assert float(c.diffusion_ratio(np.array([0.0]))[0]) == 0.0
        assert float(c.diffusion_ratio(np.array([2.0]))[0]) == pytest.approx(2.0)
