import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import D, I, SEX, X, exponential_spec
from hospmix.design import CovariateSchema
from hospmix.distributions import DistributionSpec, Family
from hospmix.errors import DataError, ImpossibleDataError, ValidationError
from hospmix.model import (
    CompiledObservations,
    Delta,
    ParameterSet,
    StateId,
    SubModelSpec,
    TransitionObservation,
    conditional_time_spec,
    dataset_loglik,
    hospital_submodel,
    icu_submodel,
    n_free_params,
    observation_loglik,
    parameter_labels,
    transition_probs,
)

H = StateId.HOSPITAL


def exp_params(spec, pi_d, rate_d, rate_x):
    """Two-destination exponential toy: P(Discharge) = pi_d, rates per destination."""
    p = ParameterSet.zeros(spec)
    p.gamma[D][0] = math.log(pi_d / (1 - pi_d))
    p.beta[D][0] = -math.log(rate_d)
    p.beta[X][0] = -math.log(rate_x)
    return p


def obs(y, dest, delta, profile=None, origin=H):
    return TransitionObservation(y, origin, dest, delta, profile or {})


class TestTransitionProbs:
    def test_zero_coefficients_uniform(self):
        spec = hospital_submodel()
        probs = transition_probs(ParameterSet.zeros(spec), spec, {})
        assert list(probs.values()) == pytest.approx([1 / 3] * 3, abs=1e-15)

    def test_two_destinations_even(self):
        spec = exponential_spec()
        assert transition_probs(ParameterSet.zeros(spec), spec, {}) == pytest.approx({D: 0.5, X: 0.5})

    def test_hand_softmax(self):
        # predictors (0, ln 3) over (reference, other)
        spec = exponential_spec()
        p = ParameterSet.zeros(spec)
        p.gamma[D][0] = math.log(3)
        probs = transition_probs(p, spec, {})
        assert probs[X] == pytest.approx(0.25, abs=1e-15)
        assert probs[D] == pytest.approx(0.75, abs=1e-15)

    @given(st.lists(st.floats(-30, 30), min_size=6, max_size=6), st.sampled_from(["Female", "Male"]))
    def test_sum_to_one_and_positive(self, coefs, sex):
        spec = hospital_submodel(SEX)
        p = ParameterSet.zeros(spec)
        p.gamma[D] = np.array(coefs[:2])
        p.gamma[X] = np.array(coefs[2:4])
        probs = np.array(list(transition_probs(p, spec, {"sex": sex}).values()))
        assert abs(probs.sum() - 1) < 1e-12
        assert np.all(probs > 0)

    def test_reference_destination_is_configurable(self):
        spec = hospital_submodel(reference=StateId.DEATH)
        assert spec.contrast_destinations == (D, I)
        assert [lab.split(":")[0] for lab in parameter_labels(spec)[:2]] == ["prob[Discharge]", "prob[ICU]"]


class TestConditionalTimeSpec:
    def test_zero_beta_gives_baseline(self):
        spec = hospital_submodel()
        p = ParameterSet.zeros(spec)
        assert conditional_time_spec(p, spec, {}, X) == DistributionSpec.gamma(1.0, 1.0)
        assert conditional_time_spec(p, spec, {}, I) == DistributionSpec.lognormal(0.0, 1.0)
        assert conditional_time_spec(p, spec, {}, D) == DistributionSpec.gengamma(0.0, 1.0, 0.0)

    def test_lognormal_intercept(self):
        spec = hospital_submodel()
        p = ParameterSet.zeros(spec)
        p.beta[I][0] = 2.0
        p.ancillary[I][0] = math.log(0.6)
        assert conditional_time_spec(p, spec, {}, I) == DistributionSpec.lognormal(2.0, 0.6)

    def test_gamma_coefficient_doubles_mean(self):
        spec = hospital_submodel(SEX)
        p = ParameterSet.zeros(spec)
        p.ancillary[X][0] = math.log(2.5)
        p.beta[X][:] = [0.3, math.log(2)]
        base = conditional_time_spec(p, spec, {"sex": "Female"}, X).mean()
        assert conditional_time_spec(p, spec, {"sex": "Male"}, X).mean() == pytest.approx(2 * base, rel=1e-12)

    def test_unknown_destination(self):
        spec = icu_submodel()
        with pytest.raises(ValidationError):
            conditional_time_spec(ParameterSet.zeros(spec), spec, {}, I)


class TestObservationLoglik:
    def test_censored_at_zero_contributes_nothing(self):
        spec = hospital_submodel(SEX)
        p = ParameterSet.from_vector(spec, np.random.default_rng(0).normal(size=n_free_params(spec)))
        assert observation_loglik(obs(0.0, None, 2, {"sex": "Male"}), p, spec) == 0.0

    def test_partial_discharge_is_log_pi(self):
        spec = exponential_spec()
        p = exp_params(spec, 0.7, 1.0, 1.0)
        assert observation_loglik(obs(5.0, D, 3), p, spec) == pytest.approx(math.log(0.7), abs=1e-14)
        assert observation_loglik(obs(5.0, D, 3), p, spec) == pytest.approx(-0.35667494393873245, abs=1e-12)

    def test_exact_two_exponentials(self):
        spec = exponential_spec()
        p = exp_params(spec, 0.5, 1.0, 1.0)
        assert observation_loglik(obs(1.0, D, 1), p, spec) == pytest.approx(math.log(0.5 * math.exp(-1)), abs=1e-14)
        assert observation_loglik(obs(1.0, D, 1), p, spec) == pytest.approx(-1.69315, abs=1e-5)

    def test_partial_non_discharge_treated_as_censored(self):
        spec = exponential_spec()
        p = exp_params(spec, 0.7, 0.5, 0.25)
        assert observation_loglik(obs(3.0, X, 3), p, spec) == observation_loglik(obs(3.0, None, 2), p, spec)

    def test_three_observation_toy_by_hand(self):
        spec = exponential_spec()
        p = exp_params(spec, 0.7, 0.5, 0.25)
        data = [obs(2.0, D, 1), obs(3.0, None, 2), obs(4.0, D, 3)]
        by_hand = (
            math.log(0.7 * 0.5 * math.exp(-1.0))
            + math.log(0.7 * math.exp(-1.5) + 0.3 * math.exp(-0.75))
            + math.log(0.7)
        )
        assert dataset_loglik(data, p, spec) == pytest.approx(by_hand, abs=1e-10)
        assert dataset_loglik(data, p, spec) == pytest.approx(sum(observation_loglik(o, p, spec) for o in data), abs=1e-12)

    @given(st.floats(0.0, 200.0), st.floats(0.0, 50.0))
    def test_censored_nonincreasing_in_y(self, y, dy):
        spec = hospital_submodel()
        p = ParameterSet.from_vector(spec, np.array([1.5, 0.8, 1.9, -0.2, 0.5, 1.5, 0.7, 0.4, 0.0]))
        assert observation_loglik(obs(y + dy, None, 2), p, spec) <= observation_loglik(obs(y, None, 2), p, spec) + 1e-12

    def test_large_censoring_time_is_finite(self):
        spec = hospital_submodel()
        p = ParameterSet.from_vector(spec, np.array([1.5, 0.8, 1.9, -0.2, 0.5, 1.5, 0.7, 0.4, 0.0]))
        assert math.isfinite(observation_loglik(obs(90.0, None, 2), p, spec))


class TestDatasetLoglik:
    def test_empty(self):
        spec = exponential_spec()
        assert dataset_loglik([], ParameterSet.zeros(spec), spec) == 0.0

    def test_duplicate_doubles(self):
        spec = hospital_submodel()
        p = ParameterSet.zeros(spec)
        o = obs(4.0, X, 1)
        assert dataset_loglik([o, o], p, spec) == 2 * observation_loglik(o, p, spec)

    def test_mixed_origins_rejected(self):
        spec = hospital_submodel()
        with pytest.raises(DataError):
            dataset_loglik([obs(1.0, D, 1), obs(1.0, D, 1, origin=StateId.ICU)], ParameterSet.zeros(spec), spec)

    def test_unreachable_destination_rejected(self):
        spec = icu_submodel()
        with pytest.raises(DataError):
            dataset_loglik([obs(1.0, I, 1, origin=StateId.ICU)], ParameterSet.zeros(spec), spec)

    def test_impossible_data_is_signalled(self):
        spec = exponential_spec()
        with pytest.raises(ImpossibleDataError):
            dataset_loglik([obs(1e300, None, 2)], exp_params(spec, 0.5, 1.0, 1.0), spec)

    def test_brute_force_product(self, rng):
        spec = hospital_submodel(SEX)
        p = ParameterSet.from_vector(spec, rng.normal(scale=0.3, size=n_free_params(spec)))
        data = [obs(float(rng.uniform(0.2, 20)), [D, X, I][k % 3], 1, {"sex": ["Female", "Male"][k % 2]}) for k in range(12)]
        product = 1.0
        for o in data:
            pi = transition_probs(p, spec, o.profile)[o.destination]
            product *= pi * conditional_time_spec(p, spec, o.profile, o.destination).pdf(o.y)
        assert math.exp(dataset_loglik(data, p, spec)) == pytest.approx(product, rel=1e-10)

    @given(st.floats(0.2, 5.0))
    def test_time_scaling_jacobian(self, c):
        spec = hospital_submodel()
        p = ParameterSet.from_vector(spec, np.array([1.5, 0.8, 1.9, -0.2, 0.5, 1.5, 0.7, 0.4, 0.0]))
        scaled = ParameterSet.from_vector(spec, p.to_vector(spec))
        for d in spec.destinations:
            scaled.beta[d][0] += math.log(c)
        ys = [(0.7, D), (3.0, X), (11.0, I)]
        for y, d in ys:
            before = observation_loglik(obs(y, d, 1), p, spec)
            after = observation_loglik(obs(c * y, d, 1), scaled, spec)
            assert after - before == pytest.approx(-math.log(c), abs=1e-9)


class TestScore:
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        spec = hospital_submodel(SEX)
        theta = rng.normal(scale=0.4, size=n_free_params(spec))
        theta[parameter_labels(spec).index("anc[Discharge]:Q")] = [0.5, -0.8, 1e-3, -0.2][seed]
        sexes = ["Female", "Male"]
        data = []
        for k in range(40):
            delta = [1, 1, 2, 3][k % 4]
            dest = [D, X, I][k % 3] if delta != 2 else None
            if delta == 3:
                dest = [D, X][k % 2]
            data.append(obs(float(rng.uniform(0.1, 30)), dest, delta, {"sex": sexes[k % 2]}))
        compiled = CompiledObservations(data, spec)
        g = compiled.gradient(ParameterSet.from_vector(spec, theta))
        fd = np.empty_like(theta)
        h = 1e-6
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (compiled.loglik(ParameterSet.from_vector(spec, theta + e)) - compiled.loglik(ParameterSet.from_vector(spec, theta - e))) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6)

    def test_q_derivative_at_lognormal_limit(self):
        # inside the log-normal switch the loglik is flat in Q, so difference
        # across it with a wide step
        spec = hospital_submodel()
        theta = np.array([1.5, 0.8, 1.9, -0.2, 0.0, 1.5, 0.7, 0.4, 0.0])
        iq = parameter_labels(spec).index("anc[Discharge]:Q")
        data = [obs(y, D, 1) for y in (0.5, 2.0, 7.0, 25.0)] + [obs(10.0, None, 2)]
        compiled = CompiledObservations(data, spec)
        g = compiled.gradient(ParameterSet.from_vector(spec, theta))[iq]
        h = 1e-3
        up, dn = theta.copy(), theta.copy()
        up[iq] += h
        dn[iq] -= h
        fd = (compiled.loglik(ParameterSet.from_vector(spec, up)) - compiled.loglik(ParameterSet.from_vector(spec, dn))) / (2 * h)
        assert g == pytest.approx(fd, rel=1e-3)


class TestTypes:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(y=0.0, destination=D, delta=1),
            dict(y=-1.0, destination=None, delta=2),
            dict(y=1.0, destination=None, delta=1),
            dict(y=1.0, destination=None, delta=3),
            dict(y=1.0, destination=D, delta=4),
            dict(y=math.inf, destination=None, delta=2),
        ],
    )
    def test_observation_invariants(self, kwargs):
        with pytest.raises(DataError):
            TransitionObservation(origin=H, **kwargs)

    def test_spec_invariants(self):
        fams = {D: Family.GAMMA, X: Family.GAMMA}
        s = CovariateSchema()
        with pytest.raises(ValidationError):
            SubModelSpec(H, (D,), {D: Family.GAMMA}, s, {D: s}, D)
        with pytest.raises(ValidationError):
            SubModelSpec(H, (D, X), fams, s, {D: s, X: s}, I)
        with pytest.raises(ValidationError):
            SubModelSpec(H, (D, H), {D: Family.GAMMA, H: Family.GAMMA}, s, {D: s, H: s}, D)
        with pytest.raises(ValidationError):
            SubModelSpec(D, (X, I), fams, s, {X: s, I: s}, X)

    def test_spec_dict_round_trip(self):
        spec = hospital_submodel(SEX)
        assert SubModelSpec.from_dict(spec.to_dict()) == spec

    def test_parameter_vector_round_trip(self, rng):
        spec = hospital_submodel(SEX)
        theta = rng.normal(size=n_free_params(spec))
        assert np.array_equal(ParameterSet.from_vector(spec, theta).to_vector(spec), theta)
        assert len(parameter_labels(spec)) == theta.size == 2 * 2 + 3 * 2 + 2 + 1 + 1
        with pytest.raises(ValidationError):
            ParameterSet.from_vector(spec, theta[:-1])

    def test_states(self):
        assert StateId.DEATH.absorbing and not StateId.ICU.absorbing
        assert StateId.parse("icu") is StateId.ICU
        assert Delta(3) is Delta.PARTIAL
