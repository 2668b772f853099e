import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hospmix.design import CovariateSchema
from hospmix.distributions import Family
from hospmix.model import StateId, SubModelSpec, hospital_submodel, icu_submodel
from hospmix.simulation import parameters_from_labels

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

D, X, I = StateId.DISCHARGE, StateId.DEATH, StateId.ICU

SEX = CovariateSchema.defaults(["sex"])

TRUTH_HOSPITAL = {
    "prob[Discharge]:(Intercept)": math.log(0.6 / 0.12),
    "prob[Discharge]:sex=Male": -0.2,
    "prob[Death]:(Intercept)": math.log(0.28 / 0.12),
    "prob[Death]:sex=Male": 0.3,
    "time[Discharge]:(Intercept)": math.log(7.0),
    "time[Discharge]:sex=Male": 0.1,
    "anc[Discharge]:log_sigma": math.log(0.8),
    "anc[Discharge]:Q": 0.5,
    "time[Death]:(Intercept)": math.log(4.5),
    "time[Death]:sex=Male": -0.1,
    "anc[Death]:log_shape": math.log(2.0),
    "time[ICU]:(Intercept)": math.log(1.5),
    "time[ICU]:sex=Male": 0.05,
    "anc[ICU]:log_sdlog": 0.0,
}
TRUTH_ICU = {
    "prob[Discharge]:(Intercept)": 0.2,
    "prob[Discharge]:sex=Male": -0.3,
    "time[Discharge]:(Intercept)": math.log(12.0),
    "time[Discharge]:sex=Male": 0.1,
    "anc[Discharge]:log_sigma": math.log(0.7),
    "anc[Discharge]:Q": -0.3,
    "time[Death]:(Intercept)": math.log(10 / 1.5),
    "anc[Death]:log_shape": math.log(1.5),
}


def exponential_spec(destinations=(D, X), schema=None):
    """Gamma times everywhere; fixing log_shape = 0 gives exponential times."""
    schema = schema or CovariateSchema()
    return SubModelSpec(
        StateId.HOSPITAL,
        tuple(destinations),
        {d: Family.GAMMA for d in destinations},
        schema,
        {d: schema for d in destinations},
        destinations[-1],
    )


@pytest.fixture(scope="session")
def sex_specs():
    return hospital_submodel(SEX), icu_submodel(SEX)


@pytest.fixture(scope="session")
def sex_truth(sex_specs):
    spec_h, spec_i = sex_specs
    return parameters_from_labels(spec_h, TRUTH_HOSPITAL), parameters_from_labels(spec_i, TRUTH_ICU)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
