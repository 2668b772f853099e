import numpy as np
import pytest
from hypothesis import given, strategies as st

from hospmix.design import (
    DEFAULT_LEVELS,
    INTERCEPT,
    CovariateSchema,
    Factor,
    design_matrix,
    encode,
    reference_profile,
)
from hospmix.errors import ValidationError

MONTH_AGE = CovariateSchema((Factor("month", ("Mar", "Apr"), "Mar"), Factor("age_group", ("15-44", "75+"), "15-44")))
MONTH_AGE_X = CovariateSchema(MONTH_AGE.factors, (("month", "age_group"),))
FULL = CovariateSchema.defaults(list(DEFAULT_LEVELS))


def profiles(schema):
    return st.fixed_dictionaries({f.name: st.sampled_from(f.levels) for f in schema.factors})


def test_reference_profile_gives_unit_vector():
    v = encode(reference_profile(FULL), FULL).values
    assert v[0] == 1.0 and not v[1:].any()
    assert len(v) == 1 + sum(len(lv) - 1 for lv in DEFAULT_LEVELS.values())


def test_main_effects():
    assert encode({"month": "Apr", "age_group": "75+"}, MONTH_AGE).values.tolist() == [1, 1, 1]


def test_interaction_is_product_of_dummies():
    assert encode({"month": "Apr", "age_group": "75+"}, MONTH_AGE_X).values.tolist() == [1, 1, 1, 1]
    assert encode({"month": "Apr", "age_group": "15-44"}, MONTH_AGE_X).values.tolist() == [1, 1, 0, 0]


def test_labels():
    assert MONTH_AGE_X.labels == (INTERCEPT, "month=Apr", "age_group=75+", "month=Apr:age_group=75+")
    assert encode({"month": "Mar", "age_group": "15-44"}, MONTH_AGE_X).labels == MONTH_AGE_X.labels


@pytest.mark.parametrize(
    "profile,needle",
    [({"month": "Apr"}, "age_group"), ({"month": "Jan", "age_group": "75+"}, "Jan")],
)
def test_bad_profiles_name_the_offender(profile, needle):
    with pytest.raises(ValidationError, match=needle):
        encode(profile, MONTH_AGE)


def test_schema_invariants():
    with pytest.raises(ValidationError):
        Factor("sex", ("Female", "Male"), "Other")
    with pytest.raises(ValidationError):
        Factor("sex", ("Female", "Female"), "Female")
    with pytest.raises(ValidationError):
        CovariateSchema((Factor.default("sex"), Factor.default("sex")))
    with pytest.raises(ValidationError):
        CovariateSchema((Factor.default("sex"),), (("sex", "region"),))
    with pytest.raises(ValidationError):
        CovariateSchema((Factor.default("sex"),), (("sex", "sex"),))


def test_default_references():
    refs = {f.name: f.reference for f in FULL.factors}
    assert refs == {
        "month": "Mar",
        "sex": "Female",
        "age_group": "15-44",
        "region": "London/South",
        "ethnicity": "Asian",
        "comorbidity_count": "0",
    }


def test_schema_dict_round_trip():
    assert CovariateSchema.from_dict(MONTH_AGE_X.to_dict()) == MONTH_AGE_X


@given(profiles(FULL))
def test_entries_binary_and_length(profile):
    v = encode(profile, FULL).values
    assert set(np.unique(v)) <= {0.0, 1.0}
    assert len(v) == len(FULL.labels)


@given(profiles(FULL), profiles(FULL))
def test_injective_without_interactions(a, b):
    same = np.array_equal(encode(a, FULL).values, encode(b, FULL).values)
    assert same == (a == b)


@given(profiles(FULL), st.sampled_from(list(DEFAULT_LEVELS)), st.data())
def test_changing_one_factor_touches_only_its_block(profile, name, data):
    other = dict(profile)
    other[name] = data.draw(st.sampled_from(DEFAULT_LEVELS[name]))
    diff = encode(profile, FULL).values != encode(other, FULL).values
    touched = {FULL.labels[i].split("=")[0] for i in np.flatnonzero(diff)}
    assert touched <= {name}


def test_design_matrix_rows_match_encode():
    profs = [{"month": "Apr", "age_group": "75+"}, {"month": "Mar", "age_group": "75+"}]
    X = design_matrix(profs, MONTH_AGE_X)
    assert X.shape == (2, 4)
    for row, p in zip(X, profs):
        assert np.array_equal(row, encode(p, MONTH_AGE_X).values)
