"""Treatment coding of categorical covariate profiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

INTERCEPT = "(Intercept)"

# groupings and reference levels used for the SARI-Watch analysis
DEFAULT_LEVELS = {
    "month": ("Mar", "Apr", "May", "Jun/Jul/Aug", "Sep", "Oct", "Nov", "Dec"),
    "sex": ("Female", "Male"),
    "age_group": ("15-44", "45-64", "65-74", "75+"),
    "region": ("London/South", "Midlands/East", "North"),
    "ethnicity": ("Asian", "Black", "Mixed/Other", "White"),
    "comorbidity_count": ("0", "1", "2", "3+"),
}
DEFAULT_REFERENCES = {
    "month": "Mar",
    "sex": "Female",
    "age_group": "15-44",
    "region": "London/South",
    "ethnicity": "Asian",
    "comorbidity_count": "0",
}


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple
    reference: str

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if len(set(self.levels)) != len(self.levels):
            raise ValidationError(f"factor {self.name!r} has duplicate levels")
        if self.reference not in self.levels:
            raise ValidationError(f"reference {self.reference!r} is not a level of factor {self.name!r}")

    @property
    def contrasts(self):
        return tuple(lv for lv in self.levels if lv != self.reference)

    @classmethod
    def default(cls, name, reference=None):
        try:
            levels = DEFAULT_LEVELS[name]
        except KeyError:
            raise ValidationError(f"no default levels for factor {name!r}") from None
        return cls(name, levels, reference or DEFAULT_REFERENCES[name])


@dataclass(frozen=True)
class CovariateSchema:
    factors: tuple = ()
    interactions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "interactions", tuple(tuple(pair) for pair in self.interactions))
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate factor names in schema: {names}")
        for pair in self.interactions:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ValidationError(f"interaction must name two distinct factors, got {pair}")
            for member in pair:
                if member not in names:
                    raise ValidationError(f"interaction member {member!r} is not a factor")

    @classmethod
    def defaults(cls, names: Sequence[str] = (), interactions=()):
        return cls(tuple(Factor.default(n) for n in names), tuple(interactions))

    def factor(self, name) -> Factor:
        for f in self.factors:
            if f.name == name:
                return f
        raise ValidationError(f"unknown factor {name!r}")

    @property
    def factor_names(self):
        return tuple(f.name for f in self.factors)

    @property
    def labels(self):
        labels = [INTERCEPT]
        for f in self.factors:
            labels.extend(f"{f.name}={lv}" for lv in f.contrasts)
        for a, b in self.interactions:
            fa, fb = self.factor(a), self.factor(b)
            labels.extend(f"{a}={la}:{b}={lb}" for la, lb in product(fa.contrasts, fb.contrasts))
        return tuple(labels)

    def __len__(self):
        return len(self.labels)

    def validate(self, profile: Mapping[str, str]):
        for f in self.factors:
            if f.name not in profile:
                raise ValidationError(f"profile is missing factor {f.name!r}")
            if str(profile[f.name]) not in f.levels:
                raise ValidationError(f"unknown level {profile[f.name]!r} for factor {f.name!r}")

    def to_dict(self):
        return {
            "factors": [{"name": f.name, "levels": list(f.levels), "reference": f.reference} for f in self.factors],
            "interactions": [list(p) for p in self.interactions],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(Factor(f["name"], tuple(f["levels"]), f["reference"]) for f in d.get("factors", ())),
            tuple(tuple(p) for p in d.get("interactions", ())),
        )


@dataclass(frozen=True)
class DesignVector:
    values: np.ndarray
    labels: tuple = field(default=())

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def _dummies(factor, level):
    return [1.0 if level == lv else 0.0 for lv in factor.contrasts]


def encode(profile: Mapping[str, str], schema: CovariateSchema) -> DesignVector:
    """Intercept, one dummy per non-reference level, then interaction products."""
    schema.validate(profile)
    blocks = {f.name: _dummies(f, str(profile[f.name])) for f in schema.factors}
    values = [1.0]
    for f in schema.factors:
        values.extend(blocks[f.name])
    for a, b in schema.interactions:
        values.extend(x * y for x, y in product(blocks[a], blocks[b]))
    return DesignVector(np.array(values), schema.labels)


def design_matrix(profiles: Sequence[Mapping[str, str]], schema: CovariateSchema) -> np.ndarray:
    """Row-stacked :func:`encode`; profiles repeated across rows are encoded once."""
    cache = {}
    rows = np.empty((len(profiles), len(schema)))
    for i, profile in enumerate(profiles):
        key = tuple(str(profile.get(n)) for n in schema.factor_names)
        if key not in cache:
            cache[key] = encode(profile, schema).values
        rows[i] = cache[key]
    return rows


def reference_profile(schema: CovariateSchema) -> dict:
    return {f.name: f.reference for f in schema.factors}
