"""Competing-risks mixture sub-models and their censored log-likelihood.

Each sub-model describes the next event out of one transient state.  The
destination is chosen by a multinomial logit, and the time to it, given the
destination, follows a parametric family whose linked parameter is an AFT
linear predictor.  Observations contribute:

* exact (delta=1):            log(pi_s * f_s(y))
* right-censored (delta=2):   log(sum_s pi_s * S_s(y))
* partial (delta=3), s != Discharge: as right-censored
* partial (delta=3), s == Discharge: log(pi_Discharge)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import distributions as dist
from .design import CovariateSchema, INTERCEPT, design_matrix, encode
from .distributions import ANCILLARY_NAMES, DistributionSpec, Family
from .errors import DataError, ImpossibleDataError, ValidationError


class StateId(str, enum.Enum):
    HOSPITAL = "Hospital"
    ICU = "ICU"
    DISCHARGE = "Discharge"
    DEATH = "Death"

    @property
    def absorbing(self):
        return self in (StateId.DISCHARGE, StateId.DEATH)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).strip().lower() == member.value.lower():
                return member
        raise ValidationError(f"unknown state {value!r}")


class Delta(enum.IntEnum):
    EXACT = 1
    RIGHT_CENSORED = 2
    PARTIAL = 3


@dataclass(frozen=True)
class SubModelSpec:
    origin: StateId
    destinations: tuple
    families: Mapping  # destination -> Family
    prob_schema: CovariateSchema
    time_schemas: Mapping  # destination -> CovariateSchema
    reference_destination: StateId

    def __post_init__(self):
        origin = StateId.parse(self.origin)
        dests = tuple(StateId.parse(d) for d in self.destinations)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "destinations", dests)
        object.__setattr__(self, "reference_destination", StateId.parse(self.reference_destination))
        object.__setattr__(self, "families", {StateId.parse(k): Family.parse(v) for k, v in dict(self.families).items()})
        object.__setattr__(self, "time_schemas", {StateId.parse(k): v for k, v in dict(self.time_schemas).items()})
        if origin.absorbing:
            raise ValidationError(f"origin {origin.value} is absorbing")
        if len(dests) < 2 or len(set(dests)) != len(dests):
            raise ValidationError("a sub-model needs at least two distinct destinations")
        if origin in dests:
            raise ValidationError("origin cannot be one of its own destinations")
        if self.reference_destination not in dests:
            raise ValidationError(f"reference destination {self.reference_destination.value} not in destinations")
        for d in dests:
            if d not in self.families:
                raise ValidationError(f"no family given for destination {d.value}")
            if d not in self.time_schemas:
                raise ValidationError(f"no time schema given for destination {d.value}")

    @property
    def contrast_destinations(self):
        return tuple(d for d in self.destinations if d != self.reference_destination)

    def destination_index(self, destination):
        destination = StateId.parse(destination)
        try:
            return self.destinations.index(destination)
        except ValueError:
            raise ValidationError(f"{destination.value} is not a destination from {self.origin.value}") from None

    @property
    def factor_names(self):
        names = list(self.prob_schema.factor_names)
        for d in self.destinations:
            names.extend(n for n in self.time_schemas[d].factor_names if n not in names)
        return tuple(names)

    def validate_profile(self, profile):
        self.prob_schema.validate(profile)
        for d in self.destinations:
            self.time_schemas[d].validate(profile)

    def to_dict(self):
        return {
            "origin": self.origin.value,
            "destinations": [d.value for d in self.destinations],
            "families": {d.value: self.families[d].value for d in self.destinations},
            "reference_destination": self.reference_destination.value,
            "prob_schema": self.prob_schema.to_dict(),
            "time_schemas": {d.value: self.time_schemas[d].to_dict() for d in self.destinations},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            origin=d["origin"],
            destinations=tuple(d["destinations"]),
            families=d["families"],
            prob_schema=CovariateSchema.from_dict(d["prob_schema"]),
            time_schemas={k: CovariateSchema.from_dict(v) for k, v in d["time_schemas"].items()},
            reference_destination=d["reference_destination"],
        )


HOSPITAL_FAMILIES = {StateId.DISCHARGE: Family.GENGAMMA, StateId.DEATH: Family.GAMMA, StateId.ICU: Family.LOGNORMAL}
ICU_FAMILIES = {StateId.DISCHARGE: Family.GENGAMMA, StateId.DEATH: Family.GAMMA}


def hospital_submodel(prob_schema=None, time_schema=None, families=None, reference=StateId.ICU):
    prob_schema = prob_schema or CovariateSchema()
    time_schema = time_schema or prob_schema
    dests = (StateId.DISCHARGE, StateId.DEATH, StateId.ICU)
    return SubModelSpec(
        StateId.HOSPITAL,
        dests,
        families or HOSPITAL_FAMILIES,
        prob_schema,
        {d: time_schema for d in dests},
        reference,
    )


def icu_submodel(prob_schema=None, time_schema=None, families=None, reference=StateId.DEATH):
    prob_schema = prob_schema or CovariateSchema()
    time_schema = time_schema or prob_schema
    dests = (StateId.DISCHARGE, StateId.DEATH)
    return SubModelSpec(
        StateId.ICU,
        dests,
        families or ICU_FAMILIES,
        prob_schema,
        {d: time_schema for d in dests},
        reference,
    )


@dataclass
class ParameterSet:
    """Coefficient blocks; the reference destination has an implicit zero gamma block.

    ``beta[d]`` multiplies the destination's time design (intercept included)
    to give the linked value; ``ancillary[d]`` holds the remaining
    parameters on the unconstrained scale (see :mod:`hospmix.distributions`).
    """

    gamma: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    ancillary: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, spec: SubModelSpec):
        return cls(
            {d: np.zeros(len(spec.prob_schema)) for d in spec.contrast_destinations},
            {d: np.zeros(len(spec.time_schemas[d])) for d in spec.destinations},
            {d: np.zeros(len(ANCILLARY_NAMES[spec.families[d]])) for d in spec.destinations},
        )

    def check(self, spec: SubModelSpec):
        for d in spec.contrast_destinations:
            if len(np.atleast_1d(self.gamma.get(d, ()))) != len(spec.prob_schema):
                raise ValidationError(f"gamma block for {d.value} has wrong length")
        for d in spec.destinations:
            if len(np.atleast_1d(self.beta.get(d, ()))) != len(spec.time_schemas[d]):
                raise ValidationError(f"beta block for {d.value} has wrong length")
            if len(np.atleast_1d(self.ancillary.get(d, ()))) != len(ANCILLARY_NAMES[spec.families[d]]):
                raise ValidationError(f"ancillary block for {d.value} has wrong length")

    def to_vector(self, spec: SubModelSpec) -> np.ndarray:
        self.check(spec)
        parts = [np.asarray(self.gamma[d], dtype=float) for d in spec.contrast_destinations]
        for d in spec.destinations:
            parts.append(np.asarray(self.beta[d], dtype=float))
            parts.append(np.asarray(self.ancillary[d], dtype=float))
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, spec: SubModelSpec, vector) -> "ParameterSet":
        vector = np.asarray(vector, dtype=float)
        if len(vector) != n_free_params(spec):
            raise ValidationError(f"expected {n_free_params(spec)} parameters, got {len(vector)}")
        out = cls()
        i = 0
        p = len(spec.prob_schema)
        for d in spec.contrast_destinations:
            out.gamma[d] = vector[i : i + p].copy()
            i += p
        for d in spec.destinations:
            q = len(spec.time_schemas[d])
            out.beta[d] = vector[i : i + q].copy()
            i += q
            a = len(ANCILLARY_NAMES[spec.families[d]])
            out.ancillary[d] = vector[i : i + a].copy()
            i += a
        return out

    def coefficient(self, spec, label):
        """Look up one entry by its :func:`parameter_labels` name."""
        return self.to_vector(spec)[parameter_labels(spec).index(label)]


def n_free_params(spec: SubModelSpec) -> int:
    n = len(spec.prob_schema) * len(spec.contrast_destinations)
    for d in spec.destinations:
        n += len(spec.time_schemas[d]) + len(ANCILLARY_NAMES[spec.families[d]])
    return n


def parameter_labels(spec: SubModelSpec):
    """Names of the free-parameter vector entries, e.g. ``prob[Death]:sex=Male``."""
    labels = []
    for d in spec.contrast_destinations:
        labels.extend(f"prob[{d.value}]:{lab}" for lab in spec.prob_schema.labels)
    for d in spec.destinations:
        labels.extend(f"time[{d.value}]:{lab}" for lab in spec.time_schemas[d].labels)
        labels.extend(f"anc[{d.value}]:{name}" for name in ANCILLARY_NAMES[spec.families[d]])
    return labels


@dataclass(frozen=True)
class TransitionObservation:
    y: float
    origin: StateId
    destination: StateId | None
    delta: Delta
    profile: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "origin", StateId.parse(self.origin))
        if self.destination is not None and self.destination != "":
            object.__setattr__(self, "destination", StateId.parse(self.destination))
        else:
            object.__setattr__(self, "destination", None)
        try:
            object.__setattr__(self, "delta", Delta(int(self.delta)))
        except ValueError:
            raise DataError(f"observation type must be 1, 2 or 3, got {self.delta!r}") from None
        y = float(self.y)
        object.__setattr__(self, "y", y)
        if not np.isfinite(y) or y < 0:
            raise DataError(f"duration must be finite and >= 0, got {y}")
        if self.delta is Delta.EXACT:
            if self.destination is None:
                raise DataError("exact transition without a destination")
            if y <= 0:
                raise DataError(f"exact transition needs a positive duration, got {y}")
        if self.delta is Delta.PARTIAL and self.destination is None:
            raise DataError("partially-known outcome without a destination")


# ---------------------------------------------------------------------------
# transition probabilities and conditional time distributions


def _log_probs(spec: SubModelSpec, gamma, x_prob):
    """Log of the softmax over destinations, rows = observations."""
    x_prob = np.atleast_2d(x_prob)
    eta = np.zeros((x_prob.shape[0], len(spec.destinations)))
    for j, d in enumerate(spec.destinations):
        if d != spec.reference_destination:
            eta[:, j] = x_prob @ np.asarray(gamma[d], dtype=float)
    return eta - logsumexp(eta, axis=1, keepdims=True)


def transition_probs(params: ParameterSet, spec: SubModelSpec, profile) -> dict:
    x = encode(profile, spec.prob_schema).values
    logp = _log_probs(spec, params.gamma, x)[0]
    return {d: float(np.exp(v)) for d, v in zip(spec.destinations, logp)}


def _natural_params(spec, params, destination, x_time):
    eta = np.atleast_2d(x_time) @ np.asarray(params.beta[destination], dtype=float)
    return dist.natural_from_linked(spec.families[destination], eta, params.ancillary[destination])


def conditional_time_spec(params: ParameterSet, spec: SubModelSpec, profile, destination) -> DistributionSpec:
    destination = StateId.parse(destination)
    spec.destination_index(destination)
    family = spec.families[destination]
    x = encode(profile, spec.time_schemas[destination]).values
    eta = float(x @ np.asarray(params.beta[destination], dtype=float))
    baseline = DistributionSpec(family, tuple(float(np.squeeze(v)) for v in dist.natural_from_linked(family, 0.0, params.ancillary[destination])))
    return dist.apply_covariate_shift(baseline, eta)


# ---------------------------------------------------------------------------
# log-likelihood


class CompiledObservations:
    """Observations for one sub-model packed into design matrices and masks."""

    def __init__(self, observations: Sequence[TransitionObservation], spec: SubModelSpec):
        observations = list(observations)
        for obs in observations:
            if obs.origin != spec.origin:
                raise DataError(f"observation from {obs.origin.value} given to the {spec.origin.value} sub-model")
            if obs.destination is not None and obs.destination not in spec.destinations:
                raise DataError(f"destination {obs.destination.value} is not reachable from {spec.origin.value}")
        self.spec = spec
        self.n = len(observations)
        self.y = np.array([o.y for o in observations], dtype=float)
        self.delta = np.array([int(o.delta) for o in observations], dtype=int)
        self.dest = np.array([-1 if o.destination is None else spec.destinations.index(o.destination) for o in observations], dtype=int)
        profiles = [o.profile for o in observations]
        self.x_prob = design_matrix(profiles, spec.prob_schema) if observations else np.zeros((0, len(spec.prob_schema)))
        self.x_time = {
            d: design_matrix(profiles, spec.time_schemas[d]) if observations else np.zeros((0, len(spec.time_schemas[d])))
            for d in spec.destinations
        }
        discharge = spec.destinations.index(StateId.DISCHARGE) if StateId.DISCHARGE in spec.destinations else -2
        self.exact = self.delta == Delta.EXACT
        self.pi_only = (self.delta == Delta.PARTIAL) & (self.dest == discharge)
        self.censored = ~self.exact & ~self.pi_only
        self._exact_by_dest = {j: np.flatnonzero(self.exact & (self.dest == j)) for j in range(len(spec.destinations))}
        self._cens_idx = np.flatnonzero(self.censored)

    def contributions(self, params: ParameterSet) -> np.ndarray:
        spec = self.spec
        out = np.empty(self.n)
        if self.n == 0:
            return out
        log_pi = _log_probs(spec, params.gamma, self.x_prob)
        for j, d in enumerate(spec.destinations):
            idx = self._exact_by_dest[j]
            if idx.size:
                nat = _natural_params(spec, params, d, self.x_time[d][idx])
                out[idx] = log_pi[idx, j] + dist.logpdf(spec.families[d], nat, self.y[idx])
        if self.pi_only.any():
            out[self.pi_only] = log_pi[self.pi_only, self.dest[self.pi_only]]
        idx = self._cens_idx
        if idx.size:
            terms = np.empty((idx.size, len(spec.destinations)))
            for j, d in enumerate(spec.destinations):
                nat = _natural_params(spec, params, d, self.x_time[d][idx])
                terms[:, j] = log_pi[idx, j] + dist.logsf(spec.families[d], nat, self.y[idx])
            out[idx] = logsumexp(terms, axis=1)
            # every survivor is 1 at y = 0, so the mixture is exactly 1
            out[idx[self.y[idx] <= 0]] = 0.0
        return out

    def loglik(self, params: ParameterSet) -> float:
        return float(np.sum(self.contributions(params)))

    def gradient(self, params: ParameterSet) -> np.ndarray:
        """Score vector in :meth:`ParameterSet.to_vector` order."""
        spec = self.spec
        n_dest = len(spec.destinations)
        grad_beta = {d: np.zeros(len(spec.time_schemas[d])) for d in spec.destinations}
        grad_anc = {d: np.zeros(len(params.ancillary[d])) for d in spec.destinations}
        log_pi = _log_probs(spec, params.gamma, self.x_prob)
        pi = np.exp(log_pi)
        # d loglik / d (linear predictor of destination k) = weight_k - pi_k
        weight = np.zeros((self.n, n_dest))
        known = ~self.censored
        weight[np.flatnonzero(known), self.dest[known]] = 1.0

        for j, d in enumerate(spec.destinations):
            idx = self._exact_by_dest[j]
            if idx.size:
                x = self.x_time[d][idx]
                eta = x @ np.asarray(params.beta[d], dtype=float)
                g = dist.logpdf_grad(spec.families[d], eta, params.ancillary[d], self.y[idx])
                grad_beta[d] += x.T @ g[:, 0]
                grad_anc[d] += g[:, 1:].sum(axis=0)

        idx = self._cens_idx
        if idx.size:
            terms = np.empty((idx.size, n_dest))
            sgrads = []
            for j, d in enumerate(spec.destinations):
                x = self.x_time[d][idx]
                eta = x @ np.asarray(params.beta[d], dtype=float)
                nat = dist.natural_from_linked(spec.families[d], eta, params.ancillary[d])
                terms[:, j] = log_pi[idx, j] + dist.logsf(spec.families[d], nat, self.y[idx])
                sgrads.append(dist.logsf_grad(spec.families[d], eta, params.ancillary[d], self.y[idx]))
            post = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
            weight[idx] = post
            for j, d in enumerate(spec.destinations):
                g = sgrads[j] * post[:, j : j + 1]
                grad_beta[d] += self.x_time[d][idx].T @ g[:, 0]
                grad_anc[d] += g[:, 1:].sum(axis=0)

        resid = weight - pi
        parts = []
        for j, d in enumerate(spec.destinations):
            if d != spec.reference_destination:
                parts.append((j, self.x_prob.T @ resid[:, j]))
        out = [v for _, v in parts]
        for d in spec.destinations:
            out.append(grad_beta[d])
            out.append(grad_anc[d])
        return np.concatenate(out) if out else np.zeros(0)


def observation_loglik(obs: TransitionObservation, params: ParameterSet, spec: SubModelSpec) -> float:
    return float(CompiledObservations([obs], spec).contributions(params)[0])


def dataset_loglik(observations, params: ParameterSet, spec: SubModelSpec) -> float:
    """Sum of per-observation contributions, reduced in input order.

    Raises :class:`ImpossibleDataError` when any contribution is -inf or NaN
    rather than returning a non-finite number.
    """
    if isinstance(observations, CompiledObservations):
        compiled = observations
    else:
        compiled = CompiledObservations(observations, spec)
    contrib = compiled.contributions(params)
    bad = ~np.isfinite(contrib)
    if bad.any():
        raise ImpossibleDataError(f"{int(bad.sum())} observation(s) have zero likelihood, first at index {int(np.flatnonzero(bad)[0])}")
    return float(np.sum(contrib))


__all__ = [
    "StateId",
    "Delta",
    "SubModelSpec",
    "ParameterSet",
    "TransitionObservation",
    "CompiledObservations",
    "hospital_submodel",
    "icu_submodel",
    "n_free_params",
    "parameter_labels",
    "transition_probs",
    "conditional_time_spec",
    "observation_loglik",
    "dataset_loglik",
    "INTERCEPT",
]
