"""Derived quantities of fitted sub-models, with 95% uncertainty intervals.

Intervals for nonlinear quantities (probabilities, HFR, quantiles) come from
``B`` draws of the coefficient vector from its asymptotic normal
distribution; odds ratios and expected time ratios use back-transformed Wald
intervals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from . import distributions as dist
from .design import encode
from .errors import ValidationError
from .estimation import FittedSubModel
from .model import StateId, conditional_time_spec, transition_probs

DEFAULT_DRAWS = 1000


class Quantity(str, enum.Enum):
    NEXT_EVENT_PROB = "NextEventProb"
    HFR = "HFR"
    TIME_QUANTILE = "TimeQuantile"
    ODDS_RATIO = "OddsRatio"
    EXPECTED_TIME_RATIO = "ExpectedTimeRatio"


@dataclass(frozen=True)
class PredictionResult:
    quantity: Quantity
    point: float
    ci95: tuple
    profile: Mapping = field(default_factory=dict)
    destination: StateId | None = None
    label: str = ""
    iqr: tuple | None = None


def _draws(fit: FittedSubModel, n_draws, rng):
    if n_draws <= 0:
        return fit.theta[None, :]
    return rng.multivariate_normal(fit.theta, fit.covariance, size=n_draws, method="eigh")


def _interval(values):
    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi)


def _block(fit, prefix):
    idx = [i for i, lab in enumerate(fit.labels) if lab.startswith(prefix)]
    return np.array(idx, dtype=int)


def _log_probs_for_draws(fit: FittedSubModel, thetas, profile):
    """(draws x destinations) log probabilities at one profile."""
    spec = fit.spec
    x = encode(profile, spec.prob_schema).values
    eta = np.zeros((thetas.shape[0], len(spec.destinations)))
    for j, d in enumerate(spec.destinations):
        if d != spec.reference_destination:
            eta[:, j] = thetas[:, _block(fit, f"prob[{d.value}]:")] @ x
    return eta - logsumexp(eta, axis=1, keepdims=True)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def next_event_probs(fit: FittedSubModel, profile, n_draws=DEFAULT_DRAWS, seed=0):
    """Probability of each next event at ``profile``; dict keyed by destination."""
    fit.spec.prob_schema.validate(profile)
    point = transition_probs(fit.mle, fit.spec, profile)
    sims = np.exp(_log_probs_for_draws(fit, _draws(fit, n_draws, _rng(seed)), profile))
    return {
        d: PredictionResult(Quantity.NEXT_EVENT_PROB, point[d], _interval(sims[:, j]), dict(profile), d)
        for j, d in enumerate(fit.spec.destinations)
    }


def hfr_from_probs(p_death, p_icu, p_icu_death):
    """Fatality risk averaged over the ward-only and ICU pathways."""
    return p_death + p_icu * p_icu_death


def _check_shared_factors(fit_a, fit_b):
    def factors(fit):
        out = {f.name: f for f in fit.spec.prob_schema.factors}
        return out

    fa, fb = factors(fit_a), factors(fit_b)
    for name in set(fa) & set(fb):
        if fa[name].levels != fb[name].levels or fa[name].reference != fb[name].reference:
            raise ValidationError(f"factor {name!r} is coded differently in the two sub-models")


def hfr(fit_hospital: FittedSubModel, fit_icu: FittedSubModel, profile, n_draws=DEFAULT_DRAWS, seed=0):
    """Hospitalised fatality risk; the sub-models are drawn independently."""
    if fit_hospital.spec.origin is not StateId.HOSPITAL or fit_icu.spec.origin is not StateId.ICU:
        raise ValidationError("hfr needs a From-Hospital fit and a From-ICU fit")
    _check_shared_factors(fit_hospital, fit_icu)
    fit_hospital.spec.prob_schema.validate(profile)
    fit_icu.spec.prob_schema.validate(profile)
    ph = transition_probs(fit_hospital.mle, fit_hospital.spec, profile)
    pi = transition_probs(fit_icu.mle, fit_icu.spec, profile)
    point = hfr_from_probs(ph[StateId.DEATH], ph[StateId.ICU], pi[StateId.DEATH])
    rng = _rng(seed)
    sim_h = np.exp(_log_probs_for_draws(fit_hospital, _draws(fit_hospital, n_draws, rng), profile))
    sim_i = np.exp(_log_probs_for_draws(fit_icu, _draws(fit_icu, n_draws, rng), profile))
    dh = fit_hospital.spec.destinations
    di = fit_icu.spec.destinations
    sims = hfr_from_probs(
        sim_h[:, dh.index(StateId.DEATH)],
        sim_h[:, dh.index(StateId.ICU)],
        sim_i[:, di.index(StateId.DEATH)],
    )
    return PredictionResult(Quantity.HFR, float(point), _interval(sims), dict(profile), StateId.DEATH)


def time_quantiles(fit: FittedSubModel, profile, destination, probs=(0.25, 0.5, 0.75), n_draws=DEFAULT_DRAWS, seed=0):
    """Quantiles of the conditional time to ``destination``.

    Returns ``(result, quantiles)`` where ``result`` is the median with its
    interval (and the IQR when 0.25/0.75 are requested) and ``quantiles``
    maps each requested probability to its point value.
    """
    destination = StateId.parse(destination)
    fit.spec.destination_index(destination)
    probs = tuple(float(p) for p in probs)
    if any(not 0 < p < 1 for p in probs):
        raise ValidationError(f"quantile probabilities must lie in (0, 1), got {probs}")
    spec = fit.spec
    spec.time_schemas[destination].validate(profile)
    at_mle = conditional_time_spec(fit.mle, spec, profile, destination)
    qs = np.atleast_1d(at_mle.quantile(np.array(probs)))
    quantiles = dict(zip(probs, (float(v) for v in qs)))

    x = encode(profile, spec.time_schemas[destination]).values
    thetas = _draws(fit, n_draws, _rng(seed))
    eta = thetas[:, _block(fit, f"time[{destination.value}]:")] @ x
    anc = thetas[:, _block(fit, f"anc[{destination.value}]:")]
    family = spec.families[destination]
    nat = dist.natural_from_linked(family, eta, [anc[:, k] for k in range(anc.shape[1])])
    medians = dist.quantile(family, nat, 0.5)
    median = float(at_mle.quantile(0.5))
    iqr = (quantiles[0.25], quantiles[0.75]) if 0.25 in quantiles and 0.75 in quantiles else None
    result = PredictionResult(Quantity.TIME_QUANTILE, median, _interval(medians), dict(profile), destination, "median", iqr)
    return result, quantiles


def _ratio_rows(fit: FittedSubModel, schema, prefix, factor, quantity, destination):
    f = schema.factor(factor)
    z = norm.ppf(0.975)
    rows = [PredictionResult(quantity, 1.0, (1.0, 1.0), {factor: f.reference}, destination, f"{factor}={f.reference} (ref.)")]
    for level in f.contrasts:
        i = fit.index(f"{prefix}{factor}={level}")
        coef, se = fit.theta[i], fit.standard_errors[i]
        rows.append(
            PredictionResult(
                quantity,
                float(np.exp(coef)),
                (float(np.exp(coef - z * se)), float(np.exp(coef + z * se))),
                {factor: level},
                destination,
                f"{factor}={level}",
            )
        )
    return rows


def odds_ratios(fit: FittedSubModel, factor):
    """Odds ratios (vs the reference destination) for each level of ``factor``."""
    spec = fit.spec
    spec.prob_schema.factor(factor)
    out = []
    for d in spec.contrast_destinations:
        out.extend(_ratio_rows(fit, spec.prob_schema, f"prob[{d.value}]:", factor, Quantity.ODDS_RATIO, d))
    return out


def expected_time_ratios(fit: FittedSubModel, factor, destination):
    destination = StateId.parse(destination)
    fit.spec.destination_index(destination)
    schema = fit.spec.time_schemas[destination]
    schema.factor(factor)
    return _ratio_rows(fit, schema, f"time[{destination.value}]:", factor, Quantity.EXPECTED_TIME_RATIO, destination)


def parametric_cif(fit: FittedSubModel, profile, destination, t_grid):
    """pi_s(x) * F_s(t | x) on ``t_grid``."""
    destination = StateId.parse(destination)
    p = transition_probs(fit.mle, fit.spec, profile)[destination]
    return p * conditional_time_spec(fit.mle, fit.spec, profile, destination).cdf(np.asarray(t_grid, dtype=float))


def average_cif(fit: FittedSubModel, profiles, destination, t_grid):
    """Parametric CIF averaged over a sample of profiles (each weighted by its count)."""
    names = fit.spec.factor_names
    counts = {}
    for prof in profiles:
        key = tuple((n, prof[n]) for n in names)
        counts[key] = counts.get(key, 0) + 1
    if not counts:
        raise ValidationError("average_cif needs at least one profile")
    t_grid = np.asarray(t_grid, dtype=float)
    total = np.zeros_like(t_grid)
    for key, k in counts.items():
        total += k * parametric_cif(fit, dict(key), destination, t_grid)
    return total / sum(counts.values())


__all__ = [
    "Quantity",
    "PredictionResult",
    "next_event_probs",
    "hfr",
    "hfr_from_probs",
    "time_quantiles",
    "odds_ratios",
    "expected_time_ratios",
    "parametric_cif",
    "average_cif",
]
