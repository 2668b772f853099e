"""Synthetic cohorts drawn through the Hospital -> (ICU) -> outcome pathway.

True pathways are generated from known parameters of the two sub-models and
then passed through the censoring mechanisms of the surveillance data, giving
raw records in the :mod:`hospmix.dataio` schema together with the truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import distributions as dist
from .dataio import COVARIATE_COLUMNS, DEFAULT_EPOCH, LastStatus, RawRecord, UNREPORTED, month_group
from .design import DEFAULT_LEVELS, design_matrix
from .errors import ValidationError
from .model import ParameterSet, StateId, SubModelSpec, _log_probs, _natural_params


@dataclass(frozen=True)
class CensoringConfig:
    extraction_offset: float = math.inf
    ward_cap: float = 60.0
    icu_cap: float = 90.0
    p_truly_missing: float = 0.0
    p_transfer: float = 0.0
    p_partial_discharge: float = 0.0

    def __post_init__(self):
        if not (self.ward_cap > 0 and self.icu_cap > 0):
            raise ValidationError("censoring caps must be positive")
        for name in ("p_truly_missing", "p_transfer", "p_partial_discharge"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class TruePathway:
    """Times are days since hospital admission; ``icu_time`` is None without ICU."""

    outcome: StateId
    outcome_time: float
    icu_time: float | None = None

    @property
    def states(self):
        path = [StateId.HOSPITAL]
        if self.icu_time is not None:
            path.append(StateId.ICU)
        path.append(self.outcome)
        return tuple(path)


@dataclass(frozen=True)
class SimulatedRecord:
    truth: TruePathway
    observed: RawRecord


# ---------------------------------------------------------------------------


def _draw_next(spec: SubModelSpec, params: ParameterSet, profiles, rng):
    """Destination index and duration for each profile, vectorised by destination."""
    n = len(profiles)
    log_pi = _log_probs(spec, params.gamma, design_matrix(profiles, spec.prob_schema))
    cum = np.cumsum(np.exp(log_pi), axis=1)
    u = rng.random(n)
    dest = np.minimum((u[:, None] > cum).sum(axis=1), len(spec.destinations) - 1)
    times = np.empty(n)
    for j, d in enumerate(spec.destinations):
        idx = np.flatnonzero(dest == j)
        if idx.size == 0:
            continue
        x = design_matrix([profiles[i] for i in idx], spec.time_schemas[d])
        nat = _natural_params(spec, params, d, x)
        fam = spec.families[d]
        if fam is dist.Family.GENGAMMA:
            mu, s, q = nat
            qv = float(np.ravel(q)[0])
            if abs(qv) < dist.GENGAMMA_LOGNORMAL_SWITCH:
                times[idx] = rng.lognormal(np.ravel(mu), np.ravel(s))
            else:
                k = 1.0 / (qv * qv)
                g = rng.standard_gamma(k, size=idx.size)
                times[idx] = np.exp(np.ravel(mu) + np.ravel(s) * np.log(g / k) / qv)
        else:
            times[idx] = dist.sample(fam, tuple(np.ravel(v) * np.ones(idx.size) for v in nat), rng, size=idx.size)
    return dest, times


def simulate_pathways(params_h, params_icu, spec_h: SubModelSpec, spec_icu: SubModelSpec, profiles, rng):
    """One true pathway per profile; the clock resets on ICU entry."""
    profiles = list(profiles)
    dest_h, t_h = _draw_next(spec_h, params_h, profiles, rng)
    icu_j = spec_h.destinations.index(StateId.ICU) if StateId.ICU in spec_h.destinations else -1
    icu_rows = np.flatnonzero(dest_h == icu_j)
    out = [None] * len(profiles)
    if icu_rows.size:
        dest_i, t_i = _draw_next(spec_icu, params_icu, [profiles[i] for i in icu_rows], rng)
        for k, i in enumerate(icu_rows):
            out[i] = TruePathway(spec_icu.destinations[dest_i[k]], float(t_h[i] + t_i[k]), float(t_h[i]))
    for i in range(len(profiles)):
        if out[i] is None:
            out[i] = TruePathway(spec_h.destinations[dest_h[i]], float(t_h[i]))
    return out


def simulate_pathway(params_h, params_icu, spec_h, spec_icu, profile, rng) -> TruePathway:
    return simulate_pathways(params_h, params_icu, spec_h, spec_icu, [profile], rng)[0]


def apply_censoring(
    pathway: TruePathway,
    config: CensoringConfig,
    entry_day: float,
    uniforms=None,
    rng=None,
    record_id="",
    covariates: Mapping[str, str] | None = None,
) -> RawRecord:
    """Observed view of a true pathway.

    Precedence: events after the extraction day become "still in care" at
    extraction (the 60/90-day caps are applied when observations are
    derived); then a transfer at a uniform fraction of the true stay; then a
    truly missing outcome; finally an ICU discharge may lose its date.

    ``uniforms`` supplies the four U(0,1) draws (transfer flag, transfer
    fraction, missing flag, partial flag); otherwise they come from ``rng``.
    """
    if uniforms is None:
        uniforms = rng.random(4)
    u_tr, u_frac, u_miss, u_part = uniforms
    cov = {c: UNREPORTED for c in COVARIATE_COLUMNS}
    cov.update(covariates or {})
    adm = entry_day
    icu_abs = adm + pathway.icu_time if pathway.icu_time is not None else None
    out_abs = adm + pathway.outcome_time
    extraction = config.extraction_offset
    if extraction < adm:
        raise ValidationError(f"admission day {adm} falls after the extraction day {extraction}")

    icu_day = icu_abs
    outcome, outcome_day = pathway.outcome, out_abs
    status, status_day = None, None
    if out_abs > extraction:
        outcome = outcome_day = None
        if icu_abs is not None and icu_abs <= extraction:
            status = LastStatus.STILL_IN_ICU
        else:
            status = LastStatus.STILL_IN_HOSPITAL
            icu_day = None
        status_day = extraction

    if u_tr < config.p_transfer:
        end = outcome_day if outcome_day is not None else status_day
        transfer_day = adm + u_frac * (out_abs - adm)
        if transfer_day < end:
            outcome = outcome_day = None
            status, status_day = LastStatus.TRANSFERRED, transfer_day
            if icu_day is not None and icu_day > transfer_day:
                icu_day = None

    if outcome is not None and u_miss < config.p_truly_missing:
        outcome = outcome_day = None
        status, status_day = LastStatus.UNKNOWN, None

    if (
        outcome is StateId.DISCHARGE
        and icu_day is not None
        and u_part < config.p_partial_discharge
    ):
        outcome_day = None

    return RawRecord(
        id=str(record_id),
        admission_day=adm,
        icu_day=icu_day,
        outcome=outcome,
        outcome_day=outcome_day,
        last_status=status,
        last_status_day=status_day,
        **cov,
    )


@dataclass(frozen=True)
class CohortDesign:
    """How simulated admissions are spread over time and covariate levels."""

    admission_window: int = 292
    epoch_offset: int = 14  # first admission day index (15 March with the default epoch)
    level_probs: Mapping = field(default_factory=dict)  # column -> {level: prob}

    def draw_covariates(self, n, rng):
        out = {}
        for col in COVARIATE_COLUMNS:
            spec = self.level_probs.get(col)
            if spec is None:
                levels, p = list(DEFAULT_LEVELS[col]), None
            else:
                levels = list(spec)
                p = np.array([float(spec[k]) for k in levels])
                p = p / p.sum()
            out[col] = rng.choice(len(levels), size=n, p=p)
            out[col] = [levels[i] for i in out[col]]
        return out


def simulate_cohort(
    n,
    params_h: ParameterSet,
    params_icu: ParameterSet,
    spec_h: SubModelSpec,
    spec_icu: SubModelSpec,
    censoring: CensoringConfig = CensoringConfig(),
    design: CohortDesign = CohortDesign(),
    seed=0,
    epoch=DEFAULT_EPOCH,
) -> list[SimulatedRecord]:
    """Draw ``n`` admissions; output depends only on the arguments and ``seed``."""
    rng = np.random.default_rng(seed)
    entry = design.epoch_offset + rng.integers(0, design.admission_window, size=n)
    covs = design.draw_covariates(n, rng)
    profiles = []
    for i in range(n):
        prof = {c: covs[c][i] for c in COVARIATE_COLUMNS}
        prof["month"] = month_group(int(entry[i]), epoch) or UNREPORTED
        profiles.append(prof)
    paths = simulate_pathways(params_h, params_icu, spec_h, spec_icu, profiles, rng)
    u = rng.random((n, 4))
    width = len(str(max(n - 1, 0)))
    records = []
    for i in range(n):
        rec = apply_censoring(
            paths[i],
            censoring,
            int(entry[i]),
            uniforms=u[i],
            record_id=f"S{i:0{width}d}",
            covariates={c: covs[c][i] for c in COVARIATE_COLUMNS},
        )
        records.append(SimulatedRecord(paths[i], rec))
    return records


TRUTH_COLUMNS = ("id", "admission_day", "icu_time", "outcome", "outcome_time")


def write_truth(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for r in records:
            t = r.truth
            w.writerow(
                [
                    r.observed.id,
                    r.observed.admission_day,
                    "" if t.icu_time is None else repr(t.icu_time),
                    t.outcome.value,
                    repr(t.outcome_time),
                ]
            )


def parameters_from_labels(spec: SubModelSpec, values: Mapping[str, float]) -> ParameterSet:
    """ParameterSet from ``{label: value}`` (see :func:`hospmix.model.parameter_labels`); others zero."""
    from .model import n_free_params, parameter_labels

    labels = parameter_labels(spec)
    theta = np.zeros(n_free_params(spec))
    for k, v in values.items():
        if k not in labels:
            raise ValidationError(f"unknown parameter label {k!r}; expected one of {labels}")
        theta[labels.index(k)] = float(v)
    return ParameterSet.from_vector(spec, theta)
