"""Patient-level CSV ingestion and conversion to sub-model observations.

Raw cohort CSV (comma-delimited, UTF-8, header required, empty field = missing)::

    id, admission_day, icu_day, outcome, outcome_day, last_status,
    last_status_day, sex, age_group, region, ethnicity, comorbidity_count

Days are indices relative to a cohort epoch (fractional days are accepted).
``outcome`` is Discharge or Death; ``last_status`` is one of StillInHospital,
StillInICU, Transferred, Unknown and describes records without a dated
outcome.  A record with an outcome but no outcome day is a partially-known
outcome.

Fit-ready observation CSV::

    origin, y, destination, delta, <factor columns...>
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .design import DEFAULT_LEVELS
from .errors import DataError
from .model import Delta, StateId, TransitionObservation

RAW_COLUMNS = (
    "id",
    "admission_day",
    "icu_day",
    "outcome",
    "outcome_day",
    "last_status",
    "last_status_day",
    "sex",
    "age_group",
    "region",
    "ethnicity",
    "comorbidity_count",
)
COVARIATE_COLUMNS = ("sex", "age_group", "region", "ethnicity", "comorbidity_count")
UNREPORTED = "Unreported"
_MISSING_MARKERS = {"", "unreported", "unknown", "na", "missing"}

# Jun/Jul/Aug pooled; Jan/Feb fall outside the study months
MONTH_GROUPS = {3: "Mar", 4: "Apr", 5: "May", 6: "Jun/Jul/Aug", 7: "Jun/Jul/Aug", 8: "Jun/Jul/Aug", 9: "Sep", 10: "Oct", 11: "Nov", 12: "Dec"}
DEFAULT_EPOCH = dt.date(2020, 3, 1)


class LastStatus(str, enum.Enum):
    STILL_IN_HOSPITAL = "StillInHospital"
    STILL_IN_ICU = "StillInICU"
    TRANSFERRED = "Transferred"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class CensoringRules:
    ward_cap: float = 60.0
    icu_cap: float = 90.0
    zero_duration: float = 0.5


@dataclass(frozen=True)
class RawRecord:
    id: str
    admission_day: float
    icu_day: float | None = None
    outcome: StateId | None = None
    outcome_day: float | None = None
    last_status: LastStatus | None = None
    last_status_day: float | None = None
    sex: str = UNREPORTED
    age_group: str = UNREPORTED
    region: str = UNREPORTED
    ethnicity: str = UNREPORTED
    comorbidity_count: str = UNREPORTED

    def validate(self):
        adm = self.admission_day
        if self.icu_day is not None and self.icu_day < adm:
            raise DataError(f"record {self.id}: icu_day {self.icu_day} precedes admission_day {adm}")
        if self.outcome_day is not None:
            if self.outcome is None:
                raise DataError(f"record {self.id}: outcome_day given without an outcome")
            if self.outcome_day < adm:
                raise DataError(f"record {self.id}: outcome_day precedes admission_day")
            if self.icu_day is not None and self.outcome_day < self.icu_day:
                raise DataError(f"record {self.id}: outcome_day precedes icu_day")
            if self.last_status is not None:
                raise DataError(f"record {self.id}: both a dated outcome and a last status")
        if self.outcome is not None and self.outcome not in (StateId.DISCHARGE, StateId.DEATH):
            raise DataError(f"record {self.id}: outcome must be Discharge or Death")
        if self.outcome is None and self.last_status is None:
            raise DataError(f"record {self.id}: neither an outcome nor a last status")
        if self.last_status is LastStatus.STILL_IN_ICU and self.icu_day is None:
            raise DataError(f"record {self.id}: StillInICU without an icu_day")
        if self.last_status is LastStatus.TRANSFERRED and self.last_status_day is None:
            raise DataError(f"record {self.id}: Transferred without a last_status_day")
        if self.last_status_day is not None:
            floor = self.icu_day if self.icu_day is not None else adm
            if self.last_status_day < floor:
                raise DataError(f"record {self.id}: last_status_day precedes the last known event")
        return self


def month_group(admission_day, epoch=DEFAULT_EPOCH):
    """Study month group of an admission day index, or None outside Mar-Dec."""
    day = epoch + dt.timedelta(days=math.floor(admission_day))
    return MONTH_GROUPS.get(day.month)


def record_profile(record: RawRecord, epoch=DEFAULT_EPOCH) -> dict:
    prof = {c: getattr(record, c) for c in COVARIATE_COLUMNS}
    prof["month"] = month_group(record.admission_day, epoch) or UNREPORTED
    return prof


# ---------------------------------------------------------------------------
# CSV


def _parse_day(text, row, column):
    text = text.strip()
    if text == "":
        return None
    try:
        value = int(text)
    except ValueError:
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"row {row}, column {column}: cannot parse day {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {column}: non-finite day {text!r}")
    return value


def _format_day(value):
    if value is None:
        return ""
    if isinstance(value, int) or float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def _parse_level(text, row, column, levels):
    text = text.strip()
    if text.lower() in _MISSING_MARKERS:
        return UNREPORTED
    if levels is not None and column in levels and text not in levels[column]:
        raise DataError(f"row {row}, column {column}: unknown level {text!r} (expected one of {list(levels[column])})")
    return text


def parse_cohort(source, levels: Mapping[str, Sequence[str]] | None = DEFAULT_LEVELS) -> list[RawRecord]:
    """Read raw records from a path or text stream; row numbers count the header as 1."""
    if hasattr(source, "read"):
        return _parse_cohort_stream(source, levels)
    with open(source, encoding="utf-8", newline="") as fh:
        return _parse_cohort_stream(fh, levels)


def _parse_cohort_stream(fh, levels):
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise DataError("cohort file has no header row")
    missing = [c for c in RAW_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise DataError(f"cohort file is missing required column(s): {missing}")
    records = []
    for row_no, row in enumerate(reader, start=2):
        try:
            outcome = row["outcome"].strip()
            status = row["last_status"].strip()
            adm = _parse_day(row["admission_day"], row_no, "admission_day")
            if adm is None:
                raise DataError(f"row {row_no}, column admission_day: missing value")
            try:
                outcome_v = StateId.parse(outcome) if outcome else None
            except ValueError:
                raise DataError(f"row {row_no}, column outcome: unknown outcome {outcome!r}") from None
            try:
                status_v = LastStatus(status) if status else None
            except ValueError:
                raise DataError(f"row {row_no}, column last_status: unknown status {status!r}") from None
            rec = RawRecord(
                id=row["id"].strip(),
                admission_day=adm,
                icu_day=_parse_day(row["icu_day"], row_no, "icu_day"),
                outcome=outcome_v,
                outcome_day=_parse_day(row["outcome_day"], row_no, "outcome_day"),
                last_status=status_v,
                last_status_day=_parse_day(row["last_status_day"], row_no, "last_status_day"),
                **{c: _parse_level(row[c], row_no, c, levels) for c in COVARIATE_COLUMNS},
            )
            rec.validate()
        except DataError as exc:
            msg = str(exc)
            if not msg.startswith("row "):
                msg = f"row {row_no}: {msg}"
            raise DataError(msg) from None
        records.append(rec)
    return records


def write_cohort(records: Iterable[RawRecord], target):
    if hasattr(target, "write"):
        _write_cohort_stream(records, target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write_cohort_stream(records, fh)


def _write_cohort_stream(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in records:
        w.writerow(
            [
                r.id,
                _format_day(r.admission_day),
                _format_day(r.icu_day),
                r.outcome.value if r.outcome else "",
                _format_day(r.outcome_day),
                r.last_status.value if r.last_status else "",
                _format_day(r.last_status_day),
                *(getattr(r, c) for c in COVARIATE_COLUMNS),
            ]
        )


def cohort_to_text(records) -> str:
    buf = io.StringIO()
    _write_cohort_stream(records, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# censoring rules


def _exact(y, origin, dest, profile, rules):
    if y < 0:
        raise DataError(f"negative duration {y}")
    if y == 0:
        y = rules.zero_duration
    return TransitionObservation(y, origin, dest, Delta.EXACT, profile)


def _censored(y, origin, profile, delta=Delta.RIGHT_CENSORED, dest=None):
    return TransitionObservation(max(y, 0.0), origin, dest, delta, profile)


def derive_observations(record: RawRecord, extraction_day=math.inf, rules: CensoringRules = CensoringRules(), epoch=DEFAULT_EPOCH):
    """Hospital observation and, when ICU was entered, the ICU observation.

    Still-in-care records are censored at the extraction day (or the
    ``last_status_day`` when given), capped at ``rules.ward_cap`` days in the
    ward and ``rules.icu_cap`` days in ICU.  Transfers are censored at the
    transfer day; unknown status at the last observed event.  Records with an
    outcome but no outcome day become partially-known outcomes.
    """
    record.validate()
    profile = record_profile(record, epoch)
    adm = record.admission_day
    icu = record.icu_day
    status = record.last_status

    def end_day(entry):
        if status in (LastStatus.STILL_IN_HOSPITAL, LastStatus.STILL_IN_ICU):
            day = record.last_status_day if record.last_status_day is not None else extraction_day
            if not math.isfinite(day):
                raise DataError(f"record {record.id}: still in care but no extraction day is known")
            if day < entry:
                raise DataError(f"record {record.id}: extraction day {day} precedes entry day {entry}")
            return day
        if status is LastStatus.TRANSFERRED:
            return record.last_status_day
        # unknown status, or a partial outcome: last observed event
        return record.last_status_day if record.last_status_day is not None else entry

    if icu is not None:
        hosp = _exact(icu - adm, StateId.HOSPITAL, StateId.ICU, profile, rules)
    elif record.outcome is not None and record.outcome_day is not None:
        hosp = _exact(record.outcome_day - adm, StateId.HOSPITAL, record.outcome, profile, rules)
    elif record.outcome is not None:
        hosp = _censored(end_day(adm) - adm, StateId.HOSPITAL, profile, Delta.PARTIAL, record.outcome)
    else:
        y = end_day(adm) - adm
        if status is LastStatus.STILL_IN_HOSPITAL:
            y = min(y, rules.ward_cap)
        hosp = _censored(y, StateId.HOSPITAL, profile)

    if icu is None:
        return hosp, None
    if record.outcome is not None and record.outcome_day is not None:
        icu_obs = _exact(record.outcome_day - icu, StateId.ICU, record.outcome, profile, rules)
    elif record.outcome is not None:
        icu_obs = _censored(end_day(icu) - icu, StateId.ICU, profile, Delta.PARTIAL, record.outcome)
    else:
        y = end_day(icu) - icu
        if status in (LastStatus.STILL_IN_HOSPITAL, LastStatus.STILL_IN_ICU):
            y = min(y, rules.icu_cap)
        icu_obs = _censored(y, StateId.ICU, profile)
    return hosp, icu_obs


def cohort_observations(records, extraction_day=math.inf, rules=CensoringRules(), epoch=DEFAULT_EPOCH):
    """Split a cohort into (hospital observations, ICU observations)."""
    hosp, icu = [], []
    for r in records:
        h, i = derive_observations(r, extraction_day, rules, epoch)
        hosp.append(h)
        if i is not None:
            icu.append(i)
    return hosp, icu


# ---------------------------------------------------------------------------
# exclusions and summaries


def _is_unreported(record, factor, epoch):
    if factor == "month":
        return month_group(record.admission_day, epoch) is None
    return getattr(record, factor) == UNREPORTED


def apply_exclusions(cohort: Sequence[RawRecord], active_factors: Sequence[str], epoch=DEFAULT_EPOCH):
    """Drop records with an unreported level of any active factor.

    Returns the kept records and a report with per-factor counts (a record
    may count under several factors) and the total excluded.
    """
    for f in active_factors:
        if f != "month" and f not in COVARIATE_COLUMNS:
            raise DataError(f"unknown covariate {f!r}")
    kept = []
    per_factor = Counter()
    for r in cohort:
        bad = [f for f in active_factors if _is_unreported(r, f, epoch)]
        for f in bad:
            per_factor[f] += 1
        if not bad:
            kept.append(r)
    report = {"total": len(cohort) - len(kept), "by_factor": {f: per_factor.get(f, 0) for f in active_factors}}
    return kept, report


SUMMARY_FACTORS = ("sex", "age_group", "region", "ethnicity", "comorbidity_count")


def summarize_cohort(cohort: Sequence[RawRecord], factors=SUMMARY_FACTORS, epoch=DEFAULT_EPOCH):
    """Counts and percentages of each factor level within each admission month.

    Returns ``(months, rows)``; each row is ``{"factor", "level", "counts":
    {month: n}, "percent": {month: pct}}``.  Unreported levels get their own
    row.
    """
    months = [m for m in DEFAULT_LEVELS["month"]]
    by_month = Counter()
    cells = Counter()
    for r in cohort:
        m = month_group(r.admission_day, epoch) or UNREPORTED
        by_month[m] += 1
        for f in factors:
            cells[(f, getattr(r, f), m)] += 1
    if by_month.get(UNREPORTED):
        months.append(UNREPORTED)
    rows = [{"factor": "all", "level": "All", "counts": {m: by_month.get(m, 0) for m in months}, "percent": {m: 100.0 if by_month.get(m) else 0.0 for m in months}}]
    for f in factors:
        levels = list(DEFAULT_LEVELS.get(f, ()))
        extra = sorted({lv for (ff, lv, _m) in cells if ff == f and lv not in levels})
        for lv in levels + extra:
            counts = {m: cells.get((f, lv, m), 0) for m in months}
            pct = {m: (100.0 * counts[m] / by_month[m]) if by_month.get(m) else 0.0 for m in months}
            rows.append({"factor": f, "level": lv, "counts": counts, "percent": pct})
    return months, rows


def write_summary(months, rows, target):
    with open(target, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["factor", "level"]
        for m in months:
            header += [f"{m} n", f"{m} %"]
        w.writerow(header)
        for row in rows:
            out = [row["factor"], row["level"]]
            for m in months:
                out += [row["counts"][m], f"{row['percent'][m]:.1f}"]
            w.writerow(out)


# ---------------------------------------------------------------------------
# observation interchange


OBS_COLUMNS = ("origin", "y", "destination", "delta")
PROFILE_COLUMNS = ("month",) + COVARIATE_COLUMNS


def write_observations(observations: Iterable[TransitionObservation], target, factor_columns=PROFILE_COLUMNS):
    with open(target, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_COLUMNS + tuple(factor_columns))
        for o in observations:
            w.writerow(
                [
                    o.origin.value,
                    repr(float(o.y)),
                    o.destination.value if o.destination is not None else "",
                    int(o.delta),
                    *(o.profile.get(c, "") for c in factor_columns),
                ]
            )


def read_observations(path) -> list[TransitionObservation]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in OBS_COLUMNS):
            raise DataError(f"{path}: observation file needs columns {OBS_COLUMNS}")
        factors = [c for c in reader.fieldnames if c not in OBS_COLUMNS]
        out = []
        for row_no, row in enumerate(reader, start=2):
            try:
                out.append(
                    TransitionObservation(
                        float(row["y"]),
                        row["origin"],
                        row["destination"] or None,
                        int(row["delta"]),
                        {c: row[c] for c in factors},
                    )
                )
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
    return out
