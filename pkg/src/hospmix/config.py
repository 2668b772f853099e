"""TOML run configuration, validated in full before any computation.

Example::

    seed = 42

    [model]
    factors = ["month", "sex"]
    interactions = []

    [model.hospital]
    families = { Discharge = "GenGamma", Death = "Gamma", ICU = "LogNormal" }

    [censoring]
    extraction_day = 320

    [simulate]
    n = 20000

    [simulate.truth.hospital]
    "prob[Death]:(Intercept)" = 0.8

    [paths]
    cohort = "cohort.csv"
    output = "out"

Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataio import CensoringRules
from .design import DEFAULT_LEVELS, DEFAULT_REFERENCES, CovariateSchema, Factor
from .distributions import Family
from .errors import ConfigError, HospmixError
from .estimation import FitOptions
from .model import HOSPITAL_FAMILIES, ICU_FAMILIES, StateId, SubModelSpec, hospital_submodel, icu_submodel, parameter_labels
from .simulation import CensoringConfig, CohortDesign


def _take(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    return table


def _number(value, where, *, minimum=None, integer=False, allow_inf=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if math.isnan(value) or (math.isinf(value) and not allow_inf):
        raise ConfigError(f"{where} must be finite, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where} must be >= {minimum}, got {value!r}")
    return value


def _strings(value, where):
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where} must be a list of strings")
    return list(value)


@dataclass(frozen=True)
class SubModelConfig:
    families: Mapping
    prob_factors: tuple
    time_factors: tuple
    fixed: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    schema: CovariateSchema = field(default_factory=CovariateSchema)
    hospital: SubModelConfig = None
    icu: SubModelConfig = None
    rules: CensoringRules = field(default_factory=CensoringRules)
    extraction_day: float = math.inf
    fit: FitOptions = field(default_factory=FitOptions)
    simulate_n: int = 1000
    censoring: CensoringConfig = field(default_factory=CensoringConfig)
    design: CohortDesign = field(default_factory=CohortDesign)
    truth_hospital: Mapping = field(default_factory=dict)
    truth_icu: Mapping = field(default_factory=dict)
    draws: int = 1000
    quantile_probs: tuple = (0.25, 0.5, 0.75)
    paths: Mapping = field(default_factory=dict)

    def _sub_schema(self, names):
        return CovariateSchema(
            tuple(self.schema.factor(n) for n in names),
            tuple(p for p in self.schema.interactions if p[0] in names and p[1] in names),
        )

    def hospital_spec(self) -> SubModelSpec:
        h = self.hospital
        return hospital_submodel(self._sub_schema(h.prob_factors), self._sub_schema(h.time_factors), h.families)

    def icu_spec(self) -> SubModelSpec:
        i = self.icu
        return icu_submodel(self._sub_schema(i.prob_factors), self._sub_schema(i.time_factors), i.families)

    def fit_options(self, origin: StateId) -> FitOptions:
        sub = self.hospital if origin is StateId.HOSPITAL else self.icu
        return replace(self.fit, fixed=dict(sub.fixed))

    def path(self, key, required=True):
        p = self.paths.get(key)
        if p is None and required:
            raise ConfigError(f"[paths] {key} is required for this command")
        return p


PATH_KEYS = ("cohort", "truth", "output", "hospital_report", "icu_report")


def _schema(model):
    names = _strings(model.get("factors", []), "model.factors")
    for n in names:
        if n not in DEFAULT_LEVELS:
            raise ConfigError(f"unknown factor {n!r}; choose from {', '.join(DEFAULT_LEVELS)}")
    refs = _take(model.get("references", {}), names, "model.references")
    factors = [Factor(n, DEFAULT_LEVELS[n], refs.get(n, DEFAULT_REFERENCES[n])) for n in names]
    inter = model.get("interactions", [])
    if not isinstance(inter, list) or not all(isinstance(p, list) and len(p) == 2 for p in inter):
        raise ConfigError("model.interactions must be a list of [factor, factor] pairs")
    return CovariateSchema(tuple(factors), tuple(tuple(p) for p in inter))


def _label_values(table, where):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table of label = value")
    return {k: float(_number(v, f"{where}.{k}")) for k, v in table.items()}


def _submodel(table, where, default_families, schema_names, allowed_dests):
    _take(table, ("families", "prob_factors", "time_factors", "fixed"), where)
    fams = dict(default_families)
    for k, v in _take(table.get("families", {}), [d.value for d in allowed_dests], f"{where}.families").items():
        if not isinstance(v, str):
            raise ConfigError(f"{where}.families.{k} must be a string")
        fams[StateId.parse(k)] = Family.parse(v)
    prob = tuple(_strings(table.get("prob_factors", list(schema_names)), f"{where}.prob_factors"))
    time = tuple(_strings(table.get("time_factors", list(schema_names)), f"{where}.time_factors"))
    for n in prob + time:
        if n not in schema_names:
            raise ConfigError(f"{where}: factor {n!r} is not declared in model.factors")
    fixed = _label_values(table.get("fixed", {}), f"{where}.fixed")
    return SubModelConfig(fams, prob, time, fixed)


def parse_config(data: Mapping, base_dir: Path | str = ".") -> RunConfig:
    try:
        return _parse(data, Path(base_dir))
    except ConfigError:
        raise
    except HospmixError as exc:
        raise ConfigError(str(exc)) from None


def _parse(data, base_dir):
    base_dir = Path(base_dir)
    top = _take(dict(data), ("seed", "model", "censoring", "fit", "simulate", "predict", "paths"), "top level")
    seed = _number(top.get("seed", 0), "seed", minimum=0, integer=True)

    model = _take(top.get("model", {}), ("factors", "references", "interactions", "hospital", "icu"), "model")
    schema = _schema(model)
    names = schema.factor_names
    hospital = _submodel(model.get("hospital", {}), "model.hospital", HOSPITAL_FAMILIES, names, tuple(HOSPITAL_FAMILIES))
    icu = _submodel(model.get("icu", {}), "model.icu", ICU_FAMILIES, names, tuple(ICU_FAMILIES))

    cens = _take(top.get("censoring", {}), ("extraction_day", "ward_cap", "icu_cap", "zero_duration"), "censoring")
    rules = CensoringRules(
        ward_cap=_number(cens.get("ward_cap", 60.0), "censoring.ward_cap", minimum=0),
        icu_cap=_number(cens.get("icu_cap", 90.0), "censoring.icu_cap", minimum=0),
        zero_duration=_number(cens.get("zero_duration", 0.5), "censoring.zero_duration", minimum=0),
    )
    if rules.ward_cap <= 0 or rules.icu_cap <= 0 or rules.zero_duration <= 0:
        raise ConfigError("censoring caps and zero_duration must be positive")
    extraction = _number(cens.get("extraction_day", math.inf), "censoring.extraction_day", allow_inf=True)

    fit_t = _take(top.get("fit", {}), ("gtol", "max_evals", "newton_polish", "gradient_check_rtol", "check_identifiability"), "fit")
    fit_kw = {}
    for key, integer in (("gtol", False), ("max_evals", True), ("newton_polish", True), ("gradient_check_rtol", False)):
        if key in fit_t:
            fit_kw[key] = _number(fit_t[key], f"fit.{key}", minimum=0, integer=integer)
    if "check_identifiability" in fit_t:
        if not isinstance(fit_t["check_identifiability"], bool):
            raise ConfigError("fit.check_identifiability must be true or false")
        fit_kw["check_identifiability"] = fit_t["check_identifiability"]
    fit = FitOptions(**fit_kw)

    sim = _take(
        top.get("simulate", {}),
        ("n", "p_truly_missing", "p_transfer", "p_partial_discharge", "admission_window", "first_admission_day", "level_probs", "truth"),
        "simulate",
    )
    n = _number(sim.get("n", 1000), "simulate.n", minimum=1, integer=True)
    probs = {}
    for key in ("p_truly_missing", "p_transfer", "p_partial_discharge"):
        p = _number(sim.get(key, 0.0), f"simulate.{key}", minimum=0)
        if p > 1:
            raise ConfigError(f"simulate.{key} must lie in [0, 1]")
        probs[key] = p
    censoring = CensoringConfig(extraction_offset=extraction, ward_cap=rules.ward_cap, icu_cap=rules.icu_cap, **probs)
    level_probs = {}
    for col, table in _take(sim.get("level_probs", {}), tuple(c for c in DEFAULT_LEVELS if c != "month"), "simulate.level_probs").items():
        table = _take(table, DEFAULT_LEVELS[col], f"simulate.level_probs.{col}")
        level_probs[col] = {k: _number(v, f"simulate.level_probs.{col}.{k}", minimum=0) for k, v in table.items()}
        if sum(level_probs[col].values()) <= 0:
            raise ConfigError(f"simulate.level_probs.{col} must have positive total weight")
    design = CohortDesign(
        admission_window=_number(sim.get("admission_window", 292), "simulate.admission_window", minimum=1, integer=True),
        epoch_offset=_number(sim.get("first_admission_day", 14), "simulate.first_admission_day", minimum=0, integer=True),
        level_probs=level_probs,
    )
    truth = _take(sim.get("truth", {}), ("hospital", "icu"), "simulate.truth")
    truth_h = _label_values(truth.get("hospital", {}), "simulate.truth.hospital")
    truth_i = _label_values(truth.get("icu", {}), "simulate.truth.icu")

    pred = _take(top.get("predict", {}), ("draws", "quantiles"), "predict")
    draws = _number(pred.get("draws", 1000), "predict.draws", minimum=1, integer=True)
    qs = pred.get("quantiles", [0.25, 0.5, 0.75])
    if not isinstance(qs, list) or not qs or any(isinstance(q, bool) or not isinstance(q, (int, float)) or not 0 < q < 1 for q in qs):
        raise ConfigError("predict.quantiles must be a non-empty list of numbers in (0, 1)")
    if 0.5 not in qs:
        raise ConfigError("predict.quantiles must include 0.5")

    paths = {}
    for k, v in _take(top.get("paths", {}), PATH_KEYS, "paths").items():
        if not isinstance(v, str) or not v:
            raise ConfigError(f"paths.{k} must be a non-empty string")
        paths[k] = base_dir / v

    cfg = RunConfig(
        seed=seed,
        schema=schema,
        hospital=hospital,
        icu=icu,
        rules=rules,
        extraction_day=extraction,
        fit=fit,
        simulate_n=n,
        censoring=censoring,
        design=design,
        truth_hospital=truth_h,
        truth_icu=truth_i,
        draws=draws,
        quantile_probs=tuple(float(q) for q in qs),
        paths=paths,
    )
    # build both specs now so label and family errors surface as config errors
    for spec, truth_map, fixed, where in (
        (cfg.hospital_spec(), truth_h, hospital.fixed, "hospital"),
        (cfg.icu_spec(), truth_i, icu.fixed, "icu"),
    ):
        labels = parameter_labels(spec)
        for lab in list(truth_map) + list(fixed):
            if lab not in labels:
                raise ConfigError(f"unknown {where} parameter label {lab!r}; valid labels: {', '.join(labels)}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, path.parent)


__all__ = ["RunConfig", "SubModelConfig", "parse_config", "load_config"]
