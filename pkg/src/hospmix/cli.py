"""Command-line entry point: ``hospmix {simulate,fit,predict,gof,summarize}``.

Every command reads one TOML config (see :mod:`hospmix.config`) and writes
CSV/JSON files; reruns with the same inputs produce byte-identical output.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import prediction as pred
from .config import RunConfig, load_config
from .dataio import apply_exclusions, cohort_observations, parse_cohort, summarize_cohort, write_cohort, write_observations, write_summary
from .errors import ConfigError, DataError, HospmixError
from .estimation import fit, load_report, save_report
from .nonparametric import aalen_johansen, gof_distance
from .simulation import parameters_from_labels, simulate_cohort, write_truth

log = logging.getLogger("hospmix")

HOSPITAL_REPORT = "hospital_fit.json"
ICU_REPORT = "icu_fit.json"


def _fmt(v):
    return f"{v:.6f}"


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.path("output"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _writer(path):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig):
    spec_h, spec_i = cfg.hospital_spec(), cfg.icu_spec()
    params_h = parameters_from_labels(spec_h, cfg.truth_hospital)
    params_i = parameters_from_labels(spec_i, cfg.truth_icu)
    records = simulate_cohort(cfg.simulate_n, params_h, params_i, spec_h, spec_i, cfg.censoring, cfg.design, seed=cfg.seed)
    cohort_path = Path(cfg.path("cohort"))
    cohort_path.parent.mkdir(parents=True, exist_ok=True)
    write_cohort([r.observed for r in records], cohort_path)
    log.info("wrote %d records to %s", len(records), cohort_path)
    truth_path = cfg.path("truth", required=False)
    if truth_path is not None:
        Path(truth_path).parent.mkdir(parents=True, exist_ok=True)
        write_truth(records, truth_path)


def _observations(cfg: RunConfig):
    cohort = parse_cohort(cfg.path("cohort"))
    kept, report = apply_exclusions(cohort, cfg.schema.factor_names)
    hosp, icu = cohort_observations(kept, cfg.extraction_day, cfg.rules)
    return cohort, kept, report, hosp, icu


def cmd_fit(cfg: RunConfig):
    out = _output_dir(cfg)
    _cohort, _kept, report, hosp, icu = _observations(cfg)
    log.info("%d hospital and %d ICU observations (%d records excluded)", len(hosp), len(icu), report["total"])
    with open(out / "exclusions.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    write_observations(hosp, out / "observations_hospital.csv")
    write_observations(icu, out / "observations_icu.csv")
    for spec, obs, name in ((cfg.hospital_spec(), hosp, HOSPITAL_REPORT), (cfg.icu_spec(), icu, ICU_REPORT)):
        if not obs:
            raise DataError(f"no observations for the {spec.origin.value} sub-model")
        result = fit(spec, obs, cfg.fit_options(spec.origin))
        save_report(result, out / name)
        fh, w = _writer(out / name.replace("_fit.json", "_coefficients.csv"))
        with fh:
            w.writerow(["parameter", "estimate", "se", "lower", "upper"])
            for row in result.coefficient_table():
                w.writerow([row["label"], _fmt(row["estimate"]), _fmt(row["se"]), _fmt(row["lower"]), _fmt(row["upper"])])
        log.info("%s: loglik %.3f, AIC %.3f", spec.origin.value, result.loglik, result.aic)


def _reports(cfg: RunConfig):
    out = Path(cfg.path("output"))
    h = cfg.path("hospital_report", required=False) or out / HOSPITAL_REPORT
    i = cfg.path("icu_report", required=False) or out / ICU_REPORT
    for p in (h, i):
        if not Path(p).exists():
            raise DataError(f"fit report not found: {p} (run 'hospmix fit' first)")
    return load_report(h), load_report(i)


def profile_grid(cfg: RunConfig):
    """(group label, [(month label, profile)]) rows for the prediction tables.

    Each non-month factor level gives one row group with the remaining
    factors at their reference; the month factor, when modelled, spans the
    columns.
    """
    schema = cfg.schema
    base = {f.name: f.reference for f in schema.factors}
    months = list(schema.factor("month").levels) if "month" in schema.factor_names else ["All"]

    def row(overrides):
        cells = []
        for m in months:
            prof = {**base, **overrides}
            if m != "All":
                prof["month"] = m
            cells.append((m, prof))
        return cells

    groups = []
    for f in schema.factors:
        if f.name == "month":
            continue
        for lv in f.levels:
            groups.append((f"{f.name}={lv}", row({f.name: lv})))
    if not groups:
        groups.append(("All", row({})))
    return months, groups


def _month_header(months, fields):
    header = []
    for m in months:
        header += [f"{m} {f}" if f else m for f in fields]
    return header


def cmd_predict(cfg: RunConfig):
    out = _output_dir(cfg)
    fit_h, fit_i = _reports(cfg)
    months, groups = profile_grid(cfg)
    cell = 0

    def seed():
        nonlocal cell
        cell += 1
        return np.random.default_rng([cfg.seed, cell])

    fh_p, w_p = _writer(out / "next_event_probs.csv")
    fh_h, w_h = _writer(out / "hfr.csv")
    fh_q, w_q = _writer(out / "time_quantiles.csv")
    with fh_p, fh_h, fh_q:
        w_p.writerow(["submodel", "group", "event"] + _month_header(months, ["", "lower", "upper"]))
        w_h.writerow(["group", "event"] + _month_header(months, ["", "lower", "upper"]))
        w_q.writerow(["submodel", "group", "event"] + _month_header(months, ["median", "lower", "upper", "q25", "q75"]))
        for group, cells in groups:
            for fitted in (fit_h, fit_i):
                results = [pred.next_event_probs(fitted, prof, cfg.draws, seed()) for _m, prof in cells]
                for d in fitted.spec.destinations:
                    row = [fitted.spec.origin.value, group, d.value]
                    for r in results:
                        row += [_fmt(r[d].point), _fmt(r[d].ci95[0]), _fmt(r[d].ci95[1])]
                    w_p.writerow(row)
                for d in fitted.spec.destinations:
                    row = [fitted.spec.origin.value, group, d.value]
                    for _m, prof in cells:
                        res, _q = pred.time_quantiles(fitted, prof, d, cfg.quantile_probs, cfg.draws, seed())
                        row += [_fmt(res.point), _fmt(res.ci95[0]), _fmt(res.ci95[1])]
                        row += [_fmt(v) for v in res.iqr] if res.iqr else ["", ""]
                    w_q.writerow(row)
            row = [group, "Death"]
            for _m, prof in cells:
                r = pred.hfr(fit_h, fit_i, prof, cfg.draws, seed())
                row += [_fmt(r.point), _fmt(r.ci95[0]), _fmt(r.ci95[1])]
            w_h.writerow(row)

    fh_o, w_o = _writer(out / "odds_ratios.csv")
    fh_e, w_e = _writer(out / "time_ratios.csv")
    with fh_o, fh_e:
        w_o.writerow(["submodel", "event", "factor", "level", "odds_ratio", "lower", "upper"])
        w_e.writerow(["submodel", "event", "factor", "level", "time_ratio", "lower", "upper"])
        for fitted in (fit_h, fit_i):
            origin = fitted.spec.origin.value
            for f in fitted.spec.prob_schema.factors:
                for r in pred.odds_ratios(fitted, f.name):
                    w_o.writerow([origin, r.destination.value, f.name, r.profile[f.name], _fmt(r.point), _fmt(r.ci95[0]), _fmt(r.ci95[1])])
            for d in fitted.spec.destinations:
                for f in fitted.spec.time_schemas[d].factors:
                    for r in pred.expected_time_ratios(fitted, f.name, d):
                        w_e.writerow([origin, d.value, f.name, r.profile[f.name], _fmt(r.point), _fmt(r.ci95[0]), _fmt(r.ci95[1])])


def cmd_gof(cfg: RunConfig):
    out = _output_dir(cfg)
    fit_h, fit_i = _reports(cfg)
    _cohort, _kept, _report, hosp, icu = _observations(cfg)
    fh_s, w_s = _writer(out / "gof_summary.csv")
    with fh_s:
        w_s.writerow(["submodel", "event", "n", "sup_distance"])
        for fitted, obs in ((fit_h, hosp), (fit_i, icu)):
            origin = fitted.spec.origin.value
            if not obs:
                raise DataError(f"no {origin} observations to compare against")
            curves = aalen_johansen(obs, fitted.spec.destinations)
            profiles = [o.profile for o in obs]
            for d, curve in curves.items():
                t = np.concatenate(([0.0], curve.times))
                parametric = pred.average_cif(fitted, profiles, d, t)
                dist = gof_distance(lambda s, d=d: pred.average_cif(fitted, profiles, d, s), curve)
                fh, w = _writer(out / f"gof_{origin.lower()}_{d.value.lower()}.csv")
                with fh:
                    w.writerow(["t", "aalen_johansen", "parametric"])
                    for ti, a, p in zip(t, np.concatenate(([0.0], curve.values)), parametric):
                        w.writerow([repr(float(ti)), _fmt(a), _fmt(p)])
                w_s.writerow([origin, d.value, len(obs), _fmt(dist)])
                log.info("%s -> %s: sup distance %.4f", origin, d.value, dist)


def cmd_summarize(cfg: RunConfig):
    out = _output_dir(cfg)
    months, rows = summarize_cohort(parse_cohort(cfg.path("cohort")))
    write_summary(months, rows, out / "cohort_summary.csv")


COMMANDS = {
    "simulate": (cmd_simulate, "draw a synthetic cohort (raw CSV plus truth CSV)"),
    "fit": (cmd_fit, "fit both sub-models to a cohort and write fit reports"),
    "predict": (cmd_predict, "derived probabilities, HFR, time quantiles, OR and ETR tables"),
    "gof": (cmd_gof, "compare fitted cumulative incidence with Aalen-Johansen curves"),
    "summarize": (cmd_summarize, "baseline characteristics by admission month"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hospmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("-o", "--output", help="override [paths] output")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        if args.output is not None:
            cfg = replace(cfg, paths={**cfg.paths, "output": Path(args.output)})
        COMMANDS[args.command][0](cfg)
    except HospmixError as exc:
        print(f"hospmix: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"hospmix: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
