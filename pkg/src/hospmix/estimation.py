"""Maximum-likelihood fitting of a sub-model, covariance and model comparison."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .distributions import Family
from .errors import (
    ConvergenceError,
    DataError,
    NumericalError,
    IdentifiabilityError,
    SingularHessianError,
    ValidationError,
)
from .model import (
    CompiledObservations,
    Delta,
    ParameterSet,
    SubModelSpec,
    n_free_params,
    parameter_labels,
)

log = logging.getLogger(__name__)

REPORT_FORMAT = "hospmix-fit"
REPORT_VERSION = 1


@dataclass
class FitOptions:
    gtol: float = 1e-6
    max_evals: int = 10_000
    start: object = None  # ParameterSet or free-parameter vector
    fixed: Mapping = field(default_factory=dict)  # label -> value on the unconstrained scale
    newton_polish: int = 5
    check_identifiability: bool = True
    analytic_gradient: bool = True
    gradient_check_rtol: float = 1e-4  # analytic vs finite-difference score at the start


@dataclass
class FittedSubModel:
    spec: SubModelSpec
    mle: ParameterSet
    theta: np.ndarray
    covariance: np.ndarray
    loglik: float
    n_params: int
    n_obs: int
    converged: bool
    diagnostics: dict
    fixed: tuple = ()
    data_fingerprint: str = ""

    @property
    def aic(self):
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def labels(self):
        return parameter_labels(self.spec)

    @property
    def standard_errors(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"no parameter named {label!r}") from None

    def wald_interval(self, label, level=0.95):
        i = self.index(label)
        z = norm.ppf(0.5 + level / 2.0)
        se = self.standard_errors[i]
        return self.theta[i] - z * se, self.theta[i] + z * se

    def coefficient_table(self, level=0.95):
        z = norm.ppf(0.5 + level / 2.0)
        se = self.standard_errors
        return [
            {"label": lab, "estimate": float(est), "se": float(s), "lower": float(est - z * s), "upper": float(est + z * s)}
            for lab, est, s in zip(self.labels, self.theta, se)
        ]

    def natural_parameters(self):
        """Baseline (all covariates at reference) natural parameters per destination."""
        from .model import conditional_time_spec
        from .design import reference_profile

        out = {}
        for d in self.spec.destinations:
            prof = reference_profile(self.spec.time_schemas[d])
            out[d.value] = list(conditional_time_spec(self.mle, self.spec, prof, d).params)
        return out

    # -- serialisation ----------------------------------------------------

    def to_report(self):
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "spec": self.spec.to_dict(),
            "labels": self.labels,
            "theta": [float(v) for v in self.theta],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "fixed": list(self.fixed),
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "n_params": int(self.n_params),
            "n_obs": int(self.n_obs),
            "converged": bool(self.converged),
            "diagnostics": {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.diagnostics.items()},
            "natural_parameters": self.natural_parameters(),
            "coefficients": self.coefficient_table(),
            "data_fingerprint": self.data_fingerprint,
        }

    @classmethod
    def from_report(cls, report):
        if report.get("format") != REPORT_FORMAT:
            raise DataError("not a fit report")
        if report.get("version") != REPORT_VERSION:
            raise DataError(f"unsupported fit report version {report.get('version')!r}")
        spec = SubModelSpec.from_dict(report["spec"])
        theta = np.array(report["theta"], dtype=float)
        return cls(
            spec=spec,
            mle=ParameterSet.from_vector(spec, theta),
            theta=theta,
            covariance=np.array(report["covariance"], dtype=float),
            loglik=float(report["loglik"]),
            n_params=int(report["n_params"]),
            n_obs=int(report["n_obs"]),
            converged=bool(report["converged"]),
            diagnostics=dict(report["diagnostics"]),
            fixed=tuple(report.get("fixed", ())),
            data_fingerprint=report.get("data_fingerprint", ""),
        )


def save_report(fit: FittedSubModel, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(fit.to_report(), fh, indent=2, sort_keys=False)
        fh.write("\n")


def load_report(path) -> FittedSubModel:
    with open(path, encoding="utf-8") as fh:
        try:
            report = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed fit report ({exc})") from None
    return FittedSubModel.from_report(report)


# ---------------------------------------------------------------------------


def data_fingerprint(observations) -> str:
    h = hashlib.sha256()
    for o in observations:
        prof = ",".join(f"{k}={o.profile[k]}" for k in sorted(o.profile))
        dest = o.destination.value if o.destination is not None else ""
        h.update(f"{o.origin.value}|{o.y!r}|{dest}|{int(o.delta)}|{prof}\n".encode())
    return h.hexdigest()


def _null_directions(matrix, labels, rtol=1e-10):
    """Labels spanning the numerical null space of ``matrix`` (columns)."""
    if matrix.shape[0] == 0:
        return list(labels)
    # the reduced SVD already spans the row space when rows >= columns
    _, s, vt = np.linalg.svd(matrix, full_matrices=matrix.shape[0] < matrix.shape[1])
    s_full = np.zeros(matrix.shape[1])
    s_full[: len(s)] = s
    cutoff = rtol * max(s_full.max(), 1.0)
    dirs = []
    for k in np.flatnonzero(s_full <= cutoff):
        v = vt[k]
        involved = [labels[i] for i in np.flatnonzero(np.abs(v) > 1e-6)]
        dirs.append(" + ".join(f"{v[labels.index(l)]:+.3g}*{l}" for l in involved))
    return dirs


def check_identifiability(compiled: CompiledObservations):
    """Raise when a design column is empty or collinear in the data that informs it."""
    spec = compiled.spec
    problems = []
    if compiled.n == 0:
        raise IdentifiabilityError("no observations")

    def absent(x, schema, where):
        labels = schema.labels
        for j, lab in enumerate(labels):
            if j > 0 and not np.any(x[:, j] != 0):
                problems.append(f"{lab} (absent from {where})")
        for f in schema.factors:
            cols = [j for j, lab in enumerate(labels) if lab.startswith(f"{f.name}=") and ":" not in lab]
            if cols and x.shape[0] and np.all(np.any(x[:, cols] != 0, axis=1)):
                problems.append(f"{f.name}={f.reference} (reference level absent from {where})")

    absent(compiled.x_prob, spec.prob_schema, f"{spec.origin.value} observations")
    informative = compiled.exact | (compiled.pi_only)
    if not informative.any():
        problems.append("no exact or partially-known transitions")
    for j, d in enumerate(spec.destinations):
        rows = compiled.exact & (compiled.dest == j)
        if not rows.any():
            problems.append(f"no exact transitions to {d.value}")
            continue
        absent(compiled.x_time[d][rows], spec.time_schemas[d], f"exact transitions to {d.value}")
    if problems:
        raise IdentifiabilityError("non-identifiable design: " + "; ".join(problems))

    for x, labels, where in [(compiled.x_prob, list(spec.prob_schema.labels), "probability design")] + [
        (compiled.x_time[d][compiled.exact & (compiled.dest == j)], list(spec.time_schemas[d].labels), f"{d.value} time design")
        for j, d in enumerate(spec.destinations)
    ]:
        dirs = _null_directions(x, labels)
        if dirs:
            raise SingularHessianError(f"collinear {where}: " + "; ".join(dirs), dirs)


def start_values(compiled: CompiledObservations) -> ParameterSet:
    """Empirical proportions for the logits, moment matches for the times."""
    spec = compiled.spec
    params = ParameterSet.zeros(spec)
    known = compiled.exact | (compiled.delta == Delta.PARTIAL)
    counts = np.array([np.sum(known & (compiled.dest == j)) for j in range(len(spec.destinations))], dtype=float) + 0.5
    ref = spec.destinations.index(spec.reference_destination)
    for j, d in enumerate(spec.destinations):
        if d != spec.reference_destination:
            params.gamma[d][0] = math.log(counts[j] / counts[ref])
    for j, d in enumerate(spec.destinations):
        y = compiled.y[compiled.exact & (compiled.dest == j)]
        if y.size == 0:
            y = compiled.y[compiled.y > 0]
        if y.size == 0:
            y = np.array([1.0])
        logy = np.log(y)
        m = float(np.mean(logy))
        s = float(np.std(logy)) if y.size > 1 else 1.0
        s = min(max(s, 0.05), 5.0)
        fam = spec.families[d]
        if fam is Family.GAMMA:
            mean, var = float(np.mean(y)), float(np.var(y)) if y.size > 1 else float(np.mean(y)) ** 2
            shape = mean * mean / var if var > 0 else 1.0
            shape = min(max(shape, 0.05), 1e3)
            params.beta[d][0] = math.log(mean / shape)
            params.ancillary[d][:] = [math.log(shape)]
        elif fam is Family.LOGNORMAL:
            params.beta[d][0] = m
            params.ancillary[d][:] = [math.log(s)]
        else:
            params.beta[d][0] = m
            params.ancillary[d][:] = [math.log(s), 0.1]
    return params


class _Objective:
    """Mean negative log-likelihood over the free parameters, with FD derivatives."""

    def __init__(self, compiled, fixed_idx, fixed_val, max_evals, analytic=True):
        self.compiled = compiled
        self.analytic = analytic
        self.spec = compiled.spec
        self.p = n_free_params(self.spec)
        self.fixed_idx = np.asarray(fixed_idx, dtype=int)
        self.fixed_val = np.asarray(fixed_val, dtype=float)
        self.free_idx = np.setdiff1d(np.arange(self.p), self.fixed_idx)
        self.scale = max(compiled.n, 1)
        self.evals = 0
        self.max_evals = max_evals

    def full(self, free):
        theta = np.empty(self.p)
        theta[self.free_idx] = free
        theta[self.fixed_idx] = self.fixed_val
        return theta

    def __call__(self, free):
        self.evals += 1
        if self.evals > self.max_evals:
            raise _Budget()
        ll = self.compiled.loglik(ParameterSet.from_vector(self.spec, self.full(free)))
        if not np.isfinite(ll):
            return np.inf
        return -ll / self.scale

    def fd_gradient(self, free):
        free = np.asarray(free, dtype=float)
        g = np.empty_like(free)
        h = 6e-6 * np.maximum(1.0, np.abs(free))
        for i in range(free.size):
            e = np.zeros_like(free)
            e[i] = h[i]
            g[i] = (self(free + e) - self(free - e)) / (2 * h[i])
        return g

    def analytic_gradient(self, free):
        self.evals += 1
        score = self.compiled.gradient(ParameterSet.from_vector(self.spec, self.full(free)))
        return -score[self.free_idx] / self.scale

    def gradient(self, free):
        if self.analytic:
            return self.analytic_gradient(free)
        return self.fd_gradient(free)

    def hessian(self, free):
        """Symmetrised Hessian of the mean objective by differencing the gradient."""
        free = np.asarray(free, dtype=float)
        k = free.size
        if not self.analytic:
            return self._hessian_from_values(free)
        h = 1e-4 * np.maximum(1.0, np.abs(free))
        H = np.empty((k, k))
        for i in range(k):
            e = np.zeros(k)
            e[i] = h[i]
            H[:, i] = (self.analytic_gradient(free + e) - self.analytic_gradient(free - e)) / (2 * h[i])
        return 0.5 * (H + H.T)

    def _hessian_from_values(self, free, step=1e-4):
        k = free.size
        h = step * np.maximum(1.0, np.abs(free))
        f0 = self(free)
        H = np.empty((k, k))
        for i in range(k):
            ei = np.zeros(k)
            ei[i] = h[i]
            H[i, i] = (self(free + ei) - 2 * f0 + self(free - ei)) / h[i] ** 2
            for j in range(i):
                ej = np.zeros(k)
                ej[j] = h[j]
                H[i, j] = H[j, i] = (
                    self(free + ei + ej) - self(free + ei - ej) - self(free - ei + ej) + self(free - ei - ej)
                ) / (4 * h[i] * h[j])
        return H


class _Budget(Exception):
    pass


def _resolve_fixed(spec, fixed):
    labels = parameter_labels(spec)
    idx, val = [], []
    for lab, v in dict(fixed).items():
        if lab not in labels:
            raise ValidationError(f"cannot fix unknown parameter {lab!r}")
        idx.append(labels.index(lab))
        val.append(float(v))
    order = np.argsort(idx)
    return [idx[i] for i in order], [val[i] for i in order]


def fit(spec: SubModelSpec, observations, options: FitOptions | None = None) -> FittedSubModel:
    """Maximise the censored log-likelihood by BFGS, then polish by Newton steps."""
    options = options or FitOptions()
    observations = list(observations)
    if not observations:
        raise DataError("cannot fit a sub-model to zero observations")
    compiled = CompiledObservations(observations, spec)
    if options.check_identifiability:
        check_identifiability(compiled)

    fixed_idx, fixed_val = _resolve_fixed(spec, options.fixed)
    obj = _Objective(compiled, fixed_idx, fixed_val, options.max_evals, options.analytic_gradient)
    if options.start is None:
        theta0 = start_values(compiled).to_vector(spec)
    elif isinstance(options.start, ParameterSet):
        theta0 = options.start.to_vector(spec)
    else:
        theta0 = np.asarray(options.start, dtype=float)
    x0 = theta0[obj.free_idx]

    diagnostics = {}
    try:
        if not np.isfinite(obj(x0)):
            raise ConvergenceError("log-likelihood is not finite at the starting values", {"evaluations": obj.evals})
        if obj.analytic and options.gradient_check_rtol is not None:
            ga, gn = obj.analytic_gradient(x0), obj.fd_gradient(x0)
            err = float(np.max(np.abs(ga - gn) / np.maximum(1.0, np.abs(gn)))) if ga.size else 0.0
            diagnostics["gradient_check"] = err
            if err > options.gradient_check_rtol:
                raise NumericalError(f"analytic score disagrees with finite differences (relative error {err:.3g})")
        res = optimize.minimize(obj, x0, jac=obj.gradient, method="BFGS", options={"gtol": options.gtol, "maxiter": options.max_evals})
        x = res.x
        diagnostics["bfgs_iterations"] = int(res.nit)
        diagnostics["bfgs_message"] = str(res.message)
        for _ in range(options.newton_polish):
            g = obj.gradient(x)
            if np.max(np.abs(g)) < 1e-10:
                break
            H = obj.hessian(x)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            f_old = obj(x)
            t = 1.0
            while t > 1e-4:
                cand = x - t * step
                if obj(cand) <= f_old:
                    x = cand
                    break
                t *= 0.5
            else:
                break
    except _Budget:
        raise ConvergenceError(
            f"evaluation budget of {options.max_evals} exhausted",
            {"evaluations": obj.evals},
        ) from None

    f = obj(x)
    g = obj.gradient(x)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    diagnostics.update({"gradient_sup_norm": gnorm * obj.scale, "evaluations": obj.evals})
    converged = bool(np.isfinite(f) and gnorm <= options.gtol * max(1.0, abs(f)))
    if not converged:
        raise ConvergenceError(
            f"optimizer stopped with gradient sup-norm {gnorm:.3g} (mean scale) above tolerance",
            diagnostics,
        )
    theta = obj.full(x)
    mle = ParameterSet.from_vector(spec, theta)
    cov = np.zeros((obj.p, obj.p))
    cov_free = _invert_information(obj.hessian(x) * obj.scale, [parameter_labels(spec)[i] for i in obj.free_idx])
    cov[np.ix_(obj.free_idx, obj.free_idx)] = cov_free
    loglik = compiled.loglik(mle)
    return FittedSubModel(
        spec=spec,
        mle=mle,
        theta=theta,
        covariance=cov,
        loglik=loglik,
        n_params=len(obj.free_idx),
        n_obs=compiled.n,
        converged=converged,
        diagnostics=diagnostics,
        fixed=tuple(parameter_labels(spec)[i] for i in fixed_idx),
        data_fingerprint=data_fingerprint(observations),
    )


def _invert_information(info, labels, rtol=1e-9):
    info = 0.5 * (info + info.T)
    w, v = np.linalg.eigh(info)
    top = max(float(np.max(np.abs(w))), 1e-300)
    bad = np.flatnonzero(w <= rtol * top)
    if bad.size:
        dirs = []
        for k in bad:
            comp = v[:, k]
            involved = np.flatnonzero(np.abs(comp) > 0.1)
            dirs.append(" + ".join(f"{comp[i]:+.3g}*{labels[i]}" for i in involved))
        kind = "indefinite" if np.any(w[bad] < -rtol * top) else "singular"
        raise SingularHessianError(f"{kind} Hessian; weak directions: " + "; ".join(dirs), dirs)
    cov = (v / w) @ v.T
    return 0.5 * (cov + cov.T)


def covariance_at(mle, observations, spec: SubModelSpec, fixed=(), analytic=True) -> np.ndarray:
    """Inverse observed information on the unconstrained scale (numerical Hessian)."""
    compiled = observations if isinstance(observations, CompiledObservations) else CompiledObservations(list(observations), spec)
    check_identifiability(compiled)
    theta = mle.to_vector(spec) if isinstance(mle, ParameterSet) else np.asarray(mle, dtype=float)
    labels = parameter_labels(spec)
    fixed_idx = [labels.index(l) for l in fixed]
    obj = _Objective(compiled, fixed_idx, theta[fixed_idx], max_evals=10**9, analytic=analytic)
    x = theta[obj.free_idx]
    cov = np.zeros((obj.p, obj.p))
    cov[np.ix_(obj.free_idx, obj.free_idx)] = _invert_information(obj.hessian(x) * obj.scale, [labels[i] for i in obj.free_idx])
    return cov


def loglik_gradient(theta, observations, spec: SubModelSpec, analytic=False) -> np.ndarray:
    """Gradient of the total log-likelihood: central differences, or the analytic score."""
    compiled = observations if isinstance(observations, CompiledObservations) else CompiledObservations(list(observations), spec)
    theta = np.asarray(theta, dtype=float)
    if analytic:
        return compiled.gradient(ParameterSet.from_vector(spec, theta))
    obj = _Objective(compiled, [], [], max_evals=10**9, analytic=False)
    return -obj.fd_gradient(theta) * obj.scale


def compare_models(fits: Sequence[FittedSubModel]):
    """Rank fits by AIC (stable), with the difference to the best."""
    fits = list(fits)
    if not fits:
        return []
    prints = {f.data_fingerprint for f in fits}
    if len(prints) > 1:
        raise DataError("models were fitted to different observations and cannot be compared by AIC")
    order = sorted(range(len(fits)), key=lambda i: fits[i].aic)
    best = fits[order[0]].aic
    return [
        {"index": i, "loglik": fits[i].loglik, "n_params": fits[i].n_params, "aic": fits[i].aic, "delta_aic": fits[i].aic - best}
        for i in order
    ]


def aic(loglik, n_params):
    return -2.0 * loglik + 2.0 * n_params
