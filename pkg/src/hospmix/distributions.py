"""Time-to-event families used for the conditional lengths of stay.

Three families are supported, each with one "linked" parameter that carries
covariate effects on an accelerated-failure-time scale:

============  ==========================  ================  ==============
family        natural parameters          linked parameter  ancillary
============  ==========================  ================  ==============
Gamma         shape a > 0, rate b > 0     -log b            log a
LogNormal     meanlog mu, sdlog s > 0     mu                log s
GenGamma      location mu, scale s > 0,   mu                log s, Q
              shape Q
============  ==========================  ================  ==============

With the linked value written as ``eta``, shifting ``eta`` by ``d`` multiplies
every quantile (and the mean) by ``exp(d)`` for all three families.

The generalized gamma uses the (mu, sigma, Q) parameterisation: with
``w = (log t - mu) / sigma`` and ``k = Q**-2``, ``k * exp(Q * w)`` follows a
standard gamma law with shape ``k``.  For ``|Q| < GENGAMMA_LOGNORMAL_SWITCH``
the exact log-normal limit is used.

The module-level functions are vectorised over parameters and times; the
:class:`DistributionSpec` value type wraps them for scalar use.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sc

from .errors import ValidationError

GENGAMMA_LOGNORMAL_SWITCH = 1e-5
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Family(str, enum.Enum):
    GAMMA = "Gamma"
    LOGNORMAL = "LogNormal"
    GENGAMMA = "GenGamma"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").replace(" ", "").lower()
        aliases = {
            "gamma": cls.GAMMA,
            "lognormal": cls.LOGNORMAL,
            "lnorm": cls.LOGNORMAL,
            "gengamma": cls.GENGAMMA,
            "generalizedgamma": cls.GENGAMMA,
            "generalisedgamma": cls.GENGAMMA,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValidationError(f"unknown distribution family {value!r}") from None


PARAM_NAMES = {
    Family.GAMMA: ("shape", "rate"),
    Family.LOGNORMAL: ("meanlog", "sdlog"),
    Family.GENGAMMA: ("mu", "sigma", "Q"),
}

# names of the ancillary (non-linked) parameters on the unconstrained scale
ANCILLARY_NAMES = {
    Family.GAMMA: ("log_shape",),
    Family.LOGNORMAL: ("log_sdlog",),
    Family.GENGAMMA: ("log_sigma", "Q"),
}


# ---------------------------------------------------------------------------
# vectorised kernels; ``params`` is a tuple of arrays in PARAM_NAMES order


def _stirling_error(k):
    """lgamma(k) - ((k - 1/2) log k - k + log(2 pi)/2), accurate for large k."""
    k = np.asarray(k, dtype=float)
    big = k >= 15.0
    out = np.empty_like(k)
    kb = k[big]
    kb2 = kb * kb
    out[big] = (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * kb2)) / kb2) / kb2) / kb
    ks = k[~big]
    out[~big] = sc.gammaln(ks) - ((ks - 0.5) * np.log(ks) - ks + _HALF_LOG_2PI)
    return out


def _expm1_minus_x(z):
    """exp(z) - 1 - z without cancellation for small |z|."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 0.1
    out = np.expm1(z) - z
    zs = z[small]
    out[small] = zs * zs * (
        0.5 + zs * (1 / 6 + zs * (1 / 24 + zs * (1 / 120 + zs * (1 / 720 + zs / 5040))))
    )
    return out


def _broadcast(params, t):
    arrays = np.broadcast_arrays(*[np.asarray(p, dtype=float) for p in params], np.asarray(t, dtype=float))
    return [np.array(a, dtype=float) for a in arrays[:-1]], np.array(arrays[-1], dtype=float)


def _gengamma_parts(mu, sigma, q, t):
    """Split a generalized gamma evaluation into log-normal and proper branches."""
    w = (np.log(t) - mu) / sigma
    ln = np.abs(q) < GENGAMMA_LOGNORMAL_SWITCH
    return w, ln


def logpdf(family, params, t):
    family = Family.parse(family)
    params, t = _broadcast(params, t)
    out = np.full(t.shape, -np.inf)
    pos = t > 0
    if not np.any(pos):
        return out
    tp = t[pos]
    ps = [p[pos] for p in params]
    if family is Family.GAMMA:
        a, b = ps
        out[pos] = sc.xlogy(a, b) + sc.xlogy(a - 1.0, tp) - b * tp - sc.gammaln(a)
    elif family is Family.LOGNORMAL:
        mu, s = ps
        z = (np.log(tp) - mu) / s
        out[pos] = -0.5 * z * z - np.log(s) - np.log(tp) - _HALF_LOG_2PI
    else:
        mu, s, q = ps
        w, ln = _gengamma_parts(mu, s, q, tp)
        res = np.empty_like(tp)
        res[ln] = -0.5 * w[ln] ** 2 - np.log(s[ln]) - np.log(tp[ln]) - _HALF_LOG_2PI
        g = ~ln
        if np.any(g):
            qg, wg = q[g], w[g]
            k = 1.0 / (qg * qg)
            # k log k - k - lgamma(k) = log(k)/2 - log(2 pi)/2 - stirling_error(k)
            const = 0.5 * np.log(k) - _HALF_LOG_2PI - _stirling_error(k)
            res[g] = (
                np.log(np.abs(qg))
                + const
                - np.log(s[g])
                - np.log(tp[g])
                - k * _expm1_minus_x(qg * wg)
            )
        out[pos] = res
    return out


def pdf(family, params, t):
    return np.exp(logpdf(family, params, t))


def _cdf_sf(family, params, t):
    family = Family.parse(family)
    params, t = _broadcast(params, t)
    cdf = np.zeros(t.shape)
    sf = np.ones(t.shape)
    pos = t > 0
    if not np.any(pos):
        return cdf, sf
    tp = t[pos]
    ps = [p[pos] for p in params]
    if family is Family.GAMMA:
        a, b = ps
        c, s = sc.gammainc(a, b * tp), sc.gammaincc(a, b * tp)
    elif family is Family.LOGNORMAL:
        mu, sd = ps
        z = (np.log(tp) - mu) / sd
        c, s = sc.ndtr(z), sc.ndtr(-z)
    else:
        mu, sd, q = ps
        w, ln = _gengamma_parts(mu, sd, q, tp)
        c = np.empty_like(tp)
        s = np.empty_like(tp)
        c[ln], s[ln] = sc.ndtr(w[ln]), sc.ndtr(-w[ln])
        g = ~ln
        if np.any(g):
            qg = q[g]
            k = 1.0 / (qg * qg)
            u = k * np.exp(qg * w[g])
            lower, upper = sc.gammainc(k, u), sc.gammaincc(k, u)
            c[g] = np.where(qg > 0, lower, upper)
            s[g] = np.where(qg > 0, upper, lower)
    cdf[pos] = c
    sf[pos] = s
    return cdf, sf


def cdf(family, params, t):
    return _cdf_sf(family, params, t)[0]


def sf(family, params, t):
    return _cdf_sf(family, params, t)[1]


def logsf(family, params, t):
    family = Family.parse(family)
    if family is Family.LOGNORMAL:
        (mu, sd), tt = _broadcast(params, t)
        out = np.zeros(tt.shape)
        pos = tt > 0
        out[pos] = sc.log_ndtr(-(np.log(tt[pos]) - mu[pos]) / sd[pos])
        return out
    with np.errstate(divide="ignore"):
        return np.log(sf(family, params, t))


def _location_guess(family, params):
    if family is Family.GAMMA:
        a, b = params
        return np.log(a / b)
    return np.asarray(params[0], dtype=float)


def quantile(family, params, p, tol=1e-10, max_iter=200):
    """Invert the cdf by safeguarded Newton iteration on log-time.

    The bracket is kept throughout, so a Newton step that leaves it is
    replaced by bisection.  Iteration stops when the cdf residual falls
    below ``tol`` or the bracket collapses.
    """
    family = Family.parse(family)
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0) & (p_arr < 1))):
        raise ValidationError("quantile probabilities must lie strictly inside (0, 1)")
    params, p_arr = _broadcast(params, p_arr)
    upper_tail = p_arr > 0.5
    target = np.where(upper_tail, 1.0 - p_arr, p_arr)

    def residual(x):
        c, s = _cdf_sf(family, params, np.exp(x))
        # positive when x is above the quantile
        return np.where(upper_tail, target - s, c - target)

    x = np.array(_location_guess(family, params), dtype=float) * np.ones_like(p_arr)
    lo, hi = x - 1.0, x + 1.0
    step = np.ones_like(x)
    for _ in range(200):
        r_lo = residual(lo)
        bad = r_lo > 0
        if not np.any(bad):
            break
        lo = np.where(bad, lo - step, lo)
        step = np.where(bad, step * 2.0, step)
    step = np.ones_like(x)
    for _ in range(200):
        r_hi = residual(hi)
        bad = r_hi < 0
        if not np.any(bad):
            break
        hi = np.where(bad, hi + step, hi)
        step = np.where(bad, step * 2.0, step)

    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = residual(x)
        done = (np.abs(r) < tol) | (hi - lo < 1e-15 * np.maximum(1.0, np.abs(x)))
        if np.all(done):
            break
        lo = np.where(r < 0, x, lo)
        hi = np.where(r > 0, x, hi)
        dens = pdf(family, params, np.exp(x)) * np.exp(x)  # d cdf / d log t
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - r / dens
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x = np.where(done, x, np.where(ok, newton, 0.5 * (lo + hi)))
    return np.exp(x)


def mean(family, params):
    family = Family.parse(family)
    if family is Family.GAMMA:
        a, b = (np.asarray(v, dtype=float) for v in params)
        return a / b
    if family is Family.LOGNORMAL:
        mu, s = (np.asarray(v, dtype=float) for v in params)
        return np.exp(mu + 0.5 * s * s)
    mu, s, q = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in params))
    out = np.exp(mu + 0.5 * s * s)
    g = np.abs(q) >= GENGAMMA_LOGNORMAL_SWITCH
    if np.any(g):
        qg, sg = q[g], s[g]
        k = 1.0 / (qg * qg)
        r = sg / qg
        with np.errstate(invalid="ignore"):
            val = np.where(
                k + r > 0,
                np.exp(mu[g] - r * np.log(k) + sc.gammaln(np.maximum(k + r, 1e-300)) - sc.gammaln(k)),
                np.inf,
            )
        out = np.array(out, dtype=float)
        out[g] = val
    return out


def sample(family, params, rng, size=None):
    family = Family.parse(family)
    if family is Family.GAMMA:
        a, b = params
        return rng.gamma(a, 1.0 / np.asarray(b, dtype=float), size=size)
    if family is Family.LOGNORMAL:
        mu, s = params
        return rng.lognormal(mu, s, size=size)
    mu, s, q = params
    if abs(float(q)) < GENGAMMA_LOGNORMAL_SWITCH:
        return rng.lognormal(mu, s, size=size)
    k = 1.0 / (q * q)
    g = rng.standard_gamma(k, size=size)
    w = np.log(g / k) / q
    return np.exp(mu + s * w)


# ---------------------------------------------------------------------------
# AFT linkage


def natural_from_linked(family, eta, ancillary):
    """Natural parameters from the linked value and unconstrained ancillaries."""
    family = Family.parse(family)
    anc = [np.asarray(a, dtype=float) for a in ancillary]
    eta = np.asarray(eta, dtype=float)
    if family is Family.GAMMA:
        return (np.exp(anc[0]), np.exp(-eta))
    if family is Family.LOGNORMAL:
        return (eta, np.exp(anc[0]))
    return (eta, np.exp(anc[0]), anc[1])


def linked_from_natural(family, params):
    """Inverse of :func:`natural_from_linked`: returns ``(eta, ancillary)``."""
    family = Family.parse(family)
    if family is Family.GAMMA:
        a, b = params
        return -math.log(b), (math.log(a),)
    if family is Family.LOGNORMAL:
        mu, s = params
        return mu, (math.log(s),)
    mu, s, q = params
    return mu, (math.log(s), q)


@dataclass(frozen=True)
class DistributionSpec:
    """An immutable, validated member of one of the three families."""

    family: Family
    params: tuple

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        params = tuple(float(p) for p in self.params)
        if len(params) != len(PARAM_NAMES[fam]):
            raise ValidationError(f"{fam.value} takes parameters {PARAM_NAMES[fam]}, got {params}")
        if not all(math.isfinite(p) for p in params):
            raise ValidationError(f"non-finite parameter in {fam.value}{params}")
        positive = {Family.GAMMA: (0, 1), Family.LOGNORMAL: (1,), Family.GENGAMMA: (1,)}[fam]
        for i in positive:
            if params[i] <= 0:
                raise ValidationError(f"{fam.value} parameter {PARAM_NAMES[fam][i]} must be > 0, got {params[i]}")
        object.__setattr__(self, "params", params)

    @classmethod
    def gamma(cls, shape, rate):
        return cls(Family.GAMMA, (shape, rate))

    @classmethod
    def lognormal(cls, meanlog, sdlog):
        return cls(Family.LOGNORMAL, (meanlog, sdlog))

    @classmethod
    def gengamma(cls, mu, sigma, q):
        return cls(Family.GENGAMMA, (mu, sigma, q))

    @property
    def linked(self):
        return linked_from_natural(self.family, self.params)[0]

    @property
    def ancillary(self):
        return linked_from_natural(self.family, self.params)[1]

    def logpdf(self, t):
        return logpdf(self.family, self.params, t)

    def pdf(self, t):
        return pdf(self.family, self.params, t)

    def cdf(self, t):
        return cdf(self.family, self.params, t)

    def sf(self, t):
        return sf(self.family, self.params, t)

    def quantile(self, p):
        return quantile(self.family, self.params, p)

    def mean(self):
        return float(mean(self.family, self.params))

    def sample(self, rng, size=None):
        return sample(self.family, self.params, rng, size=size)

    def to_unconstrained(self):
        eta, anc = linked_from_natural(self.family, self.params)
        return np.array([eta, *anc])

    @classmethod
    def from_unconstrained(cls, family, vector):
        family = Family.parse(family)
        eta, *anc = (float(v) for v in vector)
        return cls(family, tuple(float(p) for p in natural_from_linked(family, eta, anc)))


def density(spec: DistributionSpec, t):
    return spec.pdf(t)


def apply_covariate_shift(spec: DistributionSpec, eta: float) -> DistributionSpec:
    """Stretch the time axis by ``exp(eta)`` via the family's linked parameter."""
    if eta == 0:
        return spec
    linked, anc = linked_from_natural(spec.family, spec.params)
    return DistributionSpec(spec.family, tuple(float(p) for p in natural_from_linked(spec.family, linked + eta, anc)))


# ---------------------------------------------------------------------------
# derivatives with respect to the linked value and the unconstrained ancillaries


def _fd_column(fun, family, eta, anc, y, which, h=1e-5):
    """Per-row central difference of ``fun`` in ancillary ``which``."""
    base = anc[which]
    step = h * np.maximum(1.0, np.abs(base))
    if family is Family.GENGAMMA and which == 1:
        # keep both points clear of the log-normal switch around Q = 0
        step = np.maximum(step, 4.0 * GENGAMMA_LOGNORMAL_SWITCH)
    up = list(anc)
    dn = list(anc)
    up[which] = base + step
    dn[which] = base - step
    f_up = fun(family, natural_from_linked(family, eta, up), y)
    f_dn = fun(family, natural_from_linked(family, eta, dn), y)
    return (f_up - f_dn) / (2.0 * step)


def _prep(eta, ancillary, y):
    arrays = np.broadcast_arrays(np.asarray(eta, dtype=float), *[np.asarray(a, dtype=float) for a in ancillary], np.asarray(y, dtype=float))
    return arrays[0], list(arrays[1:-1]), arrays[-1]


def logpdf_grad(family, eta, ancillary, y):
    """d log f / d(eta, ancillary...) per row, shape ``(n, 1 + n_ancillary)``.

    Requires ``y > 0``.  The generalized gamma shape derivative is taken by
    per-row central differences; everything else is closed form.
    """
    family = Family.parse(family)
    eta, anc, y = _prep(eta, ancillary, y)
    out = np.empty(y.shape + (1 + len(anc),))
    if family is Family.GAMMA:
        a = np.exp(anc[0])
        b = np.exp(-eta)
        out[..., 0] = -a + b * y
        out[..., 1] = a * (np.log(b) + np.log(y) - sc.digamma(a))
        return out
    s = np.exp(anc[0])
    if family is Family.LOGNORMAL:
        z = (np.log(y) - eta) / s
        out[..., 0] = z / s
        out[..., 1] = z * z - 1.0
        return out
    q = anc[1]
    w = (np.log(y) - eta) / s
    ln = np.abs(q) < GENGAMMA_LOGNORMAL_SWITCH
    with np.errstate(divide="ignore", invalid="ignore"):
        qz = q * w
        em1 = np.expm1(qz)
        d_mu = np.where(ln, w / s, em1 / (q * s))
        d_ls = np.where(ln, w * w - 1.0, -1.0 + em1 * qz / (q * q))
    out[..., 0] = d_mu
    out[..., 1] = d_ls
    out[..., 2] = _fd_column(logpdf, family, eta, anc, y, 1)
    return out


def logsf_grad(family, eta, ancillary, y):
    """d log S / d(eta, ancillary...) per row, shape ``(n, 1 + n_ancillary)``."""
    family = Family.parse(family)
    eta, anc, y = _prep(eta, ancillary, y)
    out = np.zeros(y.shape + (1 + len(anc),))
    pos = y > 0
    if family is Family.GAMMA:
        a = np.exp(anc[0])
        x = np.where(pos, np.exp(-eta) * np.where(pos, y, 1.0), 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_g = a * np.log(x) - x - sc.gammaln(a)
            surv = sc.gammaincc(a, x)
            d_eta = np.exp(log_g) / surv
        out[..., 0] = np.where(pos, d_eta, 0.0)
        out[..., 1] = np.where(pos, _fd_column(logsf, family, eta, anc, y, 0), 0.0)
        return np.nan_to_num(out, nan=0.0)
    s = np.exp(anc[0])
    yy = np.where(pos, y, 1.0)
    w = (np.log(yy) - eta) / s
    # inverse Mills ratio phi(w) / Phi(-w), computed on the log scale
    mills = np.exp(-0.5 * w * w - _HALF_LOG_2PI - sc.log_ndtr(-w))
    if family is Family.LOGNORMAL:
        out[..., 0] = np.where(pos, mills / s, 0.0)
        out[..., 1] = np.where(pos, mills * w, 0.0)
        return out
    q = anc[1]
    ln = np.abs(q) < GENGAMMA_LOGNORMAL_SWITCH
    qs = np.where(ln, 1.0, q)
    k = 1.0 / (qs * qs)
    u = k * np.exp(qs * w)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_g = k * np.log(u) - u - sc.gammaln(k)
        surv = np.where(qs > 0, sc.gammaincc(k, u), sc.gammainc(k, u))
        ratio = np.exp(log_g) * np.abs(qs) / surv
    d_mu = np.where(ln, mills, ratio) / s
    d_ls = np.where(ln, mills, ratio) * w
    out[..., 0] = np.where(pos, d_mu, 0.0)
    out[..., 1] = np.where(pos, d_ls, 0.0)
    out[..., 2] = np.where(pos, _fd_column(logsf, family, eta, anc, y, 1), 0.0)
    return np.nan_to_num(out, nan=0.0)
