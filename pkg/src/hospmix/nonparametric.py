"""Aalen-Johansen cumulative incidence for competing risks out of one state."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import Delta, StateId


@dataclass(frozen=True)
class CifCurve:
    """Right-continuous step function starting at 0 at t = 0.

    ``times`` are the distinct event times and ``values`` the CIF just after
    each; ``survival`` is the Kaplan-Meier overall event-free estimate at the
    same times and ``at_risk`` the number at risk just before them.
    """

    destination: StateId
    times: np.ndarray
    values: np.ndarray
    at_risk: np.ndarray
    survival: np.ndarray

    @property
    def steps(self):
        return list(zip(self.times.tolist(), self.values.tolist()))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate(([0.0], self.values))
        return padded[idx]

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left")
        padded = np.concatenate(([0.0], self.values))
        return padded[idx]


def aalen_johansen(observations, destinations=None) -> dict[StateId, CifCurve]:
    """CIF per destination; rows with delta 2 or 3 are censored at ``y``.

    Events are counted before censorings tied at the same time.
    """
    obs = list(observations)
    if not obs:
        raise ValidationError("aalen_johansen needs at least one observation")
    origins = {o.origin for o in obs}
    if len(origins) > 1:
        raise ValidationError(f"observations mix origins {sorted(s.value for s in origins)}")
    if destinations is None:
        destinations = sorted(
            {o.destination for o in obs if o.delta == Delta.EXACT}, key=lambda s: s.value
        )
    destinations = list(destinations)

    y = np.array([o.y for o in obs], dtype=float)
    is_event = np.array([o.delta == Delta.EXACT for o in obs])
    event_times = np.unique(y[is_event])
    # at risk at t: everyone with y >= t
    y_sorted = np.sort(y)
    n_risk = len(y) - np.searchsorted(y_sorted, event_times, side="left")

    counts = np.zeros((len(destinations), event_times.size))
    pos = {d: j for j, d in enumerate(destinations)}
    for o in obs:
        if o.delta == Delta.EXACT:
            if o.destination not in pos:
                raise ValidationError(f"event to {o.destination.value} not among {destinations}")
            counts[pos[o.destination], np.searchsorted(event_times, o.y)] += 1

    total = counts.sum(axis=0)
    surv = np.cumprod(1.0 - total / n_risk) if event_times.size else np.empty(0)
    surv_before = np.concatenate(([1.0], surv[:-1])) if event_times.size else surv
    out = {}
    for d, j in pos.items():
        cif = np.cumsum(surv_before * counts[j] / n_risk)
        out[d] = CifCurve(d, event_times, cif, n_risk.astype(int), surv)
    return out


def gof_distance(parametric, curve: CifCurve) -> float:
    """Largest gap between a parametric CIF and the step curve at its step times."""
    if curve.times.size == 0:
        return 0.0
    p = np.asarray(parametric(curve.times), dtype=float)
    return float(np.abs(p - curve.values).max())


def write_curve(path, times, values, header=("t", "value")):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, v in zip(times, values):
            w.writerow([repr(float(t)), repr(float(v))])


__all__ = ["CifCurve", "aalen_johansen", "gof_distance", "write_curve"]
