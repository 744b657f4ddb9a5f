"""Survival estimators and evaluation metrics.

Kaplan-Meier, censoring Kaplan-Meier, Breslow baseline hazard, Harrell's
C-index, Graf's IPCW Brier score and its time integral, plus an O(n^2)
transcription of the Cox partial likelihood used as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, UndefinedMetricError, WeightError


@dataclass
class SurvivalTable:
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64).ravel()
        self.event = np.asarray(self.event, dtype=np.int64).ravel()
        if len(self.time) != len(self.event):
            raise DimensionError(f"{len(self.time)} times but {len(self.event)} event flags")
        if len(self.time) == 0:
            raise DimensionError("survival table must hold at least one record")
        if not np.all(np.isfinite(self.time)) or np.any(self.time <= 0):
            raise DomainError("survival times must be positive and finite")
        if np.any((self.event != 0) & (self.event != 1)):
            raise DomainError("event indicators must be 0 or 1")

    def __len__(self):
        return len(self.time)

    def flipped(self):
        return SurvivalTable(self.time, 1 - self.event)

    def subset(self, index):
        return SurvivalTable(self.time[index], self.event[index])


@dataclass
class StepFunction:
    """Right-continuous step function.

    ``f(t) = values[k]`` for ``knots[k] <= t < knots[k+1]`` and
    ``value_before_first`` for ``t < knots[0]``.
    """

    knots: np.ndarray
    values: np.ndarray
    value_before_first: float = 0.0

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.knots.shape != self.values.shape:
            raise DimensionError("knots and values must have equal length")
        if np.any(np.diff(self.knots) <= 0):
            raise DomainError("knots must be strictly increasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        padded = np.concatenate([[self.value_before_first], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def left_limit(self, t):
        """f(t-) = lim of f(s) as s increases to t."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.knots, t, side="left") - 1
        padded = np.concatenate([[self.value_before_first], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def map(self, fn):
        return StepFunction(self.knots, fn(self.values), fn(self.value_before_first))


def _event_counts(table):
    """Distinct event times with death counts and risk-set sizes."""
    times = np.unique(table.time[table.event == 1])
    deaths = np.array([np.sum((table.time == t) & (table.event == 1)) for t in times], dtype=float)
    at_risk = np.array([np.sum(table.time >= t) for t in times], dtype=float)
    return times, deaths, at_risk


def kaplan_meier(table):
    """Kaplan-Meier survival estimate as a step function (equal to 1 before the first event)."""
    times, deaths, at_risk = _event_counts(table)
    return StepFunction(times, np.cumprod((at_risk - deaths) / at_risk), 1.0)


def censoring_km(table):
    """Kaplan-Meier estimate of the censoring survival function G."""
    return kaplan_meier(table.flipped())


def breslow_baseline(table, r):
    """Breslow estimate of the cumulative baseline hazard H0."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != table.time.shape:
        raise DimensionError(f"{len(r)} log-hazards for {len(table)} records")
    times = np.unique(table.time[table.event == 1])
    shift = r.max()
    w = np.exp(r - shift)
    increments = []
    for t in times:
        d = np.sum((table.time == t) & (table.event == 1))
        increments.append(d / (w[table.time >= t].sum() * math.exp(shift)))
    return StepFunction(times, np.cumsum(increments), 0.0)


def survival_curve(H0, r):
    """Cox survival ``S(t | r) = exp(-H0(t) * exp(r))``."""
    risk = math.exp(r)
    return H0.map(lambda v: np.exp(-np.asarray(v) * risk))


def concordance_index(table, r):
    """Harrell's C-index by explicit pair enumeration.

    A pair (i, j) is comparable when ``t_i < t_j`` and subject i had the
    event. Concordant pairs (``r_i > r_j``) score 1, risk ties score 0.5.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != table.time.shape:
        raise DimensionError(f"{len(r)} risk scores for {len(table)} records")
    t, e = table.time, table.event
    comparable = (t[:, None] < t[None, :]) & (e[:, None] == 1)
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise UndefinedMetricError("C-index undefined: no comparable pairs")
    diff = r[:, None] - r[None, :]
    score = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float(score[comparable].sum() / n_pairs)


def brier_score(t_eval, table, s_pred, G):
    """Graf's inverse-probability-of-censoring weighted Brier score at ``t_eval``.

    ``s_pred[i]`` is the predicted survival probability of subject i at
    ``t_eval``; ``G`` is the censoring survival step function.
    """
    s_pred = np.asarray(s_pred, dtype=np.float64)
    if s_pred.shape != table.time.shape:
        raise DimensionError(f"{len(s_pred)} predictions for {len(table)} records")
    t, e = table.time, table.event
    died = (t <= t_eval) & (e == 1)
    alive = t > t_eval
    total = 0.0
    if np.any(died):
        g_died = G.left_limit(t[died])
        if np.any(g_died <= 0):
            bad = t[died][np.argmin(g_died)]
            raise WeightError(f"censoring survival is zero just before t={bad}")
        total += np.sum(s_pred[died] ** 2 / g_died)
    if np.any(alive):
        g_eval = G(t_eval)
        if g_eval <= 0:
            raise WeightError(f"censoring survival is zero at t={t_eval}")
        total += np.sum((1.0 - s_pred[alive]) ** 2) / g_eval
    return float(total / len(table))


def default_ibs_grid(table, n_points=50):
    """Equally spaced grid between the 5th and 95th percentile of observed times."""
    lo, hi = np.percentile(table.time, [5, 95])
    return np.linspace(lo, hi, n_points)


def integrated_brier(grid, table, predict, G=None):
    """Trapezoidal integral of the Brier score over ``grid``, divided by its span.

    ``predict(t)`` returns the per-subject survival probabilities at ``t``.
    ``G`` defaults to the censoring Kaplan-Meier estimate of ``table``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("IBS grid needs at least two strictly increasing points", "grid")
    if G is None:
        G = censoring_km(table)
    scores = np.array([brier_score(t, table, predict(t), G) for t in grid])
    area = np.sum(0.5 * (scores[1:] + scores[:-1]) * np.diff(grid))
    return float(area / (grid[-1] - grid[0]))


def cox_nll_oracle(r, table):
    """Direct double loop over the partial likelihood; returns ``(loss, n_events)``."""
    r = [float(v) for v in r]
    t = [float(v) for v in table.time]
    e = [int(v) for v in table.event]
    n = len(t)
    n_events = sum(e)
    if n_events == 0:
        return 0.0, 0
    total = 0.0
    for i in range(n):
        if not e[i]:
            continue
        risk = [r[j] for j in range(n) if t[j] >= t[i]]
        m = max(risk)
        log_denominator = m + math.log(sum(math.exp(v - m) for v in risk))
        total += r[i] - log_denominator
    return -total / n_events, n_events
