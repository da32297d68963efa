"""Prevalence, odds-ratio and correlation summaries of model output.

The odds ratio reported here is the raw compartmental one,
``(I_MD / S_D) / (I_M / S_ND)``. The model has no covariates, so there is
nothing to adjust for and it stands in for an adjusted odds ratio.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .datagen import COLUMNS, Dataset
from .integrator import Trajectory, format_number, write_series_csv
from .model import ModelParams

CORRELATION_LABELS = COLUMNS[1:]
# one model year on the dataset's 30-day-month calendar
WINDOW_DAYS = 360.0


class AlignmentError(ValueError):
    pass


def prevalence_series(traj: Trajectory, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    if params.n_d <= 0 or params.n_nd <= 0:
        raise ValueError("prevalence needs both human groups to be non-empty")
    return traj.column("I_MD") / params.n_d, traj.column("I_M") / params.n_nd


def odds_ratio(prev_d: float, prev_nd: float) -> float:
    """Odds of infection in diabetics over the odds in non-diabetics."""
    return (prev_d / (1.0 - prev_d)) / (prev_nd / (1.0 - prev_nd))


@dataclass(frozen=True)
class OddsRatioSeries:
    times: np.ndarray
    values: np.ndarray
    omitted: int


def aor_series(traj: Trajectory, params: ModelParams | None = None) -> OddsRatioSeries:
    """Odds ratio at each sample; samples with S_D, S_ND or I_M at zero are dropped."""
    s_d, i_md = traj.column("S_D"), traj.column("I_MD")
    s_nd, i_m = traj.column("S_ND"), traj.column("I_M")
    ok = (s_d > 0) & (s_nd > 0) & (i_m > 0)
    values = (i_md[ok] / s_d[ok]) / (i_m[ok] / s_nd[ok])
    return OddsRatioSeries(traj.times[ok], values, int(np.count_nonzero(~ok)))


def autocorrelation_peak_lag(values: np.ndarray, min_lag: int, max_lag: int) -> int:
    """Lag (in samples) in ``[min_lag, max_lag]`` with the largest sample autocorrelation."""
    x = values - values.mean()
    denom = float(x @ x)
    if denom == 0.0:
        raise ValueError("autocorrelation undefined for a constant series")
    max_lag = min(max_lag, x.size - 1)
    lags = np.arange(min_lag, max_lag + 1)
    acf = np.array([x[: x.size - k] @ x[k:] for k in lags]) / denom
    return int(lags[np.argmax(acf)])


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple
    values: np.ndarray  # NaN marks an undefined entry

    def __getitem__(self, pair) -> float:
        a, b = pair
        return float(self.values[self.labels.index(a), self.labels.index(b)])

    @property
    def undefined(self) -> list:
        return [lab for i, lab in enumerate(self.labels) if math.isnan(self.values[i, i])]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["", *self.labels])
            for label, row in zip(self.labels, self.values):
                writer.writerow([label, *("nan" if math.isnan(v) else format_number(v) for v in row)])

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "values": [[None if math.isnan(v) else float(v) for v in row] for row in self.values],
        }


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; NaN when either series is constant."""
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def correlation_matrix(dataset: Dataset) -> CorrelationMatrix:
    if len(dataset) < 3:
        raise ValueError("correlation needs at least 3 rows")
    cols = [dataset[label] for label in CORRELATION_LABELS]
    k = len(cols)
    m = np.full((k, k), math.nan)
    for i in range(k):
        for j in range(i, k):
            r = 1.0 if i == j else pearson(cols[i], cols[j])
            if i == j and np.ptp(cols[i]) == 0:
                r = math.nan
            m[i, j] = m[j, i] = r
    return CorrelationMatrix(CORRELATION_LABELS, m)


def window_maxima(times: np.ndarray, values: np.ndarray, window: float = WINDOW_DAYS) -> list[dict]:
    """Global maximum inside each consecutive window starting at ``times[0]``.

    A trailing remainder shorter than half a window is folded into the last
    full window.
    """
    if times.size == 0:
        return []
    offset = times - times[0]
    idx = np.floor(offset / window).astype(int)
    n_full = int(math.floor(offset[-1] / window))
    if n_full >= 1 and offset[-1] - n_full * window < window / 2:
        idx = np.minimum(idx, n_full - 1)
    peaks = []
    for w in np.unique(idx):
        sel = np.flatnonzero(idx == w)
        j = sel[np.argmax(values[sel])]
        peaks.append({"window": int(w), "time": float(times[j]), "value": float(values[j])})
    return peaks


def seasonal_peaks(values: np.ndarray, min_rise: float = 0.1) -> np.ndarray:
    """Indices of local maxima that rise at least ``min_rise`` times the series
    range above the trough since the previous accepted peak.

    Measuring the rise on the left only keeps a peak just before the end of
    the record; small transients from the initial state are skipped, and a
    higher maximum after a shallow dip replaces the earlier one.
    """
    span = float(np.ptp(values)) if values.size else 0.0
    if span == 0.0:
        return np.array([], dtype=int)
    threshold = min_rise * span
    candidates, _ = find_peaks(values)
    peaks: list[int] = []
    for i in candidates:
        last = peaks[-1] if peaks else 0
        trough = float(values[last : i + 1].min())
        if peaks and values[i] > values[last] and values[last] - trough < threshold:
            peaks[-1] = i
        elif values[i] - trough >= threshold:
            peaks.append(i)
    return np.array(peaks, dtype=int)


@dataclass
class AnalysisReport:
    times: np.ndarray
    prev_d: np.ndarray
    prev_nd: np.ndarray
    odds: OddsRatioSeries
    correlation: CorrelationMatrix
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "correlation": self.correlation.to_dict(),
            "odds_ratio_definition": "(I_MD/S_D)/(I_M/S_ND); unadjusted compartmental odds ratio",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def series_to_csv(self, path) -> None:
        """time,prev_D,prev_ND,odds_ratio; odds ratio is ``nan`` where omitted."""
        odds = np.full(self.times.size, math.nan)
        pos = np.searchsorted(self.times, self.odds.times)
        odds[pos] = self.odds.values
        write_series_csv(path, ["time", "prev_D", "prev_ND", "odds_ratio"], self.times,
                         np.column_stack([self.prev_d, self.prev_nd, odds]))


def summarize(traj: Trajectory, dataset: Dataset, params: ModelParams) -> AnalysisReport:
    if len(traj) != len(dataset) or not np.array_equal(traj.times, dataset.times):
        raise AlignmentError("trajectory and dataset are not on the same time grid")
    prev_d, prev_nd = prevalence_series(traj, params)
    odds = aor_series(traj, params)
    corr = correlation_matrix(dataset) if len(dataset) >= 3 else CorrelationMatrix(
        CORRELATION_LABELS, np.full((8, 8), math.nan))

    i_md, i_m = traj.column("I_MD"), traj.column("I_M")
    peaks_md = window_maxima(traj.times, i_md)
    peaks_m = window_maxima(traj.times, i_m)
    summary = {
        "peak_prevalence_diabetic": float(prev_d.max()),
        "peak_prevalence_nondiabetic": float(prev_nd.max()),
        "peak_infected_diabetic": float(i_md.max()),
        "peak_infected_nondiabetic": float(i_m.max()),
        "annual_peaks_I_MD": peaks_md,
        "annual_peaks_I_M": peaks_m,
        "seasonal_peak_times_I_MD": [float(traj.times[i]) for i in seasonal_peaks(i_md)],
        "seasonal_peak_times_I_M": [float(traj.times[i]) for i in seasonal_peaks(i_m)],
        "odds_ratio_min": float(odds.values.min()) if odds.values.size else None,
        "odds_ratio_max": float(odds.values.max()) if odds.values.size else None,
        "odds_ratio_omitted": odds.omitted,
        "odds_ratio_empty": odds.values.size == 0,
        "undefined_correlations": corr.undefined,
    }
    return AnalysisReport(traj.times, prev_d, prev_nd, odds, corr, summary)
