"""Trend statistics for daily series: mean/STD, OLS trend and the ADF test."""

import math
from datetime import date
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from .exceptions import DegenerateSeriesError, SeriesTooShortError, StatisticsError
from .models import (
    AdfResult,
    SeriesReport,
    StationarityVerdict,
    StatsReport,
    TrendFit,
)

DEFAULT_ALPHA = 0.05
MIN_REGRESSION_OBS = 10

# MacKinnon (1994) p-value surface, constant-only regression, one series.
TAU_MAX_C = 2.74
TAU_MIN_C = -18.83
TAU_STAR_C = -1.61
TAU_C_SMALLP = np.array([2.1659, 1.4412, 3.8269]) * np.array([1, 1, 1e-2])
TAU_C_LARGEP = np.array([1.7339, 9.3202, -1.2745, -1.0368]) * np.array(
    [1, 1e-1, 1e-1, 1e-2]
)

# MacKinnon (2010) critical-value response surface, constant-only, one series.
TAU_C_2010 = {
    "1%": [-3.43035, -6.5393, -16.786, -79.433],
    "5%": [-2.86154, -2.8903, -4.234, -40.040],
    "10%": [-2.56677, -1.5384, -2.809, 0.0],
}


class GapPolicy(str, Enum):
    """What happens to missing days before fitting."""

    DROP = "drop"


SeriesLike = Union["TimeSeries", pd.Series, Sequence[float], np.ndarray]


class TimeSeries:
    """
    A daily series with strictly increasing dates.

    Missing values are dropped (gap policy DROP); x positions for the
    trend fit are day offsets from the first date, so gaps keep their width.
    """

    def __init__(
        self,
        values: pd.Series,
        name: str = "value",
        gap_policy: GapPolicy = GapPolicy.DROP,
    ) -> None:
        series = pd.Series(values, dtype=float)
        if not isinstance(series.index, pd.DatetimeIndex):
            series.index = pd.to_datetime(series.index)
        series = series.sort_index()
        if series.index.has_duplicates:
            raise StatisticsError(f"{name}: dates must be strictly increasing")
        if gap_policy == GapPolicy.DROP:
            series = series.dropna()
        if len(series) == 0:
            raise SeriesTooShortError(f"{name}: series is empty")
        self.series = series
        self.name = name
        self.gap_policy = gap_policy

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[Tuple[date, float]], name: str = "value"
    ) -> "TimeSeries":
        pairs = list(pairs)
        days = [day for day, _ in pairs]
        values = [value for _, value in pairs]
        return cls(pd.Series(values, index=pd.to_datetime(days)), name=name)

    @classmethod
    def from_values(
        cls, values: Sequence[float], start: str = "2021-01-01", name: str = "value"
    ) -> "TimeSeries":
        """Consecutive days starting at ``start``."""
        index = pd.date_range(start, periods=len(values), freq="D")
        return cls(pd.Series(list(values), index=index), name=name)

    def __len__(self) -> int:
        return len(self.series)

    @property
    def values(self) -> np.ndarray:
        return self.series.to_numpy(dtype=float)

    @property
    def day_offsets(self) -> np.ndarray:
        elapsed = self.series.index - self.series.index[0]
        return (elapsed / pd.Timedelta(days=1)).to_numpy(dtype=float)


def _as_array(series: SeriesLike) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    if isinstance(series, pd.Series):
        return series.dropna().to_numpy(dtype=float)
    return np.asarray(series, dtype=float)


def _day_positions(series: SeriesLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(series, TimeSeries):
        return series.day_offsets, series.values
    if isinstance(series, pd.Series) and isinstance(series.index, pd.DatetimeIndex):
        wrapped = TimeSeries(series)
        return wrapped.day_offsets, wrapped.values
    values = _as_array(series)
    return np.arange(len(values), dtype=float), values


def mean_std(series: SeriesLike) -> Tuple[float, float]:
    """
    Sample mean and standard deviation (n - 1 denominator).

    Raises:
        SeriesTooShortError: fewer than two values
    """
    values = _as_array(series)
    if len(values) < 2:
        raise SeriesTooShortError(
            f"standard deviation needs at least 2 values, got {len(values)}"
        )
    return float(np.mean(values)), float(np.std(values, ddof=1))


def ols_fit(series: SeriesLike) -> TrendFit:
    """
    Least-squares line of value against day index.

    Raises:
        DegenerateSeriesError: fewer than two distinct day positions
    """
    x, y = _day_positions(series)
    if len(y) < 2 or len(np.unique(x)) < 2:
        raise DegenerateSeriesError("trend fit needs at least two distinct days")
    design = np.column_stack([np.ones_like(x), x])
    (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - (intercept + slope * x)
    dof = len(y) - 2
    rse = float(np.sqrt(residuals @ residuals / dof)) if dof > 0 else 0.0
    return TrendFit(
        slope=float(slope),
        intercept=float(intercept),
        residual_std_error=rse,
        n_obs=len(y),
    )


def default_max_lag(n: int) -> int:
    """Schwert rule ``floor(12 * (n / 100) ** 0.25)``, capped for the regression."""
    return max(0, min(int(math.floor(12.0 * (n / 100.0) ** 0.25)), n // 2 - 2))


def mackinnon_pvalue(statistic: float) -> float:
    """Approximate p-value of an ADF statistic (constant only, one series)."""
    if statistic > TAU_MAX_C:
        return 1.0
    if statistic < TAU_MIN_C:
        return 0.0
    coefficients = TAU_C_SMALLP if statistic <= TAU_STAR_C else TAU_C_LARGEP
    return float(norm.cdf(np.polyval(coefficients[::-1], statistic)))


def mackinnon_critical_values(n_obs: int) -> Dict[str, float]:
    """1%, 5% and 10% critical values for ``n_obs`` regression observations."""
    inverse = 1.0 / n_obs
    return {
        level: float(sum(c * inverse**power for power, c in enumerate(coefficients)))
        for level, coefficients in TAU_C_2010.items()
    }


def classify_stationarity(
    p_value: float, alpha: float = DEFAULT_ALPHA
) -> StationarityVerdict:
    """Stationary iff ``p_value < alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if p_value < alpha:
        return StationarityVerdict.STATIONARY
    return StationarityVerdict.NON_STATIONARY


def _ols(design: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, float, np.ndarray]:
    """Coefficients, residual sum of squares and the pseudo-inverse of ``design``."""
    pinv = np.linalg.pinv(design)
    beta = pinv @ y
    residuals = y - design @ beta
    return beta, float(residuals @ residuals), pinv


def _aic(ssr: float, nobs: int, k: int) -> float:
    return nobs * math.log(2 * math.pi) + nobs * math.log(ssr / nobs) + nobs + 2 * k


def _adf_design(
    values: np.ndarray, lags: int, nobs: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Columns: constant, lagged level, lagged differences; the last ``nobs`` rows."""
    diff = np.diff(values)
    end = len(diff)
    columns = [np.ones(nobs), values[end - nobs:end]]
    for lag in range(1, lags + 1):
        columns.append(diff[end - nobs - lag:end - lag])
    return np.column_stack(columns), diff[end - nobs:]


def adf_test(
    series: SeriesLike, max_lag: Optional[int] = None, alpha: float = DEFAULT_ALPHA
) -> AdfResult:
    """
    Augmented Dickey-Fuller test with a constant.

    Regresses the first difference on a constant, the lagged level and k
    lagged differences. k minimizes AIC over 0..max_lag, all candidates
    fitted on the same sample; ties go to the smaller k. The final model
    is refitted on every observation available at k.

    Args:
        series: Values in time order (gaps already dropped)
        max_lag: Largest k considered; defaults to the Schwert rule
        alpha: Significance level for the verdict

    Raises:
        DegenerateSeriesError: constant series
        SeriesTooShortError: fewer than ten regression rows at max_lag
    """
    values = _as_array(series)
    n = len(values)
    if n == 0:
        raise SeriesTooShortError("ADF needs a non-empty series")
    if np.ptp(values) == 0:
        raise DegenerateSeriesError("ADF is undefined for a constant series")
    if max_lag is None:
        max_lag = default_max_lag(n)
    elif max_lag < 0 or max_lag > n // 2 - 2:
        raise SeriesTooShortError(
            f"max_lag {max_lag} must be in 0..{max(n // 2 - 2, 0)} for {n} values"
        )
    if n - 1 - max_lag < MIN_REGRESSION_OBS:
        raise SeriesTooShortError(
            f"ADF needs at least {MIN_REGRESSION_OBS} observations "
            "after differencing and lagging, "
            f"got {n - 1 - max_lag}"
        )

    common = n - 1 - max_lag
    full_design, target = _adf_design(values, max_lag, common)
    best_lag, best_ic = 0, math.inf
    for lags in range(max_lag + 1):
        design = full_design[:, : lags + 2]
        _, ssr, _ = _ols(design, target)
        ic = _aic(ssr, common, design.shape[1]) if ssr > 0 else -math.inf
        if ic < best_ic:
            best_lag, best_ic = lags, ic

    nobs = n - 1 - best_lag
    design, target = _adf_design(values, best_lag, nobs)
    beta, ssr, pinv = _ols(design, target)
    dof = nobs - design.shape[1]
    if dof <= 0 or ssr <= 0:
        raise DegenerateSeriesError("ADF regression has no residual variance")
    # s^2 (X^T X)^-1 evaluated as s^2 pinv(X) pinv(X)^T
    covariance = (ssr / dof) * (pinv @ pinv.T)
    statistic = float(beta[1] / math.sqrt(covariance[1, 1]))
    p_value = mackinnon_pvalue(statistic)
    return AdfResult(
        statistic=statistic,
        p_value=p_value,
        used_lag=best_lag,
        n_obs=nobs,
        alpha=alpha,
        verdict=classify_stationarity(p_value, alpha),
        critical_values=mackinnon_critical_values(nobs),
        ic_best=None if math.isinf(best_ic) else float(best_ic),
    )


def trim_anomalies(series: SeriesLike, k: float = 5.0) -> SeriesLike:
    """
    Drop points further than ``k`` median absolute deviations from the median.

    Series with zero MAD are returned unchanged.
    """
    if isinstance(series, TimeSeries):
        kept = series.series[_keep_mask(series.values, k)]
        return TimeSeries(kept, name=series.name, gap_policy=series.gap_policy)
    if isinstance(series, pd.Series):
        return series[_keep_mask(series.to_numpy(dtype=float), k)]
    values = np.asarray(series, dtype=float)
    return values[_keep_mask(values, k)]


def _keep_mask(values: np.ndarray, k: float) -> np.ndarray:
    median = np.nanmedian(values)
    mad = np.nanmedian(np.abs(values - median))
    if mad == 0 or np.isnan(mad):
        return np.ones(len(values), dtype=bool)
    return np.abs(values - median) <= k * mad


def analyze_series(
    name: str,
    series: SeriesLike,
    alpha: float = DEFAULT_ALPHA,
    max_lag: Optional[int] = None,
    trim: bool = False,
    strict: bool = False,
) -> SeriesReport:
    """
    Mean/STD, ADF and trend for one series.

    With ``strict`` statistical errors propagate; otherwise the failing
    statistic is left empty and ``note`` says why.
    """
    if not isinstance(series, TimeSeries):
        if isinstance(series, pd.Series):
            series = TimeSeries(series, name=name)
        else:
            series = TimeSeries.from_values(series, name=name)
    if trim:
        series = trim_anomalies(series)
    report = SeriesReport(
        value=name, n_obs=len(series), mean=float(np.mean(series.values))
    )
    notes: List[str] = []
    try:
        report.std = mean_std(series)[1]
    except StatisticsError as exc:
        if strict:
            raise
        notes.append(str(exc))
    try:
        adf = adf_test(series, max_lag=max_lag, alpha=alpha)
        report.adf_stat = adf.statistic
        report.p_value = adf.p_value
        report.used_lag = adf.used_lag
        report.conclusion = adf.verdict
    except StatisticsError as exc:
        if strict:
            raise
        notes.append(str(exc))
    try:
        trend = ols_fit(series)
        report.slope = trend.slope
        report.intercept = trend.intercept
    except StatisticsError as exc:
        if strict:
            raise
        notes.append(str(exc))
    report.note = "; ".join(notes) or None
    return report


DEFAULT_SERIES = [
    "doh",
    "dot",
    "doq",
    "dns",
    "total",
    "tls_established",
    "port443",
    "unique_src_ips",
]


def analyze_daily_counts(
    frame: pd.DataFrame,
    columns: Optional[Sequence[str]] = None,
    alpha: float = DEFAULT_ALPHA,
    max_lag: Optional[int] = None,
    trim: bool = False,
    strict: bool = False,
    source: str = "",
) -> StatsReport:
    """
    Analyze each selected column of a date-indexed daily frame.

    Days whose ``total`` is zero are outages and count as missing.
    """
    if "date" not in frame.columns:
        raise StatisticsError("daily frame needs a 'date' column")
    if columns is None:
        columns = [column for column in DEFAULT_SERIES if column in frame.columns] or [
            column for column in frame.columns if column != "date"
        ]
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise StatisticsError(f"unknown series: {', '.join(missing)}")
    indexed = frame.set_index(pd.to_datetime(frame["date"]))
    if "total" in indexed.columns:
        indexed = indexed[indexed["total"] != 0]
    rows = [
        analyze_series(
            column,
            TimeSeries(indexed[column].astype(float), name=column),
            alpha=alpha,
            max_lag=max_lag,
            trim=trim,
            strict=strict,
        )
        for column in columns
    ]
    return StatsReport(source=source, alpha=alpha, trimmed=trim, rows=rows)
