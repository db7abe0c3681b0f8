"""Market indicators over daily OHLCV bars.

Implements the five indicators consumed by the market feature block: simple
and exponential moving averages, the relative strength index, the moving
average convergence/divergence line, the commodity channel index, and
Bollinger bands. All of them share warmup semantics: an output entry is
undefined (NaN) until its lookback window is complete, never zero-filled.

Everything here is a pure function over immutable inputs and safe to call
concurrently.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import Diagnostic, InvalidArgumentError, NotReadyError, SchemaError

OHLCV_COLUMNS = ("Date", "Open", "High", "Low", "Close", "Adj Close")

#: Accepted CSV date formats, tried in order.
_DATE_FORMATS = ("%Y-%m-%d", "%d/%m/%Y")

BB_SCALAR_MODES = ("percent_b", "bandwidth", "middle")

#: Order of the slots in the market feature vector.
MARKET_FEATURE_NAMES = ("rsi", "macd", "cci", "bb", "ma")


@dataclass(frozen=True)
class OhlcvBar:
    """One trading day of prices for a single ticker.

    The adjusted close is carried through unchecked against high/low: split
    and dividend adjustments legitimately push it outside the day's range.
    """

    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float

    def validate(self) -> None:
        prices = (self.open, self.high, self.low, self.close, self.adj_close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise InvalidArgumentError(f"bar {self.date}: prices must be finite and > 0")
        if self.low > min(self.open, self.close):
            raise InvalidArgumentError(f"bar {self.date}: low exceeds open/close")
        if self.high < max(self.open, self.close):
            raise InvalidArgumentError(f"bar {self.date}: high below open/close")
        if self.low > self.high:
            raise InvalidArgumentError(f"bar {self.date}: low exceeds high")


@dataclass(frozen=True)
class IndicatorSeries:
    """An indicator aligned to its input series.

    ``values`` holds NaN for the first ``warmup_len`` entries and finite
    floats everywhere after; ``dates`` is carried when the source series
    had calendar dates attached.
    """

    values: np.ndarray
    warmup_len: int
    dates: tuple[dt.date, ...] | None = None

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 1:
            raise InvalidArgumentError("indicator values must be 1-D")
        if not (0 <= self.warmup_len <= v.size):
            raise InvalidArgumentError("warmup_len out of range")
        if not np.all(np.isnan(v[: self.warmup_len])):
            raise InvalidArgumentError("warmup entries must be undefined")
        if not np.all(np.isfinite(v[self.warmup_len :])):
            raise InvalidArgumentError("post-warmup entries must be finite")

    def __len__(self) -> int:
        return int(self.values.size)

    def defined(self, i: int) -> bool:
        return self.warmup_len <= i < self.values.size


@dataclass(frozen=True)
class IndicatorConfig:
    """Periods and modes for the market feature block."""

    ma_period: int = 10
    rsi_period: int = 27
    macd_fast: int = 12
    macd_slow: int = 26
    cci_period: int = 20
    bb_period: int = 20
    bb_sigma_mult: float = 2.0
    bb_scalar_mode: str = "percent_b"

    def __post_init__(self) -> None:
        if self.ma_period < 1:
            raise InvalidArgumentError("ma_period must be >= 1")
        if self.rsi_period < 2:
            raise InvalidArgumentError("rsi_period must be >= 2")
        if self.macd_fast < 1 or self.macd_fast >= self.macd_slow:
            raise InvalidArgumentError("macd_fast must satisfy 1 <= fast < slow")
        if self.cci_period < 2:
            raise InvalidArgumentError("cci_period must be >= 2")
        if self.bb_period < 2:
            raise InvalidArgumentError("bb_period must be >= 2")
        if not self.bb_sigma_mult > 0:
            raise InvalidArgumentError("bb_sigma_mult must be > 0")
        if self.bb_scalar_mode not in BB_SCALAR_MODES:
            raise InvalidArgumentError(f"bb_scalar_mode must be one of {BB_SCALAR_MODES}")

    @property
    def warmup(self) -> int:
        """Bars needed before every indicator in the block is defined."""
        return max(
            self.ma_period - 1,
            self.rsi_period,
            self.macd_slow - 1,
            self.cci_period - 1,
            self.bb_period - 1,
        )


def _as_series(series: Sequence[float] | np.ndarray) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("series must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("series must be finite")
    return x


def sma(series: Sequence[float] | np.ndarray, n: int) -> IndicatorSeries:
    """Simple moving average: mean of the n most recent values, inclusive."""
    x = _as_series(series)
    if n < 1:
        raise InvalidArgumentError("period must be >= 1")
    out = np.full(x.size, np.nan)
    if x.size >= n:
        windows = np.lib.stride_tricks.sliding_window_view(x, n)
        out[n - 1 :] = windows.mean(axis=1)
    return IndicatorSeries(out, min(n - 1, x.size))


def ema(series: Sequence[float] | np.ndarray, n: int) -> IndicatorSeries:
    """Exponential moving average seeded with the simple mean of the first n values.

    Smoothing weight is 2/(n + 1); after the seed entry each value is
    ``a * x_t + (1 - a) * ema_{t-1}``.
    """
    x = _as_series(series)
    if n < 1:
        raise InvalidArgumentError("period must be >= 1")
    if x.size < n:
        raise InvalidArgumentError(f"series of length {x.size} shorter than period {n}")
    a = 2.0 / (n + 1)
    out = np.full(x.size, np.nan)
    out[n - 1] = x[:n].mean()
    for t in range(n, x.size):
        out[t] = a * x[t] + (1.0 - a) * out[t - 1]
    return IndicatorSeries(out, n - 1)


def rsi(closes: Sequence[float] | np.ndarray, n: int) -> IndicatorSeries:
    """Relative strength index in [0, 100] from smoothed up-moves and down-moves.

    Day-over-day gains and losses are split into two non-negative series,
    each smoothed with an n-period EMA; the index is
    ``100 - 100 / (1 + ema_up / ema_down)``. A flat window (both EMAs zero)
    maps to the neutral midpoint 50; a loss-free window maps to 100.
    """
    x = _as_series(closes)
    if n < 2:
        raise InvalidArgumentError("period must be >= 2")
    if x.size < n + 2:
        raise InvalidArgumentError(f"need at least {n + 2} closes, got {x.size}")
    diff = np.diff(x)
    ups = np.maximum(diff, 0.0)
    downs = np.maximum(-diff, 0.0)
    ema_up = ema(ups, n).values[n - 1 :]
    ema_down = ema(downs, n).values[n - 1 :]

    ratio = np.divide(ema_up, ema_down, out=np.zeros_like(ema_up), where=ema_down != 0)
    vals = np.where(
        (ema_up == 0) & (ema_down == 0),
        50.0,
        np.where(ema_down == 0, 100.0, 100.0 - 100.0 / (1.0 + ratio)),
    )
    out = np.full(x.size, np.nan)
    out[n:] = vals
    return IndicatorSeries(out, n)


def macd(closes: Sequence[float] | np.ndarray, fast: int, slow: int) -> IndicatorSeries:
    """Fast EMA minus slow EMA of closes, defined once the slow EMA is."""
    x = _as_series(closes)
    if fast < 1 or fast >= slow:
        raise InvalidArgumentError("fast period must satisfy 1 <= fast < slow")
    if x.size < slow:
        raise InvalidArgumentError(f"need at least {slow} closes, got {x.size}")
    vals = ema(x, fast).values - ema(x, slow).values
    return IndicatorSeries(vals, slow - 1)


def typical_price(bar: OhlcvBar) -> float:
    return (bar.high + bar.low + bar.close) / 3.0


def cci(bars: Sequence[OhlcvBar], p: int) -> IndicatorSeries:
    """Commodity channel index of the typical price over a p-bar window.

    ``(tp - window_mean) / (0.015 * window_mean_abs_deviation)``, with the
    degenerate zero-deviation window mapped to 0.
    """
    if p < 2:
        raise InvalidArgumentError("period must be >= 2")
    if len(bars) < p:
        raise InvalidArgumentError(f"need at least {p} bars, got {len(bars)}")
    tp = np.array([typical_price(b) for b in bars])
    windows = np.lib.stride_tricks.sliding_window_view(tp, p)
    ma = windows.mean(axis=1)
    dev = np.abs(windows - ma[:, None]).mean(axis=1)
    num = tp[p - 1 :] - ma
    vals = np.where(dev == 0, 0.0, num / (0.015 * np.where(dev == 0, 1.0, dev)))
    out = np.full(tp.size, np.nan)
    out[p - 1 :] = vals
    return IndicatorSeries(out, p - 1, dates=tuple(b.date for b in bars))


def bollinger(
    closes: Sequence[float] | np.ndarray, n: int, m: float
) -> tuple[IndicatorSeries, IndicatorSeries, IndicatorSeries]:
    """Bollinger bands: (upper, middle, lower).

    Middle is the n-period simple moving average; the envelope is m
    population standard deviations of the same window on either side.
    """
    x = _as_series(closes)
    if n < 2:
        raise InvalidArgumentError("period must be >= 2")
    if not m > 0:
        raise InvalidArgumentError("band width multiplier must be > 0")
    if x.size < n:
        raise InvalidArgumentError(f"need at least {n} closes, got {x.size}")
    middle = sma(x, n)
    windows = np.lib.stride_tricks.sliding_window_view(x, n)
    sigma = windows.std(axis=1)
    upper = np.full(x.size, np.nan)
    lower = np.full(x.size, np.nan)
    upper[n - 1 :] = middle.values[n - 1 :] + m * sigma
    lower[n - 1 :] = middle.values[n - 1 :] - m * sigma
    return (
        IndicatorSeries(upper, n - 1),
        middle,
        IndicatorSeries(lower, n - 1),
    )


def _bb_scalar(mode: str, close: float, ub: float, mb: float, lb: float) -> float:
    if mode == "percent_b":
        if ub == lb:
            return 0.5
        return (close - lb) / (ub - lb)
    if mode == "bandwidth":
        return (ub - lb) / mb
    return mb  # middle


def market_feature_matrix(
    bars: Sequence[OhlcvBar], cfg: IndicatorConfig
) -> tuple[np.ndarray, int]:
    """All five market features for every bar at once.

    Returns an (n_bars, 5) array ordered [rsi, macd, cci, bb, ma] with NaN
    rows during warmup, plus the index of the first fully defined row.
    """
    if len(bars) <= cfg.warmup:
        raise InvalidArgumentError(
            f"need more than {cfg.warmup} bars for the configured indicators, got {len(bars)}"
        )
    closes = np.array([b.close for b in bars])
    rsi_s = rsi(closes, cfg.rsi_period)
    macd_s = macd(closes, cfg.macd_fast, cfg.macd_slow)
    cci_s = cci(bars, cfg.cci_period)
    ma_s = sma(closes, cfg.ma_period)
    ub, mb, lb = bollinger(closes, cfg.bb_period, cfg.bb_sigma_mult)

    n = len(bars)
    out = np.full((n, 5), np.nan)
    first = cfg.warmup
    for i in range(first, n):
        out[i, 0] = rsi_s.values[i]
        out[i, 1] = macd_s.values[i]
        out[i, 2] = cci_s.values[i]
        out[i, 3] = _bb_scalar(
            cfg.bb_scalar_mode, closes[i], ub.values[i], mb.values[i], lb.values[i]
        )
        out[i, 4] = ma_s.values[i]
    return out, first


def market_feature_vector(
    bars: Sequence[OhlcvBar], t: dt.date, cfg: IndicatorConfig
) -> np.ndarray:
    """The [rsi, macd, cci, bb, ma] vector for one trading day.

    Raises NotReadyError naming the offending indicator when t falls inside
    any warmup window.
    """
    idx = None
    for i, b in enumerate(bars):
        if b.date == t:
            idx = i
            break
    if idx is None:
        raise InvalidArgumentError(f"date {t} not present in bar history")

    warmups = {
        "rsi": cfg.rsi_period,
        "macd": cfg.macd_slow - 1,
        "cci": cfg.cci_period - 1,
        "bb": cfg.bb_period - 1,
        "ma": cfg.ma_period - 1,
    }
    for name, w in warmups.items():
        if idx < w:
            raise NotReadyError(
                f"indicator '{name}' is undefined at {t}: needs {w} prior bars, have {idx}"
            )
    matrix, _ = market_feature_matrix(bars, cfg)
    return matrix[idx].copy()


# ---------------------------------------------------------------------------
# OHLCV CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class OhlcvIngestResult:
    """Parsed bars plus any label column the file carried and per-line rejects."""

    bars: list[OhlcvBar]
    file_labels: dict[dt.date, int]
    diagnostics: list[Diagnostic]


def _parse_date(raw: str) -> dt.date:
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(raw.strip(), fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparseable date {raw!r} (expected YYYY-MM-DD or DD/MM/YYYY)")


def load_ohlcv_csv(path: str, lenient: bool = False) -> OhlcvIngestResult:
    """Parse a daily bar CSV with header Date,Open,High,Low,Close,Adj Close.

    Rows must be strictly date-ascending after parsing. Extra columns are
    ignored, except an integer ``Label`` column which is captured so callers
    can cross-check it against the computed labels. Malformed rows raise
    SchemaError, or are skipped with a diagnostic when ``lenient``.
    """
    bars: list[OhlcvBar] = []
    file_labels: dict[dt.date, int] = {}
    diagnostics: list[Diagnostic] = []

    def reject(line: int, message: str) -> None:
        if not lenient:
            raise SchemaError(f"{path}: line {line}: {message}")
        diagnostics.append(Diagnostic(line, message))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in OHLCV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        has_label = "Label" in header

        for lineno, row in enumerate(reader, start=2):
            try:
                date = _parse_date(row["Date"])
                bar = OhlcvBar(
                    date=date,
                    open=float(row["Open"]),
                    high=float(row["High"]),
                    low=float(row["Low"]),
                    close=float(row["Close"]),
                    adj_close=float(row["Adj Close"]),
                )
                bar.validate()
            except (ValueError, TypeError, KeyError) as exc:
                reject(lineno, str(exc))
                continue
            if bars and bar.date <= bars[-1].date:
                reject(lineno, f"date {bar.date} not strictly after {bars[-1].date}")
                continue
            bars.append(bar)
            if has_label:
                try:
                    file_labels[date] = int(row["Label"])
                except (ValueError, TypeError):
                    reject(lineno, f"unparseable Label {row.get('Label')!r}")

    return OhlcvIngestResult(bars=bars, file_labels=file_labels, diagnostics=diagnostics)
