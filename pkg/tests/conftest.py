from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from tmfusion.indicators import OhlcvBar

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)


def random_walk(rng: np.random.Generator, n: int, start: float = 100.0) -> np.ndarray:
    """A strictly positive random walk of closing prices."""
    steps = rng.normal(0.0, 1.0, size=n)
    walk = start + np.cumsum(steps)
    return np.maximum(walk, 1.0)


def random_bars(rng: np.random.Generator, n: int, start_date: dt.date | None = None) -> list[OhlcvBar]:
    """Valid OHLCV bars around a random-walk close."""
    closes = random_walk(rng, n)
    opens = closes + rng.normal(0.0, 0.5, size=n)
    opens = np.maximum(opens, 0.5)
    highs = np.maximum(opens, closes) + rng.uniform(0.0, 1.0, size=n)
    lows = np.maximum(np.minimum(opens, closes) - rng.uniform(0.0, 1.0, size=n), 0.1)
    d0 = start_date or dt.date(2021, 9, 22)
    bars = []
    for i in range(n):
        bars.append(
            OhlcvBar(
                date=d0 + dt.timedelta(days=i),
                open=float(opens[i]),
                high=float(highs[i]),
                low=float(lows[i]),
                close=float(closes[i]),
                adj_close=float(closes[i]),
            )
        )
    return bars


def constant_bars(n: int, price: float = 50.0, start_date: dt.date | None = None) -> list[OhlcvBar]:
    d0 = start_date or dt.date(2021, 9, 22)
    return [
        OhlcvBar(d0 + dt.timedelta(days=i), price, price, price, price, price)
        for i in range(n)
    ]


def weekday_bars(rng: np.random.Generator, n: int, start_date: dt.date | None = None) -> list[OhlcvBar]:
    """Random-walk bars on weekdays only, leaving weekend gaps in the calendar."""
    bars = random_bars(rng, n, start_date=start_date)
    out = []
    day = (start_date or dt.date(2021, 9, 22))
    for bar in bars:
        while day.weekday() >= 5:
            day += dt.timedelta(days=1)
        out.append(
            OhlcvBar(day, bar.open, bar.high, bar.low, bar.close, bar.adj_close)
        )
        day += dt.timedelta(days=1)
    return out


_TEXT_POOL = [
    "Shares surged after a strong earnings beat",
    "The stock crashed amid panic and heavy losses",
    "Quarterly results due next week",
    "Bullish on this rally, upgraded guidance",
    "Bearish analysts warn of a weak quarter",
    "Volume was unchanged from yesterday",
    "Record profits and confident management",
    "Downgraded on fraud allegations, selloff ahead",
    "Watching the 150 level closely",
    "Strong rebound, buy the dip",
]


def linear_rule_corpus(
    rng: np.random.Generator,
    n: int = 2000,
    width: int = 14,
    noise: float = 0.05,
    margin: float = 0.15,
):
    """Feature rows in [0, 1] whose label is a noisy fixed linear functional.

    Rows within ``margin`` of the separating hyperplane are resampled, so the
    classes are genuinely separable before the label flips.
    """
    w = rng.normal(0, 1, size=width)
    w /= np.linalg.norm(w)
    rows: list[np.ndarray] = []
    labels: list[int] = []
    while len(rows) < n:
        x = rng.uniform(0, 1, size=width)
        m = x @ w - 0.5 * w.sum()
        if abs(m) < margin:
            continue
        rows.append(x)
        labels.append(1 if m > 0 else 0)
    matrix = np.array(rows)
    out = np.array(labels)
    flips = rng.random(n) < noise
    out[flips] = 1 - out[flips]
    return matrix, out


def linear_rule_samples(rng: np.random.Generator, n: int = 2000, width: int = 14):
    """The linear-rule corpus wrapped as dataset samples, split 80/20."""
    from tmfusion.dataset import Sample

    rows, labels = linear_rule_corpus(rng, n=n, width=width)
    samples = [
        Sample(
            numeric=rows[i],
            text=None,
            label=int(labels[i]),
            ticker="SYN",
            day=dt.date(2021, 1, 1) + dt.timedelta(days=i),
            author="gen",
        )
        for i in range(n)
    ]
    cut = int(n * 0.8)
    return samples[:cut], samples[cut:]


def synthetic_tweets(
    rng: np.random.Generator,
    dates: list[dt.date],
    n: int,
    n_authors: int = 8,
    ticker: str = "AAPL",
):
    """Tweets with lexicon-scoreable text spread over the given calendar days."""
    from tmfusion.social import TweetRecord

    tweets = []
    for i in range(n):
        day = dates[int(rng.integers(0, len(dates)))]
        stamp = dt.datetime(
            day.year, day.month, day.day,
            int(rng.integers(0, 24)), int(rng.integers(0, 60)),
            tzinfo=dt.timezone.utc,
        )
        tweets.append(
            TweetRecord(
                id=str(i + 1),
                username=f"user{int(rng.integers(0, n_authors))}",
                timestamp=stamp,
                text=_TEXT_POOL[int(rng.integers(0, len(_TEXT_POOL)))],
                ticker=ticker,
                retweets=int(rng.integers(0, 50)),
                favorites=int(rng.integers(0, 200)),
                replies=int(rng.integers(0, 20)),
                follower_count=int(rng.integers(0, 5000)),
                friends_count=int(rng.integers(0, 1000)),
                hashtags=(ticker,),
            )
        )
    return tweets
