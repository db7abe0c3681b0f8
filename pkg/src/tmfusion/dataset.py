"""Sample assembly: labeling, normalization, feature fusion, dataset builds.

A sample is one tweet joined to its trading day's market features and the
next trading day's up/down label, with the numeric feature blocks min-max
normalized against the training split only. The build is a deterministic
single chronological pass: per-author credibility is replayed so every
sample sees only strictly-earlier information, and the 80/20 split keeps
sample order.

Artifacts are written to a directory as two binary sample files plus the
normalizer and a build report, all byte-stable for a fixed config.
"""

from __future__ import annotations

import bisect
import datetime as dt
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssemblyError, InvalidArgumentError, JoinError, SchemaError
from .indicators import IndicatorConfig, OhlcvBar, market_feature_matrix
from .social import (
    LexiconSentimentProvider,
    SentimentProvider,
    TweetRecord,
    UserHistoryStore,
    sentiment_vector,
    social_vector,
    tweet_score,
)
from .text import EmbeddingTable, embed_sequence, load_stopwords, tokenize_clean

LABEL_FIELDS = ("close", "open", "adj_close")

#: Numeric feature blocks in concatenation order, with their widths.
BLOCK_WIDTHS = {"market": 5, "social": 6, "sentiment": 3, "credibility": 4}
NUMERIC_BLOCK_ORDER = ("market", "social", "sentiment", "credibility")
FEATURE_FLAGS = NUMERIC_BLOCK_ORDER + ("text",)

TRAIN_FRACTION = 0.8

DATASET_MAGIC = b"TMDS"
DATASET_FORMAT_VERSION = 1

#: Canonical description of the record layout; its digest ships in headers so
#: readers can detect incompatible writers.
SCHEMA_DESCRIPTOR = (
    "tmds-v2: magic 'TMDS'; u32le format_version; u32le header_len; "
    "canonical-json header {schema_hash, ticker, label_field, flags, "
    "numeric_width, numeric_steps, max_len, embedding_dim, count}; records = "
    "u8 label, u32le day_ordinal, u16le author_len, author_utf8, "
    "numeric_steps*numeric_width f64le (row-major, oldest step first), "
    "[max_len*embedding_dim f64le when text flagged]"
)


def schema_hash() -> str:
    return hashlib.sha256(SCHEMA_DESCRIPTOR.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledBar:
    """A bar plus the direction of the following bar's price."""

    bar: OhlcvBar
    label: int


def label_bars(bars: list[OhlcvBar], label_field: str = "close") -> list[LabeledBar]:
    """Label 0 when the day's price exceeds the next day's, 1 otherwise.

    Equality counts as 1 (not a drop). The final bar has no successor and is
    dropped, so the result is one shorter than the input.
    """
    if label_field not in LABEL_FIELDS:
        raise InvalidArgumentError(f"label_field must be one of {LABEL_FIELDS}")
    if len(bars) < 2:
        raise InvalidArgumentError("need at least 2 bars to label")
    out = []
    for today, tomorrow in zip(bars, bars[1:]):
        if tomorrow.date <= today.date:
            raise InvalidArgumentError("bars must be strictly date-ascending")
        price_today = getattr(today, label_field)
        price_tomorrow = getattr(tomorrow, label_field)
        out.append(LabeledBar(today, 0 if price_today > price_tomorrow else 1))
    return out


def compare_file_labels(
    labeled: list[LabeledBar], file_labels: dict[dt.date, int]
) -> list[str]:
    """Dates (ISO) where a CSV's own label column disagrees with the rule."""
    mismatches = []
    for lb in labeled:
        claimed = file_labels.get(lb.bar.date)
        if claimed is not None and claimed != lb.label:
            mismatches.append(lb.bar.date.isoformat())
    return mismatches


# ---------------------------------------------------------------------------
# Min-max normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizerState:
    """Columnwise min/max captured from the training split only."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self) -> None:
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise InvalidArgumentError("mins/maxs must be matching 1-D arrays")
        if np.any(self.maxs < self.mins):
            raise InvalidArgumentError("max must be >= min per column")

    @property
    def width(self) -> int:
        return int(self.mins.size)

    @property
    def degenerate(self) -> np.ndarray:
        """Mask of constant columns (min == max)."""
        return self.mins == self.maxs

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
            "degenerate": [bool(v) for v in self.degenerate],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "NormalizerState":
        return cls(np.array(obj["mins"], dtype=np.float64), np.array(obj["maxs"], dtype=np.float64))


def fit_normalizer(rows: np.ndarray) -> NormalizerState:
    """Columnwise extrema of the given rows; constant columns are flagged."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise InvalidArgumentError("need at least one row to fit")
    if not np.all(np.isfinite(rows)):
        raise InvalidArgumentError("rows must be finite")
    return NormalizerState(rows.min(axis=0), rows.max(axis=0))


def apply_normalizer(state: NormalizerState, row: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]: out-of-range values clamp, constant columns map to 0.5."""
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (state.width,):
        raise InvalidArgumentError(
            f"row width {row.shape} does not match normalizer width {state.width}"
        )
    span = state.maxs - state.mins
    degenerate = state.degenerate
    scaled = np.where(
        degenerate, 0.5, (row - state.mins) / np.where(degenerate, 1.0, span)
    )
    return np.clip(scaled, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Feature sets and sample assembly
# ---------------------------------------------------------------------------


def normalize_feature_set(flags) -> frozenset[str]:
    fs = frozenset(flags)
    if not fs:
        raise InvalidArgumentError("feature set must be nonempty")
    unknown = fs - set(FEATURE_FLAGS)
    if unknown:
        raise InvalidArgumentError(f"unknown feature flags {sorted(unknown)}")
    return fs


def numeric_width(fs: frozenset[str]) -> int:
    return sum(BLOCK_WIDTHS[b] for b in NUMERIC_BLOCK_ORDER if b in fs)


@dataclass(frozen=True, eq=False)
class Sample:
    """One training/test row: normalized numeric blocks, optional text matrix.

    ``numeric`` is a (width,) vector for the default single-timestep build,
    or a (steps, width) matrix when a market lookback window is configured
    (oldest step first, the tweet's own day last; only the market block
    varies across steps).
    """

    numeric: np.ndarray
    text: np.ndarray | None
    label: int
    ticker: str
    day: dt.date
    author: str

    @property
    def numeric_steps(self) -> int:
        return 1 if self.numeric.ndim == 1 else int(self.numeric.shape[0])


def numeric_row(
    fs: frozenset[str],
    market: np.ndarray | None,
    social: np.ndarray | None,
    sentiment: np.ndarray | None,
    credibility: np.ndarray | None,
) -> np.ndarray:
    """Concatenate the raw blocks the feature set demands, in fixed order."""
    blocks = {
        "market": market,
        "social": social,
        "sentiment": sentiment,
        "credibility": credibility,
    }
    parts = []
    for name in NUMERIC_BLOCK_ORDER:
        if name not in fs:
            continue
        block = blocks[name]
        if block is None:
            raise AssemblyError(f"feature set demands block '{name}' but it is missing")
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (BLOCK_WIDTHS[name],):
            raise AssemblyError(
                f"block '{name}' has shape {block.shape}, expected ({BLOCK_WIDTHS[name]},)"
            )
        if not np.all(np.isfinite(block)):
            raise AssemblyError(f"block '{name}' contains undefined values")
        parts.append(block)
    return np.concatenate(parts) if parts else np.zeros(0)


def assemble(
    tweet: TweetRecord,
    sentiment: np.ndarray | None,
    social: np.ndarray | None,
    credibility: np.ndarray | None,
    market: np.ndarray | None,
    label: int,
    fs: frozenset[str],
    norm: NormalizerState,
    embedding: EmbeddingTable | None = None,
    max_len: int = 0,
    stopwords: frozenset[str] | None = None,
) -> Sample:
    """Fuse one tweet's feature blocks into a finished sample.

    Numeric blocks are concatenated [market, social, sentiment, credibility]
    restricted to the feature set, then normalized; the text matrix is
    attached only when the set demands it.
    """
    raw = numeric_row(fs, market, social, sentiment, credibility)
    numeric = apply_normalizer(norm, raw)
    text_matrix = None
    if "text" in fs:
        if embedding is None or max_len < 1:
            raise AssemblyError("feature set demands block 'text' but no embedding/max_len given")
        tokens = tokenize_clean(tweet.text, stopwords if stopwords is not None else load_stopwords())
        text_matrix = embed_sequence(tokens, embedding, max_len)
    return Sample(
        numeric=numeric,
        text=text_matrix,
        label=label,
        ticker=tweet.ticker,
        day=tweet.timestamp.date(),
        author=tweet.username,
    )


# ---------------------------------------------------------------------------
# Dataset build
# ---------------------------------------------------------------------------


@dataclass
class BuildConfig:
    ticker: str
    feature_set: frozenset[str]
    label_field: str = "close"
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)
    sentiment_provider: SentimentProvider | None = None
    embedding: EmbeddingTable | None = None
    stopwords: frozenset[str] | None = None
    train_fraction: float = TRAIN_FRACTION
    max_len_override: int | None = None
    #: > 0 turns each sample's numeric data into a (lookback+1, width)
    #: sequence whose market block walks the preceding trading days.
    market_lookback: int = 0

    def __post_init__(self) -> None:
        self.feature_set = normalize_feature_set(self.feature_set)
        if not (0.0 < self.train_fraction < 1.0):
            raise InvalidArgumentError("train_fraction must be in (0, 1)")
        if "text" in self.feature_set and self.embedding is None:
            raise InvalidArgumentError("text feature demands an embedding table")
        if self.market_lookback < 0:
            raise InvalidArgumentError("market_lookback must be >= 0")
        if self.market_lookback > 0 and "market" not in self.feature_set:
            raise InvalidArgumentError("market_lookback demands the market block")


@dataclass
class BuildResult:
    train: list[Sample]
    test: list[Sample]
    normalizer: NormalizerState
    max_len: int
    report: dict


def _join_day(bar_dates: list[dt.date], day: dt.date) -> int | None:
    """Index of the most recent trading day at or before the calendar day."""
    idx = bisect.bisect_right(bar_dates, day) - 1
    return idx if idx >= 0 else None


def build_dataset(
    tweets: list[TweetRecord], bars: list[OhlcvBar], cfg: BuildConfig
) -> BuildResult:
    """Join tweets to market days, replay author histories, split, normalize.

    Tweets are processed in timestamp order (ties keep input order). Each
    joins to the most recent trading day at or before its calendar day and
    takes that day's next-day label. Credibility sees only strictly earlier
    tweets. The 80/20 split is chronological by sample index; the normalizer
    and the text max-length come from the training split alone.
    """
    fs = cfg.feature_set
    if len(bars) < 2:
        raise InvalidArgumentError("need at least 2 bars")

    labeled = label_bars(bars, cfg.label_field)
    bar_dates = [b.date for b in bars]
    label_by_idx = [lb.label for lb in labeled]

    market_rows = None
    first_defined = 0
    if "market" in fs:
        market_rows, first_defined = market_feature_matrix(bars, cfg.indicators)

    provider = cfg.sentiment_provider or LexiconSentimentProvider.shipped()
    stopwords = cfg.stopwords if cfg.stopwords is not None else (
        load_stopwords() if "text" in fs else frozenset()
    )

    ordered = sorted(
        (t for t in tweets if t.ticker == cfg.ticker),
        key=lambda t: t.timestamp,
    )
    ticker_mismatch = len(tweets) - len(ordered)

    store = UserHistoryStore()
    author_counts: dict[str, int] = {}
    drops = {"before_first_trading_day": 0, "no_label_for_day": 0, "indicator_warmup": 0}

    rows: list[np.ndarray] = []
    tokens_per_sample: list[list[str]] = []
    meta: list[tuple[TweetRecord, int, int]] = []

    for tweet in ordered:
        day_idx = _join_day(bar_dates, tweet.timestamp.date())
        if day_idx is None:
            drops["before_first_trading_day"] += 1
            continue
        if day_idx >= len(label_by_idx):
            # joined to the final bar, whose next-day label does not exist yet
            drops["no_label_for_day"] += 1
            continue
        if "market" in fs and day_idx - cfg.market_lookback < first_defined:
            # every lookback step must be past the indicator warmup
            drops["indicator_warmup"] += 1
            continue

        label = label_by_idx[day_idx]
        se = sentiment_vector(tweet.text, provider)

        credibility = None
        if "credibility" in fs:
            credibility = store.observe(tweet.username, tweet.timestamp)
            store.record(
                tweet.username, tweet.timestamp, tweet_score(se.label, label)
            )

        social = None
        if "social" in fs:
            author_counts[tweet.username] = author_counts.get(tweet.username, 0) + 1
            social = social_vector(tweet, author_counts[tweet.username])

        market = market_rows[day_idx] if "market" in fs else None
        sentiment = se.as_array() if "sentiment" in fs else None

        rows.append(numeric_row(fs, market, social, sentiment, credibility))
        tokens_per_sample.append(
            tokenize_clean(tweet.text, stopwords) if "text" in fs else []
        )
        meta.append((tweet, label, day_idx))

    if not meta:
        raise JoinError(
            f"no usable samples: tweets and bars for {cfg.ticker!r} share no labeled dates"
        )

    n = len(meta)
    n_train = int(n * cfg.train_fraction)

    max_len = 0
    if "text" in fs:
        train_lengths = [len(t) for t in tokens_per_sample[:n_train]]
        max_len = max(train_lengths, default=0) or 1
        if cfg.max_len_override is not None:
            max_len = cfg.max_len_override

    width = numeric_width(fs)
    matrix = np.array(rows) if width > 0 else np.zeros((n, 0))
    if width > 0:
        if n_train == 0:
            raise InvalidArgumentError("train split is empty; need more samples")
        normalizer = fit_normalizer(matrix[:n_train])
    else:
        normalizer = NormalizerState(np.zeros(0), np.zeros(0))

    samples: list[Sample] = []
    for i, (tweet, label, day_idx) in enumerate(meta):
        text_matrix = (
            embed_sequence(tokens_per_sample[i], cfg.embedding, max_len)
            if "text" in fs
            else None
        )
        if cfg.market_lookback > 0:
            # prior steps substitute earlier days' market block; the
            # normalizer fitted on current-day rows may clamp them
            steps = []
            for back in range(cfg.market_lookback, -1, -1):
                step_row = matrix[i].copy()
                step_row[: BLOCK_WIDTHS["market"]] = market_rows[day_idx - back]
                steps.append(apply_normalizer(normalizer, step_row))
            numeric = np.stack(steps)
        else:
            numeric = apply_normalizer(normalizer, matrix[i])
        samples.append(
            Sample(
                numeric=numeric,
                text=text_matrix,
                label=label,
                ticker=tweet.ticker,
                day=bar_dates[day_idx],
                author=tweet.username,
            )
        )

    train, test = samples[:n_train], samples[n_train:]
    train_hash = hashlib.sha256(
        struct.pack("<I", n_train) + matrix[:n_train].astype("<f8").tobytes()
    ).hexdigest()

    report = {
        "schema_version": 1,
        "ticker": cfg.ticker,
        "label_field": cfg.label_field,
        "feature_flags": sorted(fs),
        "numeric_width": width,
        "numeric_steps": cfg.market_lookback + 1,
        "max_len": max_len,
        "embedding_dim": cfg.embedding.dim if cfg.embedding else 0,
        "tweets_in": len(tweets),
        "ticker_mismatch": ticker_mismatch,
        "samples": n,
        "train_samples": n_train,
        "test_samples": n - n_train,
        "dropped": drops,
        "first_sample_day": samples[0].day.isoformat(),
        "last_sample_day": samples[-1].day.isoformat(),
        "leakage_audit_hash": train_hash,
    }
    return BuildResult(train, test, normalizer, max_len, report)


# ---------------------------------------------------------------------------
# Binary dataset artifact
# ---------------------------------------------------------------------------


def _canonical_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_samples(
    path: Path | str,
    samples: list[Sample],
    fs: frozenset[str],
    ticker: str,
    label_field: str,
    max_len: int,
    embedding_dim: int,
    numeric_steps: int = 1,
) -> None:
    width = numeric_width(fs)
    header = {
        "schema_hash": schema_hash(),
        "ticker": ticker,
        "label_field": label_field,
        "flags": sorted(fs),
        "numeric_width": width,
        "numeric_steps": numeric_steps,
        "max_len": max_len,
        "embedding_dim": embedding_dim,
        "count": len(samples),
    }
    expected_shape = (width,) if numeric_steps == 1 else (numeric_steps, width)
    header_bytes = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for s in samples:
            author = s.author.encode("utf-8")
            fh.write(struct.pack("<BIH", s.label, s.day.toordinal(), len(author)))
            fh.write(author)
            if s.numeric.shape != expected_shape:
                raise InvalidArgumentError(
                    f"sample numeric shape {s.numeric.shape} != {expected_shape}"
                )
            fh.write(s.numeric.astype("<f8").tobytes())
            if "text" in fs:
                if s.text is None or s.text.shape != (max_len, embedding_dim):
                    raise InvalidArgumentError("sample text matrix missing or misshaped")
                fh.write(s.text.astype("<f8").tobytes())


def read_samples(path: Path | str) -> tuple[list[Sample], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise SchemaError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != DATASET_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header = json.loads(blob[12 : 12 + header_len])
    if header.get("schema_hash") != schema_hash():
        raise SchemaError(f"{path}: schema hash mismatch")

    width = header["numeric_width"]
    steps = header["numeric_steps"]
    max_len = header["max_len"]
    dim = header["embedding_dim"]
    has_text = "text" in header["flags"]
    offset = 12 + header_len
    samples = []
    for _ in range(header["count"]):
        label, day_ord, author_len = struct.unpack_from("<BIH", blob, offset)
        offset += 7
        author = blob[offset : offset + author_len].decode("utf-8")
        offset += author_len
        numeric = np.frombuffer(
            blob, dtype="<f8", count=steps * width, offset=offset
        ).copy()
        if steps > 1:
            numeric = numeric.reshape(steps, width)
        offset += 8 * steps * width
        text = None
        if has_text:
            text = (
                np.frombuffer(blob, dtype="<f8", count=max_len * dim, offset=offset)
                .reshape(max_len, dim)
                .copy()
            )
            offset += 8 * max_len * dim
        samples.append(
            Sample(
                numeric=numeric,
                text=text,
                label=int(label),
                ticker=header["ticker"],
                day=dt.date.fromordinal(day_ord),
                author=author,
            )
        )
    if offset != len(blob):
        raise SchemaError(f"{path}: {len(blob) - offset} trailing bytes")
    return samples, header


def save_dataset(dirpath: Path | str, result: BuildResult, cfg: BuildConfig) -> None:
    """Write train.bin, test.bin, normalizer.json, build_report.json."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(
        fs=cfg.feature_set,
        ticker=cfg.ticker,
        label_field=cfg.label_field,
        max_len=result.max_len,
        embedding_dim=cfg.embedding.dim if cfg.embedding else 0,
        numeric_steps=cfg.market_lookback + 1,
    )
    write_samples(out / "train.bin", result.train, **meta)
    write_samples(out / "test.bin", result.test, **meta)
    (out / "normalizer.json").write_bytes(
        _canonical_json(result.normalizer.to_json_dict())
    )
    (out / "build_report.json").write_bytes(_canonical_json(result.report))


@dataclass
class LoadedDataset:
    train: list[Sample]
    test: list[Sample]
    normalizer: NormalizerState
    header: dict
    report: dict


def load_dataset(dirpath: Path | str) -> LoadedDataset:
    out = Path(dirpath)
    train, header = read_samples(out / "train.bin")
    test, test_header = read_samples(out / "test.bin")
    shared = ("flags", "numeric_width", "numeric_steps", "max_len", "embedding_dim")
    if {k: header[k] for k in shared} != {k: test_header[k] for k in shared}:
        raise SchemaError(f"{dirpath}: train/test headers disagree")
    normalizer = NormalizerState.from_json_dict(
        json.loads((out / "normalizer.json").read_text("utf-8"))
    )
    report = json.loads((out / "build_report.json").read_text("utf-8"))
    return LoadedDataset(train, test, normalizer, header, report)
