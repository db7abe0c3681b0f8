"""Tweet-derived features: sentiment, social-activity counters, user credibility.

Three feature families live here. The sentiment vector scores a tweet's text
through a pluggable provider (the shipped static lexicon by default, so runs
are hermetic). The social vector copies the raw activity counters off the
tweet plus a running per-author tweet count. The credibility vector tracks
how often an author's sentiment has historically agreed with the next day's
actual price direction, via per-author hit/miss counters and three derived
scores.

Vector extraction is pure. Per-author history is single-writer: one author's
log must be applied serially in timestamp order (UserHistoryStore enforces
this), though distinct authors can be replayed in parallel.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
import re
from collections import deque
from dataclasses import dataclass
from importlib import resources
from typing import Protocol

import numpy as np

from .errors import Diagnostic, InvalidArgumentError, OrderingError, SchemaError

#: |polarity| below this is treated as neutral.
NEUTRAL_THRESHOLD = 0.05

#: Names of the social vector's slots, in order.
SOCIAL_FEATURE_NAMES = (
    "follower_count",
    "friends_count",
    "replies",
    "retweets",
    "favorites",
    "author_tweet_count",
)

_WORD_RE = re.compile(r"[a-z0-9]+")

_REQUIRED_TWEET_FIELDS = ("id", "username", "timestamp", "text", "ticker")
_COUNTER_FIELDS = ("retweets", "favorites", "replies", "follower_count", "friends_count")


@dataclass(frozen=True)
class TweetRecord:
    """One tweet as ingested from the JSON-lines corpus."""

    id: str
    username: str
    timestamp: dt.datetime
    text: str
    ticker: str
    retweets: int = 0
    favorites: int = 0
    replies: int = 0
    follower_count: int = 0
    friends_count: int = 0
    hashtags: tuple[str, ...] = ()

    def validate(self) -> None:
        if not self.id:
            raise InvalidArgumentError("tweet id must be nonempty")
        if not self.username:
            raise InvalidArgumentError("username must be nonempty")
        for name in _COUNTER_FIELDS:
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")


@dataclass(frozen=True)
class SentimentVector:
    """Polarity in [-1, 1], subjectivity in [0, 1], and the thresholded label."""

    polarity: float
    subjectivity: float
    label: int

    def as_array(self) -> np.ndarray:
        # Slot order: label, subjectivity, polarity.
        return np.array([float(self.label), self.subjectivity, self.polarity])


def polarity_label(polarity: float, threshold: float = NEUTRAL_THRESHOLD) -> int:
    if abs(polarity) < threshold:
        return 0
    return 1 if polarity > 0 else -1


class SentimentProvider(Protocol):
    def score(self, text: str) -> SentimentVector: ...


class LexiconSentimentProvider:
    """Averages per-word polarity/subjectivity over the words a lexicon knows.

    Tokens are lowercase ASCII alphanumeric runs; anything the lexicon does
    not list (stop-words included) simply contributes nothing.
    """

    def __init__(self, lexicon: dict[str, tuple[float, float]],
                 threshold: float = NEUTRAL_THRESHOLD):
        self._lexicon = dict(lexicon)
        self._threshold = threshold

    @classmethod
    def from_file(cls, path: str) -> "LexiconSentimentProvider":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(_parse_lexicon(raw, source=path))

    @classmethod
    def shipped(cls) -> "LexiconSentimentProvider":
        raw = json.loads(
            resources.files("tmfusion.resources").joinpath("lexicon.json").read_text("utf-8")
        )
        return cls(_parse_lexicon(raw, source="shipped lexicon"))

    def score(self, text: str) -> SentimentVector:
        matched = [
            self._lexicon[tok]
            for tok in _WORD_RE.findall(text.lower())
            if tok in self._lexicon
        ]
        if not matched:
            return SentimentVector(0.0, 0.0, 0)
        polarity = sum(m[0] for m in matched) / len(matched)
        subjectivity = sum(m[1] for m in matched) / len(matched)
        return SentimentVector(polarity, subjectivity, polarity_label(polarity, self._threshold))


def _parse_lexicon(raw: object, source: str) -> dict[str, tuple[float, float]]:
    if not isinstance(raw, dict):
        raise SchemaError(f"{source}: lexicon must be a JSON object")
    lexicon: dict[str, tuple[float, float]] = {}
    for word, entry in raw.items():
        try:
            pol = float(entry["polarity"])
            subj = float(entry["subjectivity"])
        except (TypeError, KeyError, ValueError) as exc:
            raise SchemaError(f"{source}: bad entry for {word!r}: {exc}") from exc
        if not (-1.0 <= pol <= 1.0 and 0.0 <= subj <= 1.0):
            raise SchemaError(f"{source}: {word!r} scores out of range")
        lexicon[word.lower()] = (pol, subj)
    return lexicon


def sentiment_vector(text: str, provider: SentimentProvider) -> SentimentVector:
    """Score a tweet's text; empty text is neutral by convention."""
    if not text:
        return SentimentVector(0.0, 0.0, 0)
    return provider.score(text)


def social_vector(tweet: TweetRecord, author_tweet_count: int) -> np.ndarray:
    """Activity counters plus the author's running tweet count (this tweet included)."""
    if author_tweet_count < 1:
        raise InvalidArgumentError("author_tweet_count includes the current tweet, so >= 1")
    return np.array(
        [
            float(tweet.follower_count),
            float(tweet.friends_count),
            float(tweet.replies),
            float(tweet.retweets),
            float(tweet.favorites),
            float(author_tweet_count),
        ]
    )


def tweet_score(predicted_label: int, actual_label: int) -> int:
    """+1 when the sentiment called the day's direction, -1 otherwise.

    Neutral sentiment counts as a rise call: labels -1/0/+1 map to direction
    classes 0/1/1 before comparing against the actual 0/1 movement.
    """
    if predicted_label not in (-1, 0, 1):
        raise InvalidArgumentError("predicted_label must be -1, 0, or 1")
    if actual_label not in (0, 1):
        raise InvalidArgumentError("actual_label must be 0 or 1")
    predicted_class = 0 if predicted_label == -1 else 1
    return 1 if predicted_class == actual_label else -1


@dataclass(frozen=True)
class UserHistory:
    """Monotone hit/miss counters for one author's scored tweets."""

    username: str
    hits: int = 0
    misses: int = 0
    total: int = 0
    last_updated: dt.datetime | None = None

    def __post_init__(self) -> None:
        if self.hits < 0 or self.misses < 0 or self.hits + self.misses != self.total:
            raise InvalidArgumentError("history counters must satisfy hits + misses = total")


def update_user_history(hist: UserHistory, score: int, at: dt.datetime) -> UserHistory:
    """Fold one tweet score into the author's history; rejects time regressions."""
    if score not in (1, -1):
        raise InvalidArgumentError("score must be +1 or -1")
    if hist.last_updated is not None and at < hist.last_updated:
        raise OrderingError(
            f"{hist.username}: update at {at} precedes last update {hist.last_updated}"
        )
    return dataclasses.replace(
        hist,
        hits=hist.hits + (1 if score == 1 else 0),
        misses=hist.misses + (1 if score == -1 else 0),
        total=hist.total + 1,
        last_updated=at,
    )


def author_rating(hist: UserHistory) -> float:
    """Hit ratio in [0, 1]; an unscored author rates 0."""
    if hist.total == 0:
        return 0.0
    return hist.hits / hist.total


def recommendation_score(hist: UserHistory) -> float:
    """0 for a zero-rated author, otherwise 1 + log10 of the hit count."""
    if author_rating(hist) == 0.0:
        return 0.0
    return 1.0 + math.log10(hist.hits)


def representativeness(hist: UserHistory) -> float:
    """Plain average of the hit ratio and the raw hit count."""
    return (author_rating(hist) + hist.hits) / 2.0


def user_history_vector(hist: UserHistory) -> np.ndarray:
    """[hits, misses, recommendation, representativeness] for one author."""
    return np.array(
        [
            float(hist.hits),
            float(hist.misses),
            recommendation_score(hist),
            representativeness(hist),
        ]
    )


class UserHistoryStore:
    """Per-author history replay with strictly-prior visibility.

    ``observe(author, at)`` returns the credibility vector a sample at time
    ``at`` may legally see: only scores recorded with strictly earlier
    timestamps are folded in, so two tweets sharing a timestamp never see
    each other. ``record`` queues the observed tweet's own score for future
    observations. Timestamps must be non-decreasing per author.
    """

    def __init__(self) -> None:
        self._states: dict[str, UserHistory] = {}
        self._pending: dict[str, deque[tuple[dt.datetime, int]]] = {}

    def _flush(self, username: str, before: dt.datetime) -> UserHistory:
        state = self._states.get(username) or UserHistory(username=username)
        queue = self._pending.get(username)
        while queue and queue[0][0] < before:
            at, score = queue.popleft()
            state = update_user_history(state, score, at)
        self._states[username] = state
        return state

    def observe(self, username: str, at: dt.datetime) -> np.ndarray:
        return user_history_vector(self._flush(username, at))

    def record(self, username: str, at: dt.datetime, score: int) -> None:
        queue = self._pending.setdefault(username, deque())
        if queue:
            last = queue[-1][0]
        else:
            state = self._states.get(username)
            last = state.last_updated if state else None
        if last is not None and at < last:
            raise OrderingError(f"{username}: score at {at} precedes {last}")
        queue.append((at, score))

    def final_state(self, username: str) -> UserHistory:
        """The history with every recorded score applied."""
        return self._flush(username, dt.datetime.max.replace(tzinfo=dt.timezone.utc))

    def usernames(self) -> list[str]:
        return sorted(set(self._states) | set(self._pending))


# ---------------------------------------------------------------------------
# Tweet JSONL ingestion
# ---------------------------------------------------------------------------


def parse_timestamp(raw: str) -> dt.datetime:
    """ISO-8601 timestamp; trailing Z accepted; naive values are taken as UTC."""
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    parsed = dt.datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=dt.timezone.utc)
    return parsed.astimezone(dt.timezone.utc)


def _tweet_from_json(obj: dict) -> TweetRecord:
    missing = [f for f in _REQUIRED_TWEET_FIELDS if f not in obj]
    if missing:
        raise ValueError(f"missing required fields {missing}")
    counters = {}
    for name in _COUNTER_FIELDS:
        value = obj.get(name, 0)
        counters[name] = int(value)
    hashtags = obj.get("hashtags", [])
    if not isinstance(hashtags, list) or not all(isinstance(h, str) for h in hashtags):
        raise ValueError("hashtags must be a list of strings")
    tweet = TweetRecord(
        id=str(obj["id"]),
        username=str(obj["username"]),
        timestamp=parse_timestamp(str(obj["timestamp"])),
        text=str(obj["text"]),
        ticker=str(obj["ticker"]),
        hashtags=tuple(hashtags),
        **counters,
    )
    tweet.validate()
    return tweet


def load_tweets_jsonl(path: str, lenient: bool = False) -> tuple[list[TweetRecord], list[Diagnostic]]:
    """Parse one TweetRecord JSON object per line.

    Unknown fields are ignored. Malformed lines raise SchemaError with the
    line number, or are skipped with a diagnostic when ``lenient``.
    """
    tweets: list[TweetRecord] = []
    diagnostics: list[Diagnostic] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                tweets.append(_tweet_from_json(obj))
            except (ValueError, TypeError, InvalidArgumentError) as exc:
                if not lenient:
                    raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
                diagnostics.append(Diagnostic(lineno, str(exc)))
    return tweets, diagnostics
