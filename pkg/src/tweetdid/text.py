"""
Tweet normalisation, dictionary topic tagging and entropy ranking.

Special tokens replace URLs, mentions, emoticons, dates, phone numbers and
numbers. Hashtags lose the ``#`` but keep the tagged word. A tweet whose
only remaining tokens are special tokens is flagged for dropping.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy.special import entr

URL = "<URL>"
MENTION = "<MENTION>"
EMOTICON = "<EMOTICON>"
NUMBER = "<NUMBER>"
PHONE = "<PHONE>"
DATE = "<DATE>"
SPECIAL_TOKENS = frozenset({URL, MENTION, EMOTICON, NUMBER, PHONE, DATE})


def _load_emoticons() -> tuple[str, ...]:
    text = resources.files("tweetdid.data").joinpath("emoticons.txt").read_text(encoding="utf-8")
    items = [ln.strip() for ln in text.splitlines()]
    return tuple(e for e in items if e and not e.startswith("#"))


EMOTICONS = _load_emoticons()

_WORD = re.compile(r"[^\W_]+")
_MARKER = re.compile(r"<(URL|MENTION|EMOTICON|NUMBER|PHONE|DATE)>|<HASHTAG:([^\s<>]+)>", re.IGNORECASE)
_SCANNER = re.compile(
    "|".join(
        [
            r"(?P<marker>" + _MARKER.pattern + ")",
            r"(?P<url>(?:https?://|www\.)\S+)",
            r"(?P<mention>@\w+)",
            r"(?P<hashtag>#(?P<tag>\w+))",
            r"(?P<emoticon>(?<!\S)(?-i:"
            + "|".join(re.escape(e) for e in sorted(EMOTICONS, key=len, reverse=True))
            + r")(?!\S))",
            r"(?P<date>\b(?:\d{4}-\d{1,2}-\d{1,2}|\d{1,2}[/.-]\d{1,2}[/.-]\d{2,4})\b)",
            r"(?P<phone>\+?\d(?:[ .-]?\d){7,})",
            r"(?P<number>\d+(?:[.,]\d+)*)",
            r"(?P<word>[^\W_]+)",
        ]
    ),
    re.IGNORECASE,
)


@dataclass(frozen=True)
class NormalizedTweet:
    tokens: tuple[str, ...]

    @property
    def words(self) -> tuple[str, ...]:
        """Content tokens, i.e. everything except special tokens."""
        return tuple(t for t in self.tokens if not _is_special(t))

    @property
    def is_empty(self) -> bool:
        return not self.words

    @property
    def drop(self) -> bool:
        return self.is_empty

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def _is_special(token: str) -> bool:
    return token in SPECIAL_TOKENS or token.startswith("<HASHTAG:")


def _scan(text: str, mark_hashtags: bool) -> list[str]:
    out: list[str] = []
    for m in _SCANNER.finditer(text):
        kind = m.lastgroup
        if kind == "marker" or m.group("marker"):
            lit = _MARKER.fullmatch(m.group("marker"))
            if lit.group(2) is not None:
                if mark_hashtags:
                    out.append(f"<HASHTAG:{lit.group(2).lower()}>")
            else:
                out.append(f"<{lit.group(1).upper()}>")
        elif m.group("url"):
            out.append(URL)
        elif m.group("mention"):
            out.append(MENTION)
        elif m.group("hashtag"):
            body = m.group("tag")
            if mark_hashtags:
                out.append(f"<HASHTAG:{body.lower()}>")
            out.extend(_scan(body.replace("_", " "), mark_hashtags))
        elif m.group("emoticon"):
            out.append(EMOTICON)
        elif m.group("date"):
            out.append(DATE)
        elif m.group("phone"):
            out.append(PHONE)
        elif m.group("number"):
            out.append(NUMBER)
        else:
            word = m.group("word").lower()
            if _WORD.fullmatch(word):
                out.append(word)
            else:
                # lowercasing can emit combining marks; rescan the pieces
                out.extend(_scan(word, mark_hashtags))
    return out


def normalize(text: str | None, mark_hashtags: bool = False) -> NormalizedTweet:
    """Tokenise a raw tweet.

    Examples
    --------
    >>> normalize("Visita http://x.co #covid!").tokens
    ('visita', '<URL>', 'covid')
    >>> normalize("@user ,,, !!!").drop
    True
    """
    if not text:
        return NormalizedTweet(())
    return NormalizedTweet(tuple(_scan(text, mark_hashtags)))


@dataclass(frozen=True)
class TopicDictionary:
    topic: str
    terms: frozenset[str]

    def __post_init__(self):
        terms = list(self.terms)
        if not terms:
            raise ValueError(f"dictionary {self.topic!r} is empty")
        cleaned = []
        for t in terms:
            if t != t.lower():
                raise ValueError(f"dictionary {self.topic!r}: term {t!r} is not lowercase")
            cleaned.append(" ".join(t.split()))
        if len(set(cleaned)) != len(cleaned):
            raise ValueError(f"dictionary {self.topic!r} has duplicate terms")
        object.__setattr__(self, "terms", frozenset(cleaned))

    @classmethod
    def from_terms(cls, topic: str, terms: Iterable[str]) -> "TopicDictionary":
        return cls(topic, frozenset(terms) if isinstance(terms, (set, frozenset)) else _unique(terms))

    def _split(self) -> tuple[frozenset[str], tuple[tuple[str, ...], ...]]:
        singles = frozenset(t for t in self.terms if " " not in t)
        phrases = tuple(tuple(t.split()) for t in self.terms if " " in t)
        return singles, phrases


def _unique(terms: Iterable[str]) -> frozenset[str]:
    seen: list[str] = []
    for t in terms:
        if t in seen:
            raise ValueError(f"duplicate term {t!r}")
        seen.append(t)
    return frozenset(seen)


def load_dictionary(path: str | Path, topic: str | None = None) -> TopicDictionary:
    """Read a term list: one term per line, ``#`` starts a comment line."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    terms = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    return TopicDictionary(topic or path.stem, _unique(terms))


def tag_topics(tweet: NormalizedTweet, dicts: Sequence[TopicDictionary]) -> dict[str, int]:
    """1 for every topic with at least one term among the tweet's words.

    Multi-word terms must match a run of consecutive words. Topics overlap
    freely.
    """
    words = tweet.words
    present = set(words)
    flags = {}
    for d in dicts:
        singles, phrases = d._split()
        hit = not present.isdisjoint(singles)
        if not hit:
            for ph in phrases:
                n = len(ph)
                if any(words[i : i + n] == ph for i in range(len(words) - n + 1)):
                    hit = True
                    break
        flags[d.topic] = int(hit)
    return flags


def binary_entropy(p):
    """Shannon entropy in bits of a Bernoulli(p) variable; ``H(0) = H(1) = 0``."""
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise ValueError("probability outside [0, 1]")
    h = (entr(arr) + entr(1.0 - arr)) / math.log(2)
    return float(h) if np.ndim(h) == 0 else h


@dataclass(frozen=True)
class ClassifiedTweet:
    tweet_id: str
    label: int
    confidence: float
    emotion: str = ""
    topics: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def rank_by_entropy(
    classified: Iterable[ClassifiedTweet], k: int
) -> dict[tuple[str, str], list[ClassifiedTweet]]:
    """Top-``k`` tweets by classifier entropy for each (emotion, topic) pair.

    A tweet tagged with several topics competes in each of them; tweets with
    no topic fall in the ``"all"`` group. Ties break on ``tweet_id``.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    groups: dict[tuple[str, str], list[ClassifiedTweet]] = {}
    for c in classified:
        for topic in c.topics or ("all",):
            groups.setdefault((c.emotion, topic), []).append(c)
    out = {}
    for key in sorted(groups):
        items = groups[key]
        h = binary_entropy(np.array([c.confidence for c in items]))
        order = sorted(range(len(items)), key=lambda i: (-h[i], items[i].tweet_id))
        out[key] = [items[i] for i in order[:k]]
    return out


class EmotionClassifier(Protocol):
    """Anything that maps tweets to a binary label and a confidence."""

    def classify(self, tweet_ids: Sequence[str], texts: Sequence[str], emotion: str) -> list[ClassifiedTweet]:
        ...


@dataclass
class LabelFileClassifier:
    """Serves precomputed labels from a ``tweet_id,emotion,label,confidence`` file."""

    records: Mapping[tuple[str, str], tuple[int, float]] = field(default_factory=dict)

    @classmethod
    def from_csv(cls, path: str | Path) -> "LabelFileClassifier":
        recs = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for n, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    label = int(row["label"])
                    conf = float(row["confidence"])
                except (KeyError, ValueError):
                    raise ValueError(f"label file row {n}: malformed record") from None
                if label not in (0, 1) or not 0 <= conf <= 1:
                    raise ValueError(f"label file row {n}: label/confidence out of range")
                recs[(row["tweet_id"], row["emotion"])] = (label, conf)
        return cls(recs)

    @property
    def emotions(self) -> list[str]:
        return sorted({e for _, e in self.records})

    def classify(self, tweet_ids, texts=None, emotion: str = "") -> list[ClassifiedTweet]:
        out = []
        for tid in tweet_ids:
            label, conf = self.records[(tid, emotion)]
            out.append(ClassifiedTweet(tid, label, conf, emotion))
        return out
