"""Corpus measurement: tokenization, readability, rarity, topic divergence.

All operations are pure. Frequency tables are estimated from the corpus under
measurement (or supplied externally); rarity is defined relative to the bottom
quartile of a table's Zipf values. Topic labels come from an external labeling
step; only the distribution math lives here.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyCorpus

WORD_RE = re.compile(r"\w+", re.UNICODE)

#: Languages tokenized per character for CJK script runs.
CJK_LANGUAGES = ("zh", "ja")

#: (start, end) inclusive codepoint ranges treated as CJK characters:
#: Han (unified + extension A), hiragana, katakana (+ phonetic extensions).
CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0x3040, 0x309F),
    (0x30A0, 0x30FF),
    (0x31F0, 0x31FF),
)

SENTENCE_TERMINALS = ".!?。！？"


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in CJK_RANGES)


def tokenize(text: str, language: str) -> list[str]:
    """Segment text into tokens.

    Space-delimited languages (ko, en, and anything unlisted) use Unicode
    word segmentation: runs of word characters, punctuation dropped,
    lowercased. For zh/ja every CJK character is its own token; embedded
    non-CJK runs fall back to word segmentation.
    """
    if not text:
        return []
    if language not in CJK_LANGUAGES:
        return [w.lower() for w in WORD_RE.findall(text)]
    tokens: list[str] = []
    pending: list[str] = []
    for ch in text:
        if _is_cjk(ch):
            if pending:
                tokens.extend(w.lower() for w in WORD_RE.findall("".join(pending)))
                pending = []
            tokens.append(ch)
        else:
            pending.append(ch)
    if pending:
        tokens.extend(w.lower() for w in WORD_RE.findall("".join(pending)))
    return tokens


def split_sentences(text: str, language: str = "") -> list[str]:
    """Split after a terminal mark (. ! ? or fullwidth equivalents) that is
    followed by whitespace or end of text. A trailing fragment with no
    terminator counts as one sentence. Empty text yields no sentences.
    """
    stripped = text.strip()
    if not stripped:
        return []
    sentences: list[str] = []
    buf: list[str] = []
    for i, ch in enumerate(stripped):
        buf.append(ch)
        if ch in SENTENCE_TERMINALS:
            at_end = i + 1 == len(stripped)
            if at_end or stripped[i + 1].isspace():
                piece = "".join(buf).strip()
                if piece:
                    sentences.append(piece)
                buf = []
    tail = "".join(buf).strip()
    if tail:
        sentences.append(tail)
    return sentences


class FreqSource(str, Enum):
    CORPUS_ESTIMATED = "corpus_estimated"
    EXTERNAL = "external"


@dataclass(frozen=True)
class FreqTable:
    """Per-type Zipf values for one language: zipf = log10(count/total x 1e9)."""

    language: str
    zipf: dict[str, float]
    total_tokens: int
    source: FreqSource = FreqSource.CORPUS_ESTIMATED

    def __post_init__(self) -> None:
        if self.total_tokens <= 0:
            raise ValueError("total_tokens must be positive")
        for token, value in self.zipf.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite zipf for {token!r}")


def estimate_zipf(docs: Iterable[str], language: str) -> FreqTable:
    """Estimate a frequency table from a document collection."""
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(tokenize(doc, language))
    total = sum(counts.values())
    if total == 0:
        raise EmptyCorpus("no tokens to estimate frequencies from")
    zipf = {t: math.log10(c / total * 1e9) for t, c in counts.items()}
    return FreqTable(language=language, zipf=zipf, total_tokens=total)


def rare_threshold(table: FreqTable) -> float:
    """Bottom-quartile cut: 25th percentile (linear interpolation) of the
    table's distinct-type zipf values. Tokens strictly below it count as rare.
    """
    values = list(table.zipf.values())
    if not values:
        raise EmptyCorpus("frequency table has no types")
    return float(np.percentile(values, 25.0))


@dataclass(frozen=True)
class ReadabilityStats:
    n_tokens: float  # mean tokens per doc
    n_sentences: float  # mean sentences per doc
    tokens_per_sentence: float  # mean of per-doc ratios
    rare_token_ratio: float  # pooled over in-vocab occurrences

    def __post_init__(self) -> None:
        if min(self.n_tokens, self.n_sentences, self.tokens_per_sentence) < 0:
            raise ValueError("readability statistics must be non-negative")
        if not 0.0 <= self.rare_token_ratio <= 1.0:
            raise ValueError("rare_token_ratio must lie in [0, 1]")


def readability(docs: Sequence[str], language: str, table: FreqTable) -> ReadabilityStats:
    """Per-document readability averaged over the collection.

    Token and sentence counts are per-document means; tokens-per-sentence is
    the mean of per-document ratios, not the ratio of means. The rare-token
    ratio pools token occurrences across documents and ignores tokens absent
    from the frequency table.
    """
    if not docs:
        raise EmptyCorpus("readability needs at least one document")
    threshold = rare_threshold(table)
    token_counts: list[int] = []
    sentence_counts: list[int] = []
    ratios: list[float] = []
    rare_occurrences = 0
    in_vocab_occurrences = 0
    for doc in docs:
        tokens = tokenize(doc, language)
        sentences = split_sentences(doc, language)
        token_counts.append(len(tokens))
        sentence_counts.append(len(sentences))
        ratios.append(len(tokens) / len(sentences) if sentences else 0.0)
        for token in tokens:
            z = table.zipf.get(token)
            if z is None:
                continue
            in_vocab_occurrences += 1
            if z < threshold:
                rare_occurrences += 1
    rtr = rare_occurrences / in_vocab_occurrences if in_vocab_occurrences else 0.0
    return ReadabilityStats(
        n_tokens=float(np.mean(token_counts)),
        n_sentences=float(np.mean(sentence_counts)),
        tokens_per_sentence=float(np.mean(ratios)),
        rare_token_ratio=rtr,
    )


# --- topic distributions and divergence ---


@dataclass(frozen=True)
class TopicDistribution:
    probs: tuple[float, ...]
    topic_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.probs) != len(self.topic_ids):
            raise ValueError("probs and topic_ids must be parallel")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")


def topic_distribution(labels: Sequence[int], n_topics: int) -> TopicDistribution:
    """Normalized histogram of topic labels over topics 0..n_topics-1."""
    if not len(labels):
        raise EmptyCorpus("no labels to build a distribution from")
    arr = np.asarray(labels, dtype=int)
    if arr.min() < 0 or arr.max() >= n_topics:
        raise ValueError("topic label outside [0, n_topics)")
    counts = np.bincount(arr, minlength=n_topics)
    probs = counts / counts.sum()
    return TopicDistribution(tuple(float(p) for p in probs), tuple(range(n_topics)))


def _jsd_arrays(p: np.ndarray, q: np.ndarray) -> float:
    # Base-2 Jensen-Shannon divergence; 0 * log 0 taken as 0.
    m = (p + q) / 2.0
    def half(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / m[mask])))
    return max(0.0, 0.5 * half(p) + 0.5 * half(q))


def jsd(p: TopicDistribution, q: TopicDistribution) -> float:
    """Jensen-Shannon divergence with base-2 logs; ranges over [0, 1]."""
    if p.topic_ids != q.topic_ids:
        raise ValueError("distributions must share aligned topic ids")
    return _jsd_arrays(np.asarray(p.probs), np.asarray(q.probs))


def permutation_test(
    labels_a: Sequence[int],
    labels_b: Sequence[int],
    n_perm: int = 1000,
    seed: Optional[int] = None,
) -> tuple[float, float]:
    """Significance of the divergence between two labeled groups.

    The statistic is the JSD between the groups' topic distributions. Pooled
    labels are reshuffled ``n_perm`` times preserving group sizes;
    p = (1 + #{permuted stat >= observed}) / (n_perm + 1). Deterministic for
    a fixed seed. Returns (observed_jsd, p_value).
    """
    if not len(labels_a) or not len(labels_b):
        raise ValueError("both groups must be non-empty")
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    pooled = np.concatenate([np.asarray(labels_a, dtype=int), np.asarray(labels_b, dtype=int)])
    if pooled.min() < 0:
        raise ValueError("topic labels must be non-negative")
    n_topics = int(pooled.max()) + 1
    n_a = len(labels_a)

    def group_stat(values: np.ndarray) -> float:
        ca = np.bincount(values[:n_a], minlength=n_topics)
        cb = np.bincount(values[n_a:], minlength=n_topics)
        return _jsd_arrays(ca / ca.sum(), cb / cb.sum())

    observed = group_stat(pooled)
    rng = np.random.default_rng(seed)
    at_least = 0
    for _ in range(n_perm):
        if group_stat(rng.permutation(pooled)) >= observed:
            at_least += 1
    return observed, (1 + at_least) / (n_perm + 1)


@dataclass(frozen=True)
class TopicSkew:
    topic_id: int
    p: float
    q: float
    skew: float  # |p - q|


def top_skewed_topics(p: TopicDistribution, q: TopicDistribution, k: int) -> list[TopicSkew]:
    """Topics ranked by absolute probability gap, descending; ties broken by
    ascending topic id. Returns at most k entries (all topics if k exceeds K).
    """
    if p.topic_ids != q.topic_ids:
        raise ValueError("distributions must share aligned topic ids")
    if k < 0:
        raise ValueError("k must be non-negative")
    rows = [
        TopicSkew(topic_id=tid, p=pi, q=qi, skew=abs(pi - qi))
        for tid, pi, qi in zip(p.topic_ids, p.probs, q.probs)
    ]
    rows.sort(key=lambda r: (-r.skew, r.topic_id))
    return rows[:k]
