"""Keyphrase scoring and per-sentence selection.

A candidate n-gram ``(w_1..w_n)`` scores ``n**-alpha * sum_i log(|D| / count(w_i))``
where ``|D|`` is the number of sentences behind the frequency table. Rare words
score high; ``alpha < 1`` favours longer phrases.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .text_corpus import Word, WordFrequencyTable

MAX_NGRAM = 3
TARGET_KEYPHRASES_PER_SENTENCE = 1.65


@dataclass(frozen=True)
class KeyphraseConfig:
    alpha: float = 0.8
    threshold: float = 0.0
    max_per_sentence: int = 2
    max_span_fraction: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.max_span_fraction <= 1:
            raise ValueError("max_span_fraction must lie in (0, 1]")
        if self.max_per_sentence < 1:
            raise ValueError("max_per_sentence must be at least 1")


@dataclass(frozen=True)
class KeyphraseCandidate:
    words: tuple[str, ...]
    char_span: tuple[int, int]
    score: float

    @property
    def n(self) -> int:
        return len(self.words)

    @property
    def phrase(self) -> str:
        return " ".join(self.words)


def score_keyphrase(words: Sequence[str], freq: WordFrequencyTable, alpha: float = 0.8) -> float:
    if not words:
        raise ValueError("empty keyphrase")
    if freq.num_sentences < 1:
        raise ValueError("frequency table has no sentences")
    total = sum(math.log(freq.num_sentences / freq.count(w)) for w in words)
    return total / len(words) ** alpha


def candidate_ngrams(
    words: Sequence[Word], freq: WordFrequencyTable, config: KeyphraseConfig, sentence_length: int | None = None
) -> list[KeyphraseCandidate]:
    """All 1-3-grams passing the span-fraction and no-repeat rules, scored, threshold not applied."""
    if not words:
        return []
    if sentence_length is None:
        sentence_length = words[-1].end
    ngram_counts = Counter(
        tuple(w.text for w in words[i : i + n]) for n in range(1, MAX_NGRAM + 1) for i in range(len(words) - n + 1)
    )
    out = []
    for n in range(1, MAX_NGRAM + 1):
        for i in range(len(words) - n + 1):
            gram = tuple(w.text for w in words[i : i + n])
            if ngram_counts[gram] > 1:
                continue
            start, end = words[i].start, words[i + n - 1].end
            if end - start > config.max_span_fraction * sentence_length:
                continue
            out.append(KeyphraseCandidate(gram, (start, end), score_keyphrase(gram, freq, config.alpha)))
    return out


def select_keyphrases(candidates: Iterable[KeyphraseCandidate], threshold: float, limit: int) -> list[KeyphraseCandidate]:
    """Greedy highest-score non-overlapping pick; ties go to earlier start, then shorter phrase."""
    chosen: list[KeyphraseCandidate] = []
    for cand in sorted(candidates, key=lambda c: (-c.score, c.char_span[0], c.n)):
        if len(chosen) >= limit:
            break
        if not cand.score > threshold:
            break
        s, e = cand.char_span
        if all(e <= c.char_span[0] or s >= c.char_span[1] for c in chosen):
            chosen.append(cand)
    return sorted(chosen, key=lambda c: c.char_span)


def extract_keyphrases(
    words: Sequence[Word], freq: WordFrequencyTable, config: KeyphraseConfig, sentence_length: int | None = None
) -> list[KeyphraseCandidate]:
    cands = candidate_ngrams(words, freq, config, sentence_length)
    return select_keyphrases(cands, config.threshold, config.max_per_sentence)


def calibrate_threshold(
    sentences: Sequence[tuple[Sequence[Word], int]],
    freq: WordFrequencyTable,
    config: KeyphraseConfig,
    target_per_sentence: float = TARGET_KEYPHRASES_PER_SENTENCE,
) -> float:
    """Threshold whose selection density is closest to ``target_per_sentence``.

    ``sentences`` holds ``(words, sentence_length)`` pairs. Candidate thresholds
    are the observed scores, searched by bisection on the (non-increasing)
    selected count.
    """
    per_sentence = [candidate_ngrams(w, freq, config, n) for w, n in sentences]
    scores = sorted({c.score for cands in per_sentence for c in cands})
    if not scores:
        return config.threshold
    target = target_per_sentence * len(sentences)

    def selected(threshold: float) -> int:
        return sum(len(select_keyphrases(c, threshold, config.max_per_sentence)) for c in per_sentence)

    # thresholds just below each observed score; index 0 admits everything
    grid = [scores[0] - 1.0] + scores
    lo, hi = 0, len(grid) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if selected(grid[mid]) > target:
            lo = mid + 1
        else:
            hi = mid
    best = min({max(lo - 1, 0), lo}, key=lambda i: (abs(selected(grid[i]) - target), i))
    return float(grid[best])
