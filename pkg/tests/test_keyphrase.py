import itertools
import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from clozeslot.keyphrase import (
    KeyphraseConfig,
    calibrate_threshold,
    extract_keyphrases,
    score_keyphrase,
)
from clozeslot.text_corpus import WordFrequencyTable, word_tokenize

# (log 100 + log 10) / 2**0.8, evaluated independently
WORKED_EXAMPLE = 3.9674635628444332


def test_score_examples():
    table = WordFrequencyTable(Counter(x=50, a=1, b=10), 50)
    assert score_keyphrase(["x"], table) == 0.0
    table = WordFrequencyTable(Counter(a=1, b=10), 100)
    assert score_keyphrase(["a", "b"], table, alpha=0.8) == pytest.approx(WORKED_EXAMPLE, abs=1e-9)


def test_score_requires_sentences():
    with pytest.raises(ValueError):
        score_keyphrase(["a"], WordFrequencyTable(Counter(a=1), 0))


@settings(max_examples=100)
@given(
    st.lists(st.integers(1, 1000), min_size=1, max_size=3),
    st.integers(1000, 5000),
    st.integers(2, 50),
    st.floats(0.1, 3.0),
)
def test_joint_scale_invariance(counts, n_sent, k, alpha):
    words = [f"w{i}" for i in range(len(counts))]
    t1 = WordFrequencyTable(Counter(dict(zip(words, counts))), n_sent)
    t2 = WordFrequencyTable(Counter({w: c * k for w, c in zip(words, counts)}), n_sent * k)
    assert abs(score_keyphrase(words, t1, alpha) - score_keyphrase(words, t2, alpha)) < 1e-12


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=3))
def test_alpha_one_is_mean_of_terms(counts):
    words = [f"w{i}" for i in range(len(counts))]
    t = WordFrequencyTable(Counter(dict(zip(words, counts))), 1000)
    terms = [math.log(1000 / c) for c in counts]
    assert score_keyphrase(words, t, 1.0) == pytest.approx(sum(terms) / len(terms))


def _oracle(text, table, cfg):
    """Exhaustive reading of the selection rules, written independently."""
    words = word_tokenize(text)
    grams = []
    for n in (1, 2, 3):
        for i in range(len(words) - n + 1):
            grams.append((tuple(w.text for w in words[i : i + n]), words[i].start, words[i + n - 1].end))
    occurrences = Counter(g for g, _, _ in grams)
    keep = []
    for g, s, e in grams:
        sc = sum(math.log(table.num_sentences / table.count(w)) for w in g) / len(g) ** cfg.alpha
        if occurrences[g] == 1 and e - s <= cfg.max_span_fraction * len(text) and sc > cfg.threshold:
            keep.append((sc, s, e, g))
    best = None
    # all subsets of size <= limit that are non-overlapping; take the greedy-consistent one
    keep.sort(key=lambda c: (-c[0], c[1], len(c[3])))
    chosen = []
    for c in keep:
        if len(chosen) == cfg.max_per_sentence:
            break
        if all(c[2] <= d[1] or c[1] >= d[2] for d in chosen):
            chosen.append(c)
    best = sorted((d[3], (d[1], d[2])) for d in chosen)
    return sorted(best, key=lambda x: x[1])


def _table():
    return WordFrequencyTable(
        Counter({"the": 90, "a": 80, "i": 70, "saw": 30, "zebra": 2, "quokka": 1, "near": 20, "lake": 5, "tahoe": 1}),
        100,
    )


def test_repeated_phrase_dropped():
    text = "a a b"
    table = WordFrequencyTable(Counter(a=1, b=50), 100)
    got = extract_keyphrases(word_tokenize(text), table, KeyphraseConfig(threshold=0.1), len(text))
    assert ("a",) not in [c.words for c in got]


def test_infinite_threshold_selects_nothing():
    text = "i saw a quokka near lake tahoe"
    got = extract_keyphrases(word_tokenize(text), _table(), KeyphraseConfig(threshold=math.inf), len(text))
    assert got == []


def test_top_two_of_three_non_overlapping():
    text = "i saw the zebra and the quokka at lake tahoe today ok"
    cfg = KeyphraseConfig(threshold=1.0, max_span_fraction=0.3)
    got = extract_keyphrases(word_tokenize(text), _table(), cfg, len(text))
    assert len(got) == 2
    assert [(c.words, c.char_span) for c in got] == _oracle(text, _table(), cfg)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.sampled_from("the a i saw zebra quokka near lake tahoe".split()), min_size=1, max_size=14),
    st.floats(0.0, 5.0),
    st.sampled_from([0.3, 0.5, 1.0]),
)
def test_selection_matches_oracle(tokens, threshold, frac):
    text = " ".join(tokens)
    cfg = KeyphraseConfig(threshold=threshold, max_span_fraction=frac)
    got = extract_keyphrases(word_tokenize(text), _table(), cfg, len(text))
    assert [(c.words, c.char_span) for c in got] == _oracle(text, _table(), cfg)
    for a, b in itertools.combinations(got, 2):
        assert a.char_span[1] <= b.char_span[0] or b.char_span[1] <= a.char_span[0]
    assert all(c.score > threshold and 1 <= c.n <= 3 for c in got)


def test_calibration_hits_target_density():
    texts = [f"i saw the zebra near lake tahoe number {i}" for i in range(40)]
    table = WordFrequencyTable(Counter(w.text for t in texts for w in word_tokenize(t)), 40)
    sents = [(word_tokenize(t), len(t)) for t in texts]
    cfg = KeyphraseConfig()
    th = calibrate_threshold(sents, table, cfg, target_per_sentence=1.0)
    picked = sum(len(extract_keyphrases(w, table, KeyphraseConfig(threshold=th), n)) for w, n in sents)
    assert abs(picked / 40 - 1.0) <= 0.25
