import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clozeslot.crf import CrfPotentials, predict_span
from clozeslot.evaluation import (
    ensemble_from_potentials,
    parse_fraction,
    sample_episode,
    span_f1,
    subsample_training,
)
from clozeslot.labeled import LabeledExample, import_nested, read_labeled, read_nested, write_labeled
from clozeslot.tags import InvalidTagSequence, tags_to_token_span
from crf_oracle import brute_log_probs, brute_topk


def ex(sid, span, slot="time", text="book it for 7pm please"):
    return LabeledExample(text, slot, span, False, sid)


# ---------------------------------------------------------------- span F1


def test_exact_matches_score_one():
    gold = [ex("a", (12, 15)), ex("b", None), ex("c", (0, 4))]
    report = span_f1({("a", "time"): (12, 15), ("b", "time"): None, ("c", "time"): (0, 4)}, gold)
    assert report.per_slot["time"].f1 == 1.0
    assert report.macro_f1 == 1.0


def test_overlapping_but_unequal_span_is_both_false_positive_and_false_negative():
    gold = [ex("a", (12, 15))]
    s = span_f1({("a", "time"): (11, 15)}, gold).per_slot["time"]
    assert (s.true_positives, s.false_positives, s.false_negatives) == (0, 1, 1)
    assert s.f1 == 0.0


def test_hand_computed_counts():
    gold = [ex("a", (12, 15)), ex("b", (0, 4)), ex("c", None), ex("d", (5, 7))]
    preds = {("a", "time"): (12, 15), ("b", "time"): None, ("c", "time"): (0, 4), ("d", "time"): (5, 7)}
    s = span_f1(preds, gold).per_slot["time"]
    # tp = a, d; fp = c; fn = b
    assert (s.true_positives, s.false_positives, s.false_negatives) == (2, 1, 1)
    assert s.precision == pytest.approx(2 / 3)
    assert s.recall == pytest.approx(2 / 3)
    assert s.f1 == pytest.approx(2 / 3)


def test_macro_averages_slots_and_micro_pools_counts():
    gold = [ex("a", (12, 15)), ex("a", (0, 4), slot="people"), ex("b", (0, 4), slot="people")]
    preds = {("a", "time"): (12, 15), ("a", "people"): None, ("b", "people"): (0, 4)}
    report = span_f1(preds, gold)
    people = 2 * 1.0 * 0.5 / 1.5
    assert report.macro_f1 == pytest.approx((1.0 + people) / 2)
    assert report.micro.true_positives == 2 and report.micro.false_negatives == 1
    assert report.micro.f1 == pytest.approx(2 * 1.0 * (2 / 3) / (1 + 2 / 3))


def test_slot_with_nothing_to_find_and_nothing_predicted_scores_one():
    assert span_f1({("a", "time"): None}, [ex("a", None)]).per_slot["time"].f1 == 1.0


def test_mismatched_prediction_keys_are_rejected():
    with pytest.raises(KeyError):
        span_f1({("zzz", "time"): None}, [ex("a", None)])
    with pytest.raises(KeyError):
        span_f1({}, [ex("a", None)])


spans = st.one_of(st.none(), st.tuples(st.integers(0, 5), st.integers(1, 4)).map(lambda p: (p[0], p[0] + p[1])))


@given(st.lists(st.tuples(spans, spans, st.sampled_from(["x", "y", "z"])), min_size=1, max_size=30))
@settings(max_examples=100, deadline=None)
def test_f1_bounds_and_macro_within_slot_range(rows):
    text = "0123456789"
    gold = [LabeledExample(text, slot, g, False, str(i)) for i, (g, _, slot) in enumerate(rows)]
    preds = {(str(i), slot): p for i, (_, p, slot) in enumerate(rows)}
    report = span_f1(preds, gold)
    f1s = [s.f1 for s in report.per_slot.values()]
    assert all(0.0 <= f <= 1.0 for f in f1s)
    assert min(f1s) - 1e-12 <= report.macro_f1 <= max(f1s) + 1e-12
    # predicting gold exactly is perfect
    assert span_f1({(str(i), slot): g for i, (g, _, slot) in enumerate(rows)}, gold).macro_f1 == 1.0


# ---------------------------------------------------------------- subsampling


def utterances(n, slots=("a", "b")):
    return [LabeledExample("some text", s, None, False, f"u{i}") for i in range(n) for s in slots]


def test_subsample_size_uses_floor_with_minimum_one():
    data = utterances(8198, slots=("a",))
    assert len(subsample_training(data, "1/128", seed=0)) == 64
    assert len(subsample_training(data, 0.5, seed=0)) == 4099
    assert len(subsample_training(utterances(10, ("a",)), "1/128", seed=0)) == 1


def test_subsample_keeps_every_slot_of_a_chosen_utterance():
    sub = subsample_training(utterances(100), "1/4", seed=3)
    ids = {e.source_id for e in sub}
    assert len(ids) == 25 and len(sub) == 50


def test_subsample_is_deterministic_and_nested():
    data = utterances(1000)
    halves = subsample_training(data, "1/2", seed=7)
    assert halves == subsample_training(data, "1/2", seed=7)
    eighth = {e.source_id for e in subsample_training(data, "1/8", seed=7)}
    assert eighth <= {e.source_id for e in halves}
    assert eighth != {e.source_id for e in subsample_training(data, "1/8", seed=8)}
    assert subsample_training(data, 1, seed=7) == data


@pytest.mark.parametrize("bad", ["0", "-1/2", "3/2", 0.0])
def test_fraction_outside_unit_interval_rejected(bad):
    with pytest.raises(ValueError):
        parse_fraction(bad)


def test_episode_covers_every_slot_when_possible():
    import random

    data = []
    for i in range(30):
        data.append(LabeledExample("alpha beta", "x", (0, 5) if i % 10 == 0 else None, False, f"u{i}"))
        data.append(LabeledExample("alpha beta", "y", (6, 10) if i % 7 == 3 else None, False, f"u{i}"))
    support = sample_episode(data, 5, random.Random(0))
    assert {e.slot for e in support if e.span is not None} == {"x", "y"}
    assert len({e.source_id for e in support}) == 5


# ---------------------------------------------------------------- ensembling


def oracle_ensemble(pots, k):
    """Brute-force enumeration of every tag sequence per decoder."""
    candidates = set()
    tables = []
    for pot in pots:
        for seq, _ in brute_topk(pot.transitions, pot.unaries, k):
            try:
                span = tags_to_token_span(seq)
            except InvalidTagSequence:
                continue
            if span is not None:
                candidates.add(span)
        seqs, logp = brute_log_probs(pot.transitions, pot.unaries)
        tables.append({tuple(s): math.exp(lp) for s, lp in zip(seqs, logp)})
    T = pots[0].unaries.shape[0]

    def tags_for(span):
        if span is None:
            return (0,) * T
        s, e = span
        return (0,) * s + (1,) + (2,) * (e - s - 1) + (3,) * (T - e)

    scored = [(None, float(np.mean([t[tags_for(None)] for t in tables])))]
    scored += [(c, float(np.mean([t[tags_for(c)] for t in tables]))) for c in sorted(candidates)]
    best = scored[0]
    for c in scored[1:]:
        if c[1] > best[1]:
            best = c
    return best


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_ensemble_matches_brute_force(T, n_decoders, k, seed):
    rng = np.random.default_rng(seed)
    pots = [CrfPotentials(rng.normal(0, 2, (T, 4, 4)), rng.normal(0, 2, (T, 4))) for _ in range(n_decoders)]
    span, prob = ensemble_from_potentials(pots, k)
    want_span, want_prob = oracle_ensemble(pots, k)
    assert prob == pytest.approx(want_prob, abs=1e-9)
    assert span == want_span


def test_single_decoder_ensemble_agrees_with_valid_viterbi():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pot = CrfPotentials(rng.normal(0, 2, (5, 4, 4)), rng.normal(0, 2, (5, 4)))
        span, prob, invalid = predict_span(pot)
        got, got_prob = ensemble_from_potentials([pot], k=5)
        if not invalid:
            assert got == span and got_prob == pytest.approx(prob)


def three_path_potentials(weights):
    """Length-3 potentials allowing exactly the single-token spans in ``weights``, with those probabilities."""
    T, blocked = 3, -60.0
    unary = np.full((T, 4), blocked)
    trans = np.full((T - 1, 4, 4), blocked)
    for (s, _), w in weights.items():
        seq = (0,) * s + (1,) + (3,) * (T - s - 1)
        for t, tag in enumerate(seq):
            unary[t, tag] = 0.0
        for t in range(T - 1):
            trans[t, seq[t + 1], seq[t]] = 0.0
    for (s, _), w in weights.items():
        unary[s, 1] = math.log(w)
    return CrfPotentials(trans, unary)


def test_averaging_can_overturn_each_decoders_favourite():
    one = three_path_potentials({(0, 1): 0.5, (1, 2): 0.4, (2, 3): 0.1})
    two = three_path_potentials({(2, 3): 0.5, (1, 2): 0.4, (0, 1): 0.1})
    assert predict_span(one)[0] == (0, 1) and predict_span(two)[0] == (2, 3)
    span, prob = ensemble_from_potentials([one, two], k=5)
    assert span == (1, 2)
    assert prob == pytest.approx(0.4, abs=1e-6)


def test_no_span_wins_ties():
    T = 2
    unary = np.zeros((T, 4))
    trans = np.full((T - 1, 4, 4), -50.0)
    trans[0, 0, 0] = 0.0  # BEFORE BEFORE
    trans[0, 3, 1] = 0.0  # BEGIN AFTER
    unary[:, 2] = -50.0
    pot = CrfPotentials(trans, unary)
    span, _ = ensemble_from_potentials([pot], k=5)
    assert span is None


# ---------------------------------------------------------------- labeled data


def test_nested_import_expands_every_slot_and_defaults_start_index(tmp_path):
    records = [
        {"userInput": {"text": "table for 4 at 7pm"}, "context": {"requestedSlots": ["time"]},
         "labels": [{"slot": "people", "valueSpan": {"startIndex": 10, "endIndex": 11}},
                    {"slot": "time", "valueSpan": {"startIndex": 15, "endIndex": 18}}]},
        {"userInput": {"text": "tomorrow please"},
         "labels": [{"slot": "date", "valueSpan": {"endIndex": 8}}]},
    ]
    out = import_nested(records)
    assert len(out) == 6
    by = {(e.source_id, e.slot): e for e in out}
    assert by[("0", "time")].value == "7pm" and by[("0", "time")].requested
    assert by[("0", "people")].value == "4" and not by[("0", "people")].requested
    assert by[("0", "date")].span is None
    assert by[("1", "date")].value == "tomorrow"
    path = tmp_path / "nested.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records))
    assert read_nested(path) == out
    path2 = tmp_path / "nested.json"
    path2.write_text(json.dumps(records))
    assert read_nested(path2) == out
    flat = tmp_path / "flat.jsonl"
    assert write_labeled(out, flat) == 6
    assert read_labeled(flat) == out


def test_labeled_example_rejects_bad_spans():
    with pytest.raises(ValueError):
        LabeledExample("abc", "x", (2, 2))
    with pytest.raises(ValueError):
        LabeledExample("abc", "x", (1, 4))
