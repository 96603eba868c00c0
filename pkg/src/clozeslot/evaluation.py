"""Span-exact-match scoring, few-shot subsampling, ensembling and experiment harnesses."""
from __future__ import annotations

import hashlib
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import median
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .crf import CrfPotentials, span_posteriors, viterbi
from .labeled import LabeledExample
from .model import SpanExtractor
from .tags import InvalidTagSequence, tags_to_token_span
from .tokenizer import Vocabulary
from .training import (
    EncoderCache,
    FinetuneConfig,
    SpanPrediction,
    finetune,
    further_pretrain_decoder,
    predict,
    prepare_slot_items,
    slot_forward,
    token_span_to_text_span,
)

Span = tuple[int, int]
Key = tuple[str, str]  # (source_id, slot)


# ---------------------------------------------------------------- scoring


@dataclass(frozen=True)
class SlotScores:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int


@dataclass
class EvalReport:
    per_slot: dict[str, SlotScores]
    macro_f1: float
    micro: SlotScores
    invalid_decodes: int = 0

    def rows(self) -> list[dict]:
        out = [{"slot": s, "precision": v.precision, "recall": v.recall, "f1": v.f1} for s, v in
               sorted(self.per_slot.items())]
        out.append({"slot": "MACRO", "precision": "", "recall": "", "f1": self.macro_f1})
        out.append({"slot": "MICRO", "precision": self.micro.precision, "recall": self.micro.recall,
                    "f1": self.micro.f1})
        return out

    def table(self) -> str:
        lines = [f"{'slot':<16}{'P':>8}{'R':>8}{'F1':>8}"]
        for slot, v in sorted(self.per_slot.items()):
            lines.append(f"{slot:<16}{v.precision:8.3f}{v.recall:8.3f}{v.f1:8.3f}")
        lines.append(f"{'macro':<16}{'':>8}{'':>8}{self.macro_f1:8.3f}")
        lines.append(f"{'micro':<16}{self.micro.precision:8.3f}{self.micro.recall:8.3f}{self.micro.f1:8.3f}")
        lines.append(f"invalid decodes: {self.invalid_decodes}")
        return "\n".join(lines)


def _scores(tp: int, fp: int, fn: int) -> SlotScores:
    if tp + fp + fn == 0:
        return SlotScores(1.0, 1.0, 1.0, 0, 0, 0)  # nothing to find, nothing predicted
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return SlotScores(p, r, f1, tp, fp, fn)


def span_f1(predictions: Mapping[Key, Span | None], gold: Sequence[LabeledExample], invalid_decodes: int = 0) -> EvalReport:
    """Exact character-span matching.

    A predicted span equal to the gold span is a true positive. A predicted
    span that differs from gold (including gold absent) is a false positive;
    a gold span not predicted exactly is a false negative.
    """
    gold_keys = {(ex.source_id, ex.slot) for ex in gold}
    if len(gold_keys) != len(gold):
        raise ValueError("duplicate (source_id, slot) in gold data")
    extra = set(predictions) - gold_keys
    missing = gold_keys - set(predictions)
    if extra or missing:
        raise KeyError(f"predictions and gold disagree: missing={sorted(missing)[:3]} unmatched={sorted(extra)[:3]}")
    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    for ex in gold:
        pred = predictions[(ex.source_id, ex.slot)]
        pred = tuple(pred) if pred is not None else None
        c = counts[ex.slot]
        if pred is not None and pred == ex.span:
            c[0] += 1
            continue
        if pred is not None:
            c[1] += 1
        if ex.span is not None:
            c[2] += 1
    per_slot = {slot: _scores(*c) for slot, c in counts.items()}
    macro = sum(s.f1 for s in per_slot.values()) / len(per_slot) if per_slot else 0.0
    totals = [sum(c[i] for c in counts.values()) for i in range(3)]
    return EvalReport(per_slot, macro, _scores(*totals), invalid_decodes)


def report_for(examples: Sequence[LabeledExample], predictions: Sequence[SpanPrediction]) -> EvalReport:
    preds = {(ex.source_id, ex.slot): p.span for ex, p in zip(examples, predictions)}
    return span_f1(preds, examples, sum(p.invalid for p in predictions))


# ---------------------------------------------------------------- subsampling


def parse_fraction(text: str | float | Fraction) -> Fraction:
    value = Fraction(text).limit_denominator(1 << 20) if not isinstance(text, Fraction) else text
    if not 0 < value <= 1:
        raise ValueError(f"fraction {text} outside (0, 1]")
    return value


def subsample_training(data: Sequence[LabeledExample], fraction, seed: int = 0) -> list[LabeledExample]:
    """Uniform random subset of utterances (all slots of a chosen utterance are kept).

    Keeps ``max(1, floor(fraction * N))`` of the ``N`` distinct utterances.
    For a fixed seed, smaller fractions select subsets of larger ones.
    """
    frac = parse_fraction(fraction)
    ids = sorted({ex.source_id for ex in data})
    if frac == 1 or not ids:
        return list(data)
    count = max(1, math.floor(frac * len(ids)))
    digest = hashlib.blake2b(f"subsample\x1f{seed}".encode(), digest_size=8).digest()
    order = ids[:]
    random.Random(int.from_bytes(digest, "little")).shuffle(order)
    chosen = set(order[:count])
    return [ex for ex in data if ex.source_id in chosen]


# ---------------------------------------------------------------- ensembling


def _potentials(model: SpanExtractor, items, cache: EncoderCache, use_extra: bool, batch_size: int = 128):
    out = []
    with ag.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            feats, lengths = slot_forward(model, chunk, cache, use_extra)
            for row, n in enumerate(lengths):
                out.append(CrfPotentials(feats.transitions.data[row, :n], feats.unaries.data[row, :n]))
    return out


def ensemble_from_potentials(per_decoder: Sequence[CrfPotentials], k: int = 5) -> tuple[Span | None, float]:
    """Average exact span probabilities over decoders; candidates are every
    decoder's top-``k`` valid spans plus no-span. No-span wins ties."""
    candidates: set = set()
    for pot in per_decoder:
        for path, _ in viterbi(pot, k):
            try:
                span = tags_to_token_span(path)
            except InvalidTagSequence:
                continue
            if span is not None:
                candidates.add(span)
    ordered = [None] + sorted(candidates)
    mean = np.zeros(len(ordered))
    for pot in per_decoder:
        probs = span_posteriors(pot, ordered)
        mean += [probs[c] for c in ordered]
    mean /= len(per_decoder)
    best = 0
    for i in range(1, len(ordered)):
        if mean[i] > mean[best]:
            best = i
    return ordered[best], float(mean[best])


def ensemble_predict(
    decoders: Sequence[SpanExtractor],
    examples: Sequence[LabeledExample],
    vocab: Vocabulary,
    k: int = 5,
    append_slot_name: bool = False,
    use_extra_features: bool = True,
    cache: EncoderCache | None = None,
) -> list[SpanPrediction]:
    """Character-span predictions from decoders sharing one frozen encoder."""
    if not decoders:
        raise ValueError("need at least one decoder")
    encoder = decoders[0].encoder
    if any(d.encoder is not encoder for d in decoders):
        raise ValueError("ensembled decoders must share one encoder")
    cache = cache if cache is not None and cache.model.encoder is encoder else EncoderCache(decoders[0])
    items = prepare_slot_items(examples, vocab, append_slot_name)
    pots = [_potentials(d, items, cache, use_extra_features) for d in decoders]
    out = []
    for i, item in enumerate(items):
        span, prob = ensemble_from_potentials([p[i] for p in pots], k)
        out.append(SpanPrediction(token_span_to_text_span(item.tokens, span), prob))
    return out


# ---------------------------------------------------------------- harnesses


def slots_of(examples: Iterable[LabeledExample]) -> list[str]:
    return sorted({ex.slot for ex in examples})


@dataclass
class SlotRun:
    """Fine-tuned decoders for every slot plus their test predictions."""

    report: EvalReport
    single_reports: list[EvalReport] = field(default_factory=list)


def finetune_and_score(
    pretrained: SpanExtractor,
    train: Sequence[LabeledExample],
    test: Sequence[LabeledExample],
    vocab: Vocabulary,
    config: FinetuneConfig,
    decoders_per_slot: int = 1,
    from_scratch: bool = False,
    cache: EncoderCache | None = None,
) -> SlotRun:
    """One decoder (or an ensemble) per slot, scored on ``test``.

    With several decoders per slot, ``single_reports[j]`` scores the j-th
    decoder of every slot on its own.
    """
    cache = cache or EncoderCache(pretrained)
    ensemble_preds: dict[Key, Span | None] = {}
    single_preds: list[dict[Key, Span | None]] = [dict() for _ in range(decoders_per_slot)]
    invalid = 0
    for slot in slots_of(test):
        slot_train = [ex for ex in train if ex.slot == slot]
        slot_test = [ex for ex in test if ex.slot == slot]
        if not slot_train:
            for preds in [ensemble_preds, *single_preds]:
                preds.update({(ex.source_id, slot): None for ex in slot_test})
            continue
        decoders = []
        for j in range(decoders_per_slot):
            cfg = _with_seed(config, config.seed * 1000 + j)
            model = finetune(pretrained, slot_train, vocab, cfg, cache, from_scratch=from_scratch).model
            decoders.append(model)
            if decoders_per_slot > 1:
                for ex, p in zip(slot_test, predict(model, slot_test, vocab, cfg.append_slot_name,
                                                    cfg.use_extra_features, cache)):
                    single_preds[j][(ex.source_id, slot)] = p.span
        if decoders_per_slot == 1:
            preds = predict(decoders[0], slot_test, vocab, config.append_slot_name, config.use_extra_features, cache)
        else:
            preds = ensemble_predict(decoders, slot_test, vocab, append_slot_name=config.append_slot_name,
                                     use_extra_features=config.use_extra_features, cache=cache)
        invalid += sum(p.invalid for p in preds)
        for ex, p in zip(slot_test, preds):
            ensemble_preds[(ex.source_id, slot)] = p.span
    report = span_f1(ensemble_preds, test, invalid)
    singles = [span_f1(p, test) for p in single_preds] if decoders_per_slot > 1 else []
    return SlotRun(report, singles)


def _with_seed(config: FinetuneConfig, seed: int) -> FinetuneConfig:
    from .training import _replace

    return _replace(config, seed=seed)


def fraction_curve(
    pretrained: SpanExtractor,
    train: Sequence[LabeledExample],
    test: Sequence[LabeledExample],
    vocab: Vocabulary,
    fractions: Sequence,
    config: FinetuneConfig,
    seed: int = 0,
) -> list[dict]:
    """Macro F1 on the fixed test set for each training-set fraction."""
    cache = EncoderCache(pretrained)
    rows = []
    for frac in fractions:
        frac = parse_fraction(frac)
        subset = subsample_training(train, frac, seed)
        run = finetune_and_score(pretrained, subset, test, vocab, config, cache=cache)
        row = {"fraction": str(frac), "examples": len({ex.source_id for ex in subset}),
               "macro_f1": run.report.macro_f1, "micro_f1": run.report.micro.f1}
        row.update({f"f1_{s}": v.f1 for s, v in sorted(run.report.per_slot.items())})
        rows.append(row)
    return rows


def sample_episode(
    train: Sequence[LabeledExample], shots: int, rng: random.Random
) -> list[LabeledExample]:
    """About ``shots`` utterances that together give every slot at least one value when possible."""
    by_id: dict[str, list[LabeledExample]] = defaultdict(list)
    for ex in train:
        by_id[ex.source_id].append(ex)
    ids = sorted(by_id)
    rng.shuffle(ids)
    slots = slots_of(train)
    chosen: list[str] = []
    covered: set[str] = set()
    for sid in ids:  # first cover every slot
        filled = {ex.slot for ex in by_id[sid] if ex.span is not None}
        if filled - covered:
            chosen.append(sid)
            covered |= filled
        if covered == set(slots):
            break
    for sid in ids:  # then top up to ``shots`` utterances
        if len(chosen) >= shots:
            break
        if sid not in chosen:
            chosen.append(sid)
    return [ex for sid in chosen for ex in by_id[sid]]


@dataclass
class DomainResult:
    domain: str
    f1: float
    per_episode: list[float]
    single_median_f1: float
    reports: list[EvalReport] = field(repr=False, default_factory=list)


def episodic_eval(
    pretrained: SpanExtractor,
    domains: Mapping[str, tuple[Sequence[LabeledExample], Sequence[LabeledExample]]],
    vocab: Vocabulary,
    config: FinetuneConfig,
    further_config: FinetuneConfig | None = None,
    shots: int = 5,
    decoders_per_slot: int = 3,
    episodes: int = 2,
    query_size: int = 50,
    seed: int = 0,
) -> list[DomainResult]:
    """Leave-one-domain-out few-shot evaluation.

    For each target domain the decoder is first further-pretrained on every
    other domain (slot name appended to the template), then each episode
    fine-tunes ``decoders_per_slot`` decoders per slot on a ``shots``-utterance
    support set, ensembles them and scores the episode's query set.
    """
    if len(domains) < 2:
        raise ValueError("episodic evaluation needs at least two domains")
    for name, (train, _) in domains.items():
        if not slots_of(train):
            raise ValueError(f"domain {name!r} has no slots")
    cache = EncoderCache(pretrained)
    results = []
    for target in sorted(domains):
        source = [ex for name, (train, _) in sorted(domains.items()) if name != target for ex in train]
        base = further_pretrain_decoder(pretrained, source, vocab, further_config or config, cache).model
        train, test = domains[target]
        rng = random.Random(f"episodes-{seed}-{target}")
        test_ids = sorted({ex.source_id for ex in test})
        scores, singles, reports = [], [], []
        for episode in range(episodes):
            support = sample_episode(train, shots, rng)
            query_ids = set(rng.sample(test_ids, min(query_size, len(test_ids))))
            query = [ex for ex in test if ex.source_id in query_ids]
            cfg = _with_seed(config, seed * 100 + episode)
            from .training import _replace

            cfg = _replace(cfg, append_slot_name=True)
            run = finetune_and_score(base, support, query, vocab, cfg, decoders_per_slot, cache=cache)
            scores.append(run.report.macro_f1)
            reports.append(run.report)
            if run.single_reports:
                singles.append(median(r.macro_f1 for r in run.single_reports))
        results.append(DomainResult(target, sum(scores) / len(scores), scores,
                                    sum(singles) / len(singles) if singles else float("nan"), reports))
    return results


@dataclass
class ProbeReport:
    utterances: int
    with_value: int
    overlapping_labels: int
    exact_labels: int
    predictions: list[SpanPrediction] = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return self.with_value / self.utterances if self.utterances else 0.0


def probe_without_finetuning(
    pretrained: SpanExtractor,
    utterances: Sequence[str],
    vocab: Vocabulary,
    labels: Mapping[str, Sequence[Span]] | None = None,
) -> ProbeReport:
    """Each utterance is both template and input; at most one value per utterance.

    ``labels`` optionally maps an utterance to its labeled value spans, for
    counting how many extracted values overlap (or equal) a labeled one.
    """
    if not utterances:
        return ProbeReport(0, 0, 0, 0)
    examples = [LabeledExample(text, "", None, False, str(i)) for i, text in enumerate(utterances)]
    preds = predict(pretrained, examples, vocab, use_extra_features=False)
    overlap = exact = 0
    for text, p in zip(utterances, preds):
        if p.span is None or labels is None:
            continue
        spans = labels.get(text, ())
        exact += any(tuple(s) == p.span for s in spans)
        overlap += any(s[0] < p.span[1] and p.span[0] < s[1] for s in spans)
    return ProbeReport(len(utterances), sum(p.span is not None for p in preds), overlap, exact, preds)
