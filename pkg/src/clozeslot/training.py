"""Pretraining on cloze pairs and slot fine-tuning of the decoder.

Pretraining minimizes the CRF negative log-likelihood of the input sentence's
tags (plus, optionally, a batch-softmax loss matching template and input BOS
summaries) with Adadelta. Fine-tuning freezes the encoder, starts the decoder
from its pretrained values and trains it with Adam on labeled utterances that
serve as both template and input.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .crf import batch_viterbi, crf_nll
from .labeled import LabeledExample
from .model import Decoder, ExtraFeatures, SpanExtractor, pad_ids
from .pair_builder import ClozePair
from .tags import BEFORE, InvalidTagSequence, tags_to_token_span, token_span_to_tags
from .tokenizer import (
    MAX_SNAP_DRIFT,
    TokenizedText,
    Vocabulary,
    char_span_to_token_span,
    join_with_separator,
    snap_drift,
    tokenize,
    token_span_to_char_span,
)

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """Raised when a training loss becomes non-finite."""


# ---------------------------------------------------------------- configs


@dataclass
class PretrainConfig:
    batch_size: int = 256
    negatives_per_batch: int = 64
    learning_rate: float = 0.3
    rho: float = 0.9
    aux_anneal_batches: int = 10_000
    use_aux_loss: bool = True
    max_steps: int = 20_000
    eval_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.negatives_per_batch < self.batch_size:
            raise ValueError("negatives_per_batch must lie in [0, batch_size)")
        if self.aux_anneal_batches <= 0 or self.max_steps < 0:
            raise ValueError("aux_anneal_batches must be positive and max_steps non-negative")


@dataclass
class FinetuneConfig:
    steps: int = 4_000
    batch_size: int = 64
    early_stop_loss: float = 0.001
    ema_decay: float = 0.98
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    lr_decay_steps: int = 3_500
    dropout_start: float = 0.5
    dropout_decay_steps: int = 4_000
    value_fraction: float = 0.2
    use_extra_features: bool = True
    append_slot_name: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.lr_end < self.lr_start:
            raise ValueError("lr_end must be smaller than lr_start")
        if not 0.0 <= self.value_fraction <= 1.0:
            raise ValueError("value_fraction must lie in [0, 1]")
        if self.batch_size < 1 or self.lr_decay_steps < 1 or self.dropout_decay_steps < 1:
            raise ValueError("batch_size and decay lengths must be positive")

    def scaled(self, steps: int) -> "FinetuneConfig":
        """Same schedule shape compressed (or stretched) to ``steps`` total steps."""
        ratio = steps / self.steps
        return _replace(
            self,
            steps=steps,
            lr_decay_steps=max(1, round(self.lr_decay_steps * ratio)),
            dropout_decay_steps=max(1, round(self.dropout_decay_steps * ratio)),
        )


def _replace(cfg, **changes):
    out = copy.copy(cfg)
    for k, v in changes.items():
        setattr(out, k, v)
    out.__post_init__()
    return out


# ---------------------------------------------------------------- schedules


def _cosine_weight(step: int, horizon: int) -> float:
    """1 at step 0, 0 at ``horizon`` and beyond, half-cosine in between."""
    frac = min(max(step, 0), horizon) / horizon
    return 0.5 * (1.0 + math.cos(math.pi * frac))


def cosine_lr(step: int, start: float, end: float, horizon: int) -> float:
    w = _cosine_weight(step, horizon)
    return start * w + end * (1.0 - w)


def finetune_lr(step: int, config: FinetuneConfig) -> float:
    return cosine_lr(step, config.lr_start, config.lr_end, config.lr_decay_steps)


def finetune_dropout(step: int, config: FinetuneConfig) -> float:
    return config.dropout_start * _cosine_weight(step, config.dropout_decay_steps)


@dataclass
class AuxLossState:
    """Annealing state of the auxiliary loss: ``scale`` grows linearly from 0 to sqrt(dim)."""

    dim: int
    anneal_steps: int = 10_000
    step: int = 0

    @property
    def scale(self) -> float:
        return aux_anneal_factor(self.step, self.dim, self.anneal_steps)


def aux_anneal_factor(step: int, dim: int, anneal_steps: int) -> float:
    if step >= anneal_steps:
        return math.sqrt(dim)
    return math.sqrt(dim) * (max(step, 0) / anneal_steps)


def aux_loss(template_summary: Tensor, input_summary: Tensor, scale: float) -> Tensor:
    """Batch-softmax matching loss over cosine similarities.

    ``-sum_i s*cos(t_i, x_i) + sum_i log sum_j exp(s*cos(t_i, x_j))`` for
    aligned rows ``t_i`` / ``x_i``; returned as a sum, not a mean.
    """
    n = template_summary.shape[0]
    if n == 0:
        raise ValueError("aux_loss needs at least one pair")
    if input_summary.shape[0] != n:
        raise ValueError(f"aux_loss: {n} templates vs {input_summary.shape[0]} inputs")
    logits = ag.mul(ag.cosine_similarity_matrix(template_summary, input_summary), scale)
    matched = ag.reduce_sum(ag.mul(logits, np.eye(n, dtype=logits.dtype)))
    return ag.sub(ag.reduce_sum(ag.logsumexp(logits, axis=1)), matched)


# ---------------------------------------------------------------- pretraining data


@dataclass(frozen=True)
class EncodedPair:
    """A tokenized cloze pair: template ids, input ids and gold input tags."""

    template_ids: tuple[int, ...]
    input_ids: tuple[int, ...]
    tags: tuple[int, ...]
    bucket: str
    is_negative: bool = False


def encode_pairs(
    pairs: Iterable[ClozePair], vocab: Vocabulary, max_len: int
) -> tuple[list[EncodedPair], dict[str, int]]:
    """Tokenize pairs; drop over-long pairs and spans that snap too far to token edges."""
    out, stats = [], {"kept": 0, "dropped_length": 0, "dropped_snap": 0}
    for pair in pairs:
        tmpl, inp = tokenize(pair.template_text, vocab), tokenize(pair.input_text, vocab)
        if len(tmpl) > max_len or len(inp) > max_len:
            stats["dropped_length"] += 1
            continue
        if pair.span is None:
            tags = token_span_to_tags(len(inp), None)
        else:
            if snap_drift(inp, pair.span) > MAX_SNAP_DRIFT:
                stats["dropped_snap"] += 1
                continue
            tags = token_span_to_tags(len(inp), char_span_to_token_span(inp, pair.span))
        out.append(EncodedPair(tuple(tmpl.ids), tuple(inp.ids), tuple(tags), pair.bucket or pair.keyphrase.lower(),
                               pair.is_negative))
        stats["kept"] += 1
    if stats["dropped_snap"]:
        log.warning("dropped %d pairs whose span is more than %d characters off token boundaries",
                    stats["dropped_snap"], MAX_SNAP_DRIFT)
    if stats["dropped_length"]:
        log.warning("dropped %d pairs longer than %d tokens", stats["dropped_length"], max_len)
    return out, stats


def _make_negative(template_item, input_item):
    if isinstance(template_item, ClozePair):
        return ClozePair(template_item.template_text, input_item.input_text, None, "", template_item.group_key,
                         is_negative=True)
    return EncodedPair(template_item.template_ids, input_item.input_ids, (BEFORE,) * len(input_item.input_ids), "",
                       is_negative=True)


def _bucket_of(item) -> str:
    return item.bucket or getattr(item, "keyphrase", "").lower()


def _input_of(item):
    return item.input_text if isinstance(item, ClozePair) else item.input_ids


class PositiveStream:
    """Epoch-wise shuffled cursor over a positive pool; never repeats within an epoch."""

    def __init__(self, size: int, rng: np.random.Generator):
        if size < 1:
            raise ValueError("positive pool is empty")
        self.size, self.rng = size, rng
        self._order = rng.permutation(size)
        self._pos = 0

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if self._pos == self.size:
                self._order, self._pos = self.rng.permutation(self.size), 0
            n = min(k - len(out), self.size - self._pos)
            out.extend(int(i) for i in self._order[self._pos : self._pos + n])
            self._pos += n
        return out


def compose_pretrain_batch(
    pool: Sequence, rng: np.random.Generator, config: PretrainConfig, stream: PositiveStream | None = None
) -> list:
    """``batch_size - negatives_per_batch`` positives followed by ``negatives_per_batch`` negatives.

    A negative joins the template of one positive with the input sentence of
    another positive from a different keyphrase bucket; its span is absent.
    """
    if not pool:
        raise ValueError("cannot compose a batch from an empty pool")
    stream = stream or PositiveStream(len(pool), rng)
    n_pos = config.batch_size - config.negatives_per_batch
    batch = [pool[i] for i in stream.take(n_pos)]
    for _ in range(config.negatives_per_batch):
        a = pool[int(rng.integers(len(pool)))]
        for _attempt in range(20):
            b = pool[int(rng.integers(len(pool)))]
            if _bucket_of(b) != _bucket_of(a) and _input_of(b) != _input_of(a):
                break
        batch.append(_make_negative(a, b))
    return batch


def heldout_eval_set(pairs: Sequence[EncodedPair], seed: int = 0) -> list[EncodedPair]:
    """Held-out positives plus one negative per three positives (25% negatives)."""
    rng = np.random.default_rng([seed, 7])
    cfg = PretrainConfig(batch_size=len(pairs) + len(pairs) // 3, negatives_per_batch=len(pairs) // 3)
    return compose_pretrain_batch(list(pairs), rng, cfg, PositiveStream(len(pairs), rng))


# ---------------------------------------------------------------- pretraining loop


def _pad_tags(tags: Sequence[Sequence[int]], steps: int) -> np.ndarray:
    out = np.zeros((len(tags), steps), dtype=np.int64)
    for row, t in enumerate(tags):
        out[row, : len(t)] = t
    return out


def _encode_two(model: SpanExtractor, first, second, training: bool, rng):
    """Run the shared encoder once over both id lists; returns the two streams and lengths."""
    n = len(first)
    ids, lengths = pad_ids(list(first) + list(second))
    enc = model.encode_batch(ids, lengths, training=training, rng=rng)
    t_len, i_len = lengths[:n], lengths[n:]
    return enc[:n, : int(t_len.max())], t_len, enc[n:, : int(i_len.max())], i_len


def pair_forward(model: SpanExtractor, batch: Sequence[EncodedPair], training: bool, rng=None):
    t_repr, t_len, i_repr, i_len = _encode_two(
        model, [p.template_ids for p in batch], [p.input_ids for p in batch], training, rng
    )
    feats = model.decode(t_repr, t_len, i_repr, i_len, training=training, rng=rng)
    return feats, i_len


@dataclass
class PairScores:
    precision: float
    recall: float
    predicted: int
    correct: int
    gold: int


def evaluate_pairs(model: SpanExtractor, pairs: Sequence[EncodedPair], batch_size: int = 128) -> PairScores:
    """Exact-span precision/recall of top-1 decoding; invalid decodes count as no prediction."""
    predicted = correct = gold = 0
    with ag.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            feats, lengths = pair_forward(model, chunk, training=False)
            decoded = batch_viterbi(feats.transitions.data, feats.unaries.data, lengths)
            for pair, (tags, _) in zip(chunk, decoded):
                try:
                    span = tags_to_token_span(tags)
                except InvalidTagSequence:
                    span = None
                truth = tags_to_token_span(pair.tags)
                predicted += span is not None
                gold += truth is not None
                correct += span is not None and span == truth
    return PairScores(
        correct / predicted if predicted else 0.0, correct / gold if gold else 0.0, predicted, correct, gold
    )


@dataclass
class TrainResult:
    model: SpanExtractor
    metrics: list[dict] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False


def _check_finite(step: int, parts: dict[str, float], params: dict[str, Tensor]) -> None:
    if all(math.isfinite(v) for v in parts.values()):
        return
    norms = {n: float(np.linalg.norm(p.grad)) for n, p in params.items() if p.grad is not None}
    worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:3]
    raise TrainingDivergence(f"non-finite loss at step {step}: {parts}; largest gradient norms {worst}")


def pretrain_loss(model: SpanExtractor, batch: Sequence[EncodedPair], aux_scale: float | None, training: bool = False,
                  rng=None) -> tuple[Tensor, Tensor, Tensor | None]:
    """Mean CRF NLL over the batch plus, when ``aux_scale`` is given, the matching
    loss over the batch's positives divided by their count. Returns (total, nll, aux)."""
    feats, lengths = pair_forward(model, batch, training=training, rng=rng)
    tags = _pad_tags([p.tags for p in batch], feats.unaries.shape[1])
    nll = ag.mean(crf_nll(feats.transitions, feats.unaries, tags, lengths))
    if aux_scale is None:
        return nll, nll, None
    pos = np.array([i for i, p in enumerate(batch) if not p.is_negative], dtype=np.int64)
    if len(pos) == 0:
        return nll, nll, None
    aux = ag.mul(aux_loss(feats.template_summary[pos], feats.input_summary[pos], aux_scale), 1.0 / len(pos))
    return ag.add(nll, aux), nll, aux


def pretrain(
    model: SpanExtractor,
    train_pairs: Sequence[EncodedPair],
    config: PretrainConfig,
    heldout: Sequence[EncodedPair] = (),
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adadelta on CRF NLL (+ the annealed matching loss over the batch's positives)."""
    positives = [p for p in train_pairs if not p.is_negative]
    if not positives:
        raise ValueError("no positive training pairs")
    rng = np.random.default_rng([config.seed, 100])
    dropout_rng = np.random.default_rng([config.seed, 101])
    stream = PositiveStream(len(positives), rng)
    params = model.trainable_parameters("pretrain")
    opt = ag.Adadelta(list(params.values()), lr=config.learning_rate, rho=config.rho)
    aux_state = AuxLossState(model.config.similarity_dim, config.aux_anneal_batches)
    result = TrainResult(model)

    for step in range(config.max_steps):
        batch = compose_pretrain_batch(positives, rng, config, stream)
        aux_state.step = step
        scale = aux_state.scale if config.use_aux_loss else None
        loss, nll, aux = pretrain_loss(model, batch, scale, training=True, rng=dropout_rng)
        aux_value = aux.item() if aux is not None else 0.0
        opt.zero_grad()
        ag.backward(loss)
        _check_finite(step, {"nll": nll.item(), "aux": aux_value}, params)
        opt.step()

        row = {"step": step + 1, "loss": loss.item(), "nll": nll.item(), "aux": aux_value,
               "lr": config.learning_rate, "C": aux_state.scale, "dropout": model.config.dropout_rate}
        last = step + 1 == config.max_steps
        if heldout and ((step + 1) % config.eval_every == 0 or last):
            scores = evaluate_pairs(model, heldout)
            row.update(eval_precision=scores.precision, eval_recall=scores.recall)
            log.info("step %d loss %.4f heldout P %.3f R %.3f", step + 1, row["loss"], scores.precision,
                     scores.recall)
        result.metrics.append(row)
        if callback:
            callback(row)
    result.steps = config.max_steps
    return result


# ---------------------------------------------------------------- fine-tuning data


@dataclass(frozen=True)
class SlotItem:
    """A labeled utterance prepared for the decoder."""

    template_ids: tuple[int, ...]
    input_ids: tuple[int, ...]
    tags: tuple[int, ...]
    requested: bool
    numeric: tuple[bool, ...]
    tokens: TokenizedText = field(compare=False)

    @property
    def has_value(self) -> bool:
        return any(t != BEFORE for t in self.tags)


def _is_numeric(text: str) -> bool:
    return bool(text) and all(c.isdigit() for c in text)


def prepare_slot_items(
    examples: Sequence[LabeledExample], vocab: Vocabulary, append_slot_name: bool = False
) -> list[SlotItem]:
    """Utterance as both template and input (optionally with `<sep> slot name` appended to the template)."""
    items = []
    for ex in examples:
        tokens = tokenize(ex.text, vocab)
        template = join_with_separator(tokens, tokenize(ex.slot.replace("_", " "), vocab), vocab) \
            if append_slot_name else tokens
        span = None if ex.span is None else char_span_to_token_span(tokens, ex.span)
        numeric = tuple(_is_numeric(tokens.text[s:e]) for s, e in tokens.offsets)
        items.append(SlotItem(tuple(template.ids), tuple(tokens.ids), tuple(token_span_to_tags(len(tokens), span)),
                              ex.requested, numeric, tokens))
    return items


class EncoderCache:
    """Frozen-encoder outputs keyed by token ids; fine-tuning never re-encodes."""

    def __init__(self, model: SpanExtractor):
        self.model = model
        self._store: dict[tuple[int, ...], np.ndarray] = {}

    def fill(self, sequences: Iterable[Sequence[int]], batch_size: int = 128) -> None:
        todo = sorted({tuple(s) for s in sequences} - set(self._store), key=len)
        with ag.no_grad():
            for start in range(0, len(todo), batch_size):
                chunk = todo[start : start + batch_size]
                ids, lengths = pad_ids(chunk)
                enc = self.model.encode_batch(ids, lengths).data
                for row, seq in enumerate(chunk):
                    self._store[seq] = enc[row, : len(seq)].copy()

    def batch(self, sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        self.fill(sequences)
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        first = self._store[tuple(sequences[0])]
        out = np.zeros((len(sequences), int(lengths.max()), first.shape[1]), dtype=first.dtype)
        for row, seq in enumerate(sequences):
            out[row, : len(seq)] = self._store[tuple(seq)]
        return out, lengths


def slot_forward(model, items: Sequence[SlotItem], cache: EncoderCache, use_extra: bool, training=False,
                 encoder_dropout=0.0, rng=None):
    t_repr, t_len = cache.batch([it.template_ids for it in items])
    i_repr, i_len = cache.batch([it.input_ids for it in items])
    extra = template_extra = None
    if use_extra:
        requested = np.array([it.requested for it in items])
        extra = ExtraFeatures(requested, pad_ids([it.numeric for it in items], 0)[0].astype(bool))
        t_numeric = [it.numeric + (False,) * (len(it.template_ids) - len(it.numeric)) for it in items]
        template_extra = ExtraFeatures(requested, pad_ids(t_numeric, 0)[0].astype(bool))
    feats = model.decode(Tensor(t_repr), t_len, Tensor(i_repr), i_len, extra, template_extra, training=training,
                         encoder_dropout=encoder_dropout, rng=rng)
    return feats, i_len


def finetune_batch_plan(n_pos: int, n_neg: int, config: FinetuneConfig) -> tuple[int, int]:
    """(positives, negatives) per batch.

    The batch is the largest size <= ``batch_size`` whose value fraction is
    exact and that needs no duplicate within the batch; if the data lack one
    class entirely, the batch uses the other class alone.
    """
    f = config.value_fraction
    if n_pos + n_neg == 0:
        raise ValueError("empty fine-tuning set")
    if n_pos == 0 or f == 0.0:
        return 0, min(config.batch_size, n_neg)
    if n_neg == 0 or f == 1.0:
        return min(config.batch_size, n_pos), 0
    for size in range(config.batch_size, 0, -1):
        k = size * f
        if abs(k - round(k)) > 1e-9 or round(k) == 0:
            continue
        k = int(round(k))
        if k <= n_pos and size - k <= n_neg:
            return k, size - k
    # no exact split fits; fall back to one positive and as many negatives as the ratio allows
    return 1, max(1, min(n_neg, int(round((1 - f) / f))))


class _SampleStream:
    def __init__(self, indices: Sequence[int], rng):
        self.indices, self.rng = list(indices), rng
        self.stream = PositiveStream(len(self.indices), rng) if self.indices else None

    def take(self, k):
        return [self.indices[i] for i in self.stream.take(k)] if k else []


def finetune(
    pretrained: SpanExtractor,
    examples: Sequence[LabeledExample],
    vocab: Vocabulary,
    config: FinetuneConfig,
    cache: EncoderCache | None = None,
    from_scratch: bool = False,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train a copy of the decoder; the encoder object is shared and never updated.

    ``from_scratch`` re-initializes the decoder randomly (ablation baseline).
    """
    if not examples:
        raise ValueError("empty training set")
    model = clone_decoder(pretrained, fresh_seed=config.seed if from_scratch else None)
    cache = cache if cache is not None and cache.model.encoder is model.encoder else EncoderCache(model)
    items = prepare_slot_items(examples, vocab, config.append_slot_name)
    cache.fill([it.template_ids for it in items] + [it.input_ids for it in items])
    pos = [i for i, it in enumerate(items) if it.has_value]
    neg = [i for i, it in enumerate(items) if not it.has_value]
    k_pos, k_neg = finetune_batch_plan(len(pos), len(neg), config)
    rng = np.random.default_rng([config.seed, 200])
    pos_stream, neg_stream = _SampleStream(pos, rng), _SampleStream(neg, rng)
    dropout_rng = np.random.default_rng([config.seed, 201])

    params = model.trainable_parameters("finetune")
    opt = ag.Adam(list(params.values()), lambda s: finetune_lr(s, config))
    result = TrainResult(model)
    ema = None
    for step in range(config.steps):
        batch = [items[i] for i in pos_stream.take(k_pos) + neg_stream.take(k_neg)]
        rate = finetune_dropout(step, config)
        feats, lengths = slot_forward(model, batch, cache, config.use_extra_features, training=True,
                                      encoder_dropout=rate, rng=dropout_rng)
        tags = _pad_tags([it.tags for it in batch], feats.unaries.shape[1])
        loss = ag.mean(crf_nll(feats.transitions, feats.unaries, tags, lengths))
        lr = opt.lr
        opt.zero_grad()
        ag.backward(loss)
        _check_finite(step, {"loss": loss.item()}, params)
        opt.step()
        value = loss.item()
        ema = value if ema is None else config.ema_decay * ema + (1 - config.ema_decay) * value
        row = {"step": step + 1, "loss": value, "loss_ema": ema, "lr": lr, "dropout": rate,
               "positives": k_pos, "negatives": k_neg}
        result.metrics.append(row)
        if callback:
            callback(row)
        result.steps = step + 1
        if ema < config.early_stop_loss:
            result.stopped_early = True
            break
    return result


def clone_decoder(model: SpanExtractor, fresh_seed: int | None = None) -> SpanExtractor:
    """New model sharing ``model``'s encoder object with a private decoder copy (or a fresh one)."""
    twin = object.__new__(SpanExtractor)
    twin.config, twin.dtype, twin.encoder = model.config, model.dtype, model.encoder
    if fresh_seed is None:
        twin.decoder = copy.deepcopy(model.decoder)
    else:
        twin.decoder = Decoder(model.config, np.random.default_rng([fresh_seed, 2]), model.dtype)
    return twin


def further_pretrain_decoder(
    pretrained: SpanExtractor,
    examples: Sequence[LabeledExample],
    vocab: Vocabulary,
    config: FinetuneConfig,
    cache: EncoderCache | None = None,
) -> TrainResult:
    """One decoder over every slot of the source domains, slot name appended to the template."""
    if not all(ex.slot for ex in examples):
        raise ValueError("further pretraining needs a slot name on every example")
    return finetune(pretrained, examples, vocab, _replace(config, append_slot_name=True), cache)


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True)
class SpanPrediction:
    span: tuple[int, int] | None
    probability: float
    invalid: bool = False


def token_span_to_text_span(tokens: TokenizedText, token_span: tuple[int, int] | None) -> tuple[int, int] | None:
    """Character span for a token span; BOS/EOS contribute nothing, an empty result is no span."""
    if token_span is None:
        return None
    s, e = token_span_to_char_span(tokens, token_span)
    return (s, e) if s < e else None


def predict(
    model: SpanExtractor,
    examples: Sequence[LabeledExample],
    vocab: Vocabulary,
    append_slot_name: bool = False,
    use_extra_features: bool = True,
    cache: EncoderCache | None = None,
    batch_size: int = 128,
) -> list[SpanPrediction]:
    """Top-1 decode per example; structurally invalid tag strings become no span."""
    cache = cache if cache is not None and cache.model.encoder is model.encoder else EncoderCache(model)
    items = prepare_slot_items(examples, vocab, append_slot_name)
    out = []
    with ag.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            feats, lengths = slot_forward(model, chunk, cache, use_extra_features)
            for item, (tags, logp) in zip(chunk, batch_viterbi(feats.transitions.data, feats.unaries.data, lengths)):
                try:
                    span = token_span_to_text_span(item.tokens, tags_to_token_span(tags))
                    out.append(SpanPrediction(span, math.exp(logp)))
                except InvalidTagSequence:
                    out.append(SpanPrediction(None, math.exp(logp), invalid=True))
    return out


def write_metrics_csv(rows: Sequence[dict], path: str | Path) -> None:
    keys: list[str] = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def config_dict(config) -> dict:
    return asdict(config)
