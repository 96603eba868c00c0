"""Acceptance checks: one printed PASS/FAIL line per criterion.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines. The
end-to-end and ensembling checks share one pretrained model (module fixture).
"""
import itertools
import math
import statistics
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from clozeslot import autograd as ag
from clozeslot import crf
from clozeslot.autograd import Tensor
from clozeslot.crf import CrfPotentials
from clozeslot.evaluation import finetune_and_score
from clozeslot.keyphrase import score_keyphrase
from clozeslot.model import ModelConfig, SpanExtractor
from clozeslot.pipeline import STATS_FIELDS, PrepareConfig, prepare_pairs, write_prepared
from clozeslot.synthetic import generate_corpus, generate_slot_data
from clozeslot.tags import InvalidTagSequence, tags_to_token_span, token_span_to_tags
from clozeslot.text_corpus import WordFrequencyTable, read_corpus
from clozeslot.tokenizer import train_vocab
from clozeslot.training import (
    AuxLossState,
    EncoderCache,
    FinetuneConfig,
    PretrainConfig,
    aux_loss,
    compose_pretrain_batch,
    encode_pairs,
    evaluate_pairs,
    finetune,
    finetune_dropout,
    finetune_lr,
    heldout_eval_set,
    pretrain,
    pretrain_loss,
)
from gradcheck import check_op, max_rel_error, numeric_grad
from test_autograd import OPS
from test_model import TOY, toy_batch

FIXTURES = Path(__file__).parent / "fixtures"


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------- CRF oracle


def _enumerate(trans, unary):
    """Log-probabilities of all 4^T tag sequences, vectorized enumeration."""
    steps = unary.shape[0]
    seqs = np.array(list(itertools.product(range(4), repeat=steps)), dtype=np.int64)
    cols = np.arange(steps)
    scores = unary[cols, seqs].sum(axis=1)
    if steps > 1:
        scores += trans[cols[:-1], seqs[:, 1:], seqs[:, :-1]].sum(axis=1)
    m = scores.max()
    return seqs, scores - (m + math.log(np.exp(scores - m).sum()))


def test_crf_matches_exhaustive_enumeration():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    mismatched = 0
    n_sets = 1200
    for n in range(n_sets):
        steps = 1 + n % 8
        pot = CrfPotentials(rng.normal(0, 2, (steps, 4, 4)), rng.normal(0, 2, (steps, 4)))
        seqs, logp = _enumerate(pot.transitions, pot.unaries)
        for i in rng.choice(len(seqs), size=min(8, len(seqs)), replace=False):
            worst = max(worst, abs(crf.log_likelihood(pot, seqs[i]) - logp[i]))
        # enumeration is lexicographic, so a stable sort breaks ties the same way the decoder does
        order = np.argsort(-logp, kind="stable")[:5]
        got = crf.viterbi(pot, k=5)
        mismatched += [g[0] for g in got] != [tuple(int(t) for t in seqs[i]) for i in order]
        worst = max(worst, max(abs(g[1] - logp[i]) for g, i in zip(got, order)))
    elapsed = time.perf_counter() - start
    report("crf oracle", worst < 1e-6 and mismatched == 0 and elapsed < 60,
           f"{n_sets} potential sets, T=1..8, max |dlogp|={worst:.2e}, top-5 mismatches={mismatched}, "
           f"{elapsed:.1f}s")


# ---------------------------------------------------------------- gradients


def test_gradients_match_finite_differences():
    start = time.perf_counter()
    errors = {name: check_op(op, *shapes) for name, (op, shapes) in OPS.items()}
    errors.update(log=check_op(ag.log, (3, 4), positive=True), sqrt=check_op(ag.sqrt, (3, 4), positive=True))
    with ag.default_dtype(np.float64):
        model = SpanExtractor(TOY, seed=3, dtype=np.float64)
        params = model.trainable_parameters("pretrain")
        batch = toy_batch()
        loss, _, _ = pretrain_loss(model, batch, aux_scale=1.7)
        ag.backward(loss)
        # key biases: softmax shift invariance makes their true gradient exactly zero
        zero = {n: p for n, p in params.items() if n.endswith("key.bias")}
        used = {n: p for n, p in params.items() if not n.startswith("decoder.residual") and n not in zero}
        numeric = numeric_grad(lambda: pretrain_loss(model, batch, aux_scale=1.7)[0].item(),
                               [p.data for p in used.values()], eps=1e-5)
        errors["pretraining loss"] = max(max_rel_error(p.grad, g, floor=1e-6) for p, g in zip(used.values(), numeric))
    zero_ok = all(np.abs(p.grad).max() < 1e-12 for p in zero.values())
    elapsed = time.perf_counter() - start
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    report("gradient checks", worst < 1e-4 and zero_ok and elapsed < 120,
           f"{len(errors) - 1} primitives + full pretraining loss at float64, max rel err {worst:.2e} ({name}), "
           f"{elapsed:.1f}s")


# ---------------------------------------------------------------- matching loss identities


def test_matching_loss_identities():
    rng = np.random.default_rng(0)
    with ag.default_dtype(np.float64):
        one = aux_loss(Tensor(rng.normal(size=(1, 8))), Tensor(rng.normal(size=(1, 8))), 2.5).item()
        n = 7
        flat = aux_loss(Tensor(rng.normal(size=(n, 8))), Tensor(rng.normal(size=(n, 8))), 0.0).item()
    dim = 32
    state = AuxLossState(dim=dim, anneal_steps=10_000)
    c0 = state.scale
    state.step = 10_000
    c_end = state.scale
    ok = one == 0.0 and abs(flat - n * math.log(n)) < 1e-9 and c0 == 0.0 and c_end == math.sqrt(dim)
    report("matching loss identities", ok,
           f"N=1 loss={one!r}, C=0 loss-NlogN={flat - n * math.log(n):.1e}, C(0)={c0}, C(10000)={c_end} "
           f"(sqrt d={math.sqrt(dim)})")


# ---------------------------------------------------------------- keyphrase score


def test_keyphrase_score_properties():
    zero = score_keyphrase(["x"], WordFrequencyTable(Counter(x=40, y=3), 40))
    rng = np.random.default_rng(1)
    drift = 0.0
    for _ in range(500):
        counts = rng.integers(1, 1000, size=rng.integers(1, 4))
        n_sent, k = int(rng.integers(1000, 5000)), int(rng.integers(2, 50))
        words = [f"w{i}" for i in range(len(counts))]
        a = WordFrequencyTable(Counter(dict(zip(words, counts.tolist()))), n_sent)
        b = WordFrequencyTable(Counter({w: int(c) * k for w, c in zip(words, counts)}), n_sent * k)
        drift = max(drift, abs(score_keyphrase(words, a, 0.8) - score_keyphrase(words, b, 0.8)))
    worked = score_keyphrase(["a", "b"], WordFrequencyTable(Counter(a=1, b=10), 100), alpha=0.8)
    by_hand = (math.log(100 / 1) + math.log(100 / 10)) / 2**0.8
    ok = zero == 0.0 and drift < 1e-12 and abs(worked - by_hand) < 1e-9
    report("keyphrase score", ok,
           f"score(x)={zero} at count=|D|, scale drift {drift:.1e}, worked example {worked:.12f} vs {by_hand:.12f}")


# ---------------------------------------------------------------- tag codec


def test_tag_codec_bijection():
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(10_000):
        length = int(rng.integers(1, 40))
        if rng.random() < 0.1:
            span = None
        else:
            begin = int(rng.integers(0, length))
            span = (begin, int(rng.integers(begin + 1, length + 1)))
        mismatches += tags_to_token_span(token_span_to_tags(length, span)) != span
    # every string over the 4 tags up to length 7: valid ones are exactly the encodings of spans
    accepted = rejected = wrong = 0
    for length in range(1, 8):
        valid = {tuple(token_span_to_tags(length, None))}
        valid |= {tuple(token_span_to_tags(length, (b, e))) for b in range(length) for e in range(b + 1, length + 1)}
        for tags in itertools.product(range(4), repeat=length):
            try:
                tags_to_token_span(tags)
                accepted += 1
                wrong += tags not in valid
            except InvalidTagSequence:
                rejected += 1
                wrong += tags in valid
    report("tag codec", mismatches == 0 and wrong == 0,
           f"10000 round trips, {mismatches} mismatches; exhaustive T<=7: {accepted} accepted, {rejected} rejected, "
           f"{wrong} misclassified")


# ---------------------------------------------------------------- schedules and batches


def test_schedule_endpoints_and_batch_composition(tmp_path):
    cfg = FinetuneConfig()
    lr0, lr_end = finetune_lr(0, cfg), finetune_lr(3_500, cfg)
    d0, d_end = finetune_dropout(0, cfg), finetune_dropout(4_000, cfg)
    from test_training import cloze_pool, toy_setup

    rng = np.random.default_rng(0)
    negatives = {sum(p.is_negative for p in compose_pretrain_batch(cloze_pool(), rng, PretrainConfig()))
                 for _ in range(5)}
    sizes = {len(compose_pretrain_batch(cloze_pool(), rng, PretrainConfig())) for _ in range(5)}
    _, vocab, toy = toy_setup()
    model = SpanExtractor(ModelConfig(**{**toy.config.to_dict(), "max_len": 64}), seed=0)
    # enough values and non-values of one slot for full-size batches
    slot_rows = [ex for ex in generate_slot_data("restaurants", 300, "train") if ex.slot == "time"]
    run = finetune(model, slot_rows, vocab, FinetuneConfig(steps=5).scaled(5))
    shares = {r["positives"] / (r["positives"] + r["negatives"]) for r in run.metrics}
    ok = (lr0 == 1e-3 and lr_end == 1e-6 and d0 == 0.5 and d_end == 0.0 and negatives == {64} and sizes == {256}
          and shares == {0.2})
    report("schedule endpoints", ok,
           f"lr(0)={lr0} lr(3500)={lr_end} dropout(0)={d0} dropout(4000)={d_end}; pretrain negatives "
           f"{sorted(negatives)}/{sorted(sizes)}; fine-tune positive share {sorted(shares)}")


# ---------------------------------------------------------------- frozen encoder


def _tree_bytes(path: Path) -> dict[str, bytes]:
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_encoder_checkpoint_bytes_survive_finetuning(tmp_path):
    from test_training import toy_setup

    examples, vocab, model = toy_setup()
    model.save(tmp_path / "before")
    loaded = SpanExtractor.load(tmp_path / "before")
    before = _tree_bytes(tmp_path / "before" / "encoder")
    runs = [finetune(loaded, examples, vocab, FinetuneConfig(steps=20, batch_size=10, lr_start=1e-2).scaled(20)),
            finetune(loaded, examples, vocab, FinetuneConfig(steps=10).scaled(10), from_scratch=True)]
    same = []
    for j, run in enumerate(runs):
        run.model.save(tmp_path / f"after{j}")
        same.append(_tree_bytes(tmp_path / f"after{j}" / "encoder") == before)
    loaded.save(tmp_path / "source")
    same.append(_tree_bytes(tmp_path / "source" / "encoder") == before)
    report("frozen encoder", all(same) and len(before) > 0,
           f"{len(before)} encoder checkpoint files byte-identical after {len(runs)} fine-tune runs: {same}")


# ---------------------------------------------------------------- golden files


def test_golden_files_and_stats_schema(tmp_path):
    golden = FIXTURES / "golden"
    identical = []
    for processes in (1, 2):
        out = tmp_path / f"p{processes}"
        data = prepare_pairs(read_corpus(FIXTURES / "corpus.tsv"), PrepareConfig(test_fraction=0.1,
                                                                                 processes=processes))
        write_prepared(data, out)
        for name in ("train.jsonl", "test.jsonl", "stats.tsv", "frequencies.tsv"):
            identical.append((out / name).read_bytes() == (golden / name).read_bytes())
    fields = [line.split("\t")[0] for line in (golden / "stats.tsv").read_text().splitlines()]
    schema = ["Total comments", "Comments filtered by length", "Extracted keyphrases", "Training set size",
              "Test set size", "Mean number of words per keyphrase"]
    ok = all(identical) and fields == schema and list(STATS_FIELDS) == schema
    report("golden files", ok, f"{sum(identical)}/{len(identical)} files byte-identical (1 and 2 processes); "
                               f"stats fields {fields}")


# ---------------------------------------------------------------- end to end

E2E_SENTENCES = 5000
E2E_VOCAB = 1000
E2E_MODEL = dict(max_len=48, encoder_dim=64, encoder_heads=4, encoder_ffn_dim=128, proj_hidden_dim=64, proj_dim=32,
                 decoder_ffn_dim=64, residual_hidden_dim=64)
E2E_PRETRAIN = PretrainConfig(batch_size=64, negatives_per_batch=16, learning_rate=1.0, max_steps=3000,
                              eval_every=500, aux_anneal_batches=1500)
E2E_FINETUNE = FinetuneConfig().scaled(400)
FEW_SHOT = 64
TEST_UTTERANCES = 300
DOMAIN = "restaurants"
ENSEMBLE_SEEDS = 5


@pytest.fixture(scope="module")
def pretrained():
    start = time.perf_counter()
    corpus = generate_corpus(E2E_SENTENCES, seed=0)
    data = prepare_pairs(corpus, PrepareConfig())
    vocab = train_vocab([c.text for c in corpus], E2E_VOCAB)
    train_pairs, _ = encode_pairs(data.train, vocab, E2E_MODEL["max_len"])
    test_pairs, _ = encode_pairs(data.test, vocab, E2E_MODEL["max_len"])
    model = SpanExtractor(ModelConfig(vocab_size=vocab.size, **E2E_MODEL), seed=0)
    pretrain(model, train_pairs, E2E_PRETRAIN)
    scores = evaluate_pairs(model, heldout_eval_set(test_pairs))
    return dict(model=model, vocab=vocab, scores=scores, heldout=len(test_pairs), pretrain_time=time.perf_counter() - start)


def test_end_to_end_pretraining_and_few_shot(pretrained):
    start = time.perf_counter()
    model, vocab = pretrained["model"], pretrained["vocab"]
    train = generate_slot_data(DOMAIN, FEW_SHOT, "train", seed=0)
    test = generate_slot_data(DOMAIN, TEST_UTTERANCES, "test", seed=0)
    cache = EncoderCache(model)
    tuned = finetune_and_score(model, train, test, vocab, E2E_FINETUNE, cache=cache).report.macro_f1
    scratch = finetune_and_score(model, train, test, vocab, E2E_FINETUNE, from_scratch=True, cache=cache).report.macro_f1
    total = pretrained["pretrain_time"] + time.perf_counter() - start
    p, r = pretrained["scores"].precision, pretrained["scores"].recall
    ok = p >= 0.9 and r >= 0.9 and (tuned - scratch) * 100 >= 10 and total < 30 * 60
    report("end to end", ok,
           f"held-out pairs ({pretrained['heldout']} positives) P={p:.3f} R={r:.3f}; {FEW_SHOT}-example F1 "
           f"pretrained {100 * tuned:.1f} vs from-scratch {100 * scratch:.1f} (gap {100 * (tuned - scratch):+.1f}); "
           f"total {total / 60:.1f} min")


def test_ensemble_beats_median_single_decoder(pretrained):
    model, vocab = pretrained["model"], pretrained["vocab"]
    test = generate_slot_data(DOMAIN, TEST_UTTERANCES, "test", seed=0)
    cache = EncoderCache(model)
    ens, med = [], []
    for seed in range(ENSEMBLE_SEEDS):
        train = generate_slot_data(DOMAIN, FEW_SHOT, "train", seed=seed)
        cfg = FinetuneConfig(seed=seed).scaled(E2E_FINETUNE.steps)
        run = finetune_and_score(model, train, test, vocab, cfg, decoders_per_slot=3, cache=cache)
        ens.append(run.report.macro_f1)
        med.append(statistics.median(r.macro_f1 for r in run.single_reports))
    wins = sum(e >= m for e, m in zip(ens, med))
    ok = statistics.mean(ens) >= statistics.mean(med)
    report("ensembling", ok,
           f"mean 3-decoder F1 {100 * statistics.mean(ens):.1f} vs mean median-single F1 "
           f"{100 * statistics.mean(med):.1f} over {ENSEMBLE_SEEDS} seeds; ensemble >= median in {wins}/"
           f"{ENSEMBLE_SEEDS} (per seed: " + ", ".join(f"{100 * e:.1f}/{100 * m:.1f}" for e, m in zip(ens, med)) + ")")
