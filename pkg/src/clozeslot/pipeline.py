"""Raw comments -> keyphrase-annotated sentences -> cloze pairs with a train/test split."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .keyphrase import KeyphraseConfig, calibrate_threshold, extract_keyphrases
from .pair_builder import AnnotatedSentence, ClozePair, build_pairs, split_train_test, write_jsonl
from .text_corpus import RawComment, WordFrequencyTable, count_words_sharded, filter_by_length, word_tokenize

# Row labels of the statistics report, in order.
STATS_FIELDS = (
    "Total comments",
    "Comments filtered by length",
    "Extracted keyphrases",
    "Training set size",
    "Test set size",
    "Mean number of words per keyphrase",
)


@dataclass
class PrepareConfig:
    min_chars: int = 9
    max_chars: int = 127
    alpha: float = 0.8
    kp_threshold: float | None = None  # None -> calibrate to the target keyphrase density
    max_per_sentence: int = 2
    max_span_fraction: float = 0.5
    test_fraction: float = 0.05
    num_shards: int = 4
    processes: int = 1
    seed: int = 0


@dataclass
class PreparedData:
    train: list[ClozePair]
    test: list[ClozePair]
    stats: dict[str, float]
    threshold: float
    frequencies: WordFrequencyTable = field(repr=False)
    sentences: list[AnnotatedSentence] = field(repr=False, default_factory=list)


def annotate(comments: Iterable[RawComment], freq: WordFrequencyTable, config: KeyphraseConfig) -> list[AnnotatedSentence]:
    out = []
    for c in comments:
        words = word_tokenize(c.text)
        picks = extract_keyphrases(words, freq, config, len(c.text.strip()))
        out.append(AnnotatedSentence(c.text, c.group_key, tuple((k.phrase, k.char_span) for k in picks)))
    return out


def prepare_pairs(comments: Iterable[RawComment], config: PrepareConfig = PrepareConfig()) -> PreparedData:
    """Filter by length, count words, pick keyphrases, pair sentences and split."""
    total = 0
    kept: list[RawComment] = []
    for c in comments:
        total += 1
        if filter_by_length(c, config.min_chars, config.max_chars) is not None:
            kept.append(c)
    freq = count_words_sharded(kept, config.num_shards, config.processes)
    kp = KeyphraseConfig(config.alpha, 0.0, config.max_per_sentence, config.max_span_fraction)
    if config.kp_threshold is None:
        threshold = calibrate_threshold([(word_tokenize(c.text), len(c.text.strip())) for c in kept], freq, kp)
    else:
        threshold = config.kp_threshold
    kp = KeyphraseConfig(config.alpha, threshold, config.max_per_sentence, config.max_span_fraction)
    sentences = annotate(kept, freq, kp)
    pairs = build_pairs(sentences, config.seed, config.max_span_fraction)
    train, test = split_train_test(pairs, config.test_fraction, config.seed)
    phrases = [p for s in sentences for p, _ in s.keyphrases]
    stats = {
        "Total comments": total,
        "Comments filtered by length": len(kept),
        "Extracted keyphrases": len(phrases),
        "Training set size": len(train),
        "Test set size": len(test),
        "Mean number of words per keyphrase": (
            round(sum(len(p.split()) for p in phrases) / len(phrases), 4) if phrases else 0.0
        ),
    }
    return PreparedData(train, test, stats, threshold, freq, sentences)


def format_stats(stats: dict[str, float]) -> str:
    return "".join(f"{name}\t{stats[name]}\n" for name in STATS_FIELDS)


def write_prepared(data: PreparedData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
        "stats": out / "stats.tsv",
        "frequencies": out / "frequencies.tsv",
    }
    write_jsonl(data.train, paths["train"])
    write_jsonl(data.test, paths["test"])
    paths["stats"].write_text(format_stats(data.stats), encoding="utf-8", newline="\n")
    paths["frequencies"].write_text(data.frequencies.to_tsv(), encoding="utf-8", newline="\n")
    return paths
