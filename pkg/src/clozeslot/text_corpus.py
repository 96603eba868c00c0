"""Comment ingestion, length filtering, word tokenization and frequency counts."""
from __future__ import annotations

import io
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

DEFAULT_MIN_CHARS = 9
DEFAULT_MAX_CHARS = 127
DEFAULT_GROUP = "default"

_CHUNK = re.compile(r"\S+")


@dataclass(frozen=True)
class RawComment:
    text: str
    group_key: str = DEFAULT_GROUP


class Word(NamedTuple):
    text: str
    start: int
    end: int


def filter_by_length(
    comment: RawComment, min_chars: int = DEFAULT_MIN_CHARS, max_chars: int = DEFAULT_MAX_CHARS
) -> RawComment | None:
    """Keep the comment iff its trimmed length (in code points) lies in [min_chars, max_chars]."""
    if min_chars > max_chars:
        raise ValueError(f"min_chars {min_chars} > max_chars {max_chars}")
    n = len(comment.text.strip())
    return comment if min_chars <= n <= max_chars else None


def word_tokenize(text: str) -> list[Word]:
    """Lowercased whitespace tokens with leading/trailing non-alphanumerics removed.

    Interior punctuation survives (``7pm``, ``/r/all`` -> ``r/all``, ``19/20``).
    Offsets index the stripped token inside ``text``.
    """
    words = []
    for m in _CHUNK.finditer(text):
        start, end = m.start(), m.end()
        while start < end and not text[start].isalnum():
            start += 1
        while end > start and not text[end - 1].isalnum():
            end -= 1
        if start < end:
            words.append(Word(text[start:end].lower(), start, end))
    return words


@dataclass
class WordFrequencyTable:
    counts: Counter = field(default_factory=Counter)
    num_sentences: int = 0

    def count(self, word: str) -> int:
        """Occurrence count; unseen words count as 1 so log-ratios stay finite."""
        return self.counts.get(word, 0) or 1

    def merge(self, other: "WordFrequencyTable") -> "WordFrequencyTable":
        return WordFrequencyTable(self.counts + other.counts, self.num_sentences + other.num_sentences)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write(f"#sentences\t{self.num_sentences}\n")
        for word, n in sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0])):
            buf.write(f"{word}\t{n}\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> "WordFrequencyTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#sentences\t"):
            raise ValueError("frequency table must start with a '#sentences<TAB>N' header")
        table = cls(num_sentences=int(lines[0].split("\t")[1]))
        for line in lines[1:]:
            if line:
                word, n = line.rsplit("\t", 1)
                table.counts[word] = int(n)
        return table


def count_words(comments: Iterable[RawComment]) -> WordFrequencyTable:
    counts: Counter = Counter()
    n = 0
    for comment in comments:
        counts.update(w.text for w in word_tokenize(comment.text))
        n += 1
    return WordFrequencyTable(counts, n)


def _count_texts(texts: list[str]) -> WordFrequencyTable:
    return count_words(RawComment(t) for t in texts)


def count_words_sharded(comments: Iterable[RawComment], num_shards: int = 4, processes: int = 1) -> WordFrequencyTable:
    """Count per shard then merge; identical to :func:`count_words` for any sharding."""
    shards: list[list[str]] = [[] for _ in range(max(1, num_shards))]
    for i, comment in enumerate(comments):
        shards[i % len(shards)].append(comment.text)
    if processes > 1:
        with ProcessPoolExecutor(processes) as pool:
            tables = list(pool.map(_count_texts, shards))
    else:
        tables = [_count_texts(s) for s in shards]
    total = WordFrequencyTable()
    for t in tables:
        total = total.merge(t)
    return total


def parse_line(line: str) -> RawComment | None:
    line = line.rstrip("\n").rstrip("\r")
    if "\t" in line:
        group, text = line.split("\t", 1)
    else:
        group, text = DEFAULT_GROUP, line
    if not text.strip():
        return None
    return RawComment(text, group or DEFAULT_GROUP)


def read_corpus(path: str | Path) -> Iterator[RawComment]:
    """One comment per line, optionally ``group<TAB>text``; blank lines skipped."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            comment = parse_line(line)
            if comment is not None:
                yield comment
