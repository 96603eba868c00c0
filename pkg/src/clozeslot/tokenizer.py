"""Subword vocabulary and greedy longest-prefix tokenization.

Pieces follow the WordPiece convention: a piece that continues a word is
stored with a ``##`` prefix. Text is lowercased for matching, split on
whitespace, and each chunk is consumed left to right by the longest matching
piece. Runs of characters with no matching piece hash into one of
``num_oov_buckets`` ids with 64-bit FNV-1a over their UTF-8 bytes:

    h = 0xcbf29ce484222325
    for byte in unit: h = ((h ^ byte) * 0x100000001b3) mod 2**64
    id = len(pieces) + h % num_oov_buckets

Every sequence is wrapped in BOS/EOS, which carry empty offsets at the text
boundaries.
"""
from __future__ import annotations

import heapq
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .tags import tags_to_token_span, token_span_to_tags

log = logging.getLogger(__name__)

PAD, BOS, EOS, BLANK, SEP = "<pad>", "<bos>", "<eos>", "BLANK", "<sep>"
SPECIALS = (PAD, BOS, EOS, BLANK, SEP)
CONT = "##"
MAX_SNAP_DRIFT = 2

_CHUNK = re.compile(r"\S+")


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class Vocabulary:
    pieces: list[str]
    num_oov_buckets: int = 100
    index: dict[str, int] = field(init=False, repr=False)
    max_piece_len: int = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.pieces[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with the specials {SPECIALS}")
        if len(set(self.pieces)) != len(self.pieces):
            raise ValueError("duplicate vocabulary pieces")
        if self.num_oov_buckets < 1:
            raise ValueError("need at least one OOV bucket")
        self.index = {p: i for i, p in enumerate(self.pieces)}
        self.max_piece_len = max(len(p.removeprefix(CONT)) for p in self.pieces)

    @property
    def size(self) -> int:
        return len(self.pieces) + self.num_oov_buckets

    pad_id = property(lambda self: 0)
    bos_id = property(lambda self: 1)
    eos_id = property(lambda self: 2)
    blank_id = property(lambda self: 3)
    sep_id = property(lambda self: 4)

    def oov_id(self, unit: str) -> int:
        return len(self.pieces) + fnv1a_64(unit.encode("utf-8")) % self.num_oov_buckets

    def piece(self, token_id: int) -> str:
        if token_id < len(self.pieces):
            return self.pieces[token_id]
        return f"<oov{token_id - len(self.pieces)}>"

    def save(self, path: str | Path) -> None:
        header = f"#oov_buckets\t{self.num_oov_buckets}\n#specials\t" + ",".join(
            f"{s}={i}" for i, s in enumerate(SPECIALS)
        )
        Path(path).write_text(header + "\n" + "\n".join(self.pieces) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if not lines[0].startswith("#oov_buckets\t") or not lines[1].startswith("#specials\t"):
            raise ValueError(f"{path}: missing vocabulary header")
        buckets = int(lines[0].split("\t")[1])
        pieces = lines[2:]
        if pieces and pieces[-1] == "":
            pieces = pieces[:-1]
        return cls(pieces, buckets)


@dataclass
class TokenizedText:
    ids: list[int]
    offsets: list[tuple[int, int]]
    text: str

    def __len__(self) -> int:
        return len(self.ids)


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + [CONT + c for c in word[1:]]


def _merge_symbols(a: str, b: str) -> str:
    return a + b.removeprefix(CONT)


def train_vocab(texts: Iterable[str], target_size: int = 4000, num_oov_buckets: int = 100) -> Vocabulary:
    """Frequency-driven merges of adjacent symbols until ``target_size`` pieces.

    All single characters seen (word-initial and continuation forms) are kept,
    so any seen text tokenizes without OOV ids. Ties between equally frequent
    pairs go to the lexicographically smallest pair.
    """
    if target_size < 256:
        raise ValueError("target_size must be at least 256")
    word_freq: Counter = Counter()
    for text in texts:
        for chunk in _CHUNK.findall(text):
            if chunk != BLANK:
                word_freq[chunk.lower()] += 1
    if not word_freq:
        raise ValueError("cannot train a vocabulary on an empty corpus")

    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    symbols = [_word_symbols(w) for w in words]
    inventory = set(SPECIALS)
    chars = sorted({s for syms in symbols for s in syms} - inventory)
    pieces = list(SPECIALS) + chars
    inventory.update(chars)

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, syms in enumerate(symbols):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    while len(pieces) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg:
            continue  # stale entry; the current count was pushed when it changed
        if -neg < 2:
            break
        merged = _merge_symbols(*pair)
        if merged not in inventory:
            inventory.add(merged)
            pieces.append(merged)
        touched: Counter = Counter()
        for wi in sorted(where.pop(pair, ())):
            syms, f = symbols[wi], freqs[wi]
            for old in zip(syms, syms[1:]):
                pair_counts[old] -= f
                touched[old] += 0
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            symbols[wi] = out
            for new in zip(out, out[1:]):
                pair_counts[new] += f
                where[new].add(wi)
                touched[new] += 0
        for p in touched:
            if pair_counts[p] <= 0:
                pair_counts.pop(p, None)
                where.pop(p, None)
            else:
                heapq.heappush(heap, (-pair_counts[p], p))
        pair_counts.pop(pair, None)
    return Vocabulary(pieces, num_oov_buckets)


def tokenize(text: str, vocab: Vocabulary) -> TokenizedText:
    ids = [vocab.bos_id]
    offsets = [(0, 0)]
    index = vocab.index
    for m in _CHUNK.finditer(text):
        start, end = m.start(), m.end()
        pos = start
        lowered = text[start:end].lower()
        if len(lowered) != end - start:
            lowered = "".join(c if len(c.lower()) != 1 else c.lower() for c in text[start:end])
        while pos < end:
            first = pos == start
            if first and text.startswith(BLANK, pos) and (pos + 5 == end or not text[pos + 5].isalnum()):
                ids.append(vocab.blank_id)
                offsets.append((pos, pos + 5))
                pos += 5
                continue
            prefix = "" if first else CONT
            rel = pos - start
            found = 0
            for length in range(min(vocab.max_piece_len, end - pos), 0, -1):
                piece_id = index.get(prefix + lowered[rel : rel + length])
                if piece_id is not None and piece_id >= len(SPECIALS):
                    found = length
                    ids.append(piece_id)
                    offsets.append((pos, pos + length))
                    break
            if found:
                pos += found
                continue
            stop = pos + 1
            while stop < end and index.get(CONT + lowered[stop - start]) is None:
                stop += 1
            ids.append(vocab.oov_id(lowered[rel : stop - start]))
            offsets.append((pos, stop))
            pos = stop
    ids.append(vocab.eos_id)
    offsets.append((len(text), len(text)))
    return TokenizedText(ids, offsets, text)


def join_with_separator(first: TokenizedText, second: TokenizedText, vocab: Vocabulary) -> TokenizedText:
    """``first`` + SEP + ``second`` as one sequence (used to append a slot name)."""
    shift = len(first.text) + 1
    text = first.text + " " + second.text
    ids = first.ids[:-1] + [vocab.sep_id] + second.ids[1:]
    offsets = (
        first.offsets[:-1]
        + [(len(first.text), len(first.text))]
        + [(s + shift, e + shift) for s, e in second.offsets[1:]]
    )
    offsets[-1] = (len(text), len(text))
    return TokenizedText(ids, offsets, text)


def char_span_to_token_span(tokens: TokenizedText, span: tuple[int, int]) -> tuple[int, int]:
    """Smallest token range covering the character span (outward snapping)."""
    s, e = span
    if not s < e:
        raise ValueError(f"empty or reversed span {span}")
    hits = [i for i, (ts, te) in enumerate(tokens.offsets) if ts < e and te > s and te > ts]
    if not hits:
        raise ValueError(f"span {span} covers no token")
    return hits[0], hits[-1] + 1


def token_span_to_char_span(tokens: TokenizedText, token_span: tuple[int, int]) -> tuple[int, int]:
    b, e = token_span
    return tokens.offsets[b][0], tokens.offsets[e - 1][1]


def snap_drift(tokens: TokenizedText, span: tuple[int, int]) -> int:
    """Characters added when snapping ``span`` outward to token boundaries."""
    snapped = token_span_to_char_span(tokens, char_span_to_token_span(tokens, span))
    return (span[0] - snapped[0]) + (snapped[1] - span[1])


def span_to_tags(tokens: TokenizedText, span: tuple[int, int] | None) -> list[int]:
    if span is None:
        return token_span_to_tags(len(tokens), None)
    return token_span_to_tags(len(tokens), char_span_to_token_span(tokens, span))


def tags_to_span(tokens: TokenizedText, tags: Sequence[int]) -> tuple[int, int] | None:
    if len(tags) != len(tokens):
        raise ValueError(f"{len(tags)} tags for {len(tokens)} tokens")
    token_span = tags_to_token_span(tags)
    if token_span is None:
        return None
    return token_span_to_char_span(tokens, token_span)
