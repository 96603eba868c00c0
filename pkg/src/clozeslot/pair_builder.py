"""Turn keyphrase-annotated sentences into pairwise-cloze examples."""
from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

BLANK = "BLANK"


@dataclass(frozen=True)
class ClozePair:
    template_text: str
    input_text: str
    span: tuple[int, int] | None
    keyphrase: str
    group_key: str
    is_negative: bool = False
    bucket: str = ""  # normalized keyphrase the pair was bucketed under; not serialized

    def __post_init__(self):
        if self.is_negative:
            if self.span is not None:
                raise ValueError("negative pairs carry no span")
        else:
            s, e = self.span
            if self.input_text[s:e] != self.keyphrase:
                raise ValueError(f"span {self.span} does not cover keyphrase {self.keyphrase!r}")

    def to_json(self) -> str:
        obj = {
            "template": self.template_text,
            "input": self.input_text,
            "span": list(self.span) if self.span is not None else None,
            "keyphrase": self.keyphrase,
            "group": self.group_key,
        }
        return json.dumps(obj, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ClozePair":
        obj = json.loads(line)
        span = tuple(obj["span"]) if obj.get("span") is not None else None
        return cls(obj["template"], obj["input"], span, obj.get("keyphrase", ""), obj.get("group", ""), span is None)


@dataclass(frozen=True)
class AnnotatedSentence:
    text: str
    group_key: str
    keyphrases: tuple[tuple[str, tuple[int, int]], ...]  # (normalized phrase, char span)


def blank_template(text: str, span: tuple[int, int]) -> str:
    """Replace ``text[span]`` with a space-delimited BLANK token."""
    s, e = span
    if not 0 <= s < e <= len(text):
        raise ValueError(f"span {span} out of bounds for text of length {len(text)}")
    left, right = text[:s].rstrip(), text[e:].lstrip()
    return " ".join(part for part in (left, BLANK, right) if part)


def _word_start(text: str, i: int) -> bool:
    return i == 0 or not text[i - 1].isalnum() or not text[i].isalnum()


def _word_end(text: str, i: int) -> bool:
    return i == len(text) or not text[i].isalnum() or not text[i - 1].isalnum()


def expand_keyphrase(
    template_text: str, input_text: str, span_t: tuple[int, int], span_i: tuple[int, int]
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Grow both spans over flanking text shared by the two sentences.

    Growth is case-insensitive and character-wise, then trimmed back so the
    extension ends on a word boundary in both sentences and carries no
    leading/trailing whitespace or punctuation.
    """
    a, b = template_text.lower(), input_text.lower()
    (ts, te), (is_, ie) = span_t, span_i

    left = 0
    while ts - left > 0 and is_ - left > 0 and a[ts - left - 1] == b[is_ - left - 1]:
        left += 1
    while left > 0 and not (_word_start(a, ts - left) and _word_start(b, is_ - left)):
        left -= 1
    while left > 0 and not a[ts - left].isalnum():
        left -= 1
    while left > 0 and not (_word_start(a, ts - left) and _word_start(b, is_ - left)):
        left -= 1

    right = 0
    while te + right < len(a) and ie + right < len(b) and a[te + right] == b[ie + right]:
        right += 1
    while right > 0 and not (_word_end(a, te + right) and _word_end(b, ie + right)):
        right -= 1
    while right > 0 and not a[te + right - 1].isalnum():
        right -= 1
    while right > 0 and not (_word_end(a, te + right) and _word_end(b, ie + right)):
        right -= 1

    return (ts - left, te + right), (is_ - left, ie + right)


def _stable_hash(*parts: object) -> int:
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def build_pairs(
    sentences: Sequence[AnnotatedSentence], seed: int = 0, max_span_fraction: float = 0.5
) -> list[ClozePair]:
    """Pair sentences of one group that share a keyphrase.

    Each (group, keyphrase) bucket is shuffled and chained cyclically
    (s1->s2, ..., sn->s1), so every sentence is used once as template and once
    as input per keyphrase. Output is sorted by (group, keyphrase, hash).
    """
    buckets: dict[tuple[str, str], list[tuple[int, tuple[int, int]]]] = defaultdict(list)
    for idx, sent in enumerate(sentences):
        for phrase, span in sent.keyphrases:
            buckets[(sent.group_key, phrase)].append((idx, span))

    keyed = []
    for (group, phrase), members in sorted(buckets.items()):
        members = sorted(set(members))
        if len(members) < 2:
            continue
        rng = random.Random(_stable_hash(seed, group, phrase))
        rng.shuffle(members)
        n = len(members)
        for k in range(n):
            (ti, tspan), (ii, ispan) = members[k], members[(k + 1) % n]
            if ti == ii:
                continue
            pair = _make_pair(sentences[ti], sentences[ii], tspan, ispan, max_span_fraction, phrase)
            if pair is not None:
                keyed.append(((group, phrase, _stable_hash(seed, pair.template_text, pair.input_text)), pair))
    keyed.sort(key=lambda kv: kv[0])
    return [p for _, p in keyed]


def _make_pair(template: AnnotatedSentence, inp: AnnotatedSentence, tspan, ispan, max_span_fraction, bucket):
    tspan, ispan = expand_keyphrase(template.text, inp.text, tspan, ispan)
    for text, (s, e) in ((template.text, tspan), (inp.text, ispan)):
        if e - s > max_span_fraction * len(text.strip()):
            return None
    s, e = ispan
    return ClozePair(
        blank_template(template.text, tspan), inp.text, ispan, inp.text[s:e], template.group_key, bucket=bucket
    )


def split_train_test(pairs: Iterable[ClozePair], test_fraction: float = 0.05, seed: int = 0):
    """Hash (group, keyphrase) buckets into train or test; no bucket straddles the split."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    train, test = [], []
    for pair in pairs:
        key = pair.bucket or pair.keyphrase.lower()
        u = _stable_hash("split", seed, pair.group_key, key) / 2.0**64
        (test if u < test_fraction else train).append(pair)
    return train, test


def write_jsonl(pairs: Iterable[ClozePair], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(pair.to_json() + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[ClozePair]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield ClozePair.from_json(line)
