"""Four-tag span encoding over token positions.

A sequence either carries no span (all BEFORE) or exactly one contiguous
span: ``BEFORE* BEGIN INSIDE* AFTER*``. Token spans are half-open
``(begin, end)`` index pairs.
"""
from __future__ import annotations

from typing import Sequence

BEFORE, BEGIN, INSIDE, AFTER = 0, 1, 2, 3
NUM_TAGS = 4
TAG_NAMES = ("BEFORE", "BEGIN", "INSIDE", "AFTER")


class InvalidTagSequence(ValueError):
    pass


def token_span_to_tags(length: int, span: tuple[int, int] | None) -> list[int]:
    if span is None:
        return [BEFORE] * length
    begin, end = span
    if not 0 <= begin < end <= length:
        raise ValueError(f"token span {span} is empty, reversed or outside [0, {length}]")
    return [BEFORE] * begin + [BEGIN] + [INSIDE] * (end - begin - 1) + [AFTER] * (length - end)


def tags_to_token_span(tags: Sequence[int]) -> tuple[int, int] | None:
    """Inverse of :func:`token_span_to_tags`; raises on anything off-grammar."""
    state = BEFORE
    begin = end = None
    for i, tag in enumerate(tags):
        tag = int(tag)
        if tag == BEFORE:
            if state != BEFORE:
                raise InvalidTagSequence(f"BEFORE at position {i} after a span started")
        elif tag == BEGIN:
            if state != BEFORE:
                raise InvalidTagSequence(f"second BEGIN or BEGIN after AFTER at position {i}")
            begin, end, state = i, i + 1, BEGIN
        elif tag == INSIDE:
            if state not in (BEGIN, INSIDE):
                raise InvalidTagSequence(f"INSIDE without preceding BEGIN at position {i}")
            end, state = i + 1, INSIDE
        elif tag == AFTER:
            if state == BEFORE:
                raise InvalidTagSequence(f"AFTER without a span at position {i}")
            state = AFTER
        else:
            raise InvalidTagSequence(f"unknown tag {tag!r} at position {i}")
    if begin is None:
        return None
    return begin, end


def is_valid(tags: Sequence[int]) -> bool:
    try:
        tags_to_token_span(tags)
    except InvalidTagSequence:
        return False
    return True
