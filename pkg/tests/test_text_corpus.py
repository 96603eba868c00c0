from collections import Counter

from hypothesis import given, strategies as st

from clozeslot.text_corpus import (
    RawComment,
    WordFrequencyTable,
    count_words,
    count_words_sharded,
    filter_by_length,
    parse_line,
    read_corpus,
    word_tokenize,
)


def test_length_filter_bounds():
    assert filter_by_length(RawComment("x" * 8)) is None
    assert filter_by_length(RawComment("x" * 9)) is not None
    assert filter_by_length(RawComment("x" * 127)) is not None
    assert filter_by_length(RawComment("x" * 128)) is None
    assert filter_by_length(RawComment("")) is None
    # trimmed length, counted in code points
    assert filter_by_length(RawComment("   abcdefgh   ")) is None
    assert filter_by_length(RawComment("ééééééééé")) is not None


@given(st.text(max_size=200))
def test_length_filter_idempotent(text):
    c = RawComment(text)
    once = filter_by_length(c)
    assert (filter_by_length(once) if once else None) == once


def test_word_tokenize_examples():
    words = word_tokenize("Book a table!")
    assert [w.text for w in words] == ["book", "a", "table"]
    assert [(w.start, w.end) for w in words] == [(0, 4), (5, 6), (7, 12)]
    assert word_tokenize("") == []
    assert [w.text for w in word_tokenize("7pm  please")] == ["7pm", "please"]
    assert [w.text for w in word_tokenize("I browse /r/all. ...")] == ["i", "browse", "r/all"]


def test_count_words_examples():
    t = count_words([RawComment("a b"), RawComment("a c")])
    assert t.counts == Counter(a=2, b=1, c=1) and t.num_sentences == 2
    empty = count_words([])
    assert empty.counts == Counter() and empty.num_sentences == 0


@given(st.lists(st.text(alphabet="ab c.", max_size=20), max_size=30), st.integers(1, 6))
def test_sharded_counting_equals_single_pass(texts, shards):
    comments = [RawComment(t) for t in texts]
    single = count_words(comments)
    sharded = count_words_sharded(comments, num_shards=shards)
    assert sharded.counts == single.counts
    assert sharded.num_sentences == single.num_sentences
    assert sum(single.counts.values()) == sum(len(word_tokenize(t)) for t in texts)


def test_unseen_words_count_as_one():
    assert WordFrequencyTable(Counter(a=3), 5).count("zzz") == 1


def test_tsv_round_trip():
    t = count_words([RawComment("a b b"), RawComment("c")])
    text = t.to_tsv()
    assert text.splitlines()[0] == "#sentences\t2"
    back = WordFrequencyTable.from_tsv(text)
    assert back.counts == t.counts and back.num_sentences == 2


def test_corpus_lines(tmp_path):
    assert parse_line("pics\tnice photo there") == RawComment("nice photo there", "pics")
    assert parse_line("no tab here").group_key == "default"
    path = tmp_path / "c.txt"
    path.write_text("g1\thello world\n\nplain line\n", encoding="utf-8")
    assert list(read_corpus(path)) == [RawComment("hello world", "g1"), RawComment("plain line", "default")]
