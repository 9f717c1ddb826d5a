import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmpms.vocab_data import (BOS, EOS, PAD, UNK, CorpusFormatError, MODE_FUNCTIONS, Vocab, batches, build_vocab,
                              decode_ids, encode_pairs, encode_text, make_batch, mode_response, read_corpus,
                              split_by_post, synth_corpus, write_corpus)


def test_reserved_ids():
    v = Vocab(["x"])
    assert [v.token_to_id[t] for t in ("<pad>", "<bos>", "<eos>", "<unk>")] == [PAD, BOS, EOS, UNK] == [0, 1, 2, 3]
    assert v.token_to_id["x"] == 4


def test_build_vocab_small_corpus():
    corpus = [("a b", "a c")]
    v = build_vocab(corpus, 6 + 1)
    assert set(v.tokens) == {"a", "b", "c"} and len(v) == 7
    v = build_vocab(corpus, 6)
    assert v.tokens == ["a", "b"]  # b beats c on the lexicographic tie-break
    v = build_vocab(corpus, 5)
    assert v.tokens == ["a"]
    assert encode_text("b c", v) == [UNK, UNK]


def test_build_vocab_errors():
    with pytest.raises(ValueError):
        build_vocab([], 10)
    with pytest.raises(ValueError):
        build_vocab([("a", "b")], 4)


def test_build_vocab_respects_max_size():
    rows = synth_corpus(50, 4, 3)
    for m in (5, 12, 40):
        v = build_vocab(rows, m)
        assert len(v) <= m


def test_empty_text_roundtrip():
    v = Vocab(["a"])
    assert encode_text("", v) == []
    assert decode_ids([], v) == ""


def test_decode_skips_specials():
    v = Vocab(["a", "b"])
    assert decode_ids([BOS, 4, 5, EOS, PAD, PAD], v) == "a b"
    assert decode_ids([UNK], v) == "<unk>"


def test_synth_vocab_roundtrip():
    rows = synth_corpus(200, 4, 0)
    v = build_vocab(rows, 100)
    for post, resp, _ in rows:
        for text in (post, resp):
            ids = encode_text(text, v)
            assert UNK not in ids
            assert decode_ids(ids, v) == text
            assert encode_text(decode_ids(ids, v), v) == ids


def test_vocab_save_load(tmp_path):
    v = build_vocab(synth_corpus(20, 4, 1), 50)
    v.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == v
    (tmp_path / "bad.txt").write_text("a\nb\n")
    with pytest.raises(CorpusFormatError):
        Vocab.load(tmp_path / "bad.txt")


def test_mode_functions():
    assert mode_response("a b c".split(), 0) == ["a", "b", "c"]
    assert mode_response("a b c".split(), 1) == ["c", "b", "a"]
    assert mode_response("a b c".split(), 2) == ["what", "is", "a", "b", "c", "?"]
    assert mode_response("a b c".split(), 3) == ["sounds", "like", "a"]
    with pytest.raises(ValueError):
        mode_response(["a"], len(MODE_FUNCTIONS))


def test_synth_corpus_counts_and_determinism():
    rows = synth_corpus(500, 4, 11)
    assert len(rows) == 2000
    for i in range(500):
        group = rows[4 * i: 4 * i + 4]
        assert len({r[0] for r in group}) == 1
        assert [r[2] for r in group] == [0, 1, 2, 3]
        assert 3 <= len(group[0][0].split()) <= 8
    assert synth_corpus(500, 4, 11) == rows
    assert synth_corpus(500, 4, 12) != rows


def test_synth_corpus_errors():
    with pytest.raises(ValueError):
        synth_corpus(10, 1, 0)
    with pytest.raises(ValueError):
        synth_corpus(10, len(MODE_FUNCTIONS) + 1, 0)
    with pytest.raises(ValueError):
        synth_corpus(0, 4, 0)


posts = st.lists(st.sampled_from(list("abcdefgh")), min_size=3, max_size=8)


@settings(max_examples=200, deadline=None)
@given(posts, posts, st.sampled_from([m for m in range(len(MODE_FUNCTIONS)) if m != 3]))
def test_mode_functions_are_injective(p, q, mode):
    # the opinion mode keeps only the first post token and is excluded by design
    if p != q:
        assert mode_response(p, mode) != mode_response(q, mode)


def test_corpus_file_roundtrip(tmp_path):
    rows = synth_corpus(5, 3, 0)
    write_corpus(rows, tmp_path / "c.tsv")
    assert read_corpus(tmp_path / "c.tsv") == rows
    write_corpus([("a b", "c")], tmp_path / "u.tsv")
    assert read_corpus(tmp_path / "u.tsv") == [("a b", "c", None)]


def test_corpus_rejects_bad_lines(tmp_path):
    (tmp_path / "c.tsv").write_text("a\tb\nonly-one-field\na\tb\t1\nx\ty\tz\tw\n")
    with pytest.raises(CorpusFormatError) as info:
        read_corpus(tmp_path / "c.tsv")
    assert "2" in str(info.value) and "4" in str(info.value)


def test_encode_pairs_truncates_with_warning(caplog):
    v = Vocab(list("abc"))
    with caplog.at_level("WARNING"):
        pairs = encode_pairs([("a b c a b c", "a", 0)], v, max_len=4)
    assert pairs[0].post == (4, 5, 6, 4)
    assert "truncated" in caplog.text


def test_batches_sizes_and_shuffle():
    v = Vocab(list("abc"))
    pairs = encode_pairs([("a b", "c", None)] * 10, v)
    assert [len(b) for b in batches(pairs, 4)] == [4, 4, 2]
    rows = synth_corpus(10, 2, 0)
    pairs = encode_pairs(rows, build_vocab(rows, 40))
    a = [b.posts.tolist() for b in batches(pairs, 3, shuffle_seed=5)]
    b = [b.posts.tolist() for b in batches(pairs, 3, shuffle_seed=5)]
    assert a == b
    with pytest.raises(ValueError):
        list(batches(pairs, 0))


def test_batch_layout_and_decoding():
    rows = synth_corpus(6, 4, 2)
    v = build_vocab(rows, 60)
    pairs = encode_pairs(rows, v)
    b = make_batch(pairs)
    for i, p in enumerate(pairs):
        n, m = b.post_lengths[i], b.response_lengths[i]
        assert tuple(b.posts[i, :n]) == p.post and np.all(b.posts[i, n:] == PAD)
        assert b.dec_inputs[i, 0] == BOS and tuple(b.dec_inputs[i, 1:m + 1]) == p.response
        assert tuple(b.targets[i, :m]) == p.response and b.targets[i, m] == EOS
        assert np.all(b.targets[i, m + 1:] == PAD)
        assert b.target_mask[i].sum() == m + 1
        assert decode_ids(b.posts[i], v) == rows[i][0]
        assert decode_ids(b.responses[i], v) == rows[i][1]
    assert b.mode_labels.tolist() == [r[2] for r in rows]


def test_split_by_post_keeps_groups():
    rows = synth_corpus(50, 4, 0)
    parts = split_by_post(rows, [0.6, 0.2, 0.2])
    assert sum(map(len, parts)) == len(rows)
    seen = [{r[0] for r in part} for part in parts]
    assert not (seen[0] & seen[1]) and not (seen[1] & seen[2]) and not (seen[0] & seen[2])
