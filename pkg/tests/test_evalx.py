import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmpms.evalx import (bleu_n, cluster_distances, confusion_matrix, corpus_bleu, dist_n, evaluate,
                         export_representations, candidate_vectors, mapping_keywords, matched_modes,
                         matching_accuracy, mode_coverage, purity_from_confusion, read_representations,
                         selection_stats)
from mmpms.desk import coverage_at_least, coverage_exactly, desk_data
from mmpms.model import ModelDims, ModelParams
from mmpms.vocab_data import build_vocab, encode_pairs, synth_corpus

tokens = st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8)


# ---------------------------------------------------------------- BLEU


def test_bleu_identical_is_one():
    s = "the cat sat on the mat".split()
    assert bleu_n(s, s, 1) == pytest.approx(1.0)
    assert bleu_n(s, s, 2) == pytest.approx(1.0)


def test_bleu_disjoint_unigrams_is_zero():
    assert bleu_n("a b c".split(), "d e f".split(), 1) == 0.0


def test_bleu_hand_count():
    # two of three hypothesis unigrams occur in the reference; equal lengths
    assert bleu_n("a b c".split(), "a c d".split(), 1) == pytest.approx(2 / 3)


def test_bleu_bigram_smoothing_and_brevity():
    hyp, ref = "a b".split(), "a b c d".split()
    # unigram 2/2, smoothed bigram (1+1)/(1+1), brevity exp(1 - 4/2)
    assert bleu_n(hyp, ref, 2) == pytest.approx(math.exp(-1.0))
    # bigram precision 0/2 without smoothing would zero the score
    assert bleu_n("a c b".split(), "a b c".split(), 2) == pytest.approx(math.sqrt(1.0 * 1 / 3))


def test_bleu_clipping():
    assert bleu_n("a a a a".split(), "a b".split(), 1) == pytest.approx(1 / 4)


def test_bleu_empty_and_bad_order():
    assert bleu_n([], ["a"], 1) == 0.0
    with pytest.raises(ValueError):
        bleu_n(["a"], ["a"], 3)


@given(tokens)
def test_bleu_self_is_one(s):
    assert bleu_n(s, s, 1) == pytest.approx(1.0)
    assert bleu_n(s, s, 2) == pytest.approx(1.0)


@given(tokens, tokens)
def test_bleu_in_unit_interval(h, r):
    for n in (1, 2):
        assert 0.0 <= bleu_n(h, r, n) <= 1.0 + 1e-12


def test_corpus_bleu_is_mean():
    hyps = [["a", "b", "c"], ["x"]]
    refs = [["a", "c", "d"], ["x"]]
    assert corpus_bleu(hyps, refs, 1) == pytest.approx((2 / 3 + 1.0) / 2)
    with pytest.raises(ValueError):
        corpus_bleu(hyps, refs[:1], 1)


# ---------------------------------------------------------------- Dist


@pytest.mark.parametrize("m", [1, 2, 5, 9])
def test_dist_repeated_token(m):
    assert dist_n([["w"] * m], 1) == pytest.approx(1 / m)


def test_dist_hand_count():
    rs = [["a", "b"], ["a", "c"]]
    assert dist_n(rs, 2) == pytest.approx(1.0)
    assert dist_n(rs, 1) == pytest.approx(3 / 4)


def test_dist_all_unique_and_empty():
    assert dist_n([["a", "b", "c"], ["d"]], 1) == 1.0
    assert dist_n([["a"]], 2) == 0.0


@given(st.lists(tokens, min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_dist_permutation_invariant(rs, rnd):
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    for n in (1, 2):
        assert dist_n(shuffled, n) == dist_n(rs, n)
        assert 0.0 <= dist_n(rs, n) <= 1.0


# ---------------------------------------------------------------- keywords


def test_keywords_exclusive_and_uniform():
    k = 3
    by_module = [[["shared", "only0"]] * 6, [["shared"]] * 6, [["shared"]] * 6]
    kws = mapping_keywords(by_module, min_count=5)
    p = {(m, w): prob for m in range(k) for w, prob, _ in kws[m]}
    assert p[(0, "only0")] == 1.0
    for m in range(k):
        assert p[(m, "shared")] == pytest.approx(1 / k)


def test_keywords_threshold_and_order():
    by_module = [[["x"]] * 3 + [["y"]] * 8, [["y"]] * 2]
    kws = mapping_keywords(by_module, min_count=5)
    assert [w for w, _, _ in kws[0]] == ["y"]  # x has only 3 occurrences
    assert kws[1] == []
    with pytest.raises(ValueError):
        mapping_keywords(by_module, min_count=0)


@given(st.lists(st.lists(tokens, max_size=5), min_size=1, max_size=4))
def test_keyword_probabilities_sum_to_one(by_module):
    kws = mapping_keywords(by_module, min_count=1)
    counts = {}
    for m, resps in enumerate(by_module):
        for r in resps:
            for w in r:
                counts.setdefault(w, [0] * len(by_module))[m] += 1
    for w, per in counts.items():
        if all(c > 1 for c in per if c):  # every nonzero count passes the threshold
            total = sum(p for ranked in kws for ww, p, _ in ranked if ww == w)
            assert total == pytest.approx(1.0)


# ---------------------------------------------------------------- purity


def test_purity_of_mode_mod_k_assignment_is_one():
    labels = np.repeat(np.arange(4), 25)
    for k in (2, 4, 6):
        conf = confusion_matrix(labels, labels % k, 4, k)
        assert purity_from_confusion(conf)[0] == 1.0
    # with K >= R every view of the assignment is perfect
    conf = confusion_matrix(labels, labels % 6, 4, 6)
    assert purity_from_confusion(conf) == (1.0, 1.0, 1.0)


def test_purity_views_hand_matrix():
    conf = np.array([[10, 0, 0], [10, 0, 0], [0, 5, 5]])
    purity, module_purity, acc = purity_from_confusion(conf)
    assert purity == pytest.approx(25 / 30)
    assert module_purity == pytest.approx(20 / 30)
    assert acc == pytest.approx(15 / 30)  # mode 1 is left with an empty module
    assert purity_from_confusion(np.zeros((2, 2))) == (0.0, 0.0, 0.0)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5)), min_size=1, max_size=60))
def test_purity_bounds(pairs):
    labels, z = map(np.array, zip(*pairs))
    conf = confusion_matrix(labels, z, 4, 6)
    purity, module_purity, acc = purity_from_confusion(conf)
    used = int((conf.sum(axis=0) > 0).sum())
    assert 1.0 / used - 1e-12 <= purity <= 1.0
    assert 0.0 < module_purity <= 1.0
    assert acc <= min(purity, module_purity) + 1e-12


# ---------------------------------------------------------------- model-level diagnostics


@pytest.fixture(scope="module")
def tiny():
    rows = synth_corpus(12, 4, 0, min_len=3, max_len=5)
    vocab = build_vocab(rows, 40)
    pairs = encode_pairs(rows, vocab)
    params = ModelParams.init(ModelDims(len(vocab), 6, 8, 3), 0, np.float64)
    return params, vocab, pairs


def test_selection_stats_shapes(tiny):
    params, _, pairs = tiny
    stats = selection_stats(params, pairs, 4)
    assert sum(stats.usage) == len(pairs)
    assert np.array(stats.confusion).shape == (4, 3)
    assert np.array(stats.confusion).sum(axis=0).tolist() == stats.usage
    used = sum(u > 0 for u in stats.usage)
    assert 1 / used - 1e-12 <= stats.purity <= 1.0


def test_selection_stats_needs_labels(tiny):
    params, _, pairs = tiny
    from dataclasses import replace
    with pytest.raises(ValueError):
        selection_stats(params, [replace(pairs[0], mode_label=None)])


def test_export_round_trip(tiny, tmp_path):
    params, _, pairs = tiny
    posts = list(dict.fromkeys(p.post for p in pairs))
    path = tmp_path / "reps.tsv"
    n = export_representations(params, posts, path)
    assert n == len(posts) * params.num_mappings
    vecs = candidate_vectors(params, posts)
    records = read_representations(path)
    assert len(records) == n
    for i, k, v in records:
        np.testing.assert_array_equal(v, vecs[i, k])


def test_cluster_distances_oracle():
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(5, 3, 4))
    intra, inter = cluster_distances(vecs)
    flat = [(i, k, vecs[i, k]) for i in range(5) for k in range(3)]
    same, diff = [], []
    for a, (i, k, u) in enumerate(flat):
        for b, (j, l, w) in enumerate(flat):
            if a == b:
                continue
            (same if k == l else diff).append(np.linalg.norm(u - w))
    assert intra == pytest.approx(np.mean(same))
    assert inter == pytest.approx(np.mean(diff))
    # well separated clusters
    centred = np.arange(3)[None, :, None] * 10.0 + 0.01 * vecs
    intra, inter = cluster_distances(centred)
    assert intra < inter
    with pytest.raises(ValueError):
        cluster_distances(vecs[:, :1])


def test_mode_coverage():
    post = ["a", "b", "c"]
    assert matched_modes(post, ["a", "b", "c"], 4) == {0}
    assert matched_modes(post, ["c", "b", "a"], 4) == {1}
    resps = [[["a", "b", "c"], ["c", "b", "a"], ["a", "b", "c"]], [["zzz"]]]
    assert mode_coverage([post, post], resps, 4) == [2, 0]


def test_evaluate_report_and_workers(tiny):
    params, vocab, pairs = tiny
    one = evaluate(params, vocab, pairs, multi=True, max_len=6, num_modes=4)
    two = evaluate(params, vocab, pairs, multi=True, max_len=6, num_modes=4, workers=3)
    assert one.to_dict() == two.to_dict()
    assert one.responses_per_post == params.num_mappings
    for key in ("bleu1", "bleu2", "dist1", "dist2", "purity", "module_purity", "assignment_accuracy"):
        assert 0.0 <= getattr(one, key) <= 1.0
    assert sum(one.mode_coverage_hist) == one.num_posts
    single = evaluate(params, vocab, pairs, multi=False, max_len=6, seed=3)
    assert single.responses_per_post == 1
    assert single.to_dict() == evaluate(params, vocab, pairs, max_len=6, seed=3, workers=2).to_dict()
    with pytest.raises(ValueError):
        evaluate(params, vocab, pairs, workers=0)


def test_matching_accuracy_deterministic(tiny):
    params, _, pairs = tiny
    a = matching_accuracy(params, pairs, batch_size=8, seed=1)
    assert 0.0 <= a <= 1.0
    assert a == matching_accuracy(params, pairs, batch_size=8, seed=1)
    with pytest.raises(ValueError):
        matching_accuracy(params, pairs[:4], batch_size=4)  # one post per batch: no negative


def test_desk_helpers():
    data = desk_data()
    assert (len(data.train), len(data.valid), len(data.test)) == (1440, 160, 400)
    assert not {p.post for p in data.train} & {p.post for p in data.test}
    report = {"mode_coverage_hist": [1, 2, 3, 4, 0]}
    assert coverage_at_least(report, 3) == 0.4
    assert coverage_exactly(report, 1) == 0.2


def test_pooled_dist_falls_with_response_volume():
    # exact reproduction of every mode still pools fewer distinct bigrams per bigram than echo alone
    from mmpms.vocab_data import mode_response
    data = desk_data()
    posts = [[data.vocab.id_to_token[i] for i in p] for p in dict.fromkeys(p.post for p in data.test)]
    echo = [mode_response(t, 0) for t in posts]
    every_mode = [mode_response(t, m) for t in posts for m in range(4)]
    assert dist_n(every_mode, 2) < dist_n(echo, 2)
