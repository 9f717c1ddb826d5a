"""Automatic metrics and mapping-module diagnostics."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .decoder import encode_and_map, generate_all_batch, generate_batch
from .model import ModelParams
from .objectives import encode_responses
from .selector import project_response, relevance_scores
from .vocab_data import PostResponsePair, Vocab, batches, mode_response


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypothesis: Sequence, reference: Sequence, n: int) -> float:
    """Sentence BLEU-n: geometric mean of clipped 1..n-gram precisions times brevity penalty.

    Precisions of order >= 2 are add-one smoothed (numerator and denominator).
    """
    if n not in (1, 2):
        raise ValueError("bleu_n supports n = 1 or 2")
    hyp, ref = list(hypothesis), list(reference)
    if not hyp:
        return 0.0
    log_p = 0.0
    for k in range(1, n + 1):
        h, r = _ngrams(hyp, k), _ngrams(ref, k)
        matched = sum(min(c, r[g]) for g, c in h.items())
        total = sum(h.values())
        if k > 1:
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_p += math.log(matched / total) / n
    c, r_len = len(hyp), len(ref)
    bp = 1.0 if c >= r_len else math.exp(1.0 - r_len / c)
    return bp * math.exp(log_p)


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence], n: int) -> float:
    """Mean sentence BLEU over aligned pairs."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must align")
    if not hypotheses:
        return 0.0
    return float(np.mean([bleu_n(h, r, n) for h, r in zip(hypotheses, references)]))


def dist_n(responses: Sequence[Sequence], n: int) -> float:
    """Distinct n-grams over total n-grams, pooled across all responses."""
    pooled: Counter = Counter()
    for r in responses:
        pooled.update(_ngrams(list(r), n))
    total = sum(pooled.values())
    return len(pooled) / total if total else 0.0


# ---------------------------------------------------------------------------
# selection diagnostics
# ---------------------------------------------------------------------------


@dataclass
class SelectionStats:
    usage: list[int]
    confusion: list[list[int]]   # [mode][module]
    purity: float                # sum over modes of the mode's top module count / total
    module_purity: float         # sum over modules of the module's top mode count / total
    assignment_accuracy: float   # best one-to-one mode-to-module pairing / total

    def to_dict(self) -> dict:
        return asdict(self)


def posterior_argmax(params: ModelParams, pairs: Sequence[PostResponsePair], batch_size: int = 64) -> np.ndarray:
    """Index of the most probable module under the posterior, per pair (no sampling)."""
    out = []
    for batch in batches(pairs, batch_size):
        _, _, cands = encode_and_map(params, batch.posts, batch.post_lengths)
        y_proj = project_response(encode_responses(params, batch), params["select.W_y"])
        out.append(np.argmax(relevance_scores(cands, y_proj).data, axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def confusion_matrix(labels, z, num_modes: int, num_modules: int) -> np.ndarray:
    """Counts ``[mode][module]`` of labelled examples against selected modules."""
    confusion = np.zeros((num_modes, num_modules), dtype=np.int64)
    np.add.at(confusion, (np.asarray(labels, dtype=np.int64), np.asarray(z, dtype=np.int64)), 1)
    return confusion


def purity_from_confusion(confusion: np.ndarray) -> tuple[float, float, float]:
    """``(purity, module_purity, assignment_accuracy)`` of a ``[mode][module]`` count matrix.

    ``purity`` sums each mode's largest module count; ``module_purity`` sums
    each module's largest mode count; ``assignment_accuracy`` is the best
    one-to-one pairing of modes with modules.  All are divided by the total.
    """
    confusion = np.asarray(confusion)
    total = confusion.sum()
    if total == 0:
        return 0.0, 0.0, 0.0
    rows, cols = linear_sum_assignment(-confusion)
    return (float(confusion.max(axis=1).sum() / total),
            float(confusion.max(axis=0).sum() / total),
            float(confusion[rows, cols].sum() / total))


def selection_stats(params: ModelParams, labeled_pairs: Sequence[PostResponsePair],
                    num_modes: int | None = None) -> SelectionStats:
    """Module usage histogram and mode/module confusion under posterior argmax selection."""
    if any(p.mode_label is None for p in labeled_pairs):
        raise ValueError("selection_stats needs mode labels on every pair")
    labels = np.array([p.mode_label for p in labeled_pairs], dtype=np.int64)
    num_modes = int(labels.max()) + 1 if num_modes is None else num_modes
    z = posterior_argmax(params, labeled_pairs)
    k = params.num_mappings
    confusion = confusion_matrix(labels, z, num_modes, k)
    purity, module_purity, acc = purity_from_confusion(confusion)
    return SelectionStats(np.bincount(z, minlength=k).tolist(), confusion.tolist(), purity, module_purity, acc)


def matching_accuracy(params: ModelParams, pairs: Sequence[PostResponsePair], batch_size: int = 32,
                      seed: int = 0) -> float:
    """Fraction of pairs with ``s(x.y+) > s(x.y-)`` against an in-batch negative.

    Batches are shuffled with ``seed``; each row's negative is drawn uniformly
    from the rows of its batch whose post differs, since another response to
    the same post is itself a valid reply.
    """
    rng = np.random.default_rng(seed)
    wins = total = 0
    for batch in batches(pairs, batch_size, seed):
        x = encode_and_map(params, batch.posts, batch.post_lengths)[0].summary.data
        y = encode_responses(params, batch).data
        same = np.all(batch.posts[:, None, :] == batch.posts[None, :, :], axis=-1)
        same &= batch.post_lengths[:, None] == batch.post_lengths[None, :]
        for i in range(len(batch)):
            others = np.flatnonzero(~same[i])
            if others.size == 0:
                continue
            j = rng.choice(others)
            wins += int(x[i] @ y[i] > x[i] @ y[j])
            total += 1
    if total == 0:
        raise ValueError("no batch offers a negative from a different post")
    return wins / total


# ---------------------------------------------------------------------------
# keywords and representations
# ---------------------------------------------------------------------------


def mapping_keywords(responses_by_module: Sequence[Sequence[Sequence[str]]], min_count: int = 5) -> list[list[tuple[str, float, int]]]:
    """Rank words per module by ``p(w|M_k) = N_k^w / sum_i N_i^w``, keeping ``N_k^w > min_count``.

    Returns, per module, ``(word, p, N_k^w)`` sorted by ``p`` then count (descending).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    per_module = [Counter(w for resp in resps for w in resp) for resps in responses_by_module]
    totals: Counter = Counter()
    for c in per_module:
        totals.update(c)
    out = []
    for c in per_module:
        ranked = [(w, n / totals[w], n) for w, n in c.items() if n > min_count]
        ranked.sort(key=lambda t: (-t[1], -t[2], t[0]))
        out.append(ranked)
    return out


def candidate_vectors(params: ModelParams, posts: Sequence[Sequence[int]]) -> np.ndarray:
    """Candidate representations ``(N, K, d)`` for a list of id sequences."""
    chunks = []
    for start in range(0, len(posts), 64):
        part = [list(p) for p in posts[start:start + 64]]
        lengths = np.array([len(p) for p in part])
        ids = np.zeros((len(part), lengths.max()), dtype=np.int64)
        for i, p in enumerate(part):
            ids[i, :len(p)] = p
        chunks.append(encode_and_map(params, ids, lengths)[2].data)
    return np.concatenate(chunks, axis=0)


def export_representations(params: ModelParams, posts: Sequence[Sequence[int]], path) -> int:
    """Write one ``post_index<TAB>module_index<TAB>v1<TAB>...`` line per (post, module)."""
    vecs = candidate_vectors(params, posts)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(vecs.shape[0]):
            for k in range(vecs.shape[1]):
                fh.write("\t".join([str(i), str(k)] + [repr(float(v)) for v in vecs[i, k]]) + "\n")
                n += 1
    return n


def read_representations(path) -> list[tuple[int, int, np.ndarray]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = line.rstrip("\n").split("\t")
            records.append((int(fields[0]), int(fields[1]), np.array([float(v) for v in fields[2:]])))
    return records


def cluster_distances(vecs: np.ndarray) -> tuple[float, float]:
    """Mean pairwise distance within a module and across modules for ``(N, K, d)`` candidates."""
    n, k, d = vecs.shape
    if k < 2 or n * k < 2:
        raise ValueError("cluster distances need at least two modules")
    flat = vecs.reshape(n * k, d)
    module = np.repeat(np.arange(k)[None, :], n, axis=0).reshape(-1)
    sq = np.sum(flat ** 2, axis=1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * flat @ flat.T, 0.0))
    same = module[:, None] == module[None, :]
    off_diag = ~np.eye(n * k, dtype=bool)
    return float(dist[same & off_diag].mean()), float(dist[~same].mean())


# ---------------------------------------------------------------------------
# synthetic-task scoring and reports
# ---------------------------------------------------------------------------


def matched_modes(post_tokens: Sequence[str], response_tokens: Sequence[str], num_modes: int) -> set[int]:
    """Modes whose mode function maps the post exactly to the response."""
    resp = list(response_tokens)
    return {m for m in range(num_modes) if mode_response(post_tokens, m) == resp}


def mode_coverage(post_tokens_list: Sequence[Sequence[str]], responses: Sequence[Sequence[Sequence[str]]],
                  num_modes: int) -> list[int]:
    """Per post, how many distinct modes its set of responses reproduces."""
    out = []
    for post, resps in zip(post_tokens_list, responses):
        hit: set[int] = set()
        for r in resps:
            hit |= matched_modes(post, r, num_modes)
        out.append(len(hit))
    return out


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    dist1: float
    dist2: float
    num_posts: int
    responses_per_post: int
    module_usage: list[int] = field(default_factory=list)
    confusion: list[list[int]] | None = None
    purity: float | None = None
    module_purity: float | None = None
    assignment_accuracy: float | None = None
    mode_coverage_mean: float | None = None
    mode_coverage_hist: list[int] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _sharded(fn, items: Sequence, chunk: int, workers: int) -> list:
    """Apply ``fn`` to fixed-size chunks, optionally on worker threads; order is preserved."""
    chunks = [items[i:i + chunk] for i in range(0, len(items), chunk)]
    if workers <= 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return [x for part in parts for x in part]


def evaluate(params: ModelParams, vocab: Vocab, pairs: Sequence[PostResponsePair], multi: bool = False,
             max_len: int = 30, seed: int = 0, num_modes: int | None = None, workers: int = 1) -> MetricReport:
    """Generate for every distinct post and score against its references.

    Single mode: one response per post from a uniformly drawn module.
    Multi mode: one greedy response from every module.  BLEU averages over
    each (hypothesis, reference pair) of a post; Dist pools all responses.
    Generation is sharded into fixed chunks, so ``workers`` never changes the result.
    """
    posts: list[tuple[int, ...]] = []
    refs: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
    for p in pairs:
        if p.post not in refs:
            refs[p.post] = []
            posts.append(p.post)
        refs[p.post].append(p.response)
    k = params.num_mappings
    rng = np.random.default_rng(seed)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if multi:
        outs = _sharded(lambda c: generate_all_batch(params, c, max_len), posts, 64, workers)
    else:
        picks = rng.integers(k, size=len(posts))
        jobs = list(zip(posts, picks))
        flat = _sharded(lambda c: generate_batch(params, [p for p, _ in c], np.array([z for _, z in c]), max_len),
                        jobs, 64, workers)
        outs = [[o] for o in flat]
    hyps, ref_list = [], []
    for post, resps in zip(posts, outs):
        for h in resps:
            for r in refs[post]:
                hyps.append(h)
                ref_list.append(r)
    all_resps = [r for rs in outs for r in rs]
    report = MetricReport(corpus_bleu(hyps, ref_list, 1), corpus_bleu(hyps, ref_list, 2),
                          dist_n(all_resps, 1), dist_n(all_resps, 2), len(posts), len(outs[0]) if outs else 0)
    if pairs and all(p.mode_label is not None for p in pairs):
        stats = selection_stats(params, pairs, num_modes)
        report.module_usage = stats.usage
        report.confusion = stats.confusion
        report.purity = stats.purity
        report.module_purity = stats.module_purity
        report.assignment_accuracy = stats.assignment_accuracy
        r = num_modes or (max(p.mode_label for p in pairs) + 1)
        toks = [[vocab.id_to_token[i] for i in p] for p in posts]
        gen = [[[vocab.id_to_token[i] for i in resp] for resp in rs] for rs in outs]
        cov = mode_coverage(toks, gen, r)
        report.mode_coverage_mean = float(np.mean(cov)) if cov else 0.0
        report.mode_coverage_hist = np.bincount(cov, minlength=r + 1).tolist()
    return report
