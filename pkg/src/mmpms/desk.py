"""Desk-scale synthetic experiment: corpus, training run and held-out diagnostics."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .decoder import generate_all_batch
from .evalx import cluster_distances, candidate_vectors, evaluate, mapping_keywords, matching_accuracy
from .trainer import TrainConfig, TrainResult, train
from .vocab_data import Vocab, build_vocab, encode_pairs, split_by_post, synth_corpus

NUM_POSTS = 500
NUM_MODES = 4
SPLIT = (360, 40, 100)
QUESTION_MODE = 2


@dataclass
class DeskData:
    vocab: Vocab
    train: list
    valid: list
    test: list


def desk_data(corpus_seed: int = 0, vocab_max: int = 200, max_len: int = 50) -> DeskData:
    """500 posts with 4 response modes each, split 360/40/100 by post."""
    rows = synth_corpus(NUM_POSTS, NUM_MODES, corpus_seed)
    tr, va, te = split_by_post(rows, list(SPLIT))
    vocab = build_vocab(tr, vocab_max)
    return DeskData(vocab, *(encode_pairs(r, vocab, max_len) for r in (tr, va, te)))


@dataclass
class DeskRun:
    config: TrainConfig
    result: TrainResult
    report: dict
    matching_accuracy: float
    intra_distance: float
    inter_distance: float
    question_keyword_module: int | None
    train_seconds: float
    total_seconds: float

    def summary(self) -> dict:
        r = self.report
        return {"seed": self.config.seed, "K": self.config.K, "match_weight": self.config.match_weight,
                "best_epoch": self.result.best_epoch, "purity": r["purity"], "module_purity": r["module_purity"],
                "assignment_accuracy": r["assignment_accuracy"], "module_usage": r["module_usage"],
                "coverage_hist": r["mode_coverage_hist"], "coverage_ge3": coverage_at_least(r, 3),
                "dist1": r["dist1"], "dist2": r["dist2"], "matching_accuracy": self.matching_accuracy,
                "train_seconds": round(self.train_seconds, 1)}


def coverage_at_least(report: dict, m: int) -> float:
    hist = report["mode_coverage_hist"]
    return sum(hist[m:]) / sum(hist)


def coverage_exactly(report: dict, m: int) -> float:
    hist = report["mode_coverage_hist"]
    return hist[m] / sum(hist)


def run_desk(config: TrainConfig | None = None, data: DeskData | None = None, max_len: int = 30,
             **overrides) -> DeskRun:
    """Train on the desk corpus and score the held-out split."""
    config = dataclasses.replace(config or TrainConfig(), **overrides)
    data = data or desk_data(vocab_max=config.vocab_max, max_len=config.max_len)
    start = time.perf_counter()
    result = train(config, data.train, data.valid, len(data.vocab))
    trained = time.perf_counter()
    report = evaluate(result.params, data.vocab, data.test, multi=True, max_len=max_len, num_modes=NUM_MODES)
    acc = matching_accuracy(result.params, data.test, seed=config.seed)
    posts = list(dict.fromkeys(p.post for p in data.test))
    intra = inter = float("nan")
    if config.K > 1:
        intra, inter = cluster_distances(candidate_vectors(result.params, posts))
    return DeskRun(config, result, report.to_dict(), acc, intra, inter,
                   _question_keyword_module(result.params, data, posts, max_len),
                   trained - start, time.perf_counter() - start)


def _question_keyword_module(params, data: DeskData, posts, max_len: int) -> int | None:
    """Module where the "?" token has the highest keyword probability, if it is counted at all."""
    gens = generate_all_batch(params, posts, max_len)
    by_module = [[[data.vocab.id_to_token[i] for i in g[k]] for g in gens] for k in range(params.num_mappings)]
    best, best_p = None, -1.0
    for k, ranked in enumerate(mapping_keywords(by_module, min_count=5)):
        for w, p, _ in ranked:
            if w == "?" and p > best_p:
                best, best_p = k, p
    return best


def dominant_module(run: DeskRun, mode: int) -> int:
    """Module that the posterior picks most often for held-out responses of ``mode``."""
    return int(np.argmax(run.report["confusion"][mode]))
