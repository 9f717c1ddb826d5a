"""Finite-difference gradient suite on a tiny 64-bit model."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import numerics as nx
from .model import ModelParams
from .objectives import joint_loss
from .selector import SOFT
from .trainer import TrainConfig
from .vocab_data import build_vocab, encode_pairs, make_batch, synth_corpus

TINY = dict(hidden_size=8, embed_size=8, K=3, vocab_max=20, batch_size=4, float_width=64,
            selection_mode=SOFT, seed=0, max_len=5)


def tiny_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**TINY, **overrides})


def tiny_setup(config: TrainConfig, param_scale: float | None = 1.0):
    """Tiny corpus batch plus parameters for the gradient suite.

    With ``param_scale`` set, every parameter is redrawn from
    ``U(-param_scale, param_scale)``.  At the training initialisation some
    encoder gradients are around 1e-6, where the roundoff of a central
    difference with epsilon 1e-6 (about 1e-9) dominates the relative error;
    a generic O(1) point keeps the comparison about the derivative itself.
    ``None`` keeps the training initialisation.
    """
    rows = synth_corpus(max(config.batch_size, 2), 4, config.seed, min_len=3, max_len=5)
    vocab = build_vocab(rows, config.vocab_max)
    pairs = encode_pairs(rows, vocab, max_len=config.max_len)
    batch = make_batch(pairs[: max(config.batch_size, 2)])
    dims = dataclasses.replace(config.dims(len(vocab)), vocab_size=config.vocab_max)
    params = ModelParams.init(dims, config.seed, np.float64)
    if param_scale is not None:
        rng = np.random.default_rng([config.seed, 13])
        for t in params.values():
            t.data[...] = rng.uniform(-param_scale, param_scale, t.shape)
    return params, batch


def loss_fn(batch, config: TrainConfig, part: str = "total"):
    """Deterministic joint-loss closure: fresh fixed-seed generators on every call."""
    def fn(params):
        lb = joint_loss(batch, params, config.tau, np.random.default_rng([config.seed, 11]),
                        config.loss_variant, config.selection_mode, config.match_weight,
                        np.random.default_rng([config.seed, 12]))
        return {"total": lb.total, "L_G": lb.L_G, "L_M": lb.L_M}[part]
    return fn


def run_suite(config: TrainConfig | None = None, epsilon: float = 1e-6, tolerance: float = 1e-5,
              parts=("total", "L_G", "L_M"), param_scale: float | None = 1.0) -> dict:
    """Check every named parameter under each loss part; returns a JSON-ready report."""
    config = tiny_config() if config is None else config
    if config.float_width != 64:
        raise ValueError("the gradient suite needs float_width 64")
    params, batch = tiny_setup(config, param_scale)
    report = {"config": config.to_dict(), "epsilon": epsilon, "tolerance": tolerance,
              "param_scale": param_scale, "parts": {}}
    start = time.perf_counter()
    for part in parts:
        rep = nx.grad_check(loss_fn(batch, config, part), params, epsilon, tolerance)
        report["parts"][part] = rep.to_dict()
    report["seconds"] = time.perf_counter() - start
    report["passed"] = all(r["passed"] for r in report["parts"].values())
    return report
