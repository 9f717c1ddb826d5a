"""Generation loss, matching loss with negative sampling, and the joint objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .decoder import DecoderParams, decode_teacher_forced, encode_and_map
from .model import ModelParams
from .numerics import ShapeError, Tensor
from .recurrent import encode_batch
from .selector import HARD, SelectionResult, gumbel_softmax_sample, project_response, relevance_scores, select_candidate
from .vocab_data import Batch

STANDARD = "standard"
PAPER_LITERAL = "paper_literal"


@dataclass
class LossBundle:
    L_G: Tensor
    L_M: Tensor
    total: Tensor
    selection: SelectionResult


def generation_loss(logits: Tensor, targets, pad_mask=None) -> Tensor:
    """Mean token negative log-likelihood.

    Each sequence's summed NLL over its unmasked positions is divided by its
    true length, then averaged over the batch.  ``logits`` is ``(L, V)`` or
    ``(B, L, V)``; ``pad_mask`` is true on positions that count (default: all).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim == 2:
        logits = nx.reshape(logits, (1,) + logits.shape)
        targets = targets[None]
        pad_mask = None if pad_mask is None else np.asarray(pad_mask)[None]
    b, length, v = logits.shape
    if targets.shape != (b, length):
        raise ShapeError("generation_loss", logits.shape, targets.shape,
                         detail="need one target per logit row")
    mask = np.ones((b, length), dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    if mask.shape != (b, length):
        raise ShapeError("generation_loss", targets.shape, mask.shape)
    lengths = mask.sum(axis=1)
    if lengths.min() < 1:
        raise ValueError("generation_loss: a sequence has no unmasked positions")
    nll = nx.reshape(nx.cross_entropy_rows(nx.reshape(logits, (b * length, v)), targets.reshape(-1)), (b, length))
    weights = (mask / lengths[:, None] / b).astype(logits.dtype)
    return nx.sum(nx.mul(nll, weights))


def matching_probability(x: Tensor, y: Tensor) -> Tensor:
    """Relevance ``sigmoid(x . y)``."""
    if x.shape[-1] != y.shape[-1]:
        raise ShapeError("matching_probability", x.shape, y.shape)
    return nx.sigmoid(nx.dot(x, y))


def matching_loss(x: Tensor, y_pos: Tensor, y_neg: Tensor, variant: str = STANDARD) -> Tensor:
    """Negative-sampling relevance loss, averaged over the batch when batched.

    ``standard``: ``-log s(x.y+) - log(1 - s(x.y-))``.
    ``paper_literal``: ``-log s(x.y+) + log s(x.y-)``, unbounded below.
    """
    if not x.shape[-1] == y_pos.shape[-1] == y_neg.shape[-1]:
        raise ShapeError("matching_loss", x.shape, y_pos.shape, y_neg.shape)
    pos = nx.dot(x, y_pos)
    neg = nx.dot(x, y_neg)
    if variant == STANDARD:
        per = nx.neg(nx.log_sigmoid(pos)) - nx.log_sigmoid(nx.neg(neg))
    elif variant == PAPER_LITERAL:
        per = nx.neg(nx.log_sigmoid(pos)) + nx.log_sigmoid(neg)
    else:
        raise ValueError(f"unknown matching loss variant {variant!r}")
    return nx.mean(per) if per.data.ndim else per


def sample_negative(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """For each row, a uniformly chosen different row of the same batch."""
    if isinstance(batch_size, Batch):
        batch_size = len(batch_size)
    if batch_size < 2:
        raise ValueError("negative sampling needs a batch of at least 2")
    offs = rng.integers(1, batch_size, size=batch_size)
    return (np.arange(batch_size) + offs) % batch_size


def encode_responses(params: ModelParams, batch: Batch) -> Tensor:
    return encode_batch(batch.responses, batch.response_lengths, params.response_encoder(),
                        params["embedding"], keep_states=False).summary


def joint_loss(batch: Batch, params: ModelParams, tau: float, rng: np.random.Generator,
               variant: str = STANDARD, selection_mode: str = HARD,
               match_weight: float = 1.0, neg_rng: np.random.Generator | None = None) -> LossBundle:
    """Full forward pass: encode, map, select from the posterior, decode, score.

    ``rng`` drives the Gumbel draw and ``neg_rng`` (default: ``rng``) the
    negative sampling.  ``total = L_G + match_weight * L_M``; with
    ``match_weight == 0`` the matching loss is reported but kept off the graph.
    """
    neg_rng = rng if neg_rng is None else neg_rng
    enc, mem, cands = encode_and_map(params, batch.posts, batch.post_lengths)
    y = encode_responses(params, batch)
    y_proj = project_response(y, params["select.W_y"])
    log_pi = nx.log_softmax(relevance_scores(cands, y_proj))
    sel = gumbel_softmax_sample(None, tau, rng, log_pi=log_pi)
    m_z = select_candidate(cands, sel, selection_mode)
    logits = decode_teacher_forced(m_z, batch.dec_inputs, mem, DecoderParams.from_params(params))
    L_G = generation_loss(logits, batch.targets, batch.target_mask)

    neg = sample_negative(len(batch), neg_rng)
    if match_weight == 0:
        xd, yd = nx.detach(enc.summary), nx.detach(y)
        L_M = matching_loss(xd, yd, nx.take(yd, neg), variant)
        total = L_G
    else:
        L_M = matching_loss(enc.summary, y, nx.take(y, neg), variant)
        total = L_G + L_M if match_weight == 1 else L_G + nx.mul(L_M, match_weight)
    return LossBundle(L_G, L_M, total, sel)
