"""Posterior mapping selection with Gumbel-Softmax sampling.

At training time the encoded target response scores every candidate
representation; a Gumbel-Softmax draw from the resulting categorical picks the
module whose candidate seeds the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor

HARD = "hard"
SOFT = "soft"
HARD_MIX = "hard_mix"
SELECTION_MODES = (HARD, SOFT, HARD_MIX)


@dataclass
class SelectionResult:
    pi: np.ndarray       # (..., K) posterior
    z: np.ndarray        # (...,) selected index
    soft: Tensor         # (..., K) Gumbel-Softmax sample, differentiable
    hard: np.ndarray     # (..., K) one-hot of argmax(soft)
    tau: float


def relevance_scores(candidates: Tensor, y_proj: Tensor) -> Tensor:
    """Dot products ``m_k . y`` for stacked candidates ``(..., K, d)`` and ``y`` ``(..., d)``."""
    if candidates.shape[-1] != y_proj.shape[-1]:
        raise ShapeError("posterior_distribution", candidates.shape, y_proj.shape)
    if candidates.shape[-2] == 0:
        raise ValueError("posterior_distribution needs at least one candidate")
    return nx.dot(candidates, nx.reshape(y_proj, y_proj.shape[:-1] + (1, y_proj.shape[-1])))


def posterior_distribution(candidates, y_proj: Tensor) -> Tensor:
    """``pi_k = softmax_k(m_k . y)``; ``candidates`` is a list of vectors or a stacked tensor."""
    if isinstance(candidates, (list, tuple)):
        if not candidates:
            raise ValueError("posterior_distribution needs at least one candidate")
        candidates = nx.stack(candidates, axis=-2)
    return nx.softmax(relevance_scores(candidates, y_proj))


def project_response(y: Tensor, W_y: Tensor) -> Tensor:
    """Learned map from the response summary to the candidate space."""
    return nx.linear(y, W_y)


def gumbel_noise(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    u = rng.random(shape)
    u = np.maximum(u, np.finfo(np.float64).tiny)
    return (-np.log(-np.log(u))).astype(dtype)


def gumbel_softmax_sample(pi, tau: float, rng: np.random.Generator,
                          log_pi: Tensor | None = None) -> SelectionResult:
    """Draw ``soft = softmax((log pi + g) / tau)`` with ``g ~ Gumbel(0, 1)``.

    Pass ``log_pi`` (e.g. from :func:`numerics.log_softmax`) to keep the draw on
    the graph; otherwise ``pi`` (array or Tensor) is used as a constant.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if log_pi is None:
        p = pi.data if isinstance(pi, Tensor) else np.asarray(pi, dtype=np.float64)
        log_pi = Tensor(np.log(p)) if not isinstance(pi, Tensor) else nx.log(pi)
    pi_arr = np.exp(log_pi.data)
    g = gumbel_noise(log_pi.shape, rng, log_pi.dtype)
    soft = nx.softmax(nx.mul(log_pi + g, 1.0 / tau))
    z = np.argmax(soft.data, axis=-1)
    hard = np.zeros_like(soft.data)
    np.put_along_axis(hard, np.expand_dims(z, -1), 1.0, axis=-1)
    return SelectionResult(pi_arr, z, soft, hard, tau)


def select_candidate(candidates, result: SelectionResult, mode: str = HARD) -> Tensor:
    """Combine candidates with the selection weights.

    ``hard``: the forward value is exactly ``m_z``; the one-hot weights pass
    their gradient straight through to the soft sample, so the unselected
    candidates receive no decoder gradient.  ``hard_mix``: the forward value
    is again ``m_z`` but the whole soft mixture ``sum_k soft_k m_k`` takes the
    backward pass, so every candidate ``m_j`` receives ``soft_j`` times the
    downstream gradient.  ``soft``: ``sum_k soft_k m_k``.
    """
    if isinstance(candidates, (list, tuple)):
        candidates = nx.stack(candidates, axis=-2)
    if mode == HARD_MIX:
        mix = nx.sum(nx.mul(nx.reshape(result.soft, result.soft.shape + (1,)), candidates), axis=-2)
        picked = np.sum(result.hard[..., None] * candidates.data, axis=-2)
        return nx.straight_through(picked, mix)
    if mode == HARD:
        weights = nx.straight_through(result.hard, result.soft)
    elif mode == SOFT:
        weights = result.soft
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    w = nx.reshape(weights, weights.shape + (1,))
    return nx.sum(nx.mul(w, candidates), axis=-2)
