"""GRU cell and bidirectional encoders.

Gate convention (reset applied before the recurrent candidate transform)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import BiGruParams, GruParams
from .numerics import ShapeError, Tensor


@dataclass
class EncoderOutput:
    states: Tensor | None  # (B, T, 2h), or (T, 2h) from encode_post
    summary: Tensor        # (B, 2h), or (2h,)
    mask: np.ndarray       # (B, T) bool, True on real tokens


def _cell(h: Tensor, xz: Tensor, xr: Tensor, xh: Tensor, p: GruParams) -> Tensor:
    z = nx.sigmoid(xz + nx.linear(h, p.U_z))
    r = nx.sigmoid(xr + nx.linear(h, p.U_r))
    cand = nx.tanh(xh + nx.linear(r * h, p.U_h))
    return (1.0 - z) * h + z * cand


def gru_cell_step(h_prev: Tensor, x: Tensor, p: GruParams) -> Tensor:
    """One GRU update for a vector or a batch of row vectors."""
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeError("gru_cell_step", h_prev.shape, x.shape,
                         detail=f"expects hidden {p.hidden_size}, input {p.input_size}")
    if h_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeError("gru_cell_step", h_prev.shape, x.shape)
    return _cell(h_prev,
                 nx.linear(x, p.W_z, p.b_z),
                 nx.linear(x, p.W_r, p.b_r),
                 nx.linear(x, p.W_h, p.b_h), p)


def _run_direction(emb: Tensor, mask: np.ndarray, p: GruParams, reverse: bool,
                   keep_states: bool) -> tuple[Tensor, list[Tensor]]:
    b, t_max = mask.shape
    xz = nx.linear(emb, p.W_z, p.b_z)
    xr = nx.linear(emb, p.W_r, p.b_r)
    xh = nx.linear(emb, p.W_h, p.b_h)
    h = Tensor(np.zeros((b, p.hidden_size), dtype=emb.dtype))
    states: list[Tensor] = [None] * t_max  # type: ignore[list-item]
    steps = range(t_max - 1, -1, -1) if reverse else range(t_max)
    for t in steps:
        h_new = _cell(h, xz[:, t], xr[:, t], xh[:, t], p)
        m = mask[:, t]
        # pad steps carry the previous state through unchanged
        h = h_new if m.all() else nx.where(m[:, None], h_new, h)
        if keep_states:
            states[t] = h
    return h, states


def encode_batch(ids: np.ndarray, lengths: np.ndarray, params: BiGruParams,
                 embeddings: Tensor, keep_states: bool = True) -> EncoderOutput:
    """Bidirectional encoding of a padded id matrix, each row on its true length only."""
    ids = np.asarray(ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] == 0 or lengths.min(initial=1) < 1:
        raise ValueError("encoder input must be a non-empty (B, T) id matrix with lengths >= 1")
    if embeddings.shape[1] != params.forward.input_size:
        raise ShapeError("encode", embeddings.shape, params.forward.W_z.shape)
    mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    emb = nx.embedding(embeddings, ids)
    h_fwd, fwd = _run_direction(emb, mask, params.forward, False, keep_states)
    h_bwd, bwd = _run_direction(emb, mask, params.backward, True, keep_states)
    summary = nx.concat([h_fwd, h_bwd], axis=-1)
    states = None
    if keep_states:
        states = nx.concat([nx.stack(fwd, axis=1), nx.stack(bwd, axis=1)], axis=-1)
    return EncoderOutput(states, summary, mask)


def _single(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ValueError("cannot encode an empty sequence")
    return ids


def encode_post(ids, params: BiGruParams, embeddings: Tensor) -> EncoderOutput:
    """Encode one sequence: states ``(T, 2h)`` and summary ``[fwd_T; bwd_1]``."""
    ids = _single(ids)
    out = encode_batch(ids[None, :], np.array([ids.size]), params, embeddings)
    return EncoderOutput(nx.reshape(out.states, out.states.shape[1:]),
                         nx.reshape(out.summary, out.summary.shape[1:]), out.mask[0])


def encode_response(ids, params: BiGruParams, embeddings: Tensor) -> Tensor:
    """Summary vector of one response sequence."""
    ids = _single(ids)
    out = encode_batch(ids[None, :], np.array([ids.size]), params, embeddings, keep_states=False)
    return nx.reshape(out.summary, out.summary.shape[1:])
