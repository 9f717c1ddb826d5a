"""Attention GRU decoder: teacher-forced scoring and greedy/sampled generation.

Attention is queried with the previous decoder state, the cell consumes
``[e(y_{t-1}); c_t]``, and the output layer reads ``[s_t; c_t]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import GruParams, ModelParams
from .multimap import MappingBank, map_all_stacked
from .numerics import ShapeError, Tensor
from .recurrent import _cell, encode_batch
from .vocab_data import BOS, EOS, PAD

GREEDY = "greedy"
SAMPLE = "sample"


@dataclass
class AttentionParams:
    v: Tensor    # (a,)
    W_h: Tensor  # (a, 2h)
    W_s: Tensor  # (a, d_m)

    @classmethod
    def from_params(cls, params: ModelParams) -> "AttentionParams":
        return cls(params["attn.v"], params["attn.W_h"], params["attn.W_s"])


@dataclass
class DecoderParams:
    embedding: Tensor
    attention: AttentionParams
    gru: GruParams
    W_o: Tensor
    b_o: Tensor

    @classmethod
    def from_params(cls, params: ModelParams) -> "DecoderParams":
        return cls(params["embedding"], AttentionParams.from_params(params), params.gru("dec"),
                   params["out.W_o"], params["out.b_o"])


@dataclass
class DecoderStep:
    s: Tensor      # (B, d_m)
    c: Tensor      # (B, 2h)
    alpha: Tensor  # (B, T)
    logits: Tensor  # (B, V)


@dataclass
class EncodedMemory:
    """Encoder states with their attention keys precomputed once per sequence."""
    states: Tensor       # (B, T, 2h)
    keys: Tensor         # (B, T, a) = W_h h_i
    mask: np.ndarray     # (B, T)

    @classmethod
    def build(cls, states: Tensor, mask: np.ndarray, attn: AttentionParams) -> "EncodedMemory":
        if states.data.ndim != 3:
            raise ShapeError("attention", states.shape, detail="expected (B, T, 2h) states")
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ValueError("attention: every row needs at least one unmasked position")
        return cls(states, nx.linear(states, attn.W_h), mask)


def _attend(mem: EncodedMemory, s: Tensor, attn: AttentionParams) -> tuple[Tensor, Tensor]:
    b, t, a = mem.keys.shape
    q = nx.reshape(nx.linear(s, attn.W_s), (b, 1, a))
    e = nx.dot(nx.tanh(mem.keys + q), attn.v)
    if not mem.mask.all():
        e = nx.masked_fill(e, ~mem.mask, -np.inf)
    alpha = nx.softmax(e)
    c = nx.sum(nx.mul(nx.reshape(alpha, (b, t, 1)), mem.states), axis=1)
    return alpha, c


def attention(H: Tensor, s: Tensor, params: AttentionParams, mask=None) -> tuple[Tensor, Tensor]:
    """``alpha = softmax_i(v . tanh(W_h h_i + W_s s))`` and ``c = sum_i alpha_i h_i``.

    Accepts unbatched ``H`` (T, 2h) with ``s`` (d_m,), or batched (B, T, 2h) with (B, d_m).
    Masked positions get -inf scores.
    """
    single = H.data.ndim == 2
    if single:
        H = nx.reshape(H, (1,) + H.shape)
        s = nx.reshape(s, (1,) + s.shape)
        mask = None if mask is None else np.asarray(mask)[None]
    if H.shape[1] < 1:
        raise ValueError("attention over an empty sequence")
    if mask is None:
        mask = np.ones(H.shape[:2], dtype=bool)
    if s.shape[-1] != params.W_s.shape[1] or H.shape[-1] != params.W_h.shape[1]:
        raise ShapeError("attention", H.shape, s.shape)
    mem = EncodedMemory.build(H, mask, params)
    alpha, c = _attend(mem, s, params)
    if single:
        alpha, c = nx.reshape(alpha, alpha.shape[1:]), nx.reshape(c, c.shape[1:])
    return alpha, c


def _step(s_prev: Tensor, y_prev: np.ndarray, mem: EncodedMemory, p: DecoderParams) -> DecoderStep:
    alpha, c = _attend(mem, s_prev, p.attention)
    x = nx.concat([nx.embedding(p.embedding, y_prev), c], axis=-1)
    g = p.gru
    s = _cell(s_prev, nx.linear(x, g.W_z, g.b_z), nx.linear(x, g.W_r, g.b_r),
              nx.linear(x, g.W_h, g.b_h), g)
    logits = nx.linear(nx.concat([s, c], axis=-1), p.W_o, p.b_o)
    return DecoderStep(s, c, alpha, logits)


def decode_step(s_prev: Tensor, y_prev, mem: EncodedMemory, params: DecoderParams) -> DecoderStep:
    """One decoder step for a batch; ``y_prev`` holds one token id per row."""
    y_prev = np.asarray(y_prev, dtype=np.int64).reshape(-1)
    if y_prev.min() < 0 or y_prev.max() >= params.embedding.shape[0]:
        raise ValueError("decode_step: token id out of vocabulary range")
    if s_prev.shape != (mem.states.shape[0], params.gru.hidden_size):
        raise ShapeError("decode_step", s_prev.shape, mem.states.shape)
    return _step(s_prev, y_prev, mem, params)


def decode_teacher_forced(m_z: Tensor, dec_inputs: np.ndarray, mem: EncodedMemory,
                          params: DecoderParams) -> Tensor:
    """Logits ``(B, L, V)`` for BOS-prefixed gold inputs ``(B, L)``; ``s_0 = m_z``."""
    dec_inputs = np.asarray(dec_inputs, dtype=np.int64)
    if dec_inputs.ndim != 2 or dec_inputs.shape[1] < 1:
        raise ValueError("decode_teacher_forced needs a (B, L) input matrix with L >= 1")
    p = params
    g = p.gru
    # input-side projections of the gold tokens, computed for all steps at once
    emb = nx.embedding(p.embedding, dec_inputs)
    e_dim = p.embedding.shape[1]
    Wz_e, Wz_c = nx.take(g.W_z, (slice(None), slice(0, e_dim))), nx.take(g.W_z, (slice(None), slice(e_dim, None)))
    Wr_e, Wr_c = nx.take(g.W_r, (slice(None), slice(0, e_dim))), nx.take(g.W_r, (slice(None), slice(e_dim, None)))
    Wh_e, Wh_c = nx.take(g.W_h, (slice(None), slice(0, e_dim))), nx.take(g.W_h, (slice(None), slice(e_dim, None)))
    ez, er, eh = nx.linear(emb, Wz_e, g.b_z), nx.linear(emb, Wr_e, g.b_r), nx.linear(emb, Wh_e, g.b_h)
    s = m_z
    ss, cs = [], []
    for t in range(dec_inputs.shape[1]):
        _, c = _attend(mem, s, p.attention)
        s = _cell(s, ez[:, t] + nx.linear(c, Wz_c), er[:, t] + nx.linear(c, Wr_c),
                  eh[:, t] + nx.linear(c, Wh_c), g)
        ss.append(s)
        cs.append(c)
    out_in = nx.concat([nx.stack(ss, axis=1), nx.stack(cs, axis=1)], axis=-1)
    return nx.linear(out_in, p.W_o, p.b_o)


def encode_and_map(params: ModelParams, posts: np.ndarray, lengths: np.ndarray):
    """Post encoder pass plus all K candidates: returns (EncoderOutput, memory, candidates (B, K, d))."""
    enc = encode_batch(posts, lengths, params.post_encoder(), params["embedding"])
    mem = EncodedMemory.build(enc.states, enc.mask, AttentionParams.from_params(params))
    cands = map_all_stacked(enc.summary, MappingBank.from_params(params))
    return enc, mem, cands


def _pad_posts(posts: list) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(p) for p in posts], dtype=np.int64)
    if lengths.min(initial=1) < 1:
        raise ValueError("cannot generate from an empty post")
    ids = np.full((len(posts), lengths.max()), PAD, dtype=np.int64)
    for i, p in enumerate(posts):
        ids[i, : len(p)] = p
    return ids, lengths


def generate_batch(params: ModelParams, posts: list, mappings, max_len: int,
                   mode: str = GREEDY, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Decode row ``i`` of ``posts`` from mapping module ``mappings[i]``.

    Greedy picks the lowest id among tied maxima; generation stops at EOS or
    after ``max_len`` tokens.  The EOS token is not included in the output.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if mode not in (GREEDY, SAMPLE):
        raise ValueError(f"unknown decoding mode {mode!r}")
    if mode == SAMPLE and rng is None:
        raise ValueError("sampled decoding needs an rng")
    ids, lengths = _pad_posts([list(p) for p in posts])
    mappings = np.asarray(mappings, dtype=np.int64)
    if mappings.min() < 0 or mappings.max() >= params.num_mappings:
        raise ValueError("mapping index out of range")
    _, mem, cands = encode_and_map(params, ids, lengths)
    b = len(posts)
    s = Tensor(cands.data[np.arange(b), mappings])
    dp = DecoderParams.from_params(params)
    prev = np.full(b, BOS, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    out: list[list[int]] = [[] for _ in range(b)]
    for _ in range(max_len):
        step = _step(s, prev, mem, dp)
        if mode == GREEDY:
            tok = np.argmax(step.logits.data, axis=-1)
        else:
            logits = step.logits.data.astype(np.float64)
            p = np.exp(logits - logits.max(axis=-1, keepdims=True))
            p /= p.sum(axis=-1, keepdims=True)
            tok = np.array([rng.choice(p.shape[1], p=row) for row in p])
        for i in np.flatnonzero(~done):
            if tok[i] == EOS:
                done[i] = True
            else:
                out[i].append(int(tok[i]))
        if done.all():
            break
        s, prev = step.s, tok
    return out


def generate(post_ids, mapping, params: ModelParams, max_len: int, mode: str = GREEDY,
             rng: np.random.Generator | None = None) -> list[int]:
    """Respond to one post from module ``mapping`` (an int, or ``"random"`` for a uniform pick)."""
    if mapping == "random":
        if rng is None:
            raise ValueError("a random mapping pick needs an rng")
        mapping = int(rng.integers(params.num_mappings))
    return generate_batch(params, [list(post_ids)], [int(mapping)], max_len, mode, rng)[0]


def generate_all(post_ids, params: ModelParams, max_len: int) -> list[list[int]]:
    """One greedy response per mapping module, in module order."""
    k = params.num_mappings
    return generate_batch(params, [list(post_ids)] * k, list(range(k)), max_len)


def generate_all_batch(params: ModelParams, posts: list, max_len: int, chunk: int = 64) -> list[list[list[int]]]:
    """``generate_all`` for many posts; result[i][k] is post i's response from module k."""
    k = params.num_mappings
    flat_posts = [list(p) for p in posts for _ in range(k)]
    flat_maps = [j for _ in posts for j in range(k)]
    flat: list[list[int]] = []
    for start in range(0, len(flat_posts), chunk):
        flat += generate_batch(params, flat_posts[start:start + chunk], flat_maps[start:start + chunk], max_len)
    return [flat[i * k:(i + 1) * k] for i in range(len(posts))]
