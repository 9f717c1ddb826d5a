"""Adam training loop, best-validation retention, and binary checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .model import ModelDims, ModelParams
from .objectives import STANDARD, joint_loss
from .selector import HARD, SELECTION_MODES
from .vocab_data import PostResponsePair, Vocab, batches

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    hidden_size: int = 64
    embed_size: int = 32
    K: int = 6
    vocab_max: int = 200
    batch_size: int = 32
    learning_rate: float = 2e-3
    epochs: int = 30
    tau: float = 0.67
    seed: int = 7
    loss_variant: str = STANDARD
    selection_mode: str = HARD
    max_len: int = 50
    float_width: int = 32
    clip_norm: float = 5.0
    match_weight: float = 1.0
    tau_min: float = 0.67
    tau_decay: float = 1.0

    def __post_init__(self):
        for name in ("hidden_size", "embed_size", "K", "vocab_max", "batch_size", "epochs", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.tau > 0 or not self.learning_rate > 0 or not self.clip_norm > 0:
            raise ValueError("tau, learning_rate and clip_norm must be positive")
        if self.float_width not in (32, 64):
            raise ValueError("float_width must be 32 or 64")
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.loss_variant not in ("standard", "paper_literal"):
            raise ValueError("loss_variant must be 'standard' or 'paper_literal'")
        if self.match_weight < 0:
            raise ValueError("match_weight must be >= 0")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        base = dict(hidden_size=1024, embed_size=300, K=20, vocab_max=40000, batch_size=128,
                    learning_rate=2e-4, epochs=10, tau=0.67, tau_min=0.67)
        base.update(overrides)
        return cls(**base)

    @property
    def dtype(self):
        return np.float32 if self.float_width == 32 else np.float64

    def tau_at(self, epoch: int) -> float:
        """Temperature for a 0-based epoch; constant unless ``tau_decay < 1``."""
        return max(self.tau_min, self.tau * self.tau_decay ** epoch) if self.tau_decay < 1 else self.tau

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dims(self, vocab_size: int) -> ModelDims:
        return ModelDims(vocab_size, self.embed_size, self.hidden_size, self.K)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, state: AdamState, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
    """Bias-corrected Adam update in place.

    ``params`` maps names to tensors; gradients come from ``grads`` or from
    each tensor's ``.grad``.  A missing gradient raises ``KeyError``.  A
    parameter whose gradient is entirely zero is left untouched, moments included.
    """
    items = list(params.items())
    if grads is None:
        grads = {}
        for name, p in items:
            if p.grad is None:
                raise KeyError(f"no gradient for parameter {name!r}")
            grads[name] = p.grad
    else:
        for name, _ in items:
            if name not in grads:
                raise KeyError(f"no gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in items:
        g = grads[name]
        if not g.any():
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= np.asarray(scale, dtype=p.grad.dtype)
    return norm


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


@dataclass
class Streams:
    """Independent generators split from one seed: init, shuffle, Gumbel, negatives."""
    init: np.random.SeedSequence
    shuffle: np.random.Generator
    gumbel: np.random.Generator
    negatives: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        init, shuf, gum, neg = np.random.SeedSequence(seed).spawn(4)
        return cls(init, np.random.default_rng(shuf), np.random.default_rng(gum), np.random.default_rng(neg))


def evaluate_loss(params: ModelParams, pairs: Sequence[PostResponsePair], config: TrainConfig,
                  seed: int | None = None) -> dict:
    """Mean joint loss over ``pairs`` with fixed-seed sampling, so repeated calls agree exactly."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    neg_rng = np.random.default_rng([seed, 2])
    totals = {"L_G": 0.0, "L_M": 0.0, "total": 0.0}
    n = 0
    bs = max(config.batch_size, 2)
    for batch in batches(pairs, bs):
        if len(batch) < 2:
            continue
        lb = joint_loss(batch, params, config.tau, rng, config.loss_variant, config.selection_mode,
                        config.match_weight, neg_rng)
        for key, t in (("L_G", lb.L_G), ("L_M", lb.L_M), ("total", lb.total)):
            totals[key] += float(t.data) * len(batch)
        n += len(batch)
    return {k: v / max(n, 1) for k, v in totals.items()}


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    best_epoch: int
    best_valid: float


def train(config: TrainConfig, train_pairs: Sequence[PostResponsePair],
          valid_pairs: Sequence[PostResponsePair], vocab_size: int,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train from scratch; keep the parameters of the best validation epoch."""
    if not train_pairs or not valid_pairs:
        raise ValueError("train and validation splits must be non-empty")
    streams = Streams.from_seed(config.seed)
    params = ModelParams.init(config.dims(vocab_size), streams.init, config.dtype)
    state = AdamState()
    best = math.inf
    best_epoch = -1
    best_snap = params.snapshot()
    history = []
    for epoch in range(config.epochs):
        tau = config.tau_at(epoch)
        sums = {"L_G": 0.0, "L_M": 0.0, "total": 0.0}
        counts = np.zeros(config.K, dtype=np.int64)
        seen = 0
        shuffle_seed = int(streams.shuffle.integers(2**63))
        for bi, batch in enumerate(batches(train_pairs, config.batch_size, shuffle_seed)):
            if len(batch) < 2:
                continue
            params.zero_grad()
            with nx.Graph() as graph:
                lb = joint_loss(batch, params, tau, streams.gumbel, config.loss_variant,
                                config.selection_mode, config.match_weight, streams.negatives)
            value = float(lb.total.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, bi, value)
            nx.backward(graph, lb.total)
            for p in params.values():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            clip_gradients(params, config.clip_norm)
            adam_step(params, state, config.learning_rate)
            counts += np.bincount(lb.selection.z, minlength=config.K)
            for key, t in (("L_G", lb.L_G), ("L_M", lb.L_M), ("total", lb.total)):
                sums[key] += float(t.data) * len(batch)
            seen += len(batch)
        valid = evaluate_loss(params, valid_pairs, config)
        record = {"epoch": epoch + 1, **{k: v / seen for k, v in sums.items()},
                  "valid_total": valid["total"], "valid_L_G": valid["L_G"], "valid_L_M": valid["L_M"],
                  "tau": tau, "selection_counts": counts.tolist()}
        history.append(record)
        log.info("epoch %d  L_G %.4f  L_M %.4f  valid %.4f  sel %s", epoch + 1, record["L_G"],
                 record["L_M"], valid["total"], counts.tolist())
        if on_epoch is not None:
            on_epoch(record)
        if valid["total"] < best:
            best, best_epoch = valid["total"], epoch + 1
            best_snap = params.snapshot()
    params.restore(best_snap)
    params.zero_grad()
    return TrainResult(params, history, best_epoch, best)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"MMPMSCKP"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    """Bad magic bytes or an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _blob(b: bytes) -> bytes:
    return struct.pack("<Q", len(b)) + b


def save_checkpoint(params: ModelParams, config: TrainConfig, path, vocab: Vocab | None = None) -> None:
    """Write magic, version, config JSON, vocab JSON, then named little-endian parameter records."""
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    voc = json.dumps(vocab.tokens if vocab is not None else None).encode("utf-8")
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION), _blob(cfg), _blob(voc),
           struct.pack("<I", params.dims.vocab_size), struct.pack("<I", len(params))]
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype=t.dtype.newbyteorder("<"))
        out.append(_blob(name.encode("utf-8")))
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(struct.pack("<B", arr.dtype.itemsize))
        out.append(_blob(arr.tobytes()))
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<Q")
        return self.take(n)


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig, Vocab | None]:
    """Read a checkpoint fully, validate every record, and only then build the model."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        config = TrainConfig.from_dict(json.loads(r.blob().decode("utf-8")))
        tokens = json.loads(r.blob().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointVersionError(f"{path}: unreadable header ({exc})") from None
    vocab = Vocab(tokens) if tokens is not None else None
    (vocab_size,) = r.unpack("<I")
    (count,) = r.unpack("<I")
    dims = config.dims(vocab_size)
    expected = dims.shapes()
    if vocab is not None and len(vocab) != vocab_size:
        raise CheckpointShapeError(f"vocabulary has {len(vocab)} entries, parameters expect {vocab_size}")
    if count != len(expected):
        raise CheckpointShapeError(f"{count} parameter records, config implies {len(expected)}")
    dtype = np.dtype(config.dtype).newbyteorder("<")
    tensors = {}
    for _ in range(count):
        name = r.blob().decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        (itemsize,) = r.unpack("<B")
        raw = r.blob()
        if name not in expected:
            raise CheckpointShapeError(f"unexpected parameter {name!r}")
        if tuple(shape) != expected[name]:
            raise CheckpointShapeError(f"{name}: stored shape {tuple(shape)} != expected {expected[name]}")
        if itemsize != dtype.itemsize or len(raw) != itemsize * int(np.prod(shape)):
            raise CheckpointShapeError(f"{name}: payload size does not match shape and float width")
        data = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(config.dtype)
        tensors[name] = nx.Tensor(data, requires_grad=True, name=name)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise CheckpointShapeError(f"missing parameter records: {missing}")
    ordered = {n: tensors[n] for n in expected}
    return ModelParams(dims, ordered), config, vocab
