"""Named parameter bank for the multi-mapping conversation model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import Tensor

GRU_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
ENCODERS = ("post_fwd", "post_bwd", "resp_fwd", "resp_bwd")


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_size: int
    hidden_size: int
    num_mappings: int

    @property
    def summary_size(self) -> int:
        """Width of a bidirectional summary ``[fwd_T; bwd_1]``."""
        return 2 * self.hidden_size

    def shapes(self) -> dict[str, tuple[int, ...]]:
        v, e, h, k = self.vocab_size, self.embed_size, self.hidden_size, self.num_mappings
        out: dict[str, tuple[int, ...]] = {"embedding": (v, e)}
        for enc in ENCODERS:
            out.update(_gru_shapes(enc, e, h))
        for i in range(k):
            out[f"map.{i}.W"] = (h, 2 * h)
            out[f"map.{i}.b"] = (h,)
        out["select.W_y"] = (h, 2 * h)
        out["attn.v"] = (h,)
        out["attn.W_h"] = (h, 2 * h)
        out["attn.W_s"] = (h, h)
        out.update(_gru_shapes("dec", e + 2 * h, h))
        out["out.W_o"] = (v, 3 * h)
        out["out.b_o"] = (v,)
        return out


def _gru_shapes(prefix: str, d_in: int, h: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for g in "zrh":
        shapes[f"{prefix}.W_{g}"] = (h, d_in)
        shapes[f"{prefix}.U_{g}"] = (h, h)
        shapes[f"{prefix}.b_{g}"] = (h,)
    return shapes


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U_z.shape[0]


@dataclass
class BiGruParams:
    forward: GruParams
    backward: GruParams


class ModelParams:
    """Ordered mapping ``name -> Tensor`` plus typed views for each component."""

    def __init__(self, dims: ModelDims, tensors: dict[str, Tensor]):
        expected = dims.shapes()
        if list(tensors) != list(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ValueError(f"parameter names do not match dims (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {tensors[name].shape} != expected {shape}")
        self.dims = dims
        self.tensors = tensors

    @classmethod
    def init(cls, dims: ModelDims, seed: int | np.random.SeedSequence, dtype=np.float32) -> "ModelParams":
        """Random initialisation; every named parameter draws from its own child seed.

        Embeddings ~ U(-0.1, 0.1); weight matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
        biases start at zero except the mapping biases, which use the weight range so
        that mapping modules differ even for a zero post summary.
        """
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        shapes = dims.shapes()
        children = ss.spawn(len(shapes))
        tensors = {}
        for (name, shape), child in zip(shapes.items(), children):
            rng = np.random.default_rng(child)
            if name == "embedding":
                data = rng.uniform(-0.1, 0.1, shape)
            elif len(shape) == 2:
                bound = 1.0 / np.sqrt(shape[1])
                data = rng.uniform(-bound, bound, shape)
            elif name.startswith("map.") or name == "attn.v":
                bound = 1.0 / np.sqrt(dims.hidden_size)
                data = rng.uniform(-bound, bound, shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
        return cls(dims, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def keys(self):
        return self.tensors.keys()

    def values(self):
        return self.tensors.values()

    @property
    def dtype(self):
        return self.tensors["embedding"].dtype

    @property
    def num_mappings(self) -> int:
        return self.dims.num_mappings

    def gru(self, prefix: str) -> GruParams:
        return GruParams(**{n: self.tensors[f"{prefix}.{n}"] for n in GRU_NAMES})

    def post_encoder(self) -> BiGruParams:
        return BiGruParams(self.gru("post_fwd"), self.gru("post_bwd"))

    def response_encoder(self) -> BiGruParams:
        return BiGruParams(self.gru("resp_fwd"), self.gru("resp_bwd"))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, t in self.tensors.items():
            t.data[...] = snap[n]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.dims, {n: Tensor(t.data.astype(dtype), requires_grad=True, name=n)
                                       for n, t in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))
