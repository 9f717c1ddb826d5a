"""K linear mapping modules from the post summary to candidate response representations."""

from __future__ import annotations

from dataclasses import dataclass

from . import numerics as nx
from .model import ModelParams
from .numerics import ShapeError, Tensor


@dataclass
class MappingBank:
    weights: list[Tensor]  # each (d_m, 2h)
    biases: list[Tensor]   # each (d_m,)

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("a mapping bank needs K >= 1 matching weight/bias pairs")
        shape = self.weights[0].shape
        for w, b in zip(self.weights, self.biases):
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeError("MappingBank", w.shape, b.shape, detail=f"expected {shape}")
        if len({id(w) for w in self.weights}) != len(self.weights):
            raise ValueError("mapping modules must not share parameter objects")

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def in_size(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_size(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def from_params(cls, params: ModelParams) -> "MappingBank":
        k = params.num_mappings
        return cls([params[f"map.{i}.W"] for i in range(k)], [params[f"map.{i}.b"] for i in range(k)])


def map_all(x: Tensor, bank: MappingBank) -> list[Tensor]:
    """``m_k = W_k x + b_k`` for every module, in index order.

    ``x`` is a single summary ``(2h,)`` or a batch ``(B, 2h)``.
    """
    if x.shape[-1] != bank.in_size:
        raise ShapeError("map_all", x.shape, bank.weights[0].shape)
    return [nx.linear(x, w, b) for w, b in zip(bank.weights, bank.biases)]


def map_all_stacked(x: Tensor, bank: MappingBank) -> Tensor:
    """Candidates stacked on the second-to-last axis: ``(B, K, d_m)`` or ``(K, d_m)``."""
    return nx.stack(map_all(x, bank), axis=-2)
