"""Addresses of trainable weights and the client/server cut."""

from __future__ import annotations

from dataclasses import dataclass

# Trainable attention projections per block, in canonical tie-break order.
KINDS = ("Q", "K", "V", "O")
KIND_ORDER = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True, order=False)
class WeightId:
    block: int
    kind: str

    def __post_init__(self):
        if self.kind not in KIND_ORDER:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.block < 0:
            raise ValueError(f"negative block index {self.block}")

    def sort_key(self) -> tuple[int, int]:
        return (self.block, KIND_ORDER[self.kind])

    def __str__(self) -> str:
        return f"b{self.block}.{self.kind}"


@dataclass(frozen=True)
class SplitPoint:
    """Cut between block j-1 (client side) and block j (server side)."""

    j: int

    def validate(self, n_blocks: int) -> "SplitPoint":
        if not 1 <= self.j <= n_blocks - 1:
            raise ValueError(f"split j={self.j} outside [1, {n_blocks - 1}]")
        return self

    def client_side(self, wid: WeightId) -> bool:
        return wid.block < self.j


def all_weight_ids(n_blocks: int) -> list[WeightId]:
    return [WeightId(b, k) for b in range(n_blocks) for k in KINDS]
