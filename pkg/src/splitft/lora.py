"""Low-rank adapter algebra: creation, delta, factored forward, gradients.

An adapter for a frozen d_i x d_o weight W0 is the trainable pair
(B: d_i x r, A: r x d_o); the effective weight is W0 + B A with no extra
scaling factor. B starts at zero so a fresh adapter is a no-op; A starts
Gaussian with SIGMA_A so the first gradient step already moves B.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Matrix, ShapeError, gaussian_init
from .weights import WeightId

# Std-dev of the Gaussian init of A. B starts at zero, so the first delta
# is exactly zero regardless; this scale keeps A at the order of a random
# feature map so that B can learn a useful readout within a few hundred
# plain-SGD steps at desk scale.
SIGMA_A = 0.3


@dataclass
class LoraAdapter:
    weight_id: WeightId
    r: int
    B: Matrix  # d_i x r
    A: Matrix  # r x d_o

    @property
    def d_i(self) -> int:
        return self.B.shape[0]

    @property
    def d_o(self) -> int:
        return self.A.shape[1]

    def validate(self) -> "LoraAdapter":
        if self.B.shape != (self.d_i, self.r) or self.A.shape != (self.r, self.d_o):
            raise ShapeError("inconsistent adapter factors", self.B.shape, self.A.shape)
        if not 1 <= self.r <= min(self.d_i, self.d_o):
            raise ValueError(f"rank {self.r} outside [1, {min(self.d_i, self.d_o)}]")
        return self


def new_adapter(weight_id: WeightId, r: int, d_i: int, d_o: int, seed: int) -> LoraAdapter:
    if not 1 <= r <= min(d_i, d_o):
        raise ValueError(f"rank {r} outside [1, {min(d_i, d_o)}] for {weight_id}")
    B = np.zeros((d_i, r))
    A = gaussian_init(r, d_o, SIGMA_A, seed)
    return LoraAdapter(weight_id, r, B, A)


def reinit(adapter: LoraAdapter, seed: int, r: int | None = None) -> LoraAdapter:
    """Fresh (B=0, A Gaussian) adapter, optionally at a new rank."""
    rank = adapter.r if r is None else r
    return new_adapter(adapter.weight_id, rank, adapter.d_i, adapter.d_o, seed)


def delta(adapter: LoraAdapter) -> Matrix:
    return adapter.B @ adapter.A


def adapted_forward(x: Matrix, W0: Matrix, adapter: LoraAdapter | None) -> Matrix:
    """x W0 + (x B) A, keeping the low-rank product factored."""
    if x.shape[1] != W0.shape[0]:
        raise ShapeError("input/weight mismatch", x.shape, W0.shape)
    y = x @ W0
    if adapter is not None:
        if adapter.d_i != W0.shape[0] or adapter.d_o != W0.shape[1]:
            raise ShapeError("adapter/weight mismatch", adapter.B.shape, W0.shape)
        y = y + (x @ adapter.B) @ adapter.A
    return y


def adapter_grads(x: Matrix, upstream_grad: Matrix, adapter: LoraAdapter) -> tuple[Matrix, Matrix]:
    """Gradients of sum(upstream_grad * adapted_forward) w.r.t. (B, A)."""
    if x.shape[0] != upstream_grad.shape[0]:
        raise ShapeError("batch mismatch", x.shape, upstream_grad.shape)
    xtg = x.T @ upstream_grad  # d_i x d_o contraction, shared by both factors
    dB = xtg @ adapter.A.T
    dA = adapter.B.T @ xtg
    return dB, dA


def adapted_input_grad(upstream_grad: Matrix, W0: Matrix, adapter: LoraAdapter | None) -> Matrix:
    """Gradient w.r.t. x of adapted_forward, factored like the forward."""
    g = upstream_grad @ W0.T
    if adapter is not None:
        g = g + (upstream_grad @ adapter.A.T) @ adapter.B.T
    return g
