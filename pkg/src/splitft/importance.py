"""Resource-normalized gradient-weight importance with historical blending.

Per trainable weight we track the cost-free numerator sum(|w * dL/dw|) and
blend it across rounds; division by the configuration-dependent cost
happens only when a concrete (weight, rank) candidate is scored. This keeps
the blend well-defined when the planner changes ranks between rounds and
coincides with blending the full ratio whenever the rank is static.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import Matrix, ShapeError
from .weights import WeightId, all_weight_ids


def gw_numerator(weights: Matrix, grads: Matrix) -> float:
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if w.shape != g.shape:
        raise ShapeError("weight/grad shape mismatch", w.shape, g.shape)
    return float(np.abs(w * g).sum())


def rngwp(numerator: float, cost: float) -> float:
    if cost <= 0:
        raise ValueError(f"cost must be positive, got {cost}")
    if numerator < 0:
        raise ValueError(f"numerator must be non-negative, got {numerator}")
    return numerator / cost


def balance(current: float, hist: float, t: int, T: int) -> float:
    """Blending weight toward the historical value.

    Grows with the training progress t/T and with the current/historical
    ratio. Mathematically in (0,1) for positive inputs; results that round
    to 0.0 or 1.0 in float are clamped to the nearest representable value
    inside the interval.
    """
    if hist <= 0:
        raise ValueError(f"historical importance must be positive, got {hist}")
    if not 1 <= t <= T:
        raise ValueError(f"round {t} outside [1, {T}]")
    g = -math.expm1(-(current * t) / (hist * T))
    if g >= 1.0:
        g = math.nextafter(1.0, 0.0)
    elif g <= 0.0:
        g = math.nextafter(0.0, 1.0)
    return g


@dataclass
class ImportanceRecord:
    weight_id: WeightId
    blended_numerator: float = 0.0
    current_numerator: float = 0.0
    last_update_round: int = 0


def update(record: ImportanceRecord, current_numerator: float, t: int, T: int) -> ImportanceRecord:
    if current_numerator < 0:
        raise ValueError(f"numerator must be non-negative, got {current_numerator}")
    prev = record.blended_numerator
    if t <= 1 or prev == 0.0:
        blended = current_numerator  # bootstrap: no usable history yet
    else:
        g = balance(current_numerator, prev, t, T)
        blended = g * prev + (1.0 - g) * current_numerator
    return ImportanceRecord(record.weight_id, blended, current_numerator, t)


@dataclass
class ImportanceTable:
    total_rounds: int
    records: dict[WeightId, ImportanceRecord] = field(default_factory=dict)

    @classmethod
    def for_model(cls, n_blocks: int, total_rounds: int) -> "ImportanceTable":
        return cls(total_rounds, {wid: ImportanceRecord(wid) for wid in all_weight_ids(n_blocks)})

    def blended(self, wid: WeightId) -> float:
        return self.records[wid].blended_numerator

    def update_round(self, numerators: dict[WeightId, float], t: int) -> None:
        for wid, num in numerators.items():
            self.records[wid] = update(self.records[wid], num, t, self.total_rounds)
