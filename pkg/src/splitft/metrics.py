"""Deterministic CSV output of per-round, per-client metrics."""

from __future__ import annotations

from typing import Iterable, TextIO

from .orchestrator import RoundReport
from .weights import WeightId

COLUMNS = (
    "round", "client_id", "loss", "ppl", "split_j",
    "assigned_ranks", "I_g", "delta_I", "tau", "aggregated",
)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def ranks_string(ranks: dict[WeightId, int]) -> str:
    parts = [f"{wid}={ranks[wid]}" for wid in sorted(ranks, key=WeightId.sort_key)]
    return ";".join(parts) if parts else "-"


def write_csv(reports: Iterable[RoundReport], out: TextIO) -> None:
    out.write(",".join(COLUMNS) + "\n")
    for rep in reports:
        for cid in sorted(rep.losses):
            row = (
                str(rep.t),
                str(cid),
                _fmt(rep.losses[cid]),
                _fmt(rep.ppls[cid]),
                str(rep.split_j),
                ranks_string(rep.client_ranks.get(cid, {})),
                _fmt(rep.global_importance),
                _fmt(rep.delta_I),
                _fmt(rep.tau),
                "1" if rep.aggregated else "0",
            )
            out.write(",".join(row) + "\n")


def emit_csv(reports: list[RoundReport], path: str) -> None:
    if not reports:
        raise ValueError("no reports to emit")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        write_csv(reports, f)


def write_importance_csv(snapshots: list[tuple[int, dict[WeightId, float]]], path: str) -> None:
    """Optional side channel: per-round blended importance per weight."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("round,weight,blended_numerator\n")
        for t, snap in snapshots:
            for wid in sorted(snap, key=WeightId.sort_key):
                f.write(f"{t},{wid},{_fmt(snap[wid])}\n")
