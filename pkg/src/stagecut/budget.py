"""Compute-budget accounting: NFE-weighted GFLOPs and training PFLOPs."""

from __future__ import annotations

import dataclasses
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence


@dataclasses.dataclass(frozen=True)
class StageBudget:
    gflops_per_eval: float
    nfe_steps: int

    def __post_init__(self):
        if not self.gflops_per_eval > 0:
            raise ValueError(f"gflops_per_eval must be > 0, got {self.gflops_per_eval}")
        if self.nfe_steps < 0:
            raise ValueError(f"nfe_steps must be >= 0, got {self.nfe_steps}")


@dataclasses.dataclass(frozen=True)
class TrainingBudget:
    iterations: float
    gflops_per_eval: float

    def __post_init__(self):
        if not (self.iterations > 0 and self.gflops_per_eval > 0):
            raise ValueError("iterations and gflops_per_eval must both be > 0")


def weighted_gflops(stages: Sequence[StageBudget]) -> float:
    """Per-evaluation GFLOPs averaged over stages, weighted by solver steps."""
    total = sum(st.nfe_steps for st in stages)
    if total < 1:
        raise ValueError("stages must assign at least one solver step in total")
    return sum(st.gflops_per_eval * st.nfe_steps for st in stages) / total


def training_pflops_exact(b: TrainingBudget) -> Decimal:
    # Decimal from repr keeps 17.65 as 17.65, not its binary neighbour
    return Decimal(repr(b.iterations)) * Decimal(repr(b.gflops_per_eval)) * Decimal("1e-6")


def training_pflops(b: TrainingBudget, places: int | None = 2) -> float:
    """Forward-pass training cost in PFLOPs, rounded half-up to `places` decimals."""
    value = training_pflops_exact(b)
    if places is not None:
        value = value.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)
    return float(value)
