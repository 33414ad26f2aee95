"""Straggler injection and the virtual compute-cost model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class StragglerModel:
    """``k`` learners per iteration each delay their response by ``t_s`` seconds."""

    k: int = 0
    t_s: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.t_s < 0:
            raise ValueError(f"t_s must be >= 0, got {self.t_s}")

    def pick(self, iteration: int, candidates: Sequence[int]) -> list[int]:
        """Uniform choice without replacement, fresh per iteration.

        Only learners with work are candidates; ``k`` is capped at their count.
        """
        k = min(self.k, len(candidates))
        if k == 0:
            return []
        rng = np.random.default_rng([self.seed, iteration])
        chosen = rng.choice(len(candidates), size=k, replace=False)
        return sorted(int(candidates[c]) for c in chosen)


@dataclass(frozen=True)
class ComputeCostModel:
    """Virtual seconds: ``base`` per activation plus ``per_agent`` per assigned agent."""

    base: float = 0.05
    per_agent: float = 0.2

    def __post_init__(self) -> None:
        if self.base < 0 or self.per_agent < 0:
            raise ValueError("compute costs must be non-negative")

    def finish_time(self, load: int) -> float:
        return self.base + self.per_agent * load
