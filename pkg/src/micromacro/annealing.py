"""Metropolis acceptance with geometric cooling.

Random draws come from numpy's PCG64 bit generator seeded with the run seed,
which gives identical streams on every platform numpy supports.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class AnnealSchedule:
    temperature: float = 1.0
    cooling: float = 0.8
    rng_seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.cooling < 1:
            raise ValueError(f"cooling factor must lie in (0, 1), got {self.cooling}")


def cool(schedule: AnnealSchedule) -> AnnealSchedule:
    # floored at the smallest normal float so very long runs never reach T = 0
    return replace(schedule, temperature=max(schedule.temperature * schedule.cooling, sys.float_info.min))


def acceptance_probability(tau_new: float, tau_old: float, temperature: float) -> float:
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    if tau_new > tau_old:
        return 1.0
    return math.exp((tau_new - tau_old) / temperature)


def accept(p: float, rng: np.random.Generator) -> bool:
    """Keep the candidate with probability ``p``; one uniform draw per call."""
    return bool(rng.random() < p)
