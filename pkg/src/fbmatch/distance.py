"""Foreground/background-biased pixel distance.

``D(p, q) = 1 - 2 / (1 + exp(||e_p - e_q||^2 + b))`` where ``b`` is the
foreground or background bias depending on which set ``q`` belongs to.
The identity ``1 - 2/(1 + e^x) = tanh(x / 2)`` gives an overflow-free form,
which is the only one used outside the test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class MatchParams:
    """Distance biases for one matching scale. Both default to 0."""

    bias_fg: float = 0.0
    bias_bg: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.bias_fg) and math.isfinite(self.bias_bg)):
            raise ValueError("biases must be finite")


def distance_from_sqdist(sqdist, bias: float = 0.0):
    """Map squared embedding distance(s) to ``tanh((d2 + bias) / 2)`` in float64."""
    return np.tanh((np.asarray(sqdist, dtype=np.float64) + bias) * 0.5)


def pixel_distance(e_p, e_q, bias: float = 0.0) -> float:
    a = np.asarray(e_p, dtype=np.float64).ravel()
    b = np.asarray(e_q, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"channel counts differ: {a.size} vs {b.size}")
    d = a - b
    return float(math.tanh((float(d @ d) + bias) * 0.5))
