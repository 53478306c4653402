"""Global stream parameters shared by both release pipelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

#: Default bias-scaling constant of the threshold quality function.
DEFAULT_BIAS_SCALE = 60.0

#: Candidate grids larger than this are thinned with a stride (memory bound).
_MAX_GRID_POINTS = 1_000_000


@dataclass
class StreamConfig:
    """Parameters shared by the threshold, perturbation and smoothing stages.

    Attributes:
        upper: public upper bound B of the readings, > 0.
        range_limit: maximal range r of any query, >= fan_out.
        fan_out: branching factor b of the aggregation hierarchy, >= 2.
        epsilon: privacy budget per pipeline stage (the threshold stage and
            the perturbation stage act on disjoint readings, so each may
            spend the full budget under parallel composition).
        holdout: number m of initial readings consumed to select the
            truncation threshold, >= 1.
        bias_scale: constant c trading truncation bias against noise in the
            threshold quality function (default 60).
        grid: candidate thresholds; defaults to all integers 1..upper,
            thinned by a stride when upper exceeds 1e6.
    """

    upper: float
    range_limit: int
    fan_out: int = 16
    epsilon: float = 1.0
    holdout: int = 1
    bias_scale: float = DEFAULT_BIAS_SCALE
    grid: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.upper > 0:
            raise InvalidParameterError(f"upper bound must be > 0, got {self.upper}")
        if self.fan_out < 2:
            raise InvalidParameterError(f"fan-out must be >= 2, got {self.fan_out}")
        if self.range_limit < self.fan_out:
            raise InvalidParameterError(
                f"range limit {self.range_limit} must be >= fan-out {self.fan_out}"
            )
        if self.holdout < 1:
            raise InvalidParameterError(f"holdout must be >= 1, got {self.holdout}")
        if not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.bias_scale > 0:
            raise InvalidParameterError("bias scale must be > 0")
        if self.grid is None:
            top = math.floor(self.upper)
            stride = max(1, math.ceil(top / _MAX_GRID_POINTS))
            self.grid = np.arange(1.0, top + 1.0, stride)
        else:
            self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.size == 0:
            raise InvalidParameterError("candidate grid is empty")
        if np.any(self.grid <= 0) or np.any(self.grid > self.upper):
            raise InvalidParameterError("candidate grid must lie in (0, upper]")

    @property
    def tree_height(self) -> int:
        """Height h = ceil(log_b r) of each aggregation hierarchy."""
        height, power = 1, self.fan_out
        while power < self.range_limit:
            power *= self.fan_out
            height += 1
        return height
