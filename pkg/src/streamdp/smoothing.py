"""Per-reading outputs from group aggregates, plus the level selector.

The perturber emits one noisy aggregate u_t per b**s readings; the smoother
converts these into one estimate per reading. An aggregate becomes usable at
the reading that completes its group; earlier readings of a group fall back
to older aggregates, and before any group has completed the prior
u_0 = b**s * theta / 2 stands in (half the truncation threshold as mean).
With s = 0 the "recent" rule is the identity on the aggregate sequence.

``optimize_s`` picks how many bottom hierarchy levels to delegate to the
smoother by minimizing an approximate squared error

    (b-1) * (log_b(r) - s)**3 * 2*theta**2/eps**2  +  b**s/2 * theta**2/4

(noise shrinks with s because fewer levels split the budget; bias grows
because b**s - 1 of every b**s readings are predictions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import InvalidParameterError

SMOOTHER_KINDS = ("recent", "mean", "median", "moving_average", "exponential")


def smoothing_error(theta: float, epsilon: float, r: int, b: int, s: int) -> float:
    """The approximate squared error of delegating s levels to prediction."""
    log_levels = math.log(r) / math.log(b)
    noise = (b - 1) * (log_levels - s) ** 3 * 2.0 * theta**2 / epsilon**2
    bias = b**s / 2.0 * theta**2 / 4.0
    return noise + bias


def optimize_s(theta: float, epsilon: float, r: int, b: int) -> int:
    """Number of bottom levels to smooth away; ties go to the smaller s."""
    if not (theta > 0 and epsilon > 0 and r >= b and b >= 2):
        raise InvalidParameterError("need theta > 0, epsilon > 0, r >= b >= 2")
    height, power = 1, b
    while power < r:
        power *= b
        height += 1
    errors = [smoothing_error(theta, epsilon, r, b, s) for s in range(height)]
    best = 0
    for s in range(1, height):
        if errors[s] < errors[best]:
            best = s
    return best


@dataclass
class SmootherConfig:
    """Rule selection and its parameters.

    ``window`` applies to the moving-average rule, ``alpha`` to the
    exponential rule; both are exposed because no canonical values exist.
    """

    kind: str = "recent"
    window: int = 4
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in SMOOTHER_KINDS:
            raise InvalidParameterError(
                f"unknown smoother kind {self.kind!r}; choose from {SMOOTHER_KINDS}"
            )
        if self.window < 1:
            raise InvalidParameterError("moving-average window must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameterError("alpha must be in [0, 1]")


class Smoother:
    """Single-writer state machine emitting one estimate per reading.

    Call :meth:`next` once per reading, passing the freshly completed group
    aggregate exactly at group-completing readings.
    """

    def __init__(self, config: SmootherConfig, group_size: int, theta: float):
        if group_size < 1:
            raise InvalidParameterError("group size must be >= 1")
        self.config = config
        self.group_size = group_size
        self.prior = group_size * theta / 2.0  # u_0
        self._current = self.prior / group_size
        self._history: list[float] = []  # u_1..u_t
        self._sum = self.prior  # includes u_0 (mean rule sums from j=0)
        self._median_low: list[float] = []
        self._median_high: list[float] = []

    @property
    def groups_seen(self) -> int:
        return len(self._history)

    def next(self, new_aggregate: float | None = None) -> float:
        """Per-reading estimate; advances only when a new aggregate arrives."""
        if new_aggregate is not None:
            self._advance(float(new_aggregate))
        return self._current

    def _advance(self, u: float) -> None:
        import heapq

        cfg = self.config
        g = self.group_size
        self._history.append(u)
        self._sum += u
        t = len(self._history)
        if cfg.kind == "recent":
            self._current = u / g
        elif cfg.kind == "mean":
            # Verbatim rule: sum over u_0..u_t divided by (g * t).
            self._current = self._sum / (g * t)
        elif cfg.kind == "median":
            low, high = self._median_low, self._median_high
            if not low or u <= -low[0]:
                heapq.heappush(low, -u)
            else:
                heapq.heappush(high, u)
            if len(low) > len(high) + 1:
                heapq.heappush(high, -heapq.heappop(low))
            elif len(high) > len(low):
                heapq.heappush(low, -heapq.heappop(high))
            med = -low[0] if len(low) > len(high) else (-low[0] + high[0]) / 2.0
            self._current = med / g
        elif cfg.kind == "moving_average":
            w = cfg.window
            if t + 1 < w:
                # Not enough history: average of the first t+1 values of u
                # (u_0 included), divided by the group size.
                self._current = (self.prior + sum(self._history)) / ((t + 1) * g)
            else:
                window = self._history[t - w :] if w <= t else [self.prior] + self._history
                self._current = sum(window) / (g * w)
        else:  # exponential
            self._current = cfg.alpha * u / g + (1.0 - cfg.alpha) * self._current


def smooth_by_group(
    aggregates: np.ndarray, config: SmootherConfig, group_size: int, theta: float
) -> np.ndarray:
    """Vectorized per-group outputs o_0..o_T.

    o_0 is the prior-only estimate (before any group completes); o_t for
    t >= 1 is the estimate in force once aggregate t has arrived. Matches the
    streaming :class:`Smoother` exactly.
    """
    u = np.asarray(aggregates, dtype=np.float64)
    g = group_size
    prior = g * theta / 2.0
    t_count = u.shape[0]
    out = np.empty(t_count + 1)
    out[0] = prior / g
    if t_count == 0:
        return out
    kind = config.kind
    if kind == "recent":
        out[1:] = u / g
    elif kind == "mean":
        t = np.arange(1, t_count + 1)
        out[1:] = (prior + np.cumsum(u)) / (g * t)
    elif kind == "median":
        out[1:] = _accel.expanding_median(u) / g
    elif kind == "moving_average":
        w = config.window
        with_prior = np.concatenate([[prior], u])
        csum = np.concatenate([[0.0], np.cumsum(with_prior)])
        t = np.arange(1, t_count + 1)
        # Regular rule once t+1 >= w (window u_{t+1-w}..u_t, u_0 counting as
        # index 0 of `with_prior`); else the average of u_0..u_t.
        lo = np.maximum(t + 1 - w, 0)
        window_sums = csum[t + 1] - csum[lo]
        divisors = np.where(t + 1 < w, (t + 1) * g, w * g)
        out[1:] = window_sums / divisors
    else:  # exponential
        out[1:] = _accel.exponential_filter(u / g, config.alpha, out[0])
    return out


def smooth_batch(
    aggregates: np.ndarray,
    completed_before: np.ndarray,
    config: SmootherConfig,
    group_size: int,
    theta: float,
) -> np.ndarray:
    """One estimate per reading from the per-group outputs.

    ``completed_before[i]`` is the number of aggregates available once
    reading i has been ingested (from :class:`~streamdp.hierarchy.BatchPerturbation`).
    """
    by_group = smooth_by_group(aggregates, config, group_size, theta)
    return by_group[np.asarray(completed_before, dtype=np.int64)]
