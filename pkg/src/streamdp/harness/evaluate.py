"""Exact range-query MSE between a true and a published stream.

MSE(Q) = (1/|Q|) * sum over (i,j) in Q of (published-sum(i,j) - true-sum(i,j))**2

computed from two prefix-sum arrays; independently recomputable from the
streams and the workload with zero tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .queries import QueryWorkload


@dataclass
class MseReport:
    """Per-query squared errors of one run, plus repetition statistics."""

    squared_errors: np.ndarray
    mse: float
    partial_queries: int = 0
    repetition_mses: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def mse_std(self) -> float:
        """Std-dev of the MSE across repetitions (NaN for a single run)."""
        if self.repetition_mses is None or self.repetition_mses.size < 2:
            return math.nan
        return float(np.std(self.repetition_mses, ddof=1))


def range_sums(stream: np.ndarray, workload: QueryWorkload) -> np.ndarray:
    """Vector of range sums; NaNs (unpublished placeholders) count as zero."""
    stream = np.asarray(stream, dtype=np.float64)
    prefix = np.concatenate([[0.0], np.cumsum(np.nan_to_num(stream, nan=0.0))])
    i = workload.queries[:, 0]
    j = workload.queries[:, 1]
    if np.any(j > stream.shape[0]):
        raise DataError("workload indexes beyond the stream")
    return prefix[j] - prefix[i - 1]


def evaluate(
    true_stream: np.ndarray,
    published: np.ndarray,
    workload: QueryWorkload,
    metadata: dict | None = None,
) -> MseReport:
    """Per-query squared error and its mean over the workload.

    Queries touching unpublished (NaN) indices are answered over the
    published indices only and counted in ``partial_queries``.
    """
    true_stream = np.asarray(true_stream, dtype=np.float64)
    published = np.asarray(published, dtype=np.float64)
    if true_stream.shape != published.shape:
        raise DataError(
            f"stream lengths differ: {true_stream.shape[0]} vs {published.shape[0]}"
        )
    true_sums = range_sums(true_stream, workload)
    published_sums = range_sums(published, workload)
    nan_prefix = np.concatenate(
        [[0], np.cumsum(np.isnan(published).astype(np.int64))]
    )
    overlap = nan_prefix[workload.queries[:, 1]] - nan_prefix[workload.queries[:, 0] - 1]
    squared = (published_sums - true_sums) ** 2
    return MseReport(
        squared_errors=squared,
        mse=float(squared.mean()),
        partial_queries=int((overlap > 0).sum()),
        metadata=metadata or {},
    )
