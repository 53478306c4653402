"""Random range-query workloads over the published region of a stream.

Two sampling laws are provided because the expected query length differs:

* ``uniform_length`` (default): range length uniform on 1..min(r, n), then a
  uniform valid start -- mean length about r/2.
* ``uniform_pair``: uniform over all (i, j) pairs with length <= r, i.e.
  length k drawn with probability proportional to n - k + 1 -- mean length
  about r/3 when the limit binds the stream, matching the expected-coverage
  constant used by the threshold error models.

Workload randomness is a dedicated stream, independent of any mechanism's
draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError
from ..rng import RandomSource

_STREAM_QUERIES = 101

MODE_UNIFORM_LENGTH = "uniform_length"
MODE_UNIFORM_PAIR = "uniform_pair"


@dataclass
class QueryWorkload:
    """Fixed set of 1-based inclusive (i, j) index pairs."""

    queries: np.ndarray  # shape (count, 2)
    range_limit: int
    seed: int
    mode: str = MODE_UNIFORM_LENGTH

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.int64)
        lengths = self.queries[:, 1] - self.queries[:, 0] + 1
        if np.any(lengths < 1) or np.any(lengths > self.range_limit):
            raise InvalidParameterError("workload contains an invalid range")

    @property
    def lengths(self) -> np.ndarray:
        return self.queries[:, 1] - self.queries[:, 0] + 1

    def __len__(self) -> int:
        return int(self.queries.shape[0])


def gen_queries(
    n: int,
    range_limit: int,
    count: int = 200,
    seed: int = 0,
    mode: str = MODE_UNIFORM_LENGTH,
    offset: int = 0,
) -> QueryWorkload:
    """Sample ``count`` range queries over indices offset+1 .. offset+n.

    Args:
        n: number of queryable readings (the published region's length).
        range_limit: maximal query length r.
        count: workload size.
        seed: workload seed (independent of mechanism seeds).
        mode: sampling law, see module docstring.
        offset: shift applied to both endpoints (e.g. the holdout size).
    """
    if n < 1:
        raise InvalidParameterError("need at least one queryable reading")
    if count < 1:
        raise InvalidParameterError("need at least one query")
    rng = RandomSource(seed, _STREAM_QUERIES)
    gen = rng.generator
    max_len = min(range_limit, n)
    if mode == MODE_UNIFORM_LENGTH:
        lengths = gen.integers(1, max_len + 1, size=count)
    elif mode == MODE_UNIFORM_PAIR:
        # length k with probability proportional to the n - k + 1 valid starts
        weights = (n - np.arange(1, max_len + 1) + 1).astype(np.float64)
        weights /= weights.sum()
        lengths = gen.choice(np.arange(1, max_len + 1), size=count, p=weights)
    else:
        raise InvalidParameterError(f"unknown workload mode {mode!r}")
    starts = np.empty(count, dtype=np.int64)
    for idx, k in enumerate(lengths):
        starts[idx] = gen.integers(1, n - int(k) + 2)
    queries = np.stack([starts + offset, starts + lengths - 1 + offset], axis=1)
    return QueryWorkload(queries, range_limit=range_limit, seed=seed, mode=mode)
