"""Noisy aggregate release through a fan-out-b hierarchy over stream chunks.

Each chunk of ``r`` consecutive truncated readings is covered by a forest of
``b`` rooted trees of height ``h = ceil(log_b r)`` (levels of b, b^2, ...,
b^h nodes), so a range query within the limit ``r`` touches about
``(b-1)*log_b(r)`` nodes. The bottom ``s`` levels may be delegated to the
smoother; the remaining ``h - s`` levels split the stage budget equally.

All node noises of a chunk are drawn up front and consistency is enforced on
the noise alone (parent noise = sum of child noises); published group aggregates
are then true group sums plus the consistent leaf noise, which equals what
off-line consistency post-processing of the full noisy hierarchy would
publish. Disjoint chunks use disjoint randomness sub-streams (parallel
composition).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _accel
from .config import StreamConfig
from .errors import DataError, InvalidParameterError
from .mechanisms import laplace_sample
from .rng import RandomSource


@dataclass(frozen=True)
class HierarchyPlan:
    """Static layout of one chunk's hierarchy and its budget split.

    Attributes:
        fan_out: branching factor b.
        chunk_size: readings per chunk (the query range limit r).
        height: full tree height h = ceil(log_b r).
        smoothed: number s of bottom levels removed (0 <= s < h).
        epsilon: perturbation-stage budget, split equally over the h - s
            active levels.
    """

    fan_out: int
    chunk_size: int
    height: int
    smoothed: int
    epsilon: float

    @property
    def active_levels(self) -> int:
        return self.height - self.smoothed

    @property
    def eps_layer(self) -> float:
        return self.epsilon / self.active_levels

    @property
    def group_size(self) -> int:
        """Readings per active leaf (b**s)."""
        return self.fan_out**self.smoothed

    @property
    def leaf_slots(self) -> int:
        """Active leaf slots per chunk (b**(h-s) >= ceil(r / b**s))."""
        return self.fan_out**self.active_levels

    def level_sizes(self) -> np.ndarray:
        """Node counts per active level, top level first: b, b^2, ..., b^(h-s)."""
        return self.fan_out ** np.arange(1, self.active_levels + 1, dtype=np.int64)

    def noise_scale(self, theta: float) -> float:
        """Laplace scale per node: theta / eps_layer."""
        return theta / self.eps_layer

    def groups_in_chunk(self, chunk_len: int) -> int:
        """Aggregates emitted by a chunk holding ``chunk_len`` readings.

        A complete chunk emits ceil(r / b**s) aggregates (the last may cover
        fewer than b**s readings when b**s does not divide r); an incomplete
        final chunk emits only its fully accumulated groups.
        """
        if chunk_len >= self.chunk_size:
            return -(-self.chunk_size // self.group_size)
        return chunk_len // self.group_size


def plan_hierarchy(config: StreamConfig, smoothed: int) -> HierarchyPlan:
    """Build the chunk layout for a given number of smoothed-away levels."""
    height = config.tree_height
    if not 0 <= smoothed < height:
        raise InvalidParameterError(
            f"smoothed levels {smoothed} outside [0, {height})"
        )
    return HierarchyPlan(
        fan_out=config.fan_out,
        chunk_size=config.range_limit,
        height=height,
        smoothed=smoothed,
        epsilon=config.epsilon,
    )


class NoiseTree:
    """Per-node noise of one chunk, stored per level (top level first).

    ``levels[j+1]`` has ``fan_out`` times as many nodes as ``levels[j]``; the
    top level may hold any number of roots (b for a chunk forest, 1 in the
    single-tree worked examples).
    """

    def __init__(self, levels, fan_out: int, consistent: bool = False):
        self.levels = [np.asarray(level, dtype=np.float64) for level in levels]
        self.fan_out = int(fan_out)
        self.consistent = consistent
        for upper, lower in zip(self.levels, self.levels[1:]):
            if lower.shape[0] != upper.shape[0] * self.fan_out:
                raise InvalidParameterError("level sizes must grow by the fan-out")

    @property
    def leaves(self) -> np.ndarray:
        return self.levels[-1]

    def copy(self) -> "NoiseTree":
        return NoiseTree(
            [level.copy() for level in self.levels], self.fan_out, self.consistent
        )

    def max_parent_gap(self) -> float:
        """max over internal nodes of |N(x) - sum chd| / (1 + |N(x)|)."""
        worst = 0.0
        for upper, lower in zip(self.levels, self.levels[1:]):
            child_sums = lower.reshape(-1, self.fan_out).sum(axis=1)
            gap = np.abs(upper - child_sums) / (1.0 + np.abs(upper))
            worst = max(worst, float(gap.max()))
        return worst

    def to_json(self, path=None) -> str:
        """Diagnostic dump of the per-level noise values."""
        record = {
            "fan_out": self.fan_out,
            "consistent": self.consistent,
            "levels": [level.tolist() for level in self.levels],
        }
        text = json.dumps(record)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def build_noise_tree(
    plan: HierarchyPlan, theta: float, rng: RandomSource
) -> NoiseTree:
    """Draw independent Laplace noise for every active node of one chunk.

    theta = 0 is rejected rather than treated as a no-noise degenerate case:
    it signals an upstream thresholding failure.
    """
    if not theta > 0:
        raise InvalidParameterError(f"threshold must be > 0, got {theta}")
    sizes = plan.level_sizes()
    flat = laplace_sample(plan.noise_scale(theta), rng, size=int(sizes.sum()))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    levels = [flat[offsets[j]:offsets[j + 1]] for j in range(sizes.shape[0])]
    return NoiseTree(levels, plan.fan_out, consistent=False)


def make_consistent(tree: NoiseTree) -> NoiseTree:
    """Return the least-squares-consistent version of a noise tree.

    After the transform every internal node equals the sum of its children;
    applied to an already-consistent tree it is the identity.
    """
    if len(tree.levels) == 1:
        return NoiseTree([tree.levels[0].copy()], tree.fan_out, consistent=True)
    sizes = np.array([level.shape[0] for level in tree.levels], dtype=np.int64)
    flat = np.concatenate(tree.levels)
    flat = _accel.consistency_transform(flat, sizes, tree.fan_out)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    levels = [flat[offsets[j]:offsets[j + 1]] for j in range(sizes.shape[0])]
    return NoiseTree(levels, tree.fan_out, consistent=True)


def offline_consistency_reference(levels, fan_out: int):
    """Reference consistency pass over full noisy values (naive node loops).

    Applies the identical bottom-up / top-down updates to the complete noisy
    hierarchy H = T + N instead of the noise alone; serves as the equivalence
    oracle for the on-line algorithm. Deliberately written as plain per-node
    loops, independent of the fast kernels.
    """
    b = int(fan_out)
    current = [np.array(level, dtype=np.float64) for level in levels]
    n_levels = len(current)

    # Bottom-up, heights 2..H (level index H-height).
    for height in range(2, n_levels + 1):
        j = n_levels - height
        c_self = (b**height - b ** (height - 1)) / (b**height - 1)
        c_child = (b ** (height - 1) - 1) / (b**height - 1)
        for node in range(current[j].shape[0]):
            child_sum = 0.0
            for y in range(node * b, node * b + b):
                child_sum += current[j + 1][y]
            current[j][node] = c_self * current[j][node] + c_child * child_sum

    # Top-down, heights H-1..1: the parent value is the updated one, sibling
    # values are the pre-update (bottom-up) ones.
    final = [current[0].copy()]
    for j in range(1, n_levels):
        pre = current[j]
        out = np.empty_like(pre)
        for node in range(pre.shape[0]):
            parent = node // b
            siblings = 0.0
            for y in range(parent * b, parent * b + b):
                if y != node:
                    siblings += pre[y]
            out[node] = (b - 1) / b * pre[node] + (
                final[j - 1][parent] - siblings
            ) / b
        final.append(out)
    return final


def chunk_noise(
    plan: HierarchyPlan,
    theta: float,
    noise_rng: RandomSource,
    chunk_index: int,
    consistency: bool = True,
) -> NoiseTree:
    """The (optionally consistent) noise tree of a given chunk.

    Each chunk draws from its own randomness sub-stream, so trees are
    reproducible independently of ingestion order and disjoint chunks never
    share draws.
    """
    tree = build_noise_tree(plan, theta, noise_rng.substream(chunk_index))
    return make_consistent(tree) if consistency else tree


@dataclass
class BatchPerturbation:
    """Vectorized perturbation of a whole truncated stream.

    Attributes:
        aggregates: noisy aggregate u_t per completed group, in stream order.
        completed_before: for reading i (1-based, array index i-1), how many
            groups are completed once reading i has been ingested; indexes
            into ``aggregates`` history for the smoother.
        records: (chunk_index, group_index) per aggregate.
        group_size: nominal readings per group (b**s).
    """

    aggregates: np.ndarray
    completed_before: np.ndarray
    records: list
    group_size: int

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chunk_index", "group_index", "value"])
            for (chunk, group), value in zip(self.records, self.aggregates):
                writer.writerow([chunk, group, repr(float(value))])


def perturb_batch(
    values: np.ndarray,
    plan: HierarchyPlan,
    theta: float,
    noise_rng: RandomSource,
    consistency: bool = True,
) -> BatchPerturbation:
    """Perturb an entire truncated stream chunk by chunk (vectorized)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size and (values.min() < 0 or values.max() > theta * (1 + 1e-12)):
        raise DataError("values must already be truncated to [0, theta]")
    n = values.shape[0]
    g = plan.group_size
    r = plan.chunk_size

    aggregates = []
    records = []
    completed = np.zeros(n, dtype=np.int64)
    for chunk_index in range(-(-n // r) if n else 0):
        lo = chunk_index * r
        chunk = values[lo : lo + r]
        chunk_len = chunk.shape[0]
        n_groups = plan.groups_in_chunk(chunk_len)
        if n_groups > 0:
            tree = chunk_noise(plan, theta, noise_rng, chunk_index, consistency)
            starts = np.arange(n_groups) * g
            # Group k completes at its g-th reading; a short trailing group of
            # a complete chunk completes when the chunk closes.
            ends = np.minimum(starts + g, chunk_len)
            segment = chunk if chunk_len == r else chunk[: n_groups * g]
            sums = np.add.reduceat(segment, starts)
            aggregates.append(sums + tree.leaves[:n_groups])
            records.extend((chunk_index, k) for k in range(n_groups))
            completed[lo + ends - 1] = 1
    agg = np.concatenate(aggregates) if aggregates else np.zeros(0)
    completed = np.cumsum(completed)
    return BatchPerturbation(
        aggregates=agg,
        completed_before=completed,
        records=records,
        group_size=g,
    )


class Perturber:
    """Single-writer streaming state machine over consecutive chunks.

    ``ingest`` accumulates one truncated reading; it returns the noisy group
    aggregate when a group completes (every b**s readings, and at a chunk
    boundary for a short trailing group), else None.
    """

    def __init__(
        self,
        plan: HierarchyPlan,
        theta: float,
        noise_rng: RandomSource,
        consistency: bool = True,
    ):
        if not theta > 0:
            raise InvalidParameterError(f"threshold must be > 0, got {theta}")
        self.plan = plan
        self.theta = theta
        self.consistency = consistency
        self._noise_rng = noise_rng
        self.chunk_index = 0
        self.group_index = 0
        self._within_chunk = 0
        self._acc = 0.0
        self._fill = 0
        self._leaf_noise = chunk_noise(
            plan, theta, noise_rng, 0, consistency
        ).leaves

    def ingest(self, value: float):
        """Feed one truncated reading; emit a noisy aggregate on completion."""
        if not 0 <= value <= self.theta * (1 + 1e-12):
            raise DataError(
                f"reading {value} outside [0, theta={self.theta}]; truncate first"
            )
        self._acc += float(value)
        self._fill += 1
        self._within_chunk += 1
        emitted = None
        chunk_done = self._within_chunk == self.plan.chunk_size
        if self._fill == self.plan.group_size or chunk_done:
            emitted = self._acc + float(self._leaf_noise[self.group_index])
            self.group_index += 1
            self._acc = 0.0
            self._fill = 0
        if chunk_done:
            self.chunk_index += 1
            self.group_index = 0
            self._within_chunk = 0
            self._leaf_noise = chunk_noise(
                self.plan, self.theta, self._noise_rng, self.chunk_index,
                self.consistency,
            ).leaves
        return emitted
