"""Pure NumPy/Python implementations of the hot kernels.

These are the import-time fallback for :mod:`streamdp._accel._kernels` and the
reference the compiled twin is tested against. Signatures and numerical
behaviour match the Cython versions (summation order may differ in the last
few ulps; consumers compare at 1e-9 relative or looser).
"""

from __future__ import annotations

import heapq

import numpy as np


def consistency_transform(flat: np.ndarray, sizes: np.ndarray, b: int) -> None:
    """Enforce parent = sum(children) on a hierarchy of noisy values, in place.

    ``flat`` concatenates the per-level node values from the top level down
    to the leaves; ``sizes[j]`` nodes at level j, with sizes[j+1] = b*sizes[j].
    Applies the bottom-up weighted averaging pass (leaf height 1, top height
    H; heights 2..H ascending)

        x <- (b^l - b^(l-1))/(b^l - 1) * x + (b^(l-1) - 1)/(b^l - 1) * sum(chd)

    then the top-down correction pass (heights H-1..1 descending)

        x <- x + (prt' - sum over prt's children of pre-pass values) / b

    which is the equal-variance least-squares projection onto the consistent
    subspace (Hay et al., PVLDB 2010).
    """
    n_levels = sizes.shape[0]
    offsets = np.zeros(n_levels + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    levels = [flat[offsets[j]:offsets[j + 1]] for j in range(n_levels)]

    # Bottom-up: children already hold their updated values when the parent
    # level is processed.
    for j in range(n_levels - 2, -1, -1):
        height = n_levels - j
        power = float(b) ** height
        lower = power / b
        c_self = (power - lower) / (power - 1.0)
        c_child = (lower - 1.0) / (power - 1.0)
        child_sums = levels[j + 1].reshape(-1, b).sum(axis=1)
        levels[j][:] = c_self * levels[j] + c_child * child_sums

    # Top-down: each node gets an equal share of its parent's residual
    # relative to the pre-pass (bottom-up) child values.
    for j in range(1, n_levels):
        child_sums = levels[j].reshape(-1, b).sum(axis=1)
        adjust = (levels[j - 1] - child_sums) / b
        levels[j][:] = levels[j] + np.repeat(adjust, b)


def em_iterate(
    cond: np.ndarray, counts: np.ndarray, max_iter: int, tol: float
) -> tuple[np.ndarray, int, float]:
    """Expectation-maximization for a binned mixture density.

    Args:
        cond: (n_report_bins, n_value_bins) conditional probabilities of each
            report bin given each value bin; columns sum to ~1.
        counts: observed report-bin counts.
        max_iter: iteration cap.
        tol: stop when the relative log-likelihood improvement drops below it.

    Returns:
        (estimated value-bin probabilities, iterations used, final log-likelihood).
    """
    n_values = cond.shape[1]
    total = counts.sum()
    f = np.full(n_values, 1.0 / n_values)
    loglik = -np.inf
    # Report bins with zero counts contribute nothing to the update or the
    # likelihood; drop their rows up front.
    observed = np.flatnonzero(counts > 0)
    cond_obs = np.ascontiguousarray(cond[observed])
    counts_obs = counts[observed]
    it = 0
    for it in range(1, max_iter + 1):
        mix = cond_obs @ f
        mix = np.maximum(mix, 1e-300)
        f = f * (cond_obs.T @ (counts_obs / mix))
        f /= total
        new_loglik = float(counts_obs @ np.log(mix))
        if it > 1 and abs(new_loglik - loglik) < tol * abs(loglik):
            loglik = new_loglik
            break
        loglik = new_loglik
    return f, it, loglik


def expanding_median(x: np.ndarray) -> np.ndarray:
    """Median of x[:t+1] for every prefix t, via the two-heap technique."""
    out = np.empty_like(x, dtype=np.float64)
    low: list[float] = []  # max-heap (negated)
    high: list[float] = []  # min-heap
    for i, value in enumerate(x):
        if not low or value <= -low[0]:
            heapq.heappush(low, -float(value))
        else:
            heapq.heappush(high, float(value))
        if len(low) > len(high) + 1:
            heapq.heappush(high, -heapq.heappop(low))
        elif len(high) > len(low):
            heapq.heappush(low, -heapq.heappop(high))
        out[i] = -low[0] if len(low) > len(high) else (-low[0] + high[0]) / 2.0
    return out


def exponential_filter(x: np.ndarray, alpha: float, seed: float) -> np.ndarray:
    """First-order recursion out[t] = alpha*x[t] + (1-alpha)*out[t-1], out[-1]=seed."""
    out = np.empty_like(x, dtype=np.float64)
    prev = seed
    for i, value in enumerate(x):
        prev = alpha * value + (1.0 - alpha) * prev
        out[i] = prev
    return out
