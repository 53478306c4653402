"""Local-DP building blocks for the client-side release pipeline.

* Square Wave (Li et al., SIGMOD 2019) reports a value in [0, 1] with
  elevated density inside a +-b band around the truth; the server runs
  expectation-maximization over a 1024-bin grid to recover the density.
  Two white-box changes tailor it to skewed streams: the EM smoothing step is
  dropped, and trailing near-zero densities are pruned.
* Stochastic rounding (SR), the piecewise mechanism (PM) and their hybrid
  (HM) report a value in [-1, 1] unbiasedly (Duchi et al., 2018; Wang et al.,
  ICDE 2019); the hybrid calls PM with probability 1 - exp(-eps/2) above the
  eps = 0.61 cutoff and SR otherwise.
* ``ldp_threshold`` picks the truncation threshold minimizing the expected
  range-query error (r/3) * Var + (r^2/24) * (truncation bias)^2 over a
  candidate grid, with Var the hybrid mechanism's worst-case variance scaled
  to the truncated domain.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import InvalidParameterError
from .rng import RandomSource
from .threshold import METHOD_DENSITY, ThresholdDecision

#: Below this budget the hybrid mechanism always uses stochastic rounding.
HM_SR_ONLY_CUTOFF = 0.61

#: Grid resolution of the density estimate (larger grids make EM too costly).
DENSITY_BINS = 1024


# ---------------------------------------------------------------------------
# Square Wave frequency oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SwParams:
    """Square-wave reporting parameters for one budget.

    Attributes:
        epsilon: the per-report budget.
        width: half-width b of the high-probability band.
        p: report density inside the band.
        q: report density outside (p/q = e^eps; 2*b*p + q = 1).
    """

    epsilon: float
    width: float
    p: float
    q: float

    @classmethod
    def from_epsilon(cls, epsilon: float) -> "SwParams":
        if not epsilon > 0:
            raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
        e = math.exp(epsilon)
        width = (epsilon * e - e + 1.0) / (2.0 * e * (e - 1.0 - epsilon))
        p = e / (2.0 * width * e + 1.0)
        q = 1.0 / (2.0 * width * e + 1.0)
        return cls(epsilon=epsilon, width=width, p=p, q=q)


def sw_perturb(v, params: SwParams, rng: RandomSource):
    """Report values in [0, 1] through the square-wave channel.

    Accepts a scalar or an array (one report per element); reports live in
    [-b, 1+b].
    """
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise InvalidParameterError("square-wave inputs must lie in [0, 1]")
    b = params.width
    in_band = rng.uniform(arr.shape) < 2.0 * b * params.p
    u = rng.uniform(arr.shape)
    inside = arr + (2.0 * u - 1.0) * b
    # Outside mass is uniform over [-b, v-b) u (v+b, 1+b], total length 1.
    outside = np.where(u < arr, u - b, u + b)
    out = np.where(in_band, inside, outside)
    return float(out[0]) if np.ndim(v) == 0 else out


def sw_transition_matrix(
    params: SwParams, value_bins: int, report_bins: int | None = None
) -> np.ndarray:
    """P(report bin | value bin center) for the EM deconvolution.

    Value bins partition [0, 1]; report bins partition [-b, 1+b]. Entry
    (j, i) integrates the reporting density of value-center v_i over report
    bin j (band overlap at density p, remainder at density q).
    """
    if report_bins is None:
        report_bins = value_bins
    b = params.width
    centers = (np.arange(value_bins) + 0.5) / value_bins
    edges = np.linspace(-b, 1.0 + b, report_bins + 1)
    lo = edges[:-1][:, None]
    hi = edges[1:][:, None]
    band_lo = (centers - b)[None, :]
    band_hi = (centers + b)[None, :]
    overlap = np.clip(np.minimum(hi, band_hi) - np.maximum(lo, band_lo), 0.0, None)
    width = hi - lo
    return params.p * overlap + params.q * (width - overlap)


@dataclass
class DensityEstimate:
    """Binned frequency estimate over candidate values.

    ``values`` are the grid points (bin centers in the original units);
    ``freqs`` are non-negative and sum to one before pruning.
    """

    values: np.ndarray
    freqs: np.ndarray
    iterations: int = 0
    log_likelihood: float = math.nan
    pruned_at: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        if self.values.shape != self.freqs.shape:
            raise InvalidParameterError("grid and frequency lengths differ")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_value", "frequency"])
            for value, freq in zip(self.values, self.freqs):
                writer.writerow([repr(float(value)), repr(float(freq))])


def sw_estimate(
    reports: np.ndarray,
    params: SwParams,
    upper: float = 1.0,
    bins: int = DENSITY_BINS,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> DensityEstimate:
    """Maximum-likelihood density over a uniform grid, without smoothing.

    Reports are histogrammed at the same resolution as the value grid and
    the likelihood is maximized by expectation-maximization, stopping on a
    relative log-likelihood improvement below ``tol``. ``upper`` rescales the
    grid labels to the original domain [0, upper].
    """
    reports = np.asarray(reports, dtype=np.float64)
    if reports.size == 0:
        raise InvalidParameterError("need at least one report")
    b = params.width
    cond = sw_transition_matrix(params, bins)
    counts, _ = np.histogram(reports, bins=bins, range=(-b, 1.0 + b))
    freqs, iters, loglik = _accel.em_iterate(
        cond, counts.astype(np.float64), max_iter, tol
    )
    values = (np.arange(bins) + 0.5) * (upper / bins)
    return DensityEstimate(values, freqs, iterations=iters, log_likelihood=loglik)


def prune_density(
    est: DensityEstimate,
    cutoff: float = 0.001,
    run_length: int = 5,
    max_removed: float = 0.99,
) -> DensityEstimate:
    """Zero the tail after the first run of ``run_length`` sub-cutoff bins.

    Skewed streams concentrate below a threshold; once ``run_length``
    consecutive bins fall below ``cutoff`` the density is taken to have
    converged to zero. Pruning is skipped when it would remove at least
    ``max_removed`` of the mass (near-uniform estimates), and the remaining
    mass is renormalized.
    """
    small = est.freqs < cutoff
    window = np.convolve(small.astype(np.int64), np.ones(run_length, dtype=np.int64), "valid")
    hits = np.flatnonzero(window == run_length)
    if hits.size == 0:
        return DensityEstimate(
            est.values.copy(), est.freqs.copy(), est.iterations, est.log_likelihood
        )
    w = int(hits[0])
    removed = est.freqs[w:].sum()
    if removed >= max_removed * est.freqs.sum():
        return DensityEstimate(
            est.values.copy(), est.freqs.copy(), est.iterations, est.log_likelihood
        )
    freqs = est.freqs.copy()
    freqs[w:] = 0.0
    freqs /= freqs.sum()
    return DensityEstimate(
        est.values.copy(), freqs, est.iterations, est.log_likelihood, pruned_at=w
    )


def ldp_threshold(
    est: DensityEstimate,
    epsilon: float,
    r: int,
    grid: np.ndarray | None = None,
) -> ThresholdDecision:
    """Threshold minimizing the expected range-query error of the LDP stream.

    objective(theta) = (r/3) * (theta/2)**2 * Var_HM(eps)
                     + (r**2/24) * (sum over t > theta of f_t * (t - theta))**2

    r/3 is the expected query coverage and r^2/24 the average squared-length
    coefficient of the truncation bias; ties go to the smaller candidate.
    """
    freqs = np.asarray(est.freqs, dtype=np.float64)
    if not np.any(freqs > 0):
        raise InvalidParameterError("density estimate is identically zero")
    if grid is None:
        grid = est.values
    grid = np.asarray(grid, dtype=np.float64)
    var_unit = hm_worst_case_variance(epsilon)

    order = np.argsort(est.values, kind="stable")
    values = est.values[order]
    mass = freqs[order]
    # Suffix sums let every candidate's tail bias come from two lookups:
    # sum_{t > theta} f_t * (t - theta) = S1(theta) - theta * S0(theta).
    suffix_mass = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]])
    suffix_weighted = np.concatenate([np.cumsum((mass * values)[::-1])[::-1], [0.0]])
    pos = np.searchsorted(values, grid, side="right")
    tail = suffix_weighted[pos] - grid * suffix_mass[pos]

    objective = (r / 3.0) * (grid / 2.0) ** 2 * var_unit + (r**2 / 24.0) * tail**2
    index = int(np.argmin(objective))
    return ThresholdDecision(
        theta=float(grid[index]),
        method=METHOD_DENSITY,
        epsilon=epsilon,
        m=0,
        trace={
            "candidates": grid.copy(),
            "scores": -objective,
            "objective": objective,
            "selected_index": index,
            "hm_variance": var_unit,
        },
    )


# ---------------------------------------------------------------------------
# Unbiased value perturbation on [-1, 1]
# ---------------------------------------------------------------------------


def _check_unit(v: np.ndarray) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if arr.size and (arr.min() < -1 or arr.max() > 1):
        raise InvalidParameterError("perturber inputs must lie in [-1, 1]")
    return arr


def sr_scale(epsilon: float) -> float:
    """Output magnitude kappa = (e^eps + 1)/(e^eps - 1) of stochastic rounding."""
    e = math.exp(epsilon)
    return (e + 1.0) / (e - 1.0)


def sr_perturb(v, epsilon: float, rng: RandomSource):
    """Stochastic rounding + randomized response; E[report] = v.

    Rounds v to +-1 (P[+1] = 1/2 + v/2), flips with keep-probability
    e^eps/(e^eps + 1), and scales by kappa so the report is unbiased;
    reports take only the two values +-kappa.
    """
    arr = _check_unit(v)
    e = math.exp(epsilon)
    keep = e / (e + 1.0)
    rounded = np.where(rng.uniform(arr.shape) < 0.5 + arr / 2.0, 1.0, -1.0)
    flipped = np.where(rng.uniform(arr.shape) < keep, rounded, -rounded)
    out = sr_scale(epsilon) * flipped
    return float(out[0]) if np.ndim(v) == 0 else out


def sr_variance(epsilon: float, v: float) -> float:
    """Report variance kappa^2 - v^2 of stochastic rounding at input v."""
    return sr_scale(epsilon) ** 2 - v**2


def pm_bounds(epsilon: float) -> float:
    """Output bound s = (e^{eps/2} + 1)/(e^{eps/2} - 1) of the piecewise mechanism."""
    e2 = math.exp(epsilon / 2.0)
    return (e2 + 1.0) / (e2 - 1.0)


def pm_perturb(v, epsilon: float, rng: RandomSource):
    """Piecewise mechanism on [-1, 1] -> [-s, s]; E[report] = v.

    Reports land in a band [l(v), r(v)] of width 2/(e^{eps/2} - 1) with
    probability e^{eps/2}/(e^{eps/2} + 1), else uniformly outside the band.
    """
    arr = _check_unit(v)
    e2 = math.exp(epsilon / 2.0)
    s = (e2 + 1.0) / (e2 - 1.0)
    lo = (e2 * arr - 1.0) / (e2 - 1.0)
    hi = (e2 * arr + 1.0) / (e2 - 1.0)
    in_band = rng.uniform(arr.shape) < e2 / (e2 + 1.0)
    u = rng.uniform(arr.shape)
    inside = lo + u * (hi - lo)
    left = lo + s  # lengths of the two outside pieces
    right = s - hi
    pos = u * (left + right)
    outside = np.where(pos < left, -s + pos, hi + (pos - left))
    out = np.where(in_band, inside, outside)
    return float(out[0]) if np.ndim(v) == 0 else out


def pm_variance(epsilon: float, v: float) -> float:
    """Report variance of the piecewise mechanism at input v."""
    e2 = math.exp(epsilon / 2.0)
    return v**2 / (e2 - 1.0) + (e2 + 3.0) / (3.0 * (e2 - 1.0) ** 2)


def hm_mix_weight(epsilon: float) -> float:
    """Probability of calling PM inside the hybrid (0 below the cutoff)."""
    if epsilon <= HM_SR_ONLY_CUTOFF:
        return 0.0
    return 1.0 - math.exp(-epsilon / 2.0)


def hm_perturb(v, epsilon: float, rng: RandomSource):
    """Hybrid mechanism: PM with probability 1 - e^{-eps/2}, else SR."""
    arr = _check_unit(v)
    alpha = hm_mix_weight(epsilon)
    use_pm = rng.uniform(arr.shape) < alpha
    out = np.where(
        use_pm,
        pm_perturb(arr, epsilon, rng) if alpha > 0 else 0.0,
        sr_perturb(arr, epsilon, rng),
    )
    return float(out[0]) if np.ndim(v) == 0 else out


def hm_variance(epsilon: float, v: float) -> float:
    """Report variance of the hybrid at input v (constant in v above the cutoff)."""
    alpha = hm_mix_weight(epsilon)
    return alpha * pm_variance(epsilon, v) + (1.0 - alpha) * sr_variance(epsilon, v)


def hm_worst_case_variance(epsilon: float) -> float:
    """Worst-case hybrid variance (the two-branch closed form).

    ((e^eps+1)/(e^eps-1))^2 below the cutoff, else
    e^{-eps/2} * [((e^eps+1)/(e^eps-1))^2 + (e^{eps/2}+3)/(3*(e^{eps/2}-1))].
    """
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
    kappa_sq = sr_scale(epsilon) ** 2
    if epsilon <= HM_SR_ONLY_CUTOFF:
        return kappa_sq
    e2 = math.exp(epsilon / 2.0)
    return (kappa_sq + (e2 + 3.0) / (3.0 * (e2 - 1.0))) / e2


# ---------------------------------------------------------------------------
# Domain transforms and serialization
# ---------------------------------------------------------------------------


def to_unit_interval(v, theta: float):
    """Affine map [0, theta] -> [-1, 1] applied before value perturbation."""
    return 2.0 * np.asarray(v, dtype=np.float64) / theta - 1.0


def from_unit_interval(y, theta: float):
    """Unbiased decode of reports back to the [0, theta] domain."""
    return (np.asarray(y, dtype=np.float64) + 1.0) * (theta / 2.0)


def write_reports_csv(path, reports, phase: str, start_user: int = 0) -> None:
    """Serialize a report batch as (user_id, phase, report) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "phase", "report"])
        for offset, report in enumerate(np.asarray(reports, dtype=np.float64)):
            writer.writerow([start_user + offset, phase, repr(float(report))])
