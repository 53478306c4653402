"""Truncation-threshold selection from the first m readings.

Three private selectors over a candidate grid:

* ``em_threshold`` -- the Exponential Mechanism over a quality function that
  scores each candidate by (minus) an approximation of the combined
  noise-plus-truncation error of the downstream hierarchy, with sensitivity 1.
* ``pak_threshold`` -- the inflated smooth-sensitivity quantile rule of
  Perrier et al. (NDSS 2019): empirical p-quantile plus a positive bias and a
  correction factor kappa > 1 so the result rarely undershoots the quantile.
* ``sp_threshold`` -- the plain smooth-sensitivity quantile (Nissim et al.,
  STOC 2007) without the inflation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import StreamConfig
from .errors import DegenerateParameterError, InvalidParameterError
from .mechanisms import (
    CandidateSet,
    SmoothSensParams,
    exp_mechanism,
    laplace_sample,
    smooth_sensitivity_quantile,
)
from .rng import RandomSource

#: Tags identifying how a threshold was produced.
METHOD_EM = "em"
METHOD_SS_INFLATED = "ss-inflated"
METHOD_SS_PLAIN = "ss-plain"
METHOD_FIXED = "fixed"
METHOD_DENSITY = "density"


@dataclass
class ThresholdDecision:
    """A selected truncation threshold with its diagnostic trace.

    ``trace`` holds the per-candidate quality scores for the EM selector and
    the smooth-sensitivity intermediates for the quantile selectors.
    """

    theta: float
    method: str
    epsilon: float
    m: int
    trace: dict = field(default_factory=dict)

    def to_json(self, path=None, trace_path=None) -> str:
        record = {
            "theta": self.theta,
            "method": self.method,
            "epsilon": self.epsilon,
            "m": self.m,
            "trace_path": str(trace_path) if trace_path else None,
        }
        text = json.dumps(record, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        if trace_path is not None:
            self.trace_to_csv(trace_path)
        return text

    def trace_to_csv(self, path) -> None:
        """Write the per-candidate (candidate, score) trace, when present."""
        candidates = self.trace.get("candidates")
        scores = self.trace.get("scores")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["candidate", "score"])
            if candidates is not None and scores is not None:
                for cand, score in zip(candidates, scores):
                    writer.writerow([repr(float(cand)), repr(float(score))])


def truncate(value, theta: float):
    """Cap a reading (or array of readings) at the threshold."""
    return np.minimum(value, theta)


def exceedance_counts(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Number of readings strictly above each candidate threshold.

    One sort of the holdout, then a searchsorted per grid; the count is the
    data-dependent part of the quality function and has sensitivity 1.
    """
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    below_or_equal = np.searchsorted(ordered, grid, side="right")
    return ordered.shape[0] - below_or_equal


def quality_scores(
    values: np.ndarray, config: StreamConfig, eps_noise: float | None = None
) -> np.ndarray:
    """Quality of each candidate threshold for the Exponential Mechanism.

    q(V, theta) = -(3*m*theta)/(c*r*eps) * sqrt(2*(b-1)*log_b(r)**3) - m_theta

    The first term is the hierarchy's noise standard deviation scaled so the
    whole function has sensitivity 1; m_theta counts the readings the
    candidate would truncate, a sensitivity-1 stand-in for the truncation
    bias (each truncated reading's excess is approximated by the constant c).

    Args:
        values: the m holdout readings, within [0, upper].
        config: stream parameters; ``config.epsilon`` (or ``eps_noise``) is
            the budget the downstream hierarchy will split across its levels.
        eps_noise: optional override of the hierarchy budget in the noise term.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidParameterError("empty holdout")
    if np.any(values < 0) or np.any(values > config.upper):
        raise InvalidParameterError("holdout values outside [0, upper]")
    eps = config.epsilon if eps_noise is None else eps_noise
    m = values.shape[0]
    b, r, c = config.fan_out, config.range_limit, config.bias_scale
    log_levels = math.log(r) / math.log(b)
    noise_coeff = (
        3.0 * m / (c * r * eps) * math.sqrt(2.0 * (b - 1) * log_levels**3)
    )
    return -noise_coeff * config.grid - exceedance_counts(values, config.grid)


def em_threshold(
    values: np.ndarray,
    config: StreamConfig,
    rng: RandomSource,
    eps_select: float | None = None,
    eps_noise: float | None = None,
    monotone: bool = True,
) -> ThresholdDecision:
    """Select a threshold by the Exponential Mechanism over the quality scores.

    Args:
        values: the m holdout readings.
        config: stream parameters; the candidate grid comes from here.
        rng: randomness source for the selection.
        eps_select: budget spent on the selection itself (defaults to
            ``config.epsilon``).
        eps_noise: hierarchy budget inside the quality function (defaults to
            ``config.epsilon``).
        monotone: exploit the same-direction property of the quality function
            (exponent divisor 1 instead of 2). A neighboring change moves all
            exceedance counts the same way, so this holds by construction.
    """
    eps_select = config.epsilon if eps_select is None else eps_select
    scores = quality_scores(values, config, eps_noise=eps_noise)
    cset = CandidateSet(config.grid, scores, sensitivity=1.0, monotone=monotone)
    index = exp_mechanism(cset, eps_select, rng)
    return ThresholdDecision(
        theta=float(config.grid[index]),
        method=METHOD_EM,
        epsilon=eps_select,
        m=int(np.asarray(values).shape[0]),
        trace={
            "candidates": config.grid.copy(),
            "scores": scores,
            "selected_index": index,
            "argmax_index": argmax_smallest(scores),
            "monotone": monotone,
        },
    )


def argmax_smallest(scores: np.ndarray) -> int:
    """Index of the maximal score; ties broken toward the smaller candidate."""
    return int(np.argmax(scores))


def _standard_laplace_inv_cdf(u: float) -> float:
    if not 0 < u < 1:
        raise InvalidParameterError("quantile argument must be in (0, 1)")
    return -math.log(2.0 * (1.0 - u)) if u >= 0.5 else math.log(2.0 * u)


@dataclass
class PakParams:
    """Public parameters of the inflated smooth-sensitivity quantile rule.

    Attributes:
        quantile: target percentile p (the rule aims above the p-quantile).
        failure_bound: bound beta on the probability of undershooting.
        delta: the delta of the (epsilon, delta) guarantee; defaults to 1/m**2.
    """

    quantile: float = 99.575
    failure_bound: float = 0.3 * 0.02
    delta: float | None = None

    def __post_init__(self):
        if not 0 < self.failure_bound < 1:
            raise InvalidParameterError("failure bound must be in (0, 1)")
        if not 0 < self.quantile < 100:
            raise InvalidParameterError("quantile must be in (0, 100)")

    def rank(self, m: int) -> int:
        return min(m, max(1, math.ceil(self.quantile / 100.0 * m)))

    def resolved_delta(self, m: int) -> float:
        return self.delta if self.delta is not None else 1.0 / (m * m)

    def kappa(self, smoothing: float, noise_scaler: float) -> float:
        """Correction factor (1 - (e^b - 1) * G^{-1}(1-beta) / a)^{-1}.

        Depends only on public parameters. The denominator must stay
        positive for the inflated bound to exist.
        """
        g_inv = _standard_laplace_inv_cdf(1.0 - self.failure_bound)
        denom = 1.0 - (math.exp(smoothing) - 1.0) * g_inv / noise_scaler
        if denom <= 0:
            raise DegenerateParameterError(
                "correction factor denominator <= 0; smoothing parameter too "
                "large for the requested failure bound"
            )
        return 1.0 / denom


def _quantile_smooth_parts(values, quantile, epsilon, delta, upper):
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    m = ordered.shape[0]
    if m == 0:
        raise InvalidParameterError("empty holdout")
    rank = min(m, max(1, math.ceil(quantile / 100.0 * m)))
    quantile_value = float(ordered[rank - 1])
    params = SmoothSensParams.for_laplace(rank, epsilon, delta, quantile_value)
    sens = smooth_sensitivity_quantile(ordered, params, upper)
    return ordered, rank, quantile_value, params, sens


def pak_threshold(
    values: np.ndarray,
    params: PakParams,
    config: StreamConfig,
    rng: RandomSource,
    inflation: float = 1.0,
) -> ThresholdDecision:
    """Inflated smooth-sensitivity quantile threshold, clamped to [0, upper].

    theta = x_p + kappa * SS / a * (Z + G^{-1}(1 - beta)) with Z a standard
    Laplace draw. ``inflation=0`` zeroes both the noise and the positive bias
    (an analytic test hook for the no-inflation limit).
    """
    m = np.asarray(values).shape[0]
    if m == 0:
        raise InvalidParameterError("empty holdout")
    delta = params.resolved_delta(m)
    _, rank, x_p, ss_params, sens = _quantile_smooth_parts(
        values, params.quantile, config.epsilon, delta, config.upper
    )
    kappa = params.kappa(ss_params.smoothing, ss_params.noise_scaler)
    g_inv = _standard_laplace_inv_cdf(1.0 - params.failure_bound)
    noise = laplace_sample(1.0, rng)
    raw = x_p + inflation * (
        kappa * sens / ss_params.noise_scaler * (noise + g_inv)
    )
    theta = min(max(raw, 0.0), config.upper)
    return ThresholdDecision(
        theta=theta,
        method=METHOD_SS_INFLATED,
        epsilon=config.epsilon,
        m=m,
        trace={
            "quantile": params.quantile,
            "rank": rank,
            "quantile_value": x_p,
            "smooth_sensitivity": sens,
            "smoothing": ss_params.smoothing,
            "noise_scaler": ss_params.noise_scaler,
            "kappa": kappa,
            "noise": noise,
            "g_inv": g_inv,
            "raw_theta": raw,
            "delta": delta,
        },
    )


def sp_threshold(
    values: np.ndarray,
    quantile: float,
    epsilon: float,
    delta: float,
    upper: float,
    rng: RandomSource,
) -> ThresholdDecision:
    """Plain smooth-sensitivity quantile: theta = x_p + SS * Z / a."""
    m = np.asarray(values).shape[0]
    if m == 0:
        raise InvalidParameterError("empty holdout")
    _, rank, x_p, ss_params, sens = _quantile_smooth_parts(
        values, quantile, epsilon, delta, upper
    )
    noise = laplace_sample(1.0, rng)
    raw = x_p + sens / ss_params.noise_scaler * noise
    theta = min(max(raw, 0.0), upper)
    return ThresholdDecision(
        theta=theta,
        method=METHOD_SS_PLAIN,
        epsilon=epsilon,
        m=m,
        trace={
            "quantile": quantile,
            "rank": rank,
            "quantile_value": x_p,
            "smooth_sensitivity": sens,
            "smoothing": ss_params.smoothing,
            "noise_scaler": ss_params.noise_scaler,
            "noise": noise,
            "raw_theta": raw,
            "delta": delta,
        },
    )
