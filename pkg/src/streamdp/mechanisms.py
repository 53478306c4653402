"""Core differential-privacy primitives.

Laplace sampling via the inverse-CDF transform, the Exponential Mechanism over
discrete candidate sets (log-space Gumbel-max sampling, so quality scores with
magnitudes around 1e6 never overflow), and the smooth sensitivity of an
empirical quantile as used by the inflated-quantile threshold baseline
(Perrier et al., NDSS 2019; Nissim et al., STOC 2007).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .rng import RandomSource


def laplace_sample(scale: float, rng: RandomSource, size=None):
    """Sample from Laplace(0, scale) with density exp(-|x|/scale)/(2*scale).

    Uses the inverse-CDF transform of a single uniform draw per sample, so
    results are exactly reproducible for a fixed :class:`RandomSource`.

    Args:
        scale: Laplace scale parameter, > 0. Mean 0, variance 2*scale**2.
        rng: randomness source.
        size: None for a scalar, else an array shape.
    """
    if not scale > 0:
        raise InvalidParameterError(f"Laplace scale must be > 0, got {scale}")
    u = rng.uniform(size) - 0.5
    draw = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(draw) if size is None else draw


@dataclass
class CandidateSet:
    """Discrete candidates with quality scores for the Exponential Mechanism.

    Attributes:
        candidates: the selectable outputs, in a fixed order.
        scores: one real-valued quality score per candidate.
        sensitivity: global sensitivity of the score function, > 0.
        monotone: True when a neighboring-input change moves every
            candidate's score in the same direction, which permits dropping
            the factor 1/2 in the sampling exponent (McSherry & Talwar, 2007).
    """

    candidates: np.ndarray
    scores: np.ndarray
    sensitivity: float = 1.0
    monotone: bool = False

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.candidates.size == 0:
            raise InvalidParameterError("candidate set is empty")
        if self.candidates.shape != self.scores.shape:
            raise InvalidParameterError("candidates and scores differ in length")
        if not self.sensitivity > 0:
            raise InvalidParameterError("score sensitivity must be > 0")


def em_log_weights(cset: CandidateSet, epsilon: float) -> np.ndarray:
    """Unnormalized log selection weights epsilon*q/(k*GS), k=2 (1 if monotone)."""
    divisor = 1.0 if cset.monotone else 2.0
    return (epsilon / (divisor * cset.sensitivity)) * cset.scores


def em_probabilities(cset: CandidateSet, epsilon: float) -> np.ndarray:
    """Exact selection probabilities (stable softmax of the log weights)."""
    logw = em_log_weights(cset, epsilon)
    logw = logw - np.max(logw)
    w = np.exp(logw)
    return w / w.sum()


def exp_mechanism(
    cset: CandidateSet, epsilon: float, rng: RandomSource, size=None
):
    """Sample a candidate index via the Exponential Mechanism.

    Sampling uses the Gumbel-max construction on the log weights, which is
    exactly equivalent to softmax sampling but immune to overflow for scores
    spanning hundreds of orders of magnitude.

    Returns the selected index (or an int array of indices when ``size`` is
    given, consuming one Gumbel vector per draw).
    """
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
    logw = em_log_weights(cset, epsilon)
    n = logw.shape[0]
    if size is None:
        gumbel = -np.log(-np.log(rng.uniform(n)))
        return int(np.argmax(logw + gumbel))
    gumbel = -np.log(-np.log(rng.uniform((int(size), n))))
    return np.argmax(logw + gumbel, axis=1)


def laplace_smooth_params(epsilon: float, delta: float) -> tuple[float, float]:
    """(noise scaler a, smoothing parameter b) for Laplace-noise smooth sensitivity.

    The (epsilon, delta) instantiation with standard-Laplace noise uses
    a = epsilon/2 and b = epsilon / (-2*ln(delta)).
    """
    if not 0 < delta < 1:
        raise InvalidParameterError(f"delta must be in (0, 1), got {delta}")
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
    return epsilon / 2.0, epsilon / (-2.0 * math.log(delta))


@dataclass
class SmoothSensParams:
    """Parameters of the smooth-sensitivity quantile machinery.

    Attributes:
        rank: 1-based rank P of the empirical quantile in the sorted sample.
        smoothing: decay parameter b of the smooth upper bound, > 0.
        noise_scaler: the divisor a applied to the smooth sensitivity.
        epsilon / delta: the privacy pair the (a, b) choice realizes.
        quantile_value: the empirical quantile itself (kept for diagnostics).
    """

    rank: int
    smoothing: float
    noise_scaler: float
    epsilon: float
    delta: float
    quantile_value: float = field(default=math.nan)
    distribution: str = "laplace"

    @classmethod
    def for_laplace(cls, rank, epsilon, delta, quantile_value=math.nan):
        a, b = laplace_smooth_params(epsilon, delta)
        return cls(rank, b, a, epsilon, delta, quantile_value)

    def validate(self, m: int) -> None:
        if not 1 <= self.rank <= m:
            raise InvalidParameterError(f"rank {self.rank} outside [1, {m}]")
        if not self.smoothing > 0:
            raise InvalidParameterError("smoothing parameter must be > 0")
        limit = self.epsilon / (-2.0 * math.log(self.delta))
        if self.smoothing > limit * (1 + 1e-12):
            raise InvalidParameterError(
                f"smoothing {self.smoothing} exceeds epsilon/(-2 ln delta) = {limit}"
            )


def smooth_sensitivity_quantile(
    sorted_values: np.ndarray, params: SmoothSensParams, upper: float
) -> float:
    """Smooth sensitivity of the rank-P order statistic of a bounded sample.

    Computes max over k = 0..m+1 of
        exp(-b*k) * max over t = 0..k+1 of [V(P+t) - V(P+t-k-1)]
    over the sorted sample V extended with V(i) = 0 for i < 1 and V(i) = upper
    for i > m.

    The k loop stops once exp(-b*k)*upper (an upper bound on every remaining
    term, since no gap exceeds the domain width) falls below the best value
    found; this is exact, not an approximation.

    Args:
        sorted_values: sample sorted ascending, values within [0, upper].
        params: rank and smoothing parameter (validated against the sample).
        upper: public upper bound of the value domain.
    """
    values = np.asarray(sorted_values, dtype=np.float64)
    m = values.shape[0]
    if m == 0:
        raise InvalidParameterError("empty sample")
    if np.any(np.diff(values) < 0):
        raise InvalidParameterError("sample is not sorted ascending")
    params.validate(m)

    # extended[i] holds V(i - (m+2)) ... i.e. V(j) = extended[j + m + 1] for
    # j in [-m-1, 2m+3]; sentinel ranges are 0 below and `upper` above.
    pad = m + 2
    extended = np.concatenate(
        [np.zeros(pad), values, np.full(pad + 2, float(upper))]
    )

    def v(j):  # V^s with sentinels, vectorized over integer index arrays
        return extended[np.clip(j + pad - 1, 0, extended.shape[0] - 1)]

    p = params.rank
    b = params.smoothing
    best = 0.0
    for k in range(m + 2):
        bound = math.exp(-b * k) * upper
        if bound < best:
            break
        t = np.arange(k + 2)
        gaps = v(p + t) - v(p + t - k - 1)
        term = math.exp(-b * k) * float(np.max(gaps))
        if term > best:
            best = term
    return best
