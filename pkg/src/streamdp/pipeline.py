"""End-to-end stream release: threshold, truncate, perturb, smooth, publish.

Two pipelines share one config surface:

* central DP: the first m readings select the truncation threshold (they are
  never published); every later reading is truncated, fed to the hierarchy
  perturber, and the smoother emits exactly one estimate per reading.
* local DP: holdout readings are square-wave perturbed client-side and the
  server picks the threshold from the estimated density; later readings are
  truncated and reported through the hybrid mechanism, whose unbiased decoded
  reports are the published stream (no smoother).

Budget accounting: the threshold stage and the perturbation stage act on
disjoint readings (parallel composition), so each may spend the full
configured epsilon; hierarchy levels inside the perturber split their stage
budget sequentially. A conservative mode that splits epsilon across the two
stages sits behind ``split_budget``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .config import StreamConfig
from .errors import DataError, InvalidParameterError, QueryError
from .hierarchy import HierarchyPlan, perturb_batch, plan_hierarchy
from .ldp import (
    SwParams,
    from_unit_interval,
    hm_perturb,
    ldp_threshold,
    prune_density,
    sw_estimate,
    sw_perturb,
    to_unit_interval,
)
from .rng import RandomSource
from .smoothing import SmootherConfig, optimize_s, smooth_batch
from .threshold import (
    METHOD_EM,
    METHOD_FIXED,
    METHOD_SS_INFLATED,
    METHOD_SS_PLAIN,
    PakParams,
    ThresholdDecision,
    em_threshold,
    pak_threshold,
    sp_threshold,
)

logger = logging.getLogger(__name__)

MODE_DP = "dp"
MODE_LDP = "ldp"
MODE_PAK = "pak"

# Fixed stream tags so subsystems never share draws.
_STREAM_THRESHOLD = 1
_STREAM_NOISE = 2
_STREAM_REPORTS_HOLDOUT = 3
_STREAM_REPORTS_STREAM = 4


@dataclass
class PipelineConfig:
    """Full configuration of one pipeline run.

    The JSON wire format uses the short field names
    {mode, B, r, b, epsilon, m, c, smoother: {kind, w, alpha}, seed,
    input_path, output_path} plus the optional overrides below.
    """

    mode: str = MODE_DP
    upper: float = 1.0
    range_limit: int = 1024
    fan_out: int = 16
    epsilon: float = 1.0
    holdout: int = 1
    bias_scale: float = 60.0
    smoother: SmootherConfig | None = field(default_factory=SmootherConfig)
    seed: int = 0
    threshold_method: str | None = None
    fixed_theta: float | None = None
    consistency: bool = True
    smoothed_levels: int | None = None
    eps_threshold: float | None = None
    eps_perturber: float | None = None
    split_budget: bool = False
    quantile: float = 99.575
    input_path: str | None = None
    output_path: str | None = None

    def __post_init__(self):
        if self.mode not in (MODE_DP, MODE_LDP, MODE_PAK):
            raise InvalidParameterError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_PAK:
            # The baseline pipeline: inflated-quantile threshold over a
            # binary hierarchy, no consistency, no smoothing.
            if self.threshold_method is None:
                self.threshold_method = METHOD_SS_INFLATED
            self.fan_out = 2 if self.fan_out == 16 else self.fan_out
            self.consistency = False
            self.smoother = None
        if self.threshold_method is None:
            self.threshold_method = METHOD_EM

    # -- budget ------------------------------------------------------------

    def stage_epsilons(self) -> tuple[float, float]:
        """(threshold-stage, perturbation-stage) budgets."""
        if self.split_budget:
            return self.epsilon / 2.0, self.epsilon / 2.0
        eps_t = self.eps_threshold if self.eps_threshold is not None else self.epsilon
        eps_p = self.eps_perturber if self.eps_perturber is not None else self.epsilon
        return eps_t, eps_p

    def stream_config(self, epsilon: float | None = None) -> StreamConfig:
        return StreamConfig(
            upper=self.upper,
            range_limit=self.range_limit,
            fan_out=self.fan_out,
            epsilon=self.epsilon if epsilon is None else epsilon,
            holdout=max(1, self.holdout),
            bias_scale=self.bias_scale,
        )

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        record = {
            "mode": self.mode,
            "B": self.upper,
            "r": self.range_limit,
            "b": self.fan_out,
            "epsilon": self.epsilon,
            "m": self.holdout,
            "c": self.bias_scale,
            "smoother": None
            if self.smoother is None
            else {
                "kind": self.smoother.kind,
                "w": self.smoother.window,
                "alpha": self.smoother.alpha,
            },
            "seed": self.seed,
            "input_path": self.input_path,
            "output_path": self.output_path,
        }
        for key, default in (
            ("threshold_method", None),
            ("fixed_theta", None),
            ("consistency", True),
            ("smoothed_levels", None),
            ("eps_threshold", None),
            ("eps_perturber", None),
            ("split_budget", False),
            ("quantile", 99.575),
        ):
            value = getattr(self, key)
            if value != default:
                record[key] = value
        return record

    @classmethod
    def from_json_dict(cls, record: dict) -> "PipelineConfig":
        smoother = record.get("smoother", {"kind": "recent"})
        if smoother is not None:
            smoother = SmootherConfig(
                kind=smoother.get("kind", "recent"),
                window=int(smoother.get("w", 4)),
                alpha=float(smoother.get("alpha", 0.5)),
            )
        kwargs = dict(
            mode=record.get("mode", MODE_DP),
            upper=float(record["B"]),
            range_limit=int(record["r"]),
            fan_out=int(record.get("b", 16)),
            epsilon=float(record["epsilon"]),
            holdout=int(record.get("m", 1)),
            bias_scale=float(record.get("c", 60.0)),
            smoother=smoother,
            seed=int(record.get("seed", 0)),
            input_path=record.get("input_path"),
            output_path=record.get("output_path"),
        )
        for key in (
            "threshold_method",
            "fixed_theta",
            "consistency",
            "smoothed_levels",
            "eps_threshold",
            "eps_perturber",
            "split_budget",
            "quantile",
        ):
            if key in record:
                kwargs[key] = record[key]
        return cls(**kwargs)


@dataclass
class BudgetEntry:
    """One ledger line: a stage's budget and how it composes."""

    stage: str
    epsilon: float
    composition: str  # "parallel" or "sequential"
    indices: str
    detail: dict = field(default_factory=dict)


def validate_ledger(entries: list[BudgetEntry], epsilon: float) -> None:
    """Assert the composition rules from the ledger alone.

    Parallel stages each stay within the total budget; the sequential level
    split inside the perturbation stage sums back to its stage budget.
    """
    for entry in entries:
        if entry.composition == "parallel" and entry.epsilon > epsilon * (1 + 1e-12):
            raise InvalidParameterError(
                f"stage {entry.stage} exceeds the total budget"
            )
        if entry.composition == "sequential":
            parts = entry.detail.get("per_level", [])
            if parts and not math.isclose(sum(parts), entry.epsilon, rel_tol=1e-9):
                raise InvalidParameterError(
                    f"stage {entry.stage}: level budgets do not sum to the stage budget"
                )


@dataclass
class RunResult:
    """A finished pipeline run: published stream plus diagnostics.

    ``published`` aligns 1:1 with the input readings; holdout indices hold
    NaN and publish as empty CSV fields so consumers can align indices.
    """

    config: PipelineConfig
    published: np.ndarray
    decision: ThresholdDecision
    ledger: list[BudgetEntry]
    plan: HierarchyPlan | None = None
    smoothed_levels: int | None = None
    timings: dict = field(default_factory=dict)

    @property
    def holdout_size(self) -> int:
        return int(np.isnan(self.published).sum())

    def write_output(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "value"])
            for index, value in enumerate(self.published, start=1):
                writer.writerow([index, "" if math.isnan(value) else repr(float(value))])

    def manifest(self, path=None) -> str:
        record = {
            "mode": self.config.mode,
            "theta": self.decision.theta,
            "threshold_method": self.decision.method,
            "smoothed_levels": self.smoothed_levels,
            "ledger": [asdict(entry) for entry in self.ledger],
            "timings": self.timings,
            "readings": int(self.published.shape[0]),
            "published": int(self.published.shape[0]) - self.holdout_size,
        }
        text = json.dumps(record, indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _validate_readings(values: np.ndarray, upper: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    bad = np.flatnonzero((values < 0) | (values > upper) | ~np.isfinite(values))
    if bad.size:
        raise DataError(
            f"reading at index {int(bad[0]) + 1} is {values[bad[0]]!r}, "
            f"outside [0, {upper}]"
        )
    return values


def _select_threshold(
    holdout: np.ndarray, config: PipelineConfig, rng: RandomSource
) -> ThresholdDecision:
    eps_t, eps_p = config.stage_epsilons()
    method = config.threshold_method
    if method == METHOD_FIXED:
        if config.fixed_theta is None:
            raise InvalidParameterError("fixed threshold method needs fixed_theta")
        return ThresholdDecision(
            theta=float(config.fixed_theta),
            method=METHOD_FIXED,
            epsilon=0.0,
            m=int(holdout.shape[0]),
        )
    stream_cfg = config.stream_config(epsilon=eps_t)
    if method == METHOD_EM:
        return em_threshold(
            holdout, stream_cfg, rng, eps_select=eps_t, eps_noise=eps_p
        )
    if method == METHOD_SS_INFLATED:
        return pak_threshold(
            holdout, PakParams(quantile=config.quantile), stream_cfg, rng
        )
    if method == METHOD_SS_PLAIN:
        m = holdout.shape[0]
        return sp_threshold(
            holdout, config.quantile, eps_t, 1.0 / (m * m), config.upper, rng
        )
    raise InvalidParameterError(f"unknown threshold method {method!r}")


def run_dp_pipeline(values: np.ndarray, config: PipelineConfig) -> RunResult:
    """Central-DP release of a whole stream (vectorized batch path)."""
    t0 = time.perf_counter()
    values = _validate_readings(values, config.upper)
    n = values.shape[0]
    root = RandomSource(config.seed)
    eps_t, eps_p = config.stage_epsilons()

    m = min(config.holdout, n)
    holdout, rest = values[:m], values[m:]
    if holdout.shape[0] == 0 and config.threshold_method != METHOD_FIXED:
        raise InvalidParameterError("empty stream: no holdout to select a threshold")

    decision = _select_threshold(holdout, config, root.substream(_STREAM_THRESHOLD))
    theta = decision.theta
    if theta >= config.upper:
        logger.warning(
            "threshold %.6g >= upper bound %.6g: truncation is a no-op",
            theta,
            config.upper,
        )
    t1 = time.perf_counter()

    ledger = [
        BudgetEntry(
            stage="threshold",
            epsilon=eps_t if config.threshold_method != METHOD_FIXED else 0.0,
            composition="parallel",
            indices=f"1..{m}",
            detail={"method": decision.method},
        )
    ]

    published = np.full(n, np.nan)
    plan = None
    s = None
    if rest.shape[0] > 0:
        if not theta > 0:
            raise InvalidParameterError(
                f"selected threshold {theta} is not positive; cannot perturb"
            )
        if config.smoothed_levels is not None:
            s = config.smoothed_levels
        elif config.smoother is not None:
            s = optimize_s(theta, eps_p, config.range_limit, config.fan_out)
        else:
            s = 0
        plan = plan_hierarchy(config.stream_config(epsilon=eps_p), s)
        truncated = np.minimum(rest, theta)
        batch = perturb_batch(
            truncated, plan, theta, root.substream(_STREAM_NOISE),
            consistency=config.consistency,
        )
        smoother_cfg = config.smoother or SmootherConfig(kind="recent")
        published[m:] = smooth_batch(
            batch.aggregates,
            batch.completed_before,
            smoother_cfg,
            plan.group_size,
            theta,
        )
        ledger.append(
            BudgetEntry(
                stage="perturber",
                epsilon=eps_p,
                composition="parallel",
                indices=f"{m + 1}..{n}",
                detail={
                    "levels": plan.active_levels,
                    "per_level": [plan.eps_layer] * plan.active_levels,
                    "noise_scale": plan.noise_scale(theta),
                    "level_composition": "sequential",
                },
            )
        )
        ledger.append(
            BudgetEntry(
                stage="perturber-levels",
                epsilon=eps_p,
                composition="sequential",
                indices=f"{m + 1}..{n}",
                detail={"per_level": [plan.eps_layer] * plan.active_levels},
            )
        )
    validate_ledger(ledger, max(eps_t, eps_p))
    t2 = time.perf_counter()
    return RunResult(
        config=config,
        published=published,
        decision=decision,
        ledger=ledger,
        plan=plan,
        smoothed_levels=s,
        timings={"threshold_s": t1 - t0, "stream_s": t2 - t1},
    )


def run_ldp_pipeline(values: np.ndarray, config: PipelineConfig) -> RunResult:
    """Local-DP release: square-wave threshold phase, hybrid-mechanism stream."""
    t0 = time.perf_counter()
    values = _validate_readings(values, config.upper)
    n = values.shape[0]
    if config.holdout < 1 or n == 0:
        raise InvalidParameterError("threshold phase requires at least one report")
    root = RandomSource(config.seed)
    eps_t, eps_p = config.stage_epsilons()

    m = min(config.holdout, n)
    holdout, rest = values[:m], values[m:]

    sw = SwParams.from_epsilon(eps_t)
    reports = sw_perturb(
        holdout / config.upper, sw, root.substream(_STREAM_REPORTS_HOLDOUT)
    )
    estimate = sw_estimate(np.atleast_1d(reports), sw, upper=config.upper)
    pruned = prune_density(estimate)
    decision = ldp_threshold(pruned, eps_p, config.range_limit)
    theta = decision.theta
    t1 = time.perf_counter()

    published = np.full(n, np.nan)
    if rest.shape[0] > 0:
        truncated = np.minimum(rest, theta)
        unit = to_unit_interval(truncated, theta)
        stream_reports = hm_perturb(
            unit, eps_p, root.substream(_STREAM_REPORTS_STREAM)
        )
        published[m:] = from_unit_interval(stream_reports, theta)

    ledger = [
        BudgetEntry(
            stage="threshold-reports",
            epsilon=eps_t,
            composition="parallel",
            indices=f"1..{m}",
            detail={"mechanism": "square-wave", "per_user": eps_t},
        ),
        BudgetEntry(
            stage="stream-reports",
            epsilon=eps_p,
            composition="parallel",
            indices=f"{m + 1}..{n}",
            detail={"mechanism": "hybrid", "per_user": eps_p},
        ),
    ]
    validate_ledger(ledger, max(eps_t, eps_p))
    t2 = time.perf_counter()
    return RunResult(
        config=config,
        published=published,
        decision=decision,
        ledger=ledger,
        timings={"threshold_s": t1 - t0, "stream_s": t2 - t1},
    )


def run_pipeline(values: np.ndarray, config: PipelineConfig) -> RunResult:
    """Dispatch on the configured mode."""
    if config.mode == MODE_LDP:
        return run_ldp_pipeline(values, config)
    return run_dp_pipeline(values, config)


def answer_range_query(
    published: np.ndarray, i: int, j: int, range_limit: int | None = None
):
    """Sum of published estimates over the 1-based inclusive range [i, j].

    Holdout indices (NaN placeholders) contribute zero; the returned tuple's
    second element counts them so callers can flag partial answers.
    """
    published = np.asarray(published, dtype=np.float64)
    n = published.shape[0]
    if not 1 <= i <= j or j > n:
        raise QueryError(f"invalid range [{i}, {j}] for a stream of {n} readings")
    if range_limit is not None and j - i + 1 > range_limit:
        raise QueryError(
            f"range length {j - i + 1} exceeds the configured limit {range_limit}"
        )
    window = published[i - 1 : j]
    missing = int(np.isnan(window).sum())
    return float(np.nansum(window)), missing
