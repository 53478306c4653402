"""Multi-seed experiment matrix: methods x epsilons x repetitions.

Every cell derives an independent seed from the master seed; workload
generation uses its own seed stream so query sets never depend on mechanism
randomness. Per-cell failures are recorded and the run continues. Results
aggregate to (method, epsilon, mse_mean, mse_std) CSV rows ready for
plotting; reruns with identical config and seed are byte-identical.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidParameterError
from ..pipeline import PipelineConfig, run_pipeline
from ..rng import _splitmix64
from ..smoothing import SmootherConfig
from .evaluate import evaluate
from .queries import MODE_UNIFORM_LENGTH, gen_queries

#: Named method presets for the stream-release comparisons.
METHOD_PRESETS = {
    "dp": {},
    "ldp": {"mode": "ldp"},
    "pak": {"mode": "pak"},
    "tree-b2": {"fan_out": 2, "consistency": False, "smoother": None},
    "tree-b16": {"fan_out": 16, "consistency": False, "smoother": None},
    "tree-b16-consistent": {"fan_out": 16, "consistency": True, "smoother": None},
    "tree-b16-smoothed": {
        "fan_out": 16,
        "consistency": True,
        "smoother": SmootherConfig(kind="recent"),
    },
}


@dataclass(frozen=True)
class MethodSpec:
    """One column of the experiment matrix.

    ``overrides`` patch the base pipeline config; ``zero_output`` short-cuts
    to the always-publish-zero utility floor.
    """

    name: str
    overrides: dict = field(default_factory=dict)
    zero_output: bool = False

    @classmethod
    def parse(cls, spec) -> "MethodSpec":
        if isinstance(spec, MethodSpec):
            return spec
        if isinstance(spec, str):
            if spec == "zero":
                return cls(name="zero", zero_output=True)
            if spec in METHOD_PRESETS:
                return cls(name=spec, overrides=dict(METHOD_PRESETS[spec]))
            raise InvalidParameterError(f"unknown method preset {spec!r}")
        if isinstance(spec, dict):
            name = spec.get("name")
            if not name:
                raise InvalidParameterError("method spec dict needs a 'name'")
            overrides = dict(spec)
            overrides.pop("name")
            if overrides.pop("zero_output", False):
                return cls(name=name, zero_output=True)
            base = dict(METHOD_PRESETS.get(name, {}))
            base.update(overrides)
            return cls(name=name, overrides=base)
        raise InvalidParameterError(f"cannot parse method spec {spec!r}")


@dataclass
class ExperimentCell:
    """Outcome of one (method, epsilon, repetition) run."""

    method: str
    epsilon: float
    repetition: int
    seed: int
    mse: float = math.nan
    partial_queries: int = 0
    error: str | None = None


def _cell_seed(master_seed: int, cell_index: int, repetition: int) -> int:
    return _splitmix64(
        _splitmix64(master_seed) ^ _splitmix64(1 + cell_index * 1_000_003 + repetition)
    )


def _apply_overrides(base: PipelineConfig, overrides: dict) -> PipelineConfig:
    patch = dict(overrides)
    if "smoother" in patch and isinstance(patch["smoother"], dict):
        patch["smoother"] = SmootherConfig(**patch["smoother"])
    return replace(base, **patch)


def _run_cell(true_stream, base, method, epsilon, repetition, seed, workload):
    cell = ExperimentCell(
        method=method.name, epsilon=epsilon, repetition=repetition, seed=seed
    )
    try:
        if method.zero_output:
            published = np.zeros_like(true_stream)
        else:
            config = _apply_overrides(base, method.overrides)
            config = replace(config, epsilon=epsilon, seed=seed)
            published = run_pipeline(true_stream, config).published
        report = evaluate(true_stream, published, workload)
        cell.mse = report.mse
        cell.partial_queries = report.partial_queries
    except Exception as exc:  # per-cell failures must not kill the matrix
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def run_experiment(
    true_stream: np.ndarray,
    base_config: PipelineConfig,
    methods,
    epsilons,
    repetitions: int = 100,
    query_count: int = 200,
    query_mode: str = MODE_UNIFORM_LENGTH,
    master_seed: int = 0,
    query_seed: int | None = None,
    output_path=None,
    cells_path=None,
    workers: int = 1,
):
    """Run the full matrix and aggregate per-cell MSEs.

    Queries cover the published region (indices beyond the holdout) against
    the supplied true stream; each repetition redraws the workload from the
    query seed stream and the mechanism randomness from the cell seed.

    Returns:
        (cells, summary_rows) where summary_rows are
        (method, epsilon, mse_mean, mse_std) dicts in matrix order.
    """
    true_stream = np.asarray(true_stream, dtype=np.float64)
    methods = [MethodSpec.parse(spec) for spec in methods]
    epsilons = [float(eps) for eps in epsilons]
    if query_seed is None:
        query_seed = master_seed
    n = true_stream.shape[0]

    workloads = []
    for repetition in range(repetitions):
        offset = 0
        # Workloads cover the post-holdout region when a holdout exists and
        # the zero baseline is judged on the same indices.
        if base_config.holdout and base_config.holdout < n:
            offset = base_config.holdout
        workloads.append(
            gen_queries(
                n - offset,
                base_config.range_limit,
                count=query_count,
                seed=_splitmix64(query_seed ^ _splitmix64(repetition + 1)),
                mode=query_mode,
                offset=offset,
            )
        )

    jobs = []
    for cell_index, (method, epsilon) in enumerate(
        (m, e) for m in methods for e in epsilons
    ):
        for repetition in range(repetitions):
            seed = _cell_seed(master_seed, cell_index, repetition)
            jobs.append(
                (true_stream, base_config, method, epsilon, repetition, seed,
                 workloads[repetition])
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda args: _run_cell(*args), jobs))
    else:
        cells = [_run_cell(*job) for job in jobs]

    summary = []
    idx = 0
    for method in methods:
        for epsilon in epsilons:
            batch = cells[idx : idx + repetitions]
            idx += repetitions
            mses = np.array([c.mse for c in batch if c.error is None])
            summary.append(
                {
                    "method": method.name,
                    "epsilon": epsilon,
                    "mse_mean": float(mses.mean()) if mses.size else math.nan,
                    "mse_std": float(np.std(mses, ddof=1)) if mses.size > 1 else 0.0,
                    "failures": sum(1 for c in batch if c.error is not None),
                }
            )

    if output_path is not None:
        with open(output_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "epsilon", "mse_mean", "mse_std"])
            for row in summary:
                writer.writerow(
                    [
                        row["method"],
                        repr(row["epsilon"]),
                        repr(row["mse_mean"]),
                        repr(row["mse_std"]),
                    ]
                )
    if cells_path is not None:
        with open(cells_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["method", "epsilon", "repetition", "seed", "mse", "error"]
            )
            for cell in cells:
                writer.writerow(
                    [
                        cell.method,
                        repr(cell.epsilon),
                        cell.repetition,
                        cell.seed,
                        repr(cell.mse),
                        cell.error or "",
                    ]
                )
    return cells, summary
