"""Benchmark and validation surface: data ingestion, synthetic streams,
range-query workloads, MSE evaluation, and the multi-seed experiment runner."""

from .dataio import DatasetProfile, TABLE_FIXTURES, load_stream
from .evaluate import MseReport, evaluate, range_sums
from .queries import QueryWorkload, gen_queries
from .runner import ExperimentCell, MethodSpec, run_experiment
from .synth import SynthSpec, gen_synthetic

__all__ = [
    "DatasetProfile",
    "TABLE_FIXTURES",
    "load_stream",
    "MseReport",
    "evaluate",
    "range_sums",
    "QueryWorkload",
    "gen_queries",
    "ExperimentCell",
    "MethodSpec",
    "run_experiment",
    "SynthSpec",
    "gen_synthetic",
]
