"""Command-line interface.

Subcommands:
    synth      generate a deterministic synthetic stream file
    threshold  select a truncation threshold from a stream's holdout
    run        execute a full release pipeline (dp | ldp | pak)
    eval       score a published stream against the true one (range-query MSE)
    bench      run an experiment matrix (methods x epsilons x repetitions)

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import StreamConfig
from .errors import DataError, InvalidParameterError, QueryError, StreamDPError
from .harness.dataio import load_published, load_stream
from .harness.evaluate import evaluate
from .harness.queries import MODE_UNIFORM_LENGTH, MODE_UNIFORM_PAIR, gen_queries
from .harness.runner import run_experiment
from .harness.synth import SynthSpec, gen_synthetic
from .pipeline import PipelineConfig, run_pipeline
from .rng import RandomSource
from .threshold import (
    METHOD_EM,
    METHOD_SS_INFLATED,
    METHOD_SS_PLAIN,
    PakParams,
    em_threshold,
    pak_threshold,
    sp_threshold,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _add_stream_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--B", type=float, dest="upper", help="public value upper bound")
    parser.add_argument("--r", type=int, dest="range_limit", help="maximal query range")
    parser.add_argument("--b", type=int, dest="fan_out", help="hierarchy fan-out")
    parser.add_argument("--epsilon", type=float, help="privacy budget per stage")
    parser.add_argument("--m", type=int, dest="holdout", help="holdout size")
    parser.add_argument("--c", type=float, dest="bias_scale", help="bias-scaling constant")


def _cmd_synth(args) -> int:
    spec = SynthSpec.parse(args.kind, args.params.split(",") if args.params else [])
    values = gen_synthetic(spec, args.n, args.seed)
    with open(args.output, "w") as fh:
        for value in values:
            fh.write(repr(float(value)) + "\n")
    print(f"wrote {values.shape[0]} readings to {args.output}")
    return EXIT_OK


def _cmd_threshold(args) -> int:
    values, _ = load_stream(args.input, column=args.column)
    holdout = values[: args.holdout] if args.holdout else values
    config = StreamConfig(
        upper=args.upper,
        range_limit=args.range_limit,
        fan_out=args.fan_out if args.fan_out else 16,
        epsilon=args.epsilon,
        holdout=max(1, holdout.shape[0]),
        bias_scale=args.bias_scale if args.bias_scale else 60.0,
    )
    rng = RandomSource(args.seed, 1)
    if args.method == METHOD_EM:
        decision = em_threshold(holdout, config, rng)
    elif args.method == METHOD_SS_INFLATED:
        decision = pak_threshold(holdout, PakParams(quantile=args.quantile), config, rng)
    elif args.method == METHOD_SS_PLAIN:
        m = holdout.shape[0]
        decision = sp_threshold(
            holdout, args.quantile, args.epsilon, 1.0 / (m * m), args.upper, rng
        )
    else:
        raise InvalidParameterError(f"unknown threshold method {args.method!r}")
    text = decision.to_json(path=args.output, trace_path=args.trace)
    print(text)
    return EXIT_OK


def _load_config(args) -> PipelineConfig:
    record = {}
    if args.config:
        with open(args.config) as fh:
            record = json.load(fh)
    for key, attr in (
        ("mode", "mode"),
        ("B", "upper"),
        ("r", "range_limit"),
        ("b", "fan_out"),
        ("epsilon", "epsilon"),
        ("m", "holdout"),
        ("c", "bias_scale"),
        ("input_path", "input"),
        ("output_path", "output"),
        ("threshold_method", "method"),
        ("fixed_theta", "fixed_theta"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            record[key] = value
    record["seed"] = args.seed
    missing = [key for key in ("B", "r", "epsilon") if key not in record]
    if missing:
        raise InvalidParameterError(f"missing config keys: {', '.join(missing)}")
    return PipelineConfig.from_json_dict(record)


def _cmd_run(args) -> int:
    config = _load_config(args)
    if not config.input_path:
        raise InvalidParameterError("run needs an input stream (--input or input_path)")
    values, _ = load_stream(config.input_path, column=args.column)
    result = run_pipeline(values, config)
    if config.output_path:
        result.write_output(config.output_path)
    manifest_path = args.manifest or (
        config.output_path + ".manifest.json" if config.output_path else None
    )
    print(result.manifest(manifest_path))
    return EXIT_OK


def _cmd_eval(args) -> int:
    true_values, _ = load_stream(args.true, column=args.column)
    published = load_published(args.published)
    if args.skip_holdout:
        offset = int(np.isnan(published[: args.skip_holdout]).sum())
    else:
        offset = int(np.flatnonzero(~np.isnan(published))[0]) if np.isnan(
            published
        ).any() else 0
    workload = gen_queries(
        published.shape[0] - offset,
        args.range_limit,
        count=args.queries,
        seed=args.seed,
        mode=args.query_mode,
        offset=offset,
    )
    report = evaluate(true_values, published, workload)
    record = {
        "mse": report.mse,
        "queries": len(workload),
        "partial_queries": report.partial_queries,
    }
    text = json.dumps(record, indent=2)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_bench(args) -> int:
    with open(args.config) as fh:
        spec = json.load(fh)
    if "stream" in spec and "input_path" not in spec["stream"]:
        stream_spec = spec["stream"]
        synth = SynthSpec.parse(stream_spec["kind"], stream_spec.get("params", []))
        values = gen_synthetic(
            synth, int(stream_spec["n"]), int(stream_spec.get("seed", args.seed))
        )
    elif "stream" in spec:
        values, _ = load_stream(
            spec["stream"]["input_path"], column=spec["stream"].get("column")
        )
    else:
        raise InvalidParameterError("bench config needs a 'stream' section")
    if spec.get("truncate_at_percentile") is not None:
        theta = float(np.percentile(values, spec["truncate_at_percentile"]))
        values = np.minimum(values, theta)
        spec.setdefault("base", {})["fixed_theta"] = theta
        spec["base"].setdefault("threshold_method", "fixed")
        spec["base"].setdefault("m", 0)

    base_record = dict(spec.get("base", {}))
    base_record.setdefault("B", float(values.max()) if values.size else 1.0)
    base_record.setdefault("epsilon", 1.0)
    base_record.setdefault("r", 1024)
    base_record.setdefault("seed", args.seed)
    base = PipelineConfig.from_json_dict(base_record)

    cells, summary = run_experiment(
        values,
        base,
        spec.get("methods", ["dp"]),
        spec.get("epsilons", [base.epsilon]),
        repetitions=int(spec.get("repetitions", 100)),
        query_count=int(spec.get("queries", 200)),
        query_mode=spec.get("query_mode", MODE_UNIFORM_LENGTH),
        master_seed=args.seed,
        query_seed=spec.get("query_seed"),
        output_path=args.output,
        cells_path=args.cells,
        workers=args.workers,
    )
    failures = sum(1 for cell in cells if cell.error is not None)
    for row in summary:
        print(
            f"{row['method']:>22s}  eps={row['epsilon']:<8g} "
            f"mse_mean={row['mse_mean']:.6g}  mse_std={row['mse_std']:.6g}"
        )
    if failures:
        print(f"{failures} cell(s) failed; see --cells output", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamdp",
        description="Private continuous release of real-valued streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic stream")
    p_synth.add_argument("--kind", required=True,
                         choices=["constant", "uniform", "heavy_tail"])
    p_synth.add_argument("--params", default="",
                         help="comma-separated distribution parameters")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--output", "-o", required=True)
    p_synth.set_defaults(func=_cmd_synth)

    p_thresh = sub.add_parser("threshold", help="compute a truncation threshold")
    p_thresh.add_argument("--input", required=True)
    p_thresh.add_argument("--column", default=None)
    p_thresh.add_argument("--method", default=METHOD_EM,
                          choices=[METHOD_EM, METHOD_SS_INFLATED, METHOD_SS_PLAIN])
    p_thresh.add_argument("--quantile", type=float, default=99.575)
    p_thresh.add_argument("--seed", type=int, required=True)
    p_thresh.add_argument("--output", "-o", default=None)
    p_thresh.add_argument("--trace", default=None, help="per-candidate score CSV")
    _add_stream_config_flags(p_thresh)
    p_thresh.set_defaults(func=_cmd_threshold)

    p_run = sub.add_parser("run", help="run a release pipeline")
    p_run.add_argument("--config", default=None, help="JSON pipeline config")
    p_run.add_argument("--mode", choices=["dp", "ldp", "pak"], default=None)
    p_run.add_argument("--input", default=None)
    p_run.add_argument("--column", default=None)
    p_run.add_argument("--output", default=None)
    p_run.add_argument("--manifest", default=None)
    p_run.add_argument("--method", default=None, help="threshold method override")
    p_run.add_argument("--fixed-theta", type=float, dest="fixed_theta", default=None)
    p_run.add_argument("--seed", type=int, required=True)
    _add_stream_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="score a published stream")
    p_eval.add_argument("--true", required=True, help="true stream file")
    p_eval.add_argument("--column", default=None)
    p_eval.add_argument("--published", required=True, help="pipeline output CSV")
    p_eval.add_argument("--r", type=int, dest="range_limit", required=True)
    p_eval.add_argument("--queries", type=int, default=200)
    p_eval.add_argument("--query-mode", default=MODE_UNIFORM_LENGTH,
                        choices=[MODE_UNIFORM_LENGTH, MODE_UNIFORM_PAIR])
    p_eval.add_argument("--skip-holdout", type=int, default=0)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--output", "-o", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", help="run an experiment matrix")
    p_bench.add_argument("--config", required=True, help="JSON experiment config")
    p_bench.add_argument("--seed", type=int, required=True)
    p_bench.add_argument("--output", "-o", required=True, help="summary CSV")
    p_bench.add_argument("--cells", default=None, help="per-repetition CSV")
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError,) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidParameterError, QueryError, StreamDPError, OSError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
