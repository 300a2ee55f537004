"""Command-line entry point: ``fusionbench <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, bundled_config, load_config
from .dataset import SynthConfig, synth_generate
from .errors import ConfigError, DataError, FusionBenchError, NumericError
from .fusion import FusionWeights

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("fusionbench")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("-c", "--config", required=config_required, help="experiment YAML file ('bundled:<name>' for packaged configs)")
    p.add_argument("--run-dir", help="run directory (default: output_dir from the config, else $FUSIONBENCH_OUTPUT_ROOT/<name>)")
    p.add_argument("--force", action="store_true", help="redo the stage even if it completed before")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusionbench", description="Per-sensor action classifiers and decision-level fusion.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("-c", "--config", help="take synth settings from an experiment config")
    p.add_argument("--run-dir")
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", help="output directory (standalone mode, without a config)")
    p.add_argument("--objects", type=int, default=20)
    p.add_argument("--tools", type=int, default=4)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)

    for name, text in (
        ("prepare", "scan the dataset, write the manifest and split"),
        ("train", "train and select per-sensor models, emit probability files"),
        ("evaluate", "score single sensors and fused predictions on the test split"),
        ("reproduce", "run every stage from one config"),
    ):
        _add_common(sub.add_parser(name, help=text))

    p = sub.add_parser("fuse", help="fuse per-sensor probability files")
    _add_common(p, config_required=False)
    p.add_argument("--probs-dir", help="directory of <Sensor>.<validation|test>.jsonl files (default: the run's train/probs)")
    p.add_argument("--out", help="output directory (standalone mode)")
    p.add_argument("--weights", help="fixed comma-separated coefficients, one per sensor, e.g. 0.40,0.05,0.15,0.40")
    p.add_argument("--methods", help="comma-separated subset of average,weighted,fixed")
    p.add_argument("--sensors", default="Color,Depth,ICubLeft,ICubRight")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--candidates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="write metrics tables, confusion grids and heatmaps")
    p.add_argument("-c", "--config")
    p.add_argument("--run-dir")
    p.add_argument("--force", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    spec = args.config
    path = bundled_config(spec.split(":", 1)[1]) if spec.startswith("bundled:") else Path(spec)
    return load_config(path)


def _run_dir(args, cfg: ExperimentConfig | None) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    if cfg is None:
        raise _UsageError("either --config or --run-dir is required")
    return cfg.run_dir()


def _cmd_synth(args) -> None:
    if args.config:
        cfg = _config(args)
        run_dir = _run_dir(args, cfg)
        pipeline.write_resolved_config(cfg, run_dir)
        pipeline.run_synth(cfg, run_dir, args.force)
        return
    if not args.out:
        raise _UsageError("synth needs --out or --config")
    m = synth_generate(
        SynthConfig(args.out, args.objects, args.tools, args.reps, args.noise, args.seed, args.width, args.height)
    )
    print(f"wrote {len(m)} trials to {args.out}")


def _cmd_fuse(args) -> None:
    methods = args.methods.split(",") if args.methods else None
    if args.config:
        cfg = _config(args)
        if args.weights:
            cfg.fusion.fixed_weights = list(FusionWeights.parse(args.weights, cfg.sensors).values)
            if "fixed" not in cfg.fusion.methods:
                cfg.fusion.methods.append("fixed")
        if methods:
            cfg.fusion.methods = methods
        run_dir = _run_dir(args, cfg)
        pipeline.run_fuse(cfg, run_dir, args.force, Path(args.probs_dir) if args.probs_dir else None)
        return
    if not (args.probs_dir and args.out):
        raise _UsageError("fuse without --config needs --probs-dir and --out")
    sensors = args.sensors.split(",")
    fixed = list(FusionWeights.parse(args.weights, sensors).values) if args.weights else None
    if methods is None:
        methods = ["fixed"] if fixed else ["average", "weighted"]
    out = Path(args.out)
    weights = pipeline.fuse_directory(Path(args.probs_dir), out, sensors, methods, args.repeats, args.candidates, args.seed, fixed)
    rows = pipeline.evaluate_directory(None, out, sensors, methods)
    from .evaluation import format_table

    for m, w in weights.items():
        print(f"{m}: " + ", ".join(f"{s}={v:.4f}" for s, v in w.as_dict().items()))
    print(format_table([(n, r) for n, r, _ in rows]))


def _cmd_stage(args) -> None:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg)
    pipeline.write_resolved_config(cfg, run_dir)
    if args.command == "reproduce":
        print(pipeline.reproduce(cfg, run_dir, args.force))
        print(f"run directory: {run_dir}")
        return
    pipeline.STAGE_FUNCS[args.command](cfg, run_dir, args.force)


def _cmd_report(args) -> None:
    cfg = _config(args) if args.config else None
    print(pipeline.run_report(cfg, _run_dir(args, cfg), args.force))


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"synth": _cmd_synth, "fuse": _cmd_fuse, "report": _cmd_report}
    try:
        handlers.get(args.command, _cmd_stage)(args)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FusionBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def run_command(argv: list[str]) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
