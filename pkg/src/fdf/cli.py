"""``fdf`` command-line entry point.

Exit codes: 0 success, 2 input error, 3 evaluation error, 4 report error.
Errors are written to standard error as a single JSON object.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import EvaluationError, FdfError, InputError, ReportError
from .evaluation import ScoreReport
from .pipeline import Run

EXIT_OK, EXIT_INPUT, EXIT_EVAL, EXIT_REPORT = 0, 2, 3, 4


def _fail(code: int, exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "path"):
        value = getattr(exc, attr, None)
        if value is not None:
            doc[attr] = str(value) if attr == "path" else value
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise InputError("--seed must be an unsigned 64-bit integer")
        cfg.models.seed = args.seed
    return cfg


def cmd_ingest(args) -> int:
    try:
        run = Run(_load(args), args.out, command="ingest")
        run.panels(reuse=False)
        run.write_manifest()
    except (InputError, FileNotFoundError) as exc:
        return _fail(EXIT_INPUT, exc)
    except (FdfError, ValueError) as exc:
        return _fail(EXIT_INPUT, exc)
    for h in run.cfg.task.horizons:
        print(run.out / f"panel_h{h}.csv")
    return EXIT_OK


def _modelling(args, command: str) -> int:
    try:
        cfg = _load(args)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    run = Run(cfg, args.out, command=command)
    try:
        run.panels()
    except (InputError, FileNotFoundError) as exc:
        return _fail(EXIT_INPUT, exc)
    try:
        if command == "train":
            run.train()
        else:
            run.evaluate()
        run.write_manifest()
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    except (EvaluationError, FdfError, ValueError) as exc:
        return _fail(EXIT_EVAL, exc)
    if command == "evaluate":
        print(run.out / "report.json")
    return EXIT_OK


def cmd_train(args) -> int:
    return _modelling(args, "train")


def cmd_evaluate(args) -> int:
    return _modelling(args, "evaluate")


def cmd_report(args) -> int:
    from .plotting import render_svgs, render_table

    path = Path(args.report) if args.report else Path(args.out) / "report.json"
    try:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ReportError(f"cannot read report {path}: {exc.strerror}") from None
        report = ScoreReport.from_json(text)
        if args.format == "table":
            sys.stdout.write(render_table(report))
        else:
            for p in render_svgs(report, Path(args.out) / "figures"):
                print(p)
    except ReportError as exc:
        return _fail(EXIT_REPORT, exc)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import write_dataset

    try:
        if not 0 <= args.seed < 2 ** 64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        write_dataset(args.out, args.seed, args.regions, args.periods, args.scenario)
    except ValueError as exc:
        return _fail(EXIT_INPUT, exc)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .synth import SCENARIOS

    parser = argparse.ArgumentParser(prog="fdf", description="Displacement-flow forecasting toolkit.")
    parser.add_argument("--version", action="version", version=f"fdf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="pipeline config JSON")
        p.add_argument("--out", default="fdf_out", help="output directory (default: fdf_out)")
        p.add_argument("--seed", type=int, default=None, help="override models.seed")
        return p

    common(sub.add_parser("ingest", help="validate inputs and write engineered panels")).set_defaults(fn=cmd_ingest)
    common(sub.add_parser("train", help="select and fit models on the training partition")).set_defaults(
        fn=cmd_train)
    common(sub.add_parser("evaluate", help="select, fit and score; write report JSON and CSV")).set_defaults(
        fn=cmd_evaluate)

    rep = common(sub.add_parser("report", help="render a saved report"), config_required=False)
    rep.add_argument("--report", default=None, help="report JSON (default: <out>/report.json)")
    rep.add_argument("--format", choices=("table", "svg"), default="table")
    rep.set_defaults(fn=cmd_report)

    syn = sub.add_parser("synth", help="generate a synthetic dataset with a ready-to-run config")
    syn.add_argument("--seed", type=int, default=42)
    syn.add_argument("--regions", type=int, default=6)
    syn.add_argument("--periods", type=int, default=48)
    syn.add_argument("--scenario", choices=SCENARIOS, default="seasonal")
    syn.add_argument("--out", default="synthetic")
    syn.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which already matches the input-error code
        return int(exc.code or 0)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
