"""``mixbench`` command-line interface.

Exit codes: 0 success, 1 configuration error, 2 more than 10% of entries
failed. The output root defaults to ``$MIXBENCH_OUT`` or ``./mixbench_out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .mixture import RECIPES
from .pipeline import (
    ConfigError,
    RunConfig,
    grid_report_stage,
    load_or_build_manifest,
    run_pipeline,
    score_signals_stage,
    score_transcripts_stage,
    separate_stage,
    simulate_stage,
)
from .report import GridReport, emit_heatmap

ENV_OUT = "MIXBENCH_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2

logger = logging.getLogger("mixbench")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _default_out():
    return Path(os.environ.get(ENV_OUT, "mixbench_out"))


def _hyp(value):
    label, sep, path = value.partition("=")
    if not sep or not label or not path:
        raise argparse.ArgumentTypeError(f"expected <label>=<path>, got {value!r}")
    return label, path


def _hyp_label(value):
    label = value.partition("=")[0]
    if not label:
        raise argparse.ArgumentTypeError(f"empty label in {value!r}")
    return label, None


def _metrics(value):
    return tuple(m.strip() for m in value.split(",") if m.strip())


def _add_common(p, manifest=True, jobs=False, resume=False):
    p.add_argument("--out", type=Path, default=None, help=f"output root (default ${ENV_OUT} or ./mixbench_out)")
    if manifest:
        p.add_argument("--manifest", type=Path, default=None, help="manifest JSON (default <out>/manifest.json)")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
    if resume:
        p.add_argument("--resume", action="store_true", help="skip entries whose outputs exist")


def _add_recipe(p):
    p.add_argument("--recipe", choices=sorted(RECIPES), default="sms_wsj_large_1ch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=None, help="entries drawn from the recipe ranges")
    p.add_argument("--per-cell", type=int, default=None, help="entries per T60/SNR grid cell")
    p.add_argument("--pool-size", type=int, default=200, help="synthetic source utterances")
    p.add_argument("--sources", type=Path, default=None, help="directory of WAV sources with .txt transcripts")


def build_parser():
    parser = _Parser(prog="mixbench", description="Reverberant speech separation benchmark harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("manifest", help="build a seeded manifest from a recipe")
    _add_common(p, manifest=False)
    _add_recipe(p)

    p = sub.add_parser("simulate", help="render manifest entries to WAV files")
    _add_common(p, jobs=True, resume=True)

    p = sub.add_parser("separate", help="run a built-in separator on simulated audio")
    _add_common(p, jobs=True, resume=True)
    p.add_argument("--separator", required=True,
                   help="passthrough | oracle_direct | ideal_mask:<irm|ibm|complex_mapping>")

    p = sub.add_parser("score-signals", help="SI-SDR / SDR / eSTOI with PIT")
    _add_common(p, jobs=True)
    p.add_argument("--separator", required=True, help="built-in separator name or external:<dir>")
    p.add_argument("--metrics", type=_metrics, default=("si_sdr", "sdr", "estoi"))

    p = sub.add_parser("score-transcripts", help="cpWER of labeled hypothesis sets")
    _add_common(p)
    p.add_argument("--hyp", type=_hyp, action="append", required=True, metavar="LABEL=PATH")
    p.add_argument("--collar", type=float, default=None, help="write reference boundaries widened by this many seconds")

    p = sub.add_parser("grid-report", help="aggregate scores into T60 x SNR cells")
    _add_common(p)
    p.add_argument("--separator", default=None)
    p.add_argument("--hyp", type=_hyp_label, action="append", default=[], metavar="LABEL[=PATH]",
                   help="labels already scored by score-transcripts")

    p = sub.add_parser("heatmap", help="SVG heatmap of relative WER improvement")
    _add_common(p, manifest=False)
    p.add_argument("--report", type=Path, default=None, help="grid_report.json (default <out>/report/transcripts)")
    p.add_argument("--baseline", required=True)
    p.add_argument("--candidate", required=True)

    p = sub.add_parser("run", help="end-to-end: manifest, synthesis, separation, scoring, reports")
    _add_common(p, jobs=True, resume=True)
    _add_recipe(p)
    p.add_argument("--separator", action="append", default=None, help="repeatable; default oracle_direct")
    p.add_argument("--metrics", type=_metrics, default=("si_sdr", "sdr", "estoi"))
    p.add_argument("--hyp", type=_hyp, action="append", default=[], metavar="LABEL=PATH")
    p.add_argument("--collar", type=float, default=None)
    p.add_argument("--write-audio", action="store_true", help="also write per-entry WAV files")
    return parser


def _manifest(args, out):
    path = args.manifest or out / "manifest.json"
    return load_or_build_manifest(path)


def _report_failures(result):
    if result.failures:
        logger.warning("%d of %d entries failed", len(result.failures), result.total)
    return EXIT_FAILURES if result.exceeded() else EXIT_OK


def _dispatch(args):
    out = args.out or _default_out()
    cmd = args.command
    if cmd == "manifest":
        m = load_or_build_manifest(None, args.recipe, args.seed, args.count, args.per_cell,
                                   args.pool_size, args.sources)
        path = m.save(out / "manifest.json")
        print(f"{len(m.entries)} entries -> {path}")
        return EXIT_OK
    if cmd == "simulate":
        return _report_failures(simulate_stage(_manifest(args, out), out, args.jobs, args.resume))
    if cmd == "separate":
        try:
            result = separate_stage(_manifest(args, out), out, args.separator, args.jobs, args.resume)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return _report_failures(result)
    if cmd == "score-signals":
        result, records = score_signals_stage(_manifest(args, out), out, args.separator, args.metrics, args.jobs)
        print(f"{len(records)} records")
        return _report_failures(result)
    if cmd == "score-transcripts":
        wer = score_transcripts_stage(_manifest(args, out), out, dict(args.hyp), args.collar)
        print(f"scored labels: {', '.join(wer)}")
        return EXIT_OK
    if cmd == "grid-report":
        labels = [label for label, _ in args.hyp]
        report = grid_report_stage(_manifest(args, out), out, args.separator, labels)
        print(report.to_csv(), end="")
        return EXIT_OK
    if cmd == "heatmap":
        path = args.report or out / "report" / "transcripts" / "grid_report.json"
        if not Path(path).exists():
            raise ConfigError(f"grid report {path} does not exist")
        try:
            emit_heatmap(GridReport.load(path), (args.baseline, args.candidate), out / "report" / "heatmap.svg")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        print(out / "report" / "heatmap.svg")
        return EXIT_OK
    if cmd == "run":
        config = RunConfig(
            out=out,
            manifest=args.manifest,
            recipe=args.recipe,
            seed=args.seed,
            count=args.count,
            per_cell=args.per_cell,
            pool_size=args.pool_size,
            sources_dir=args.sources,
            separators=tuple(args.separator or ("oracle_direct",)),
            metrics=args.metrics,
            hyps=dict(args.hyp),
            collar=args.collar,
            jobs=args.jobs,
            resume=args.resume,
            write_audio=args.write_audio,
        )
        result = run_pipeline(config)
        for name, report in result.reports.items():
            print(f"[{name}]")
            print(report.to_csv(), end="")
        if result.failures:
            logger.warning("%d of %d entries failed", len(result.failures), len(result.manifest.entries))
        return result.exit_code
    raise ConfigError(f"unknown command {cmd!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"mixbench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
