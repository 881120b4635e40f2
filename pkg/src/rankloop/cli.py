"""Command-line entry point for the whole workflow.

Subcommands map onto the pipeline operations: pretrain, bootstrap-ranker,
run-stage, run-all, serve, simulate-votes, enhance, study-aggregate. A JSON
config file supplies settings; repeated --set section.key=value flags win
over the file. Exit codes: 0 success, 2 configuration, 3 pipeline state,
4 data/file format, 5 numerical failure.

Desk-scale defaults run in minutes on a CPU. Benchmark-scale values from the
original recipe (select_k=300, stages=5, ranker 5k iters at lr 1e-5,
enhancer 10k iters at lr 1e-5, bootstrap 60k iters at lr 1e-4 halved every
20k) are valid but slow; set them via config or --set.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import exceptions as errors
from .config import RunConfig, load_config

EXIT_CONFIG = 2
EXIT_STATE = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

_ERROR_EXIT_CODES = (
    (errors.ConfigError, EXIT_CONFIG),
    ((errors.PendingVotesError, errors.StageStateError), EXIT_STATE),
    ((errors.NumericError, errors.ConvergenceError), EXIT_NUMERIC),
    ((errors.RankLoopError, FileNotFoundError, OSError), EXIT_DATA),
)


def _config_from_args(args) -> RunConfig:
    return load_config(args.config, overrides=args.set or [])


def _print_metrics(metrics: dict):
    parts = [f"stage {metrics.get('stage', '?')}"]
    for key in ("pending_votes", "loss_total", "loss_con", "loss_r",
                "ranker_accuracy", "mean_utility_outputs"):
        if key in metrics and metrics[key] is not None:
            parts.append(f"{key}={metrics[key]:.5g}" if isinstance(metrics[key], float)
                         else f"{key}={metrics[key]}")
    print("  ".join(parts), flush=True)


def cmd_pretrain(args) -> int:
    from .loop import run_phase1, workdir_lock
    cfg = _config_from_args(args)
    cfg.require_paths("x_dir", "y_dir", "workdir")
    with workdir_lock(cfg.workdir):
        metrics = run_phase1(cfg)
    _print_metrics(metrics)
    return 0


def cmd_bootstrap_ranker(args) -> int:
    # phase 1 owns the bootstrap chain; this alias exists so the bootstrap
    # ranker can be (re)built without running a full stage afterwards
    return cmd_pretrain(args)


def cmd_run_stage(args) -> int:
    from .loop import run_stage, workdir_lock
    cfg = _config_from_args(args)
    cfg.require_paths("x_dir", "y_dir", "workdir")
    with workdir_lock(cfg.workdir):
        metrics = run_stage(cfg, args.stage)
    _print_metrics(metrics)
    return 0


def cmd_run_all(args) -> int:
    from .loop import run_all
    cfg = _config_from_args(args)
    run_all(cfg, progress=_print_metrics)
    return 0


def cmd_serve(args) -> int:
    from .service import create_server
    cfg = _config_from_args(args)
    workdir = args.workdir or cfg.workdir
    if not workdir:
        raise errors.ConfigError(["serve needs --workdir or a config with workdir"])
    port = args.port if args.port is not None else cfg.service.port
    server = create_server(workdir, port=port, ui_dir=args.ui_dir,
                           votes_per_pair=cfg.annotators.count, seed=cfg.seed,
                           host=args.host)
    print(f"annotation service on http://{args.host}:{server.server_address[1]} "
          f"(workdir {workdir})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_simulate_votes(args) -> int:
    from .loop import StagePaths, cast_simulated_votes
    cfg = _config_from_args(args)
    workdir = args.workdir or cfg.workdir
    if not workdir:
        raise errors.ConfigError(["simulate-votes needs --workdir or a config with workdir"])
    cfg.workdir = str(workdir)
    stage = args.stage
    if stage is None:
        stages_dir = Path(workdir) / "stages"
        candidates = [int(p.name) for p in stages_dir.iterdir() if p.name.isdigit()] \
            if stages_dir.is_dir() else []
        voting = [n for n in sorted(candidates)
                  if StagePaths(workdir, n).read_status() == "voting"]
        if not voting:
            raise errors.StageStateError("no stage is currently collecting votes")
        stage = voting[0]
    finalized = cast_simulated_votes(cfg, Path(workdir), stage)
    print(f"stage {stage}: finalized {finalized} new labels")
    return 0


def cmd_enhance(args) -> int:
    from .checkpoint import read_checkpoint
    from .enhancer import CurveEnhancer
    from .imgio import load_image, save_image
    enhancer = CurveEnhancer.from_checkpoint(read_checkpoint(args.ckpt))
    img = load_image(args.input)
    save_image(enhancer.enhance(img), args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_study_aggregate(args) -> int:
    from .study import build_matrix, export_report, read_votes_csv, thurstone_scores
    votes = read_votes_csv(args.votes)
    matrix = build_matrix(votes)
    scores = thurstone_scores(matrix)
    export_report(scores, matrix, args.out_dir)
    for method, q in scores.ranking():
        print(f"{method}\t{q:+.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankloop",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (dotted path, JSON value); repeatable")

    p = sub.add_parser("pretrain", help="phase 1: pretrain f0, train the "
                                        "bootstrap ranker g0, fine-tune to f1")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("bootstrap-ranker",
                       help="build the naturalness-labeled dataset and train g0 "
                            "(runs phase 1 steps still missing)")
    common(p)
    p.set_defaults(func=cmd_bootstrap_ranker)

    p = sub.add_parser("run-stage", help="run one iterative stage")
    common(p)
    p.add_argument("--stage", type=int, required=True, help="stage number (>= 1)")
    p.set_defaults(func=cmd_run_stage)

    p = sub.add_parser("run-all", help="phase 1 plus all configured stages")
    common(p)
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("serve", help="start the HTTP annotation service")
    common(p)
    p.add_argument("--workdir", help="work directory (defaults to config)")
    p.add_argument("--port", type=int, help="port (default from config: 8787)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="directory of static UI assets served at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate-votes",
                       help="cast simulated-annotator votes for the current voting stage")
    common(p)
    p.add_argument("--workdir", help="work directory (defaults to config)")
    p.add_argument("--stage", type=int, help="stage number (default: current voting stage)")
    p.set_defaults(func=cmd_simulate_votes)

    p = sub.add_parser("enhance", help="enhance one PNG with a checkpoint")
    p.add_argument("--ckpt", required=True, help="enhancer checkpoint path")
    p.add_argument("--in", dest="input", required=True, help="input PNG")
    p.add_argument("--out", dest="output", required=True, help="output PNG")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("study-aggregate",
                       help="aggregate 2AFC study votes into global scores")
    p.add_argument("--votes", required=True,
                   help="CSV of method_i,method_j,winner rows")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.set_defaults(func=cmd_study_aggregate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # map the taxonomy onto exit codes
        for types, code in _ERROR_EXIT_CODES:
            if isinstance(exc, types):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
