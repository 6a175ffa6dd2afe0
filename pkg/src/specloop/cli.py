"""Command-line entry point: ``annotate``, ``bench run``, ``bench report`` and ``bench synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from specloop import bench
from specloop.config import AppConfig, ConfigError
from specloop.prompting import template_hashes
from specloop.source import AnnotationCandidate, GapKind, SourceError, splice
from specloop.strategy import StrategyConfig, StrategyError, run_strategy
from specloop.task import SpecTask

EXIT_OK, EXIT_UNSOLVED, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("specloop")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override the config file)")
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--oracle", choices=["replay", "http", "stochastic"])
    g.add_argument("--fixture", help="replay fixture (JSON Lines)")
    g.add_argument("--record", help="record live replies into this fixture")
    g.add_argument("--profiles", help="stochastic oracle profiles (JSON)")
    g.add_argument("--model")
    g.add_argument("--verifier", choices=["mock", "subprocess"])
    g.add_argument("--rules", help="mock verifier rules (JSON)")
    g.add_argument("--command", help="prover command template with {file}")
    g.add_argument("--patterns", help="pattern table (INI) for the subprocess verifier")
    g.add_argument("--verifier-timeout", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--parallelism", type=int)
    g.add_argument("--templates", help="prompt template directory")


def _config(args) -> AppConfig:
    absolute = lambda v: str(Path(v).resolve()) if v else None  # noqa: E731
    return AppConfig.load(
        args.config,
        oracle=args.oracle,
        fixture=absolute(args.fixture),
        record=absolute(args.record),
        profiles=absolute(args.profiles),
        model=args.model,
        verifier=args.verifier,
        rules=absolute(args.rules),
        command=args.command,
        patterns=absolute(args.patterns),
        verifier_timeout=args.verifier_timeout,
        seed=args.seed,
        parallelism=args.parallelism,
        templates=absolute(args.templates),
    )


def _load_task(args) -> SpecTask:
    path = Path(args.task)
    if path.suffix == ".json":
        entries = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(entries, dict):
            entries = [entries]
        tasks = bench.tasks_from_entries(entries, path.parent, str(path))
        if args.task_id:
            tasks = [t for t in tasks if t.id == args.task_id]
        if len(tasks) != 1:
            raise bench.ManifestError(f"{path}: expected exactly one task, found {len(tasks)}")
        return tasks[0]
    kind = GapKind(args.kind) if args.kind else (GapKind.CONTRACT if args.gap_hint else GapKind.INVARIANT)
    task = SpecTask(path.stem, path.resolve(), kind, args.gap_hint, args.target)
    task.document  # fail early on a missing gap
    return task


def cmd_annotate(args) -> int:
    try:
        cfg = _config(args)
        strategy = StrategyConfig.parse(args.strategy)
        task = _load_task(args)
        oracle, verifier = cfg.build_oracle(), cfg.build_verifier()
    except (ConfigError, StrategyError, SourceError, bench.ManifestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outcome = run_strategy(task, strategy, oracle, verifier,
                           seed=bench.derive_seed(cfg.seed, task.id, 0), templates=cfg.template_dir)
    for t in outcome.traces:
        print(f"  candidate {t.candidate_index} (round {t.round_index + 1}, step {t.step_in_round + 1}): "
              f"{t.verdict.summary()}")
    if not outcome.solved:
        if outcome.cause:
            print(f"aborted: {outcome.cause}")
        last = outcome.traces[-1].verdict.summary() if outcome.traces else "no candidate produced"
        print(f"unsolved after {len(outcome.traces)} of {strategy.candidate_budget} candidates; "
              f"final verdict: {last}")
        return EXIT_UNSOLVED

    doc = task.document
    annotated = splice(doc, AnnotationCandidate(outcome.solution, doc.kind))
    source = Path(task.source_path)
    out = source.with_name(source.name[: -len(source.suffix)] + ".annotated" + source.suffix) \
        if source.suffix else source.with_name(source.name + ".annotated.java")
    out.write_text(annotated, encoding="utf-8")
    print(f"solved at candidate {outcome.solving_candidate_index} "
          f"(token ratio {outcome.token_ratio:.2f}):")
    print(outcome.solution)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_bench_run(args) -> int:
    try:
        cfg = _config(args)
        tasks = bench.load_manifest(args.manifest)
        strategies = [StrategyConfig.parse(s) for s in args.strategies.split(",") if s.strip()]
        if not strategies:
            raise StrategyError("no strategies given")
        if args.runs < 1:
            raise StrategyError("--runs must be at least 1")
        oracle, verifier = cfg.build_oracle(), cfg.build_verifier()
        hashes = template_hashes(cfg.template_dir)
    except (ConfigError, StrategyError, bench.ManifestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    total = len(tasks) * len(strategies) * args.runs
    count = 0

    def progress(rec: bench.RunRecord) -> None:
        nonlocal count
        count += 1
        o = rec.outcome
        status = f"solved@{o.solving_candidate_index}" if o.solved else "unsolved"
        if o.cause:
            status += f" ({o.cause})"
        print(f"[{count}/{total}] {rec.task_id} {rec.strategy} run {rec.run_index}: {status}", flush=True)

    try:
        bench.run_matrix(
            tasks, strategies, args.runs, cfg.seed, oracle, verifier,
            log_path=args.out, resume=args.resume, parallelism=cfg.parallelism,
            templates=cfg.template_dir,
            header={"config_hash": cfg.hash(), "prompt_hashes": hashes},
            on_record=progress,
        )
    except bench.LogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if count == 0:
        print("nothing to do: every cell is already in the log")
    return EXIT_OK


CURVE_AXES = {"steps": bench.STEPS, "token-ratio": bench.TOKEN_RATIO}


def cmd_bench_report(args) -> int:
    try:
        _, records = bench.load_log(args.log)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not records:
        print(f"error: {args.log} holds no run records", file=sys.stderr)
        return EXIT_UNSOLVED
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_kinds = args.curve or ([] if args.table else ["steps", "token-ratio"])
    try:
        for name in curve_kinds:
            axis = CURVE_AXES[name]
            curves = bench.curves_for_log(records, axis, args.max_ratio)
            csv_path = out_dir / f"curves_{axis}.csv"
            bench.write_curves_csv(curves, csv_path)
            print(f"wrote {csv_path}")
            if args.figures:
                from specloop.plots import render_curves

                fig = render_curves(curves, out_dir / f"success_vs_{axis}.png")
                print(f"wrote {fig}")
        for table in args.table or []:
            rows = bench.report_mixed_vs_sampling(records, args.sampling_arm, args.mixed_arm)
            csv_path = out_dir / f"{table}_vs_sampling.csv"
            bench.write_table_csv(rows, csv_path)
            for r in rows:
                extra = f" (only this arm: {', '.join(r.exclusive_ids)})" if r.exclusive_ids else ""
                print(f"{r.category:9s} {r.arm:12s} {r.solved}/{r.total}{extra}")
            print(f"wrote {csv_path}")
    except (bench.NoData, bench.ArmMissing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSOLVED
    except StrategyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_bench_synth(args) -> int:
    from specloop.synthetic import make_synthetic_suite

    paths = make_synthetic_suite(args.out, args.tasks, args.seed, args.stuck_bias)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specloop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command_name", required=True)

    p = sub.add_parser("annotate", help="fill the annotation gap of one task")
    p.add_argument("task", help="task JSON file, or a .java source")
    p.add_argument("--strategy", default="feedback:10", help="feedback:K | sampling:N | mixed:SxF")
    p.add_argument("--task-id", help="pick one task from a multi-task JSON file")
    p.add_argument("--kind", choices=[k.value for k in GapKind], help="gap kind for .java input")
    p.add_argument("--gap-hint", help="callee lacking a contract (.java input)")
    p.add_argument("--target", help="calling method whose contract must verify (.java input)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_annotate)

    b = sub.add_parser("bench", help="benchmark matrix and reports")
    bsub = b.add_subparsers(dest="bench_command", required=True)

    r = bsub.add_parser("run", help="run the task x strategy x run matrix")
    r.add_argument("--manifest", required=True)
    r.add_argument("--strategies", default="sampling:10,feedback:10")
    r.add_argument("--runs", type=int, default=5)
    r.add_argument("--out", required=True, help="run log (JSON Lines)")
    r.add_argument("--resume", action="store_true", help="only run cells missing from --out")
    _add_config_flags(r)
    r.set_defaults(func=cmd_bench_run)

    rep = bsub.add_parser("report", help="curves, figures and the mixed-vs-sampling table")
    rep.add_argument("--log", required=True)
    rep.add_argument("--curve", action="append", choices=sorted(CURVE_AXES))
    rep.add_argument("--max-ratio", type=float, default=bench.DEFAULT_MAX_RATIO)
    rep.add_argument("--table", action="append", choices=["mixed"])
    rep.add_argument("--sampling-arm", default="sampling:50")
    rep.add_argument("--mixed-arm", default="mixed:5x10")
    rep.add_argument("--out-dir", default=".")
    rep.add_argument("--no-figures", dest="figures", action="store_false")
    rep.set_defaults(func=cmd_bench_report)

    s = bsub.add_parser("synth", help="write a synthetic suite for offline runs")
    s.add_argument("--out", required=True)
    s.add_argument("--tasks", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stuck-bias", type=float, default=0.6)
    s.set_defaults(func=cmd_bench_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
