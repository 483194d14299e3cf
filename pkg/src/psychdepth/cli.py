"""Command-line entry point: ``psychdepth {run,analyze,topics,report,validate}``.

Exit codes: 0 success, 1 domain error (bad data, failed run), 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, check_paths, load_config
from .experiment import RunError, analyze_run, run_experiment
from .gateway import GatewayError
from .protocol import ConversationLog, ProtocolError, load_themes, validate_log
from .questionnaire import QuestionnaireError, load_questionnaire_dir
from .report import (
    analysis_table_tsv,
    render_analysis_table,
    render_topic_report,
    render_trend_table,
    topic_report_tsv,
    trend_table_tsv,
)
from .stats import StatsError
from .store import StoreError, load_run
from .topics import EMBEDDERS, TopicError, extract_utterances, fit_topics, top_topics_per_model

DOMAIN_ERRORS = (
    ConfigError, RunError, GatewayError, ProtocolError, QuestionnaireError, StatsError, StoreError, TopicError,
)


def _add_config_flags(p: argparse.ArgumentParser, with_run: bool = True) -> None:
    p.add_argument("--config", help="experiment config (YAML)")
    if with_run:
        p.add_argument("--run", help="run directory (defaults to run_dir from the config)")
    p.add_argument("--models", help="comma-separated model ids")
    p.add_argument("--sessions", type=int, help="sessions per model")
    p.add_argument("--repetitions", type=int, help="questionnaire repetitions per stage")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--backend", choices=("mock", "remote"), help="backend kind")
    p.add_argument("--mock-script", help="mock backend script (YAML)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psychdepth",
        description="Track self-reported psychological traits of chat models across a long conversation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="run conversations and questionnaire probes (resumable)")
    _add_config_flags(p)

    p = sub.add_parser("analyze", help="run the statistical pipeline over a run's samples")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--alpha", type=float, help="significance level (default: the run's config)")

    p = sub.add_parser("topics", help="cluster generated answers into topics")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--k", type=int, help="number of topics (default scales with corpus size, max 200)")
    p.add_argument("--seed", type=int, default=0, help="clustering seed")
    p.add_argument("--top", type=int, default=10, help="topics listed per model")
    p.add_argument("--embedder", choices=EMBEDDERS, default="tfidf_fallback")
    p.add_argument("--embedding-model", default="", help="model id for remote embeddings")

    p = sub.add_parser("report", help="render the trend table and statistics table of an analyzed run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--models", help="comma-separated column order (default: all models in the run)")

    p = sub.add_parser("validate", help="check a config and its data files, and optionally a run")
    _add_config_flags(p)
    return parser


def _config_from_args(args, stored: Optional[dict] = None) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    elif stored is not None:
        config = ExperimentConfig.from_dict(stored)
    else:
        config = ExperimentConfig()
    models = [m.strip() for m in args.models.split(",") if m.strip()] if args.models else None
    return config.with_overrides(
        model_ids=tuple(models) if models else None,
        sessions_per_model=args.sessions,
        repetitions=args.repetitions,
        master_seed=args.seed,
        alpha=args.alpha,
        **{"backend.kind": args.backend, "backend.mock_script": args.mock_script},
    )


def _write_reports(run_path: Path, files: dict) -> None:
    out = run_path / "reports"
    out.mkdir(exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    stored = None
    if args.run and (Path(args.run) / "manifest.json").exists() and not args.config:
        stored = load_run(args.run).manifest.config
    config = _config_from_args(args, stored)
    problems = check_paths(config)
    if problems:
        raise ConfigError("; ".join(problems))
    run_path = Path(args.run or config.run_dir)
    summary = run_experiment(config, run_path)
    print(f"run {run_path}: {summary.utterances} new utterances, {summary.responses} new responses "
          f"({summary.missing_responses} unreadable), {summary.samples + summary.regenerated_samples} new samples")
    for failure in summary.failures:
        print(f"failed: {failure}", file=sys.stderr)
    if not summary.ok:
        print("the run is incomplete; rerun the same command to resume", file=sys.stderr)
        return 1
    return 0


def cmd_analyze(args) -> int:
    outcome = analyze_run(args.run, args.alpha)
    for line in outcome.skipped:
        print(f"skipped: {line}", file=sys.stderr)
    _write_reports(Path(args.run), {"analysis.tsv": analysis_table_tsv(outcome.records)})
    sys.stdout.write(render_analysis_table(outcome.records))
    return 0


def _factor_names(config: dict) -> dict:
    try:
        specs = load_questionnaire_dir(config.get("questionnaire_dir"))
    except (QuestionnaireError, OSError):
        return {}
    names = {}
    for qid in sorted(specs):
        for f in specs[qid].factors:
            names[(qid, f.factor_id)] = f.name
    return names


def cmd_report(args) -> int:
    loaded = load_run(args.run)
    records = loaded.streams["analyses"]
    if not records:
        raise RunError(f"run {args.run} has no analyses yet; run 'psychdepth analyze --run {args.run}' first")
    if args.models:
        models = [m.strip() for m in args.models.split(",") if m.strip()]
    else:
        models = list(loaded.manifest.config.get("model_ids") or sorted({r["model_id"] for r in records}))
    names = _factor_names(loaded.manifest.config)
    text = render_trend_table(records, models, names)
    _write_reports(
        Path(args.run),
        {
            "trends.txt": text,
            "trends.tsv": trend_table_tsv(records, models, names),
            "analysis.tsv": analysis_table_tsv(records),
        },
    )
    sys.stdout.write(text)
    return 0


def cmd_topics(args) -> int:
    loaded = load_run(args.run)
    by_session: dict = {}
    for r in loaded.streams["logs"]:
        by_session.setdefault(r["session_id"], []).append(r)
    logs = [ConversationLog.from_records(recs) for _, recs in sorted(by_session.items())]
    corpus = extract_utterances(logs)
    if not corpus.documents:
        raise TopicError(f"run {args.run} has no utterances")
    gateway = None
    if args.embedder == "remote_embedding":
        from .gateway import BackendConfig, Gateway

        gateway = Gateway(BackendConfig.from_dict(loaded.manifest.config.get("backend", {})))
    model = fit_topics(corpus, k=args.k, seed=args.seed, embedder=args.embedder, gateway=gateway,
                       embedding_model=args.embedding_model)
    ranks = top_topics_per_model(model, args.top)
    text = render_topic_report(ranks, model.excluded_per_model())
    _write_reports(Path(args.run), {"topics.txt": text, "topics.tsv": topic_report_tsv(ranks)})
    sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    config = _config_from_args(args)
    problems = check_paths(config)
    if not problems:
        themes = load_themes(config.themes_path)
        if len(themes) != 36:
            problems.append(f"expected 36 themes, found {len(themes)}")
        specs = load_questionnaire_dir(config.questionnaire_dir)
        if not specs:
            problems.append("no questionnaires found")
        if config.backend.kind == "mock" and config.backend.mock_script:
            from .mock import script_mock

            script_mock(config.backend.mock_script)
        print(f"config ok: {len(config.model_ids)} model(s), {config.sessions_per_model} sessions each, "
              f"{config.repetitions} repetitions, {len(themes)} themes, {len(specs)} questionnaires")
    run = getattr(args, "run", None)
    if run and (Path(run) / "manifest.json").exists():
        problems.extend(_validate_run(run))
    for p in problems:
        print(f"problem: {p}", file=sys.stderr)
    return 1 if problems else 0


def _validate_run(run: str) -> list[str]:
    loaded = load_run(run)
    problems = [str(c) for c in loaded.corrupt]
    by_session: dict = {}
    for r in loaded.streams["logs"]:
        by_session.setdefault(r["session_id"], []).append(r)
    for sid, info in sorted(loaded.manifest.sessions.items()):
        if info.status != "complete":
            problems.append(f"session {sid} is {info.status} ({info.themes_done} themes done)")
            continue
        report = validate_log(ConversationLog.from_records(by_session[sid]))
        problems.extend(f"session {sid}: {v}" for v in report.violations)
    print(f"run {run}: {len(loaded.manifest.sessions)} sessions, {len(loaded.streams['responses'])} responses, "
          f"{len(loaded.streams['samples'])} samples")
    return problems


COMMANDS = {
    "run": cmd_run,
    "analyze": cmd_analyze,
    "topics": cmd_topics,
    "report": cmd_report,
    "validate": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


execute_command = main


if __name__ == "__main__":
    sys.exit(main())
