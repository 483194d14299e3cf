"""Run orchestration: conversations, questionnaire probes, analysis.

A run is resumable at unit granularity. Each finished utterance and each
questionnaire administration is appended to the run store as soon as it
exists, and a rerun only issues the units :func:`resume_plan` reports as
missing.
"""
from __future__ import annotations

import json
import logging
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .config import ExperimentConfig
from .gateway import ChatMessage, ChatRequest, Gateway
from .protocol import ConversationLog, Theme, build_snapshot, load_themes, run_conversation
from .questionnaire import (
    AnswerError,
    QuestionnaireSpec,
    RawResponse,
    administration_plan,
    assemble_probe_prompt,
    derive_seed,
    load_questionnaire_dir,
    parse_answers,
    score_response,
)
from .stats import FactorAnalysis, InsufficientData, analyze_factor, stars
from .store import (
    ProbeUnit,
    RunStore,
    SessionInfo,
    load_run,
    participant_id,
    resume_plan,
)

log = logging.getLogger(__name__)

MAX_REASKS = 2
REASK_PROMPT = (
    "Your previous reply could not be read ({problem}). Reply again with one line per statement, "
    'each in the format "<statement index>: <score>", and nothing else.'
)


class RunError(Exception):
    pass


class ConfigMismatch(RunError):
    pass


@dataclass
class RunSummary:
    run_path: Path
    utterances: int = 0
    responses: int = 0
    missing_responses: int = 0
    samples: int = 0
    regenerated_samples: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def session_infos(config: ExperimentConfig) -> list[SessionInfo]:
    infos = []
    for model_id in config.model_ids:
        for i in range(1, config.sessions_per_model + 1):
            seed = derive_seed(config.master_seed, "session", model_id, i) % (2**31)
            infos.append(SessionInfo(f"{model_id}#s{i:02d}", model_id, seed))
    return infos


def _config_snapshot(config: ExperimentConfig) -> dict:
    return config.to_dict()


def open_or_create(config: ExperimentConfig, run_path: Union[str, Path], specs: dict) -> RunStore:
    run_path = Path(run_path)
    if (run_path / "manifest.json").exists():
        store = RunStore.open(run_path)
        stored = store.manifest.config
        snapshot = _comparable(_config_snapshot(config))
        if _comparable(stored) != snapshot:
            raise ConfigMismatch(
                f"run {run_path} was created with a different configuration; "
                "resume it without overriding settings or choose a new --run directory"
            )
        return store
    return RunStore.create(
        run_path,
        _config_snapshot(config),
        session_infos(config),
        sorted(specs),
        config.repetitions,
    )


def _comparable(snapshot: dict) -> dict:
    data = json.loads(json.dumps(snapshot))
    data.pop("run_dir", None)
    return data


class Experiment:
    def __init__(
        self,
        config: ExperimentConfig,
        store: RunStore,
        gateway: Gateway,
        themes: Sequence[Theme],
        specs: dict[str, QuestionnaireSpec],
    ):
        self.config = config
        self.store = store
        self.gateway = gateway
        self.themes = list(themes)
        self.specs = specs
        self.summary = RunSummary(store.path)
        self._count_lock = threading.Lock()

    # -- persistence helpers --------------------------------------------------

    def _count(self, **deltas) -> None:
        with self._count_lock:
            for name, value in deltas.items():
                setattr(self.summary, name, getattr(self.summary, name) + value)

    def _on_utterance(self, log_: ConversationLog, utt) -> None:
        self.store.append(
            "logs",
            {
                "session_id": log_.session_id,
                "model_id": log_.model_id,
                "theme_index": utt.theme_index,
                "agent": utt.agent,
                "text": utt.text,
                "turn_order": utt.turn_order,
            },
        )
        self._count(utterances=1)

    def _samples_for(self, spec: QuestionnaireSpec, response: RawResponse, model_id: str) -> list[dict]:
        return [
            {
                "model_id": model_id,
                "participant_id": s.participant_id,
                "stage": s.stage,
                "repetition": s.repetition,
                "questionnaire_id": s.questionnaire_id,
                "factor_id": s.factor_id,
                "value": s.value,
            }
            for s in score_response(spec, response)
        ]

    # -- units ------------------------------------------------------------------

    def administer(self, unit: ProbeUnit, session_id: str, snapshot) -> None:
        spec = self.specs[unit.questionnaire_id]
        plan = administration_plan(spec, unit.participant_id, unit.stage, unit.repetition, self.config.master_seed)
        messages = assemble_probe_prompt(spec, snapshot, plan)
        response, raw, problem = None, "", ""
        attempts = 0
        for attempts in range(1, MAX_REASKS + 2):
            request = ChatRequest(unit.model_id, tuple(messages), self.config.probe_temperature, plan.seed)
            raw = self.gateway.complete(request)
            try:
                response = parse_answers(spec, raw, plan)
                break
            except AnswerError as exc:
                problem = str(exc)
                log.info("%s %s stage %d rep %d: %s", unit.participant_id, spec.id, unit.stage, unit.repetition, exc)
                messages = list(messages)
                if raw and raw.strip():
                    messages.append(ChatMessage("assistant", raw))
                messages.append(ChatMessage("user", REASK_PROMPT.format(problem=problem)))
        record = {
            "model_id": unit.model_id,
            "session_id": session_id,
            "participant_id": unit.participant_id,
            "stage": unit.stage,
            "questionnaire_id": spec.id,
            "repetition": unit.repetition,
            "status": "ok" if response is not None else "missing",
            "answers": dict(response.answers) if response is not None else {},
            "attempts": attempts,
            "seed": plan.seed,
            "item_order": list(plan.item_permutation),
            "raw_text": raw,
        }
        if response is None:
            record["error"] = problem
        # the response record is the commit point; samples can be rebuilt from it
        self.store.append("responses", record)
        if response is None:
            self._count(responses=1, missing_responses=1)
            return
        samples = self._samples_for(spec, response, unit.model_id)
        self.store.append_many("samples", samples)
        self._count(responses=1, samples=len(samples))

    def run_session(self, info: SessionInfo, existing: list[dict], probes: list[ProbeUnit]) -> None:
        resume = ConversationLog.from_records(existing, info.seed) if existing else None
        conv = run_conversation(
            info.model_id,
            self.themes,
            info.seed,
            self.gateway,
            self.config.conversation_temperature,
            session_id=info.session_id,
            resume=resume,
            on_utterance=self._on_utterance,
        )
        snapshots = {}
        for unit in probes:
            agent = unit.participant_id.rsplit("/", 1)[1]
            key = (unit.stage, agent)
            if key not in snapshots:
                snapshots[key] = build_snapshot(conv, unit.stage, agent, self.themes)
            self.administer(unit, info.session_id, snapshots[key])

    def regenerate_missing_samples(self, loaded) -> None:
        have = defaultdict(set)
        for r in loaded.streams["samples"]:
            have[(r["participant_id"], r["stage"], r["questionnaire_id"], r["repetition"])].add(r["factor_id"])
        for r in loaded.streams["responses"]:
            key = (r["participant_id"], r["stage"], r["questionnaire_id"], r["repetition"])
            if r["status"] != "ok" or r["questionnaire_id"] not in self.specs:
                continue
            spec = self.specs[r["questionnaire_id"]]
            # a torn write can leave only some of an administration's factors
            if have[key] >= {f.factor_id for f in spec.factors}:
                continue
            plan = administration_plan(spec, r["participant_id"], r["stage"], r["repetition"], self.config.master_seed)
            samples = self._samples_for(spec, RawResponse(plan, dict(r["answers"])), r["model_id"])
            samples = [s for s in samples if s["factor_id"] not in have[key]]
            self.store.append_many("samples", samples)
            self._count(regenerated_samples=len(samples))

    def run(self) -> RunSummary:
        loaded = load_run(self.store.path)
        for bad in loaded.corrupt:
            log.warning("%s", bad)
        self.regenerate_missing_samples(loaded)
        plan = resume_plan(loaded.manifest)
        logs_by_session = defaultdict(list)
        for r in loaded.streams["logs"]:
            logs_by_session[r["session_id"]].append(r)
        probes_by_session = defaultdict(list)
        for unit in plan:
            if isinstance(unit, ProbeUnit):
                probes_by_session[unit.participant_id.rsplit("/", 1)[0]].append(unit)
        pending_sessions = sorted(
            {getattr(u, "session_id", None) for u in plan if not isinstance(u, ProbeUnit)} | set(probes_by_session)
        )
        sessions = loaded.manifest.sessions
        workers = max(1, self.gateway.config.max_in_flight)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(self.run_session, sessions[sid], logs_by_session.get(sid, []), probes_by_session[sid]): sid
                for sid in pending_sessions
            }
            for fut in as_completed(futures):
                exc = fut.exception()
                if exc is not None:
                    self.summary.failures.append(f"{futures[fut]}: {exc}")
        return self.summary


def run_experiment(
    config: ExperimentConfig,
    run_path: Union[str, Path, None] = None,
    gateway: Optional[Gateway] = None,
) -> RunSummary:
    themes = load_themes(config.themes_path)
    specs = load_questionnaire_dir(config.questionnaire_dir)
    store = open_or_create(config, run_path or config.run_dir, specs)
    gateway = gateway or Gateway(config.backend)
    return Experiment(config, store, gateway, themes, specs).run()


# -- analysis -------------------------------------------------------------------

PAIR_KEYS = ("12_24", "24_36", "12_36")


def analysis_record(model_id: str, fa: FactorAnalysis) -> dict:
    record = {
        "model_id": model_id,
        "questionnaire_id": fa.questionnaire_id,
        "factor_id": fa.factor_id,
        "family": fa.omnibus.family,
        "statistic": fa.omnibus.statistic,
        "effect": fa.omnibus.effect,
        "df": list(fa.omnibus.df),
        "p_value": fa.omnibus.p_value,
        "stars": stars(fa.omnibus.p_value),
        "normality_W": fa.normality.W if fa.normality else None,
        "normality_p": fa.normality.p_value if fa.normality else None,
        "n_subjects": fa.n_subjects,
        "stage_means": list(fa.stage_means),
        "trend": fa.trend,
        "alpha": fa.alpha,
        "note": fa.note,
    }
    for key, pair in zip(PAIR_KEYS, fa.pairwise):
        record[f"delta_{key}"] = pair.delta
        record[f"p_raw_{key}"] = pair.p_raw
        record[f"p_adj_{key}"] = pair.p_adjusted
        record[f"stars_{key}"] = stars(pair.p_adjusted)
    return record


@dataclass
class AnalysisOutcome:
    records: list[dict]
    skipped: list[str]


def analyze_samples(samples: Sequence[dict], alpha: float = 0.05) -> AnalysisOutcome:
    from .questionnaire import FactorSample

    groups = defaultdict(list)
    for r in samples:
        groups[(r["model_id"], r["questionnaire_id"], r["factor_id"])].append(
            FactorSample(r["participant_id"], r["stage"], r["repetition"], r["questionnaire_id"], r["factor_id"],
                         float(r["value"]))
        )
    records, skipped = [], []
    for (model_id, qid, fid) in sorted(groups):
        try:
            fa = analyze_factor(groups[(model_id, qid, fid)], alpha)
        except InsufficientData as exc:
            skipped.append(f"{model_id} {qid} {fid}: {exc}")
            continue
        records.append(analysis_record(model_id, fa))
    return AnalysisOutcome(records, skipped)


def analyze_run(run_path: Union[str, Path], alpha: Optional[float] = None) -> AnalysisOutcome:
    store = RunStore.open(run_path)
    loaded = load_run(run_path)
    if alpha is None:
        alpha = float(loaded.manifest.config.get("alpha", 0.05))
    outcome = analyze_samples(loaded.streams["samples"], alpha)
    store.replace_stream("analyses", outcome.records)
    return outcome
