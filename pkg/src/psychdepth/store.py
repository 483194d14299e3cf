"""On-disk run storage.

One directory per run::

    <run>/manifest.json     run id, config snapshot, sessions, questionnaires
    <run>/logs.jsonl        one utterance per line
    <run>/responses.jsonl   one questionnaire administration per line
    <run>/samples.jsonl     one factor score per line
    <run>/analyses.jsonl    one factor analysis per line

Every stream starts with a header line ``{"schema_version": ..., "stream": ...}``.
Records are appended as one ``write`` of a complete line, so a killed
writer leaves at most one torn line at the end of a file. Readers report
such a line as :class:`CorruptRecord` and keep everything before it;
writers cut it off before appending again.

Session progress in the manifest is a cache: :func:`load_run` rebuilds it
from the streams, which are the source of truth.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
STREAMS = ("logs", "responses", "samples", "analyses")
THEMES = 36
STAGES = (1, 2, 3)
AGENTS = ("A", "B")
SESSION_STATUS = ("pending", "partial", "complete")

_num = (int, float)
RECORD_FIELDS = {
    "logs": {
        "session_id": str, "model_id": str, "theme_index": int, "agent": str, "text": str, "turn_order": int,
    },
    "responses": {
        "model_id": str, "session_id": str, "participant_id": str, "stage": int, "questionnaire_id": str,
        "repetition": int, "status": str, "answers": dict, "attempts": int,
    },
    "samples": {
        "model_id": str, "participant_id": str, "stage": int, "repetition": int, "questionnaire_id": str,
        "factor_id": str, "value": _num,
    },
    "analyses": {
        "model_id": str, "questionnaire_id": str, "factor_id": str, "family": str, "trend": str,
    },
}


class StoreError(Exception):
    pass


class RunNotFound(StoreError):
    pass


class RunExists(StoreError):
    pass


class SchemaMismatch(StoreError):
    pass


class StorageFailure(StoreError):
    pass


class CorruptRecord(StoreError):
    def __init__(self, stream: str, offset: int, reason: str):
        self.stream = stream
        self.offset = offset
        self.reason = reason
        super().__init__(f"{stream}: corrupt record at byte {offset}: {reason}")


@dataclass
class SessionInfo:
    session_id: str
    model_id: str
    seed: int
    status: str = "pending"
    themes_done: int = 0


@dataclass(frozen=True)
class ConversationUnit:
    session_id: str
    theme_index: int


@dataclass(frozen=True)
class ProbeUnit:
    model_id: str
    participant_id: str
    stage: int
    questionnaire_id: str
    repetition: int

    @property
    def key(self) -> tuple:
        return (self.participant_id, self.stage, self.questionnaire_id, self.repetition)


@dataclass
class RunManifest:
    run_id: str
    config: dict
    sessions: dict[str, SessionInfo] = field(default_factory=dict)
    questionnaires: list[str] = field(default_factory=list)
    repetitions: int = 10
    schema_version: str = SCHEMA_VERSION
    # rebuilt from the streams on load, never persisted
    completed_probes: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "schema_version": self.schema_version,
            "config": self.config,
            "questionnaires": list(self.questionnaires),
            "repetitions": self.repetitions,
            "sessions": [asdict(s) for s in self.sessions.values()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        _check_version(data.get("schema_version"), "manifest")
        sessions = {s["session_id"]: SessionInfo(**s) for s in data.get("sessions", [])}
        return cls(
            run_id=data["run_id"],
            config=data.get("config", {}),
            sessions=sessions,
            questionnaires=list(data.get("questionnaires", [])),
            repetitions=int(data.get("repetitions", 10)),
            schema_version=data["schema_version"],
        )


def participant_id(session_id: str, agent: str) -> str:
    return f"{session_id}/{agent}"


def _check_version(version, where: str) -> None:
    if not isinstance(version, str) or not version.split(".")[0].isdigit():
        raise SchemaMismatch(f"{where}: missing or malformed schema_version {version!r}")
    if int(version.split(".")[0]) > int(SCHEMA_VERSION.split(".")[0]):
        raise SchemaMismatch(f"{where}: schema_version {version} is newer than supported {SCHEMA_VERSION}")


def validate_record(stream: str, record: dict) -> None:
    if stream not in RECORD_FIELDS:
        raise SchemaMismatch(f"unknown stream {stream!r}")
    if not isinstance(record, dict):
        raise SchemaMismatch(f"{stream} record must be a mapping")
    for name, kind in RECORD_FIELDS[stream].items():
        if name not in record:
            raise SchemaMismatch(f"{stream} record missing field {name!r}")
        value = record[name]
        if isinstance(value, bool) and kind is not bool or not isinstance(value, kind):
            raise SchemaMismatch(f"{stream} record field {name!r} has type {type(value).__name__}")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageFailure(f"cannot write {path}: {exc.strerror}") from None


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


@dataclass
class StreamContents:
    records: list[dict]
    corrupt: list[CorruptRecord]


def read_stream(path: Path, stream: str) -> StreamContents:
    records, corrupt = [], []
    if not path.exists():
        return StreamContents(records, corrupt)
    data = path.read_bytes()
    offset = 0
    header_seen = False
    while offset < len(data):
        end = data.find(b"\n", offset)
        if end < 0:
            corrupt.append(CorruptRecord(stream, offset, "truncated final record"))
            break
        line = data[offset:end]
        try:
            obj = json.loads(line.decode("utf-8"))
            if not isinstance(obj, dict):
                raise ValueError("not an object")
        except (UnicodeDecodeError, ValueError) as exc:
            corrupt.append(CorruptRecord(stream, offset, f"unreadable line ({exc.__class__.__name__})"))
            offset = end + 1
            continue
        if not header_seen:
            header_seen = True
            if obj.get("stream") != stream:
                raise SchemaMismatch(f"{path.name}: header names stream {obj.get('stream')!r}")
            _check_version(obj.get("schema_version"), path.name)
        else:
            records.append(obj)
        offset = end + 1
    return StreamContents(records, corrupt)


class RunStore:
    """Writer for one run directory. Appends are serialized by a lock."""

    def __init__(self, path: Union[str, Path], manifest: RunManifest):
        self.path = Path(path)
        self.manifest = manifest
        self._lock = threading.Lock()
        self._repaired: set[str] = set()
        self._session_counts: dict[str, set] = {}

    # -- creation / opening ---------------------------------------------------

    @classmethod
    def create(
        cls,
        path: Union[str, Path],
        config: dict,
        sessions: Iterable[SessionInfo],
        questionnaires: Iterable[str],
        repetitions: int,
    ) -> "RunStore":
        path = Path(path)
        if (path / "manifest.json").exists():
            raise RunExists(f"run {path} already exists")
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageFailure(f"cannot create {path}: {exc.strerror}") from None
        manifest = RunManifest(
            run_id=path.name,
            config=json.loads(_dumps(config)),
            sessions={s.session_id: s for s in sessions},
            questionnaires=list(questionnaires),
            repetitions=repetitions,
        )
        store = cls(path, manifest)
        store.write_manifest()
        return store

    @classmethod
    def open(cls, path: Union[str, Path]) -> "RunStore":
        loaded = load_run(path)
        store = cls(path, loaded.manifest)
        for r in loaded.streams["logs"]:
            store._session_counts.setdefault(r["session_id"], set()).add((r["theme_index"], r["agent"]))
        return store

    def write_manifest(self) -> None:
        _atomic_write(self.path / "manifest.json", json.dumps(self.manifest.to_dict(), indent=2, ensure_ascii=False))

    # -- appending --------------------------------------------------------------

    def _stream_path(self, stream: str) -> Path:
        return self.path / f"{stream}.jsonl"

    def _prepare(self, stream: str) -> Path:
        path = self._stream_path(stream)
        if stream in self._repaired:
            return path
        try:
            if not path.exists() or path.stat().st_size == 0:
                with open(path, "ab") as fh:
                    fh.write((_dumps({"schema_version": SCHEMA_VERSION, "stream": stream}) + "\n").encode("utf-8"))
            else:
                with open(path, "rb+") as fh:
                    data = fh.read()
                    if not data.endswith(b"\n"):
                        keep = data.rfind(b"\n") + 1
                        log.warning("%s: dropping torn record at byte %d", path.name, keep)
                        fh.truncate(keep)
        except OSError as exc:
            raise StorageFailure(f"cannot open {path}: {exc.strerror}") from None
        self._repaired.add(stream)
        return path

    def append(self, stream: str, record: dict) -> None:
        self.append_many(stream, [record])

    def append_many(self, stream: str, records: list[dict]) -> None:
        """Append records; each line is written whole by a single write call."""
        for r in records:
            validate_record(stream, r)
        payload = "".join(_dumps(r) + "\n" for r in records).encode("utf-8")
        with self._lock:
            path = self._prepare(stream)
            try:
                fd = os.open(path, os.O_WRONLY | os.O_APPEND)
                try:
                    written = os.write(fd, payload)
                finally:
                    os.close(fd)
            except OSError as exc:
                raise StorageFailure(f"cannot append to {path}: {exc.strerror}") from None
            if written != len(payload):
                raise StorageFailure(f"short write to {path}")
            if stream == "logs":
                self._track_utterances(records)

    def replace_stream(self, stream: str, records: list[dict]) -> None:
        """Rewrite a whole stream atomically (used for re-computed analyses)."""
        for r in records:
            validate_record(stream, r)
        header = _dumps({"schema_version": SCHEMA_VERSION, "stream": stream}) + "\n"
        with self._lock:
            _atomic_write(self._stream_path(stream), header + "".join(_dumps(r) + "\n" for r in records))
            self._repaired.add(stream)

    def _track_utterances(self, records: list[dict]) -> None:
        changed = False
        for r in records:
            info = self.manifest.sessions.get(r["session_id"])
            if info is None:
                continue
            seen = self._session_counts.setdefault(r["session_id"], set())
            seen.add((r["theme_index"], r["agent"]))
            done = _themes_done(seen)
            status = "complete" if len(seen) >= 2 * THEMES and done >= THEMES else "partial"
            if status != info.status:
                info.status = status
                changed = True
            info.themes_done = done
        if changed:
            self.write_manifest()


def _themes_done(seen: set) -> int:
    n = 0
    while (n + 1, "A") in seen and (n + 1, "B") in seen:
        n += 1
    return n


@dataclass
class LoadedRun:
    path: Path
    manifest: RunManifest
    streams: dict[str, list[dict]]
    corrupt: list[CorruptRecord]


def load_run(path: Union[str, Path]) -> LoadedRun:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise RunNotFound(f"no run at {path}")
    try:
        manifest = RunManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (ValueError, KeyError) as exc:
        raise SchemaMismatch(f"{manifest_path}: unreadable manifest ({exc})") from None
    streams, corrupt = {}, []
    for stream in STREAMS:
        contents = read_stream(path / f"{stream}.jsonl", stream)
        streams[stream] = contents.records
        corrupt.extend(contents.corrupt)

    seen: dict[str, set] = {}
    for r in streams["logs"]:
        seen.setdefault(r["session_id"], set()).add((r["theme_index"], r["agent"]))
    for sid, info in manifest.sessions.items():
        s = seen.get(sid, set())
        info.themes_done = _themes_done(s)
        info.status = "pending" if not s else ("complete" if info.themes_done >= THEMES else "partial")
    manifest.completed_probes = {
        (r["participant_id"], r["stage"], r["questionnaire_id"], r["repetition"]) for r in streams["responses"]
    }
    return LoadedRun(path, manifest, streams, corrupt)


def append_record(run_path: Union[str, Path], stream: str, record: dict) -> None:
    """One-off append to an existing run (opens the run, appends, closes)."""
    store = RunStore.open(run_path)
    store.append(stream, record)


def resume_plan(manifest: RunManifest) -> list:
    """Conversation and probe units that are not finished yet.

    Conversation units come first, by session and theme; then probe units
    by participant, stage, questionnaire and repetition.
    """
    conversation, probes = [], []
    for sid in sorted(manifest.sessions):
        info = manifest.sessions[sid]
        if info.status != "complete":
            conversation.extend(ConversationUnit(sid, t) for t in range(info.themes_done + 1, THEMES + 1))
        for agent in AGENTS:
            pid = participant_id(sid, agent)
            for stage in STAGES:
                for qid in manifest.questionnaires:
                    for rep in range(1, manifest.repetitions + 1):
                        if (pid, stage, qid, rep) not in manifest.completed_probes:
                            probes.append(ProbeUnit(info.model_id, pid, stage, qid, rep))
    return conversation + probes
