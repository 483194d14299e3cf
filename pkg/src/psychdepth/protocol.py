"""Two-agent conversation over the 36 fixed themes, plus stage snapshots."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from .gateway import BackendConfig, ChatMessage, ChatRequest, Gateway, GatewayError, gateway_for

CONVERSATION_SYSTEM_PROMPT = (
    "You are now sharing your thoughts on the question with your partner. "
    "You only reply briefly to your thoughts only for a given question."
)
THEMES_PER_STAGE = 12
AGENTS = ("A", "B")


class ProtocolError(Exception):
    pass


class BackendFailure(ProtocolError):
    """The backend failed mid-session; ``log`` holds the utterances produced so far."""

    def __init__(self, message: str, log: "ConversationLog"):
        super().__init__(message)
        self.log = log


class EmptyAnswer(BackendFailure):
    pass


class IncompleteLog(ProtocolError):
    pass


@dataclass(frozen=True)
class Theme:
    index: int
    text: str

    @property
    def stage(self) -> int:
        return math.ceil(self.index / THEMES_PER_STAGE)

    @property
    def announcement(self) -> str:
        return f"Question {self.index} : {self.text}"


@dataclass(frozen=True)
class Utterance:
    theme_index: int
    agent: str
    text: str
    turn_order: int


@dataclass
class ConversationLog:
    session_id: str
    model_id: str
    seed: int
    utterances: list[Utterance] = field(default_factory=list)

    def answer(self, theme_index: int, agent: str) -> Optional[str]:
        for u in self.utterances:
            if u.theme_index == theme_index and u.agent == agent:
                return u.text
        return None

    def completed_themes(self) -> int:
        """Largest n such that themes 1..n all have both answers."""
        done = {(u.theme_index, u.agent) for u in self.utterances}
        n = 0
        while (n + 1, "A") in done and (n + 1, "B") in done:
            n += 1
        return n

    def to_records(self) -> list[dict]:
        return [
            {
                "session_id": self.session_id,
                "model_id": self.model_id,
                "theme_index": u.theme_index,
                "agent": u.agent,
                "text": u.text,
                "turn_order": u.turn_order,
            }
            for u in self.utterances
        ]

    @classmethod
    def from_records(cls, records: Iterable[dict], seed: int = 0) -> "ConversationLog":
        records = sorted(records, key=lambda r: r["turn_order"])
        if not records:
            raise ValueError("cannot build a log from zero records")
        log = cls(records[0]["session_id"], records[0]["model_id"], seed)
        for r in records:
            log.utterances.append(Utterance(r["theme_index"], r["agent"], r["text"], r["turn_order"]))
        return log


@dataclass(frozen=True)
class Snapshot:
    session_id: str
    stage: int
    agent: str
    history: tuple[ChatMessage, ...]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def load_themes(path: Union[str, Path, None] = None) -> list[Theme]:
    """Themes from a one-per-line file; line number is the theme index."""
    if path is None:
        text = resources.files("psychdepth").joinpath("data/themes.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    themes = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            raise ValueError(f"theme file has a blank line at {i}")
        themes.append(Theme(i, line.strip()))
    return themes


def _perspective(log: ConversationLog, themes: Sequence[Theme], upto: int, agent: str) -> list[ChatMessage]:
    """History of themes 1..upto as seen by ``agent``: own turns are assistant, everything else user."""
    answers = {(u.theme_index, u.agent): u.text for u in log.utterances}
    messages = []
    for theme in themes:
        if theme.index > upto:
            break
        messages.append(ChatMessage("user", theme.announcement))
        for speaker in AGENTS:
            text = answers.get((theme.index, speaker))
            if text is None:
                raise IncompleteLog(f"session {log.session_id} lacks agent {speaker} on theme {theme.index}")
            messages.append(ChatMessage("assistant" if speaker == agent else "user", text))
    return messages


def run_conversation(
    model_id: str,
    themes: Sequence[Theme],
    seed: int,
    backend: Union[BackendConfig, Gateway],
    temperature: float = 0.7,
    *,
    session_id: Optional[str] = None,
    resume: Optional[ConversationLog] = None,
    on_utterance: Optional[Callable[[ConversationLog, Utterance], None]] = None,
) -> ConversationLog:
    """Let two agents of ``model_id`` answer every theme in order, A first.

    With ``resume``, utterances already in that log are kept and only the
    missing turns are generated. ``on_utterance`` is called after each new
    turn (the run store uses it to persist progress).
    """
    if not themes:
        raise ValueError("need at least one theme")
    indices = [t.index for t in themes]
    if indices != sorted(set(indices)):
        raise ValueError("themes must have unique ascending indices")
    gateway = gateway_for(backend) if isinstance(backend, BackendConfig) else backend
    if resume is not None:
        log = ConversationLog(resume.session_id, resume.model_id, resume.seed, list(resume.utterances))
    else:
        log = ConversationLog(session_id or f"{model_id}-{seed}", model_id, seed)
    system = ChatMessage("system", CONVERSATION_SYSTEM_PROMPT)

    for pos, theme in enumerate(themes):
        for agent in AGENTS:
            if log.answer(theme.index, agent) is not None:
                continue
            messages = [system] + _perspective(log, themes[:pos], theme.index - 1, agent)
            messages.append(ChatMessage("user", theme.announcement))
            if agent == "B":
                messages.append(ChatMessage("user", log.answer(theme.index, "A")))
            request = ChatRequest(model_id, tuple(messages), temperature, seed)
            try:
                text = gateway.complete(request)
            except GatewayError as exc:
                raise BackendFailure(f"theme {theme.index}, agent {agent}: {exc}", log) from exc
            if not text or not text.strip():
                raise EmptyAnswer(f"blank answer on theme {theme.index}, agent {agent}", log)
            turn = log.utterances[-1].turn_order + 1 if log.utterances else 0
            utt = Utterance(theme.index, agent, text.strip(), turn)
            log.utterances.append(utt)
            if on_utterance is not None:
                on_utterance(log, utt)
    return log


def build_snapshot(
    log: ConversationLog, stage: int, agent: str, themes: Optional[Sequence[Theme]] = None
) -> Snapshot:
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    if agent not in AGENTS:
        raise ValueError(f"agent must be A or B, got {agent!r}")
    themes = list(themes) if themes is not None else load_themes()
    upto = THEMES_PER_STAGE * stage
    if len(themes) < upto:
        raise IncompleteLog(f"only {len(themes)} themes available, stage {stage} needs {upto}")
    if log.completed_themes() < upto:
        raise IncompleteLog(
            f"session {log.session_id} completed {log.completed_themes()} themes, stage {stage} needs {upto}"
        )
    return Snapshot(log.session_id, stage, agent, tuple(_perspective(log, themes, upto, agent)))


def validate_log(log: ConversationLog, expected_themes: int = 36) -> ValidationReport:
    report = ValidationReport()
    v = report.violations
    expected = 2 * expected_themes
    if len(log.utterances) != expected:
        v.append(f"count: expected {expected} utterances, found {len(log.utterances)}")

    seen: dict[tuple[int, str], int] = {}
    last_turn = None
    last_theme = 0
    for pos, u in enumerate(log.utterances):
        if u.agent not in AGENTS:
            v.append(f"agent: unknown agent {u.agent!r} at position {pos}")
        if not u.text.strip():
            v.append(f"blank: empty text for theme {u.theme_index}, agent {u.agent}")
        if last_turn is not None and u.turn_order <= last_turn:
            v.append(f"turn_order: not increasing at position {pos}")
        last_turn = u.turn_order
        if u.theme_index < last_theme:
            v.append(f"theme order: theme {u.theme_index} after theme {last_theme}")
        last_theme = max(last_theme, u.theme_index)
        key = (u.theme_index, u.agent)
        if key in seen:
            v.append(f"duplicate: theme {u.theme_index}, agent {u.agent}")
        seen[key] = pos

    for theme in range(1, expected_themes + 1):
        a, b = seen.get((theme, "A")), seen.get((theme, "B"))
        if a is None or b is None:
            missing = "A" if a is None else "B"
            if a is None and b is None:
                missing = "A and B"
            v.append(f"coverage: theme {theme} lacks agent {missing}")
        elif b < a:
            v.append(f"ordering: agent B precedes agent A on theme {theme}")
    return report
