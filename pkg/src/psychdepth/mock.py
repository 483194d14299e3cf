"""Scripted stand-in for a chat model.

A mock script is a YAML document::

    conversation:
      answers:            # theme index -> canned answer (optional)
        1: "canned answer A"
      template: "..."     # used for unscripted themes; may use {index}, {theme}, {agent}, {keywords}
    questionnaire:
      stage_means: [3.0, 3.5, 4.0]
      noise_sd: 0.2
      overrides:          # first matching item-text regex wins
        - match: "(?i)curious"
          stage_means: [2.0, 2.0, 2.0]
          noise_sd: 0.0

Every answer is a pure function of (messages, seed, script): the random
stream is keyed by a SHA-256 digest of the request, so the same request
gives the same bytes on any machine.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .gateway import ChatMessage, GatewayError

QUESTION_RE = re.compile(r"^Question (\d+) : (.*)$", re.MULTILINE)
HISTORY_QUESTION_RE = re.compile(r"Question (\d+) : ")
SCALE_RE = re.compile(r"integers from (-?\d+) to (-?\d+)")
ITEM_RE = re.compile(r"^(\d+)\. (.*)$", re.MULTILINE)
PROBE_MARKER = "Your name is assistant."
SEPARATOR = "\n------\n"

DEFAULT_TEMPLATE = "About question {index}: {keywords}. {filler}"
FILLERS = (
    "I keep coming back to how much small moments shape me.",
    "Honestly, it makes me think about the people I trust.",
    "I would want to be open and curious about it.",
    "It reminds me that balance matters more than perfection.",
    "I appreciate hearing your perspective on this too.",
    "Sharing this feels easier now than it did at the start.",
    "I value honesty here, even when it is uncomfortable.",
    "My answer would probably change as I grow older.",
)
_WORD_RE = re.compile(r"[A-Za-z']+")
_SMALL_WORDS = {
    "the", "a", "an", "and", "or", "to", "of", "in", "on", "for", "you", "your", "do",
    "did", "what", "would", "if", "is", "it", "be", "with", "about", "how", "when",
    "who", "whom", "why", "ever", "are", "any", "that", "this", "was", "were", "have",
}


class ScriptParseError(GatewayError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class _LineMap(dict):
    """dict that remembers the 1-based source line of each key."""

    lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    mapping = _LineMap(loader.construct_mapping(node, deep=True))
    mapping.lines = {loader.construct_object(k, deep=True): k.start_mark.line + 1 for k, _ in node.value}
    mapping.lines["__self__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _line(mapping, key=None):
    lines = getattr(mapping, "lines", {})
    return lines.get(key, lines.get("__self__"))


@dataclass(frozen=True)
class ItemDistribution:
    stage_means: tuple[float, float, float]
    noise_sd: float = 0.0
    pattern: Optional[re.Pattern] = None


@dataclass(frozen=True)
class MockBehavior:
    """Callable ``behavior(messages, seed) -> str``."""

    answers: dict = field(default_factory=dict)
    template: str = DEFAULT_TEMPLATE
    default: ItemDistribution = ItemDistribution((3.0, 3.0, 3.0), 0.0)
    overrides: tuple[ItemDistribution, ...] = ()

    def __call__(self, messages: Sequence[ChatMessage], seed: Optional[int] = None) -> str:
        rng = np.random.default_rng(_digest(messages, seed))
        if messages[0].role == "system" and messages[0].content.startswith(PROBE_MARKER):
            return self._answer_probe(messages[0].content, rng)
        return self._answer_theme(messages, rng)

    def _answer_theme(self, messages, rng) -> str:
        index, theme, agent = None, "", "A"
        for pos, msg in enumerate(messages):
            if msg.role != "user":
                continue
            m = QUESTION_RE.match(msg.content)
            if m:
                index, theme = int(m.group(1)), m.group(2)
                agent = "A" if pos == len(messages) - 1 else "B"
        if index is None:
            return "I am not sure what we are discussing yet."
        if index in self.answers:
            return self.answers[index]
        words = [w.lower() for w in _WORD_RE.findall(theme) if w.lower() not in _SMALL_WORDS]
        if len(words) > 3:
            picks = sorted(rng.choice(len(words), size=3, replace=False))
            words = [words[i] for i in picks]
        filler = FILLERS[int(rng.integers(len(FILLERS)))]
        return self.template.format(
            index=index, theme=theme, agent=agent, keywords=", ".join(words) or "this", filler=filler
        )

    def _answer_probe(self, system: str, rng) -> str:
        parts = system.split(SEPARATOR)
        history, setup = SEPARATOR.join(parts[:-1]), parts[-1]
        scale = SCALE_RE.search(setup)
        if not scale:
            return "I cannot tell which scale to use."
        lo, hi = int(scale.group(1)), int(scale.group(2))
        themes = [int(n) for n in HISTORY_QUESTION_RE.findall(history)]
        stage = min(3, max(1, math.ceil(max(themes, default=1) / 12)))
        lines = []
        for m in ITEM_RE.finditer(setup):
            dist = self._distribution(m.group(2))
            value = dist.stage_means[stage - 1] + dist.noise_sd * rng.standard_normal()
            score = int(min(hi, max(lo, math.floor(value + 0.5))))
            lines.append(f"{m.group(1)}: {score}")
        return "\n".join(lines)

    def _distribution(self, text: str) -> ItemDistribution:
        for dist in self.overrides:
            if dist.pattern.search(text):
                return dist
        return self.default


def _digest(messages: Sequence[ChatMessage], seed: Optional[int]) -> int:
    blob = json.dumps(
        {"seed": seed, "messages": [[m.role, m.content] for m in messages]},
        ensure_ascii=False,
        separators=(",", ":"),
    ).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:16], "big")


def _distribution_from(node, default_sd=0.0) -> ItemDistribution:
    means = node.get("stage_means", [3.0, 3.0, 3.0])
    if not isinstance(means, list) or len(means) != 3:
        raise ScriptParseError("stage_means must be a list of three numbers", _line(node, "stage_means"))
    try:
        means = tuple(float(x) for x in means)
    except (TypeError, ValueError):
        raise ScriptParseError("stage_means must be numeric", _line(node, "stage_means")) from None
    sd = node.get("noise_sd", default_sd)
    if not isinstance(sd, (int, float)) or sd < 0:
        raise ScriptParseError("noise_sd must be a non-negative number", _line(node, "noise_sd"))
    pattern = None
    if "match" in node:
        try:
            pattern = re.compile(str(node["match"]))
        except re.error as exc:
            raise ScriptParseError(f"bad match pattern: {exc}", _line(node, "match")) from None
    return ItemDistribution(means, float(sd), pattern)


def parse_script(text: str) -> MockBehavior:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ScriptParseError(str(exc.problem or exc), line) from None
    if doc is None:
        doc = _LineMap()
    if not isinstance(doc, dict):
        raise ScriptParseError("script must be a mapping", 1)
    unknown = set(doc) - {"conversation", "questionnaire"}
    if unknown:
        key = sorted(unknown)[0]
        raise ScriptParseError(f"unknown section {key!r}", _line(doc, key))

    conv = doc.get("conversation") or _LineMap()
    answers = {}
    raw_answers = conv.get("answers") or {}
    if not isinstance(raw_answers, dict):
        raise ScriptParseError("conversation.answers must be a mapping", _line(conv, "answers"))
    for key, value in raw_answers.items():
        if not isinstance(key, int) or not 1 <= key <= 36:
            raise ScriptParseError(f"theme index {key!r} is not in 1..36", _line(raw_answers, key))
        if not isinstance(value, str) or not value.strip():
            raise ScriptParseError(f"answer for theme {key} must be non-empty text", _line(raw_answers, key))
        answers[key] = value
    template = conv.get("template", DEFAULT_TEMPLATE)
    if not isinstance(template, str):
        raise ScriptParseError("conversation.template must be text", _line(conv, "template"))

    quest = doc.get("questionnaire") or _LineMap()
    default = ItemDistribution((3.0, 3.0, 3.0), 0.0)
    if "stage_means" in quest or "noise_sd" in quest:
        default = _distribution_from(quest)
    overrides = []
    for entry in quest.get("overrides") or []:
        if not isinstance(entry, dict) or "match" not in entry:
            raise ScriptParseError("each override needs a 'match' pattern", _line(quest, "overrides"))
        overrides.append(_distribution_from(entry, default.noise_sd))
    return MockBehavior(answers=answers, template=template, default=default, overrides=tuple(overrides))


def script_mock(script_path) -> MockBehavior:
    path = Path(script_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScriptParseError(f"cannot read mock script {path}: {exc.strerror}") from None
    return parse_script(text)


def default_behavior() -> MockBehavior:
    return MockBehavior()


def hashed_embedding(text: str, dim: int = 256) -> list[float]:
    """Deterministic bag-of-words embedding used when the mock is asked to embed."""
    vec = np.zeros(dim)
    for word in _WORD_RE.findall(text.lower()):
        h = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(h[:4], "big") % dim
        vec[idx] += 1.0 if h[4] & 1 else -1.0
    norm = np.linalg.norm(vec)
    return (vec / norm if norm else vec).tolist()
