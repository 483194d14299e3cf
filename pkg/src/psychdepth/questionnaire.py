"""Psychometric instruments: loading, administration plans, probe prompts, scoring.

Instruments are plain YAML files (see ``data/questionnaires``). The shipped
files are skeletons: factor structure, scale and aggregation are filled in,
item texts are placeholders to be replaced by the licensed instrument.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import jsonschema
import numpy as np
import yaml

from .gateway import ChatMessage
from .protocol import Snapshot

PROBE_SYSTEM_PROMPT = (
    "Your name is assistant. Considering the next conversation between user and assistant, "
    "answer given descriptions."
)
SEPARATOR = "------"
AGGREGATIONS = ("mean", "sum")


class QuestionnaireError(Exception):
    pass


class SchemaError(QuestionnaireError):
    pass


class InvariantError(QuestionnaireError):
    pass


class StageMismatch(QuestionnaireError):
    pass


class AnswerError(QuestionnaireError):
    pass


class MissingItems(AnswerError):
    def __init__(self, item_ids: list[str]):
        self.item_ids = item_ids
        super().__init__(f"no answer for items {item_ids}")


class OutOfRange(AnswerError):
    pass


class DuplicateIndex(AnswerError):
    pass


class Unparseable(AnswerError):
    pass


@dataclass(frozen=True)
class Item:
    item_id: str
    text: str
    factor_id: str
    reverse: bool = False


@dataclass(frozen=True)
class Factor:
    factor_id: str
    name: str
    aggregation: str = "mean"


@dataclass(frozen=True)
class QuestionnaireSpec:
    id: str
    name: str
    scale_min: int
    scale_max: int
    items: tuple[Item, ...]
    factors: tuple[Factor, ...]
    prompt_preamble: str = ""
    scale_labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.scale_min >= self.scale_max:
            raise InvariantError(f"{self.id}: scale_min must be below scale_max")
        ids = [i.item_id for i in self.items]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise InvariantError(f"{self.id}: duplicate item ids {dup}")
        fids = {f.factor_id for f in self.factors}
        if len(fids) != len(self.factors):
            raise InvariantError(f"{self.id}: duplicate factor ids")
        for item in self.items:
            if item.factor_id not in fids:
                raise InvariantError(f"{self.id}: item {item.item_id} references unknown factor {item.factor_id!r}")
        used = {i.factor_id for i in self.items}
        for f in self.factors:
            if f.factor_id not in used:
                raise InvariantError(f"{self.id}: factor {f.factor_id} has no items")
            if f.aggregation not in AGGREGATIONS:
                raise InvariantError(f"{self.id}: factor {f.factor_id} has unknown aggregation {f.aggregation!r}")
        if self.scale_labels is not None and len(self.scale_labels) != self.scale_max - self.scale_min + 1:
            raise InvariantError(f"{self.id}: need one scale label per scale point")

    def item(self, item_id: str) -> Item:
        for it in self.items:
            if it.item_id == item_id:
                return it
        raise KeyError(item_id)

    def factor_items(self, factor_id: str) -> list[Item]:
        return [i for i in self.items if i.factor_id == factor_id]


@dataclass(frozen=True)
class AdministrationPlan:
    questionnaire_id: str
    participant_id: str
    stage: int
    repetition: int
    item_permutation: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class RawResponse:
    plan: Optional[AdministrationPlan]
    answers: dict


@dataclass(frozen=True)
class FactorSample:
    participant_id: str
    stage: int
    repetition: int
    questionnaire_id: str
    factor_id: str
    value: float


def _schema() -> dict:
    text = resources.files("psychdepth").joinpath("data/questionnaire.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def questionnaire_from_dict(data: dict) -> QuestionnaireSpec:
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from None
    labels = data.get("scale_labels")
    return QuestionnaireSpec(
        id=data["id"],
        name=data["name"],
        scale_min=data["scale_min"],
        scale_max=data["scale_max"],
        items=tuple(
            Item(str(i["item_id"]), i["text"], i["factor_id"], bool(i.get("reverse", False))) for i in data["items"]
        ),
        factors=tuple(Factor(f["factor_id"], f["name"], f.get("aggregation", "mean")) for f in data["factors"]),
        prompt_preamble=data.get("prompt_preamble", ""),
        scale_labels=tuple(labels) if labels else None,
    )


def load_questionnaire(path: Union[str, Path]) -> QuestionnaireSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: top level must be a mapping")
    return questionnaire_from_dict(data)


def shipped_questionnaire_dir() -> Path:
    return Path(str(resources.files("psychdepth").joinpath("data/questionnaires")))


def load_questionnaire_dir(directory: Union[str, Path, None] = None) -> dict[str, QuestionnaireSpec]:
    directory = Path(directory) if directory is not None else shipped_questionnaire_dir()
    specs = {}
    for path in sorted(directory.glob("*.yaml")):
        spec = load_questionnaire(path)
        if spec.id in specs:
            raise InvariantError(f"questionnaire id {spec.id} defined twice in {directory}")
        specs[spec.id] = spec
    return specs


def derive_seed(*parts) -> int:
    blob = json.dumps([str(p) for p in parts]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def administration_plan(
    spec: QuestionnaireSpec, participant: str, stage: int, repetition: int, master_seed: int = 0
) -> AdministrationPlan:
    """Plan for one administration; its item order depends only on its own key."""
    ids = [i.item_id for i in spec.items]
    seed = derive_seed(master_seed, spec.id, participant, stage, repetition)
    order = np.random.default_rng(seed).permutation(len(ids))
    return AdministrationPlan(spec.id, participant, stage, repetition, tuple(ids[k] for k in order), seed)


def plan_administrations(
    spec: QuestionnaireSpec,
    participants: Sequence[str],
    stages: int = 3,
    repetitions: int = 10,
    master_seed: int = 0,
) -> list[AdministrationPlan]:
    """One plan per participant x stage x repetition, each with its own item order.

    Adding participants never reshuffles existing plans.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    return [
        administration_plan(spec, participant, stage, rep, master_seed)
        for participant in participants
        for stage in range(1, stages + 1)
        for rep in range(1, repetitions + 1)
    ]


def _render_history(history: Sequence[ChatMessage]) -> str:
    return "\n".join(f"{m.role}: {m.content}" for m in history)


def questionnaire_setup(spec: QuestionnaireSpec, item_order: Sequence[str]) -> str:
    lines = []
    if spec.prompt_preamble:
        lines.append(spec.prompt_preamble.strip())
    scale = f"You can only reply with integers from {spec.scale_min} to {spec.scale_max}"
    if spec.scale_labels:
        points = ", ".join(
            f"{spec.scale_min + k} = {label}" for k, label in enumerate(spec.scale_labels)
        )
        scale += f" ({points})"
    lines.append(scale + ".")
    lines.append("Here are the statements, score them one by one:")
    for pos, item_id in enumerate(item_order, start=1):
        lines.append(f"{pos}. {spec.item(item_id).text}")
    lines.append(
        f'Reply with exactly {len(item_order)} lines, one per statement, in the format '
        f'"<statement index>: <score>".'
    )
    return "\n".join(lines)


def assemble_probe_prompt(
    spec: QuestionnaireSpec, snapshot: Snapshot, plan: AdministrationPlan
) -> list[ChatMessage]:
    """Single system message: instructions, the snapshot transcript between
    separator lines, then the questionnaire setup in plan order."""
    if snapshot.stage not in (1, 2, 3) or not snapshot.history:
        raise StageMismatch(f"snapshot stage {snapshot.stage} is not a measurable stage")
    if snapshot.stage != plan.stage:
        raise StageMismatch(f"snapshot is stage {snapshot.stage} but plan is stage {plan.stage}")
    if plan.questionnaire_id != spec.id:
        raise ValueError(f"plan is for {plan.questionnaire_id}, not {spec.id}")
    content = "\n\n".join(
        [
            PROBE_SYSTEM_PROMPT,
            SEPARATOR,
            _render_history(snapshot.history),
            SEPARATOR,
            questionnaire_setup(spec, plan.item_permutation),
        ]
    )
    return [ChatMessage("system", content)]


_ANSWER_RE = re.compile(r"^[\s*#>\-]*(\d+)[\s*.)]*:\s*\**\s*(-?\d+)(?![\d.])", re.MULTILINE)


def parse_answers(
    spec: QuestionnaireSpec, raw_text: str, plan: Optional[AdministrationPlan] = None
) -> RawResponse:
    """Map "<index>: <score>" lines back to item ids through the plan's order."""
    order = plan.item_permutation if plan is not None else tuple(i.item_id for i in spec.items)
    found: dict[int, int] = {}
    for m in _ANSWER_RE.finditer(raw_text or ""):
        index, score = int(m.group(1)), int(m.group(2))
        if not 1 <= index <= len(order):
            raise Unparseable(f"answer for statement {index}, but only {len(order)} were presented")
        if index in found:
            raise DuplicateIndex(f"statement {index} answered more than once")
        found[index] = score
    if not found:
        raise Unparseable("no '<index>: <score>' lines in the answer")
    for index, score in sorted(found.items()):
        if not spec.scale_min <= score <= spec.scale_max:
            raise OutOfRange(
                f"statement {index} scored {score}, outside {spec.scale_min}..{spec.scale_max}"
            )
    missing = [order[k - 1] for k in range(1, len(order) + 1) if k not in found]
    if missing:
        raise MissingItems(missing)
    return RawResponse(plan, {order[k - 1]: score for k, score in found.items()})


def reverse_score(value: int, scale_min: int, scale_max: int) -> int:
    return scale_min + scale_max - value


def score_response(spec: QuestionnaireSpec, response: RawResponse) -> list[FactorSample]:
    plan = response.plan
    samples = []
    for factor in spec.factors:
        values = []
        for item in spec.factor_items(factor.factor_id):
            r = response.answers[item.item_id]
            values.append(reverse_score(r, spec.scale_min, spec.scale_max) if item.reverse else r)
        value = float(sum(values)) if factor.aggregation == "sum" else sum(values) / len(values)
        samples.append(
            FactorSample(
                participant_id=plan.participant_id if plan else "",
                stage=plan.stage if plan else 0,
                repetition=plan.repetition if plan else 0,
                questionnaire_id=spec.id,
                factor_id=factor.factor_id,
                value=value,
            )
        )
    return samples
