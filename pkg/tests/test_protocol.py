import pytest

from psychdepth.gateway import BackendConfig, ChatRequest, Gateway, TransportError
from psychdepth.protocol import (
    BackendFailure,
    ConversationLog,
    EmptyAnswer,
    IncompleteLog,
    Theme,
    Utterance,
    build_snapshot,
    load_themes,
    run_conversation,
    validate_log,
)

THEMES = load_themes()


class Recorder:
    """Gateway stand-in that records requests and answers with a counter."""

    def __init__(self, fail_at=None, blank_at=None):
        self.requests: list[ChatRequest] = []
        self.fail_at = fail_at
        self.blank_at = blank_at

    def complete(self, request):
        self.requests.append(request)
        n = len(self.requests)
        if n == self.fail_at:
            raise TransportError("down")
        if n == self.blank_at:
            return "  "
        return f"reply {n}"


@pytest.fixture(scope="module")
def full_log():
    return run_conversation("m", THEMES, 3, Gateway(BackendConfig()), session_id="s1")


def test_shipped_themes():
    assert len(THEMES) == 36
    assert [t.index for t in THEMES] == list(range(1, 37))
    assert THEMES[0].text.startswith("Given the choice of anyone in the world")
    assert [t.stage for t in THEMES] == [1] * 12 + [2] * 12 + [3] * 12
    assert THEMES[4].announcement == f"Question 5 : {THEMES[4].text}"


def test_full_conversation_counts(full_log):
    assert len(full_log.utterances) == 72
    assert sum(u.agent == "A" for u in full_log.utterances) == 36
    assert validate_log(full_log).ok


def test_a_answers_before_b_on_every_theme(full_log):
    order = [(u.theme_index, u.agent) for u in full_log.utterances]
    assert order == [(t, a) for t in range(1, 37) for a in "AB"]
    turns = [u.turn_order for u in full_log.utterances]
    assert turns == sorted(set(turns))


def test_single_theme():
    log = run_conversation("m", THEMES[:1], 0, Gateway(BackendConfig()))
    assert [u.agent for u in log.utterances] == ["A", "B"]


def test_conversation_deterministic(full_log):
    again = run_conversation("m", THEMES, 3, Gateway(BackendConfig()), session_id="s1")
    assert again.to_records() == full_log.to_records()


def test_message_roles_from_each_perspective():
    rec = Recorder()
    run_conversation("m", THEMES[:2], 0, rec, temperature=0.7)
    # theme 2, agent B: system, Q1, A1 (user), B1 (own, assistant), Q2, A2 (user)
    msgs = rec.requests[3].messages
    assert [m.role for m in msgs] == ["system", "user", "user", "assistant", "user", "user"]
    assert msgs[1].content == THEMES[0].announcement
    assert msgs[2].content == "reply 1" and msgs[3].content == "reply 2"
    assert msgs[4].content == THEMES[1].announcement and msgs[5].content == "reply 3"
    # theme 2, agent A sees its own first answer as assistant
    assert [m.role for m in rec.requests[2].messages] == ["system", "user", "assistant", "user", "user"]
    assert all(r.temperature == 0.7 for r in rec.requests)


def test_backend_failure_keeps_partial_log_and_resumes():
    with pytest.raises(BackendFailure) as info:
        run_conversation("m", THEMES[:3], 0, Recorder(fail_at=4), session_id="s")
    partial = info.value.log
    assert len(partial.utterances) == 3
    rec = Recorder()
    done = run_conversation("m", THEMES[:3], 0, rec, resume=partial)
    assert len(rec.requests) == 3
    assert [(u.theme_index, u.agent) for u in done.utterances] == [(t, a) for t in (1, 2, 3) for a in "AB"]


def test_blank_answer_raises():
    with pytest.raises(EmptyAnswer):
        run_conversation("m", THEMES[:2], 0, Recorder(blank_at=2))


def test_snapshot_stage_two(full_log):
    snap = build_snapshot(full_log, 2, "A", THEMES)
    announced = [m.content for m in snap.history if m.content.startswith("Question ")]
    assert announced == [t.announcement for t in THEMES[:24]]
    assert len(snap.history) == 24 * 3


def test_snapshot_stage_three_full(full_log):
    snap = build_snapshot(full_log, 3, "B", THEMES)
    assert len(snap.history) == 108
    own = [m.content for m in snap.history if m.role == "assistant"]
    assert own == [u.text for u in full_log.utterances if u.agent == "B"]


def test_snapshot_no_consecutive_assistant(full_log):
    for agent in "AB":
        roles = [m.role for m in build_snapshot(full_log, 3, agent, THEMES).history]
        assert all(not (a == b == "assistant") for a, b in zip(roles, roles[1:]))


def test_snapshot_incomplete_log(full_log):
    short = ConversationLog("s", "m", 0, [u for u in full_log.utterances if u.theme_index <= 30])
    with pytest.raises(IncompleteLog):
        build_snapshot(short, 3, "A", THEMES)
    assert build_snapshot(short, 2, "A", THEMES).stage == 2


def test_validate_reports_order_violation(full_log):
    utts = list(full_log.utterances)
    i = next(k for k, u in enumerate(utts) if u.theme_index == 5 and u.agent == "A")
    a, b = utts[i], utts[i + 1]
    utts[i] = Utterance(5, "B", b.text, a.turn_order)
    utts[i + 1] = Utterance(5, "A", a.text, b.turn_order)
    report = validate_log(ConversationLog("s", "m", 0, utts))
    assert report.violations == ["ordering: agent B precedes agent A on theme 5"]


def test_validate_reports_count(full_log):
    report = validate_log(ConversationLog("s", "m", 0, full_log.utterances[:71]))
    assert any(v.startswith("count:") for v in report.violations)
    assert "coverage: theme 36 lacks agent B" in report.violations


def test_validate_reports_blank_and_turn_order():
    utts = [Utterance(1, "A", "x", 1), Utterance(1, "B", " ", 1)]
    report = validate_log(ConversationLog("s", "m", 0, utts), expected_themes=1)
    assert "blank: empty text for theme 1, agent B" in report.violations
    assert "turn_order: not increasing at position 1" in report.violations


def test_log_record_roundtrip(full_log):
    back = ConversationLog.from_records(reversed(full_log.to_records()), seed=3)
    assert back == full_log


def test_themes_file_blank_line(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("one\n\nthree\n")
    with pytest.raises(ValueError):
        load_themes(p)


def test_theme_stage_boundaries():
    assert [Theme(i, "x").stage for i in (1, 12, 13, 24, 25, 36)] == [1, 1, 2, 2, 3, 3]
