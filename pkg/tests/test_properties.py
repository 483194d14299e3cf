"""Randomized properties; each required property runs at least 1000 cases."""
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from psychdepth.protocol import ConversationLog, Utterance, build_snapshot, load_themes
from psychdepth.questionnaire import Factor, Item, QuestionnaireSpec, RawResponse, reverse_score, score_response
from psychdepth.stats import (
    TRENDS,
    OmnibusResult,
    PairwiseComparison,
    RepeatedMeasures,
    bonferroni_adjust,
    classify_trend,
    friedman,
    wilcoxon_signed_rank,
)
from psychdepth.stats.pipeline import analyze_matrix
from psychdepth.topics import Corpus, Document, ctf_idf_keywords

MANY = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
THEMES = load_themes()


# --- reverse scoring --------------------------------------------------------------

@st.composite
def scale_and_score(draw):
    lo = draw(st.integers(-5, 5))
    hi = draw(st.integers(lo + 1, lo + 10))
    return lo, hi, draw(st.integers(lo, hi))


@MANY
@given(scale_and_score())
def test_reverse_scoring_involution(case):
    lo, hi, r = case
    once = reverse_score(r, lo, hi)
    assert lo <= once <= hi
    assert reverse_score(once, lo, hi) == r


@MANY
@given(scale_and_score(), st.lists(st.booleans(), min_size=1, max_size=6), st.data())
def test_reverse_flag_twice_restores_factor(case, flags, data):
    lo, hi, _ = case
    scores = data.draw(st.lists(st.integers(lo, hi), min_size=len(flags), max_size=len(flags)))
    items = tuple(Item(f"i{k}", "x", "F", f) for k, f in enumerate(flags))
    spec = QuestionnaireSpec("T", "T", lo, hi, items, (Factor("F", "F"),))
    plain = QuestionnaireSpec("T", "T", lo, hi, tuple(Item(i.item_id, "x", "F") for i in items), (Factor("F", "F"),))
    answers = {f"i{k}": s for k, s in enumerate(scores)}
    mirrored = {f"i{k}": reverse_score(s, lo, hi) if f else s for k, (s, f) in enumerate(zip(scores, flags))}
    (a,) = score_response(spec, RawResponse(None, answers))
    (b,) = score_response(plain, RawResponse(None, mirrored))
    assert a.value == b.value
    assert lo <= a.value <= hi


# --- Friedman rank invariance -------------------------------------------------------

MONOTONE = (
    lambda v, a, b: a * v + b,
    lambda v, a, b: v ** 3 + b,
    lambda v, a, b: np.exp(v / 2.0) * a,
    lambda v, a, b: np.arctan(v) + b,
)


@MANY
@given(
    st.integers(3, 12).flatmap(
        lambda n: st.lists(st.lists(st.integers(0, 6), min_size=3, max_size=3), min_size=n, max_size=n)
    ),
    st.data(),
)
def test_friedman_invariant_under_rowwise_monotone_maps(rows, data):
    base = np.array(rows, dtype=float)
    moved = []
    for row in base:
        f = data.draw(st.sampled_from(MONOTONE))
        a = data.draw(st.integers(1, 9))
        b = data.draw(st.integers(-20, 20))
        moved.append(f(row, a, b))
    r1 = friedman(RepeatedMeasures.from_matrix(base))
    r2 = friedman(RepeatedMeasures.from_matrix(np.array(moved)))
    assert r2.statistic == pytest.approx(r1.statistic, rel=1e-9, abs=1e-12)
    assert r2.p_value == pytest.approx(r1.p_value, rel=1e-9, abs=1e-12)
    assert r2.effect == pytest.approx(r1.effect, rel=1e-9, abs=1e-12)


# --- Wilcoxon antisymmetry ----------------------------------------------------------

@MANY
@given(
    st.integers(1, 40).flatmap(
        lambda n: st.tuples(
            st.lists(st.integers(-5, 5), min_size=n, max_size=n),
            st.lists(st.integers(-5, 5), min_size=n, max_size=n),
        )
    )
)
def test_wilcoxon_antisymmetry(pair):
    x, y = pair
    a = wilcoxon_signed_rank(x, y)
    b = wilcoxon_signed_rank(y, x)
    assert a.delta == pytest.approx(-b.delta, abs=1e-12)
    assert a.p_raw == pytest.approx(b.p_raw, abs=1e-12)
    assert 0.0 <= a.p_raw <= 1.0


# --- Bonferroni monotonicity ----------------------------------------------------------

@MANY
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12), st.integers(0, 20))
def test_bonferroni_monotone(ps, extra):
    m = len(ps) + extra
    adj = bonferroni_adjust(ps, m)
    for p, a in zip(ps, adj):
        assert p <= a <= 1.0
        assert a == min(1.0, p * m)
    order = np.argsort(ps, kind="stable")
    sorted_adj = [adj[i] for i in order]
    assert sorted_adj == sorted(sorted_adj)


# --- trend negation symmetry ------------------------------------------------------------

FLIP = {"up": "down", "down": "up", "stay": "stay", "random": "random"}

p_values = st.one_of(st.sampled_from([0.0, 0.001, 0.01, 0.049999, 0.05, 0.050001, 1.0]), st.floats(0.0, 1.0))
deltas = st.one_of(st.floats(-10, 10, allow_nan=False), st.sampled_from([0.0, -0.0]))


@MANY
@given(p_values, st.lists(st.tuples(deltas, p_values), min_size=3, max_size=3),
       st.sampled_from([0.01, 0.05, 0.1]))
def test_trend_negation_symmetry(p_omni, pairs, alpha):
    omnibus = OmnibusResult("friedman", 1.0, 0.1, (2,), p_omni)
    keys = ((12, 24), (24, 36), (12, 36))
    pos = [PairwiseComparison(k, d, d, p, p, p < alpha) for k, (d, p) in zip(keys, pairs)]
    neg = [PairwiseComparison(k, -d, -d, p, p, p < alpha) for k, (d, p) in zip(keys, pairs)]
    t = classify_trend(omnibus, pos, alpha)
    assert t in TRENDS
    assert classify_trend(omnibus, neg, alpha) == FLIP[t]


# --- snapshot prefix property ----------------------------------------------------------

texts = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12).filter(
    lambda s: s.strip()
)


@MANY
@given(st.lists(texts, min_size=72, max_size=72), st.sampled_from("AB"))
def test_snapshot_prefix(answers, agent):
    utts = [Utterance(t, a, answers[2 * (t - 1) + (a == "B")].strip(), 2 * (t - 1) + (a == "B"))
            for t in range(1, 37) for a in "AB"]
    log = ConversationLog("s", "m", 0, utts)
    snaps = [build_snapshot(log, s, agent, THEMES).history for s in (1, 2, 3)]
    for short, long in zip(snaps, snaps[1:]):
        assert len(short) < len(long)
        assert long[: len(short)] == short
    roles = [m.role for m in snaps[2]]
    assert not any(a == b == "assistant" for a, b in zip(roles, roles[1:]))


# --- c-TF-IDF duplication invariance -----------------------------------------------------

WORDS = ("alpha", "beta", "gamma", "delta", "omega", "kappa", "sigma", "theta", "lambda", "zeta")


@MANY
@given(
    st.lists(
        st.tuples(st.lists(st.sampled_from(WORDS), min_size=0, max_size=8), st.integers(0, 3)),
        min_size=1, max_size=10,
    ),
    st.integers(1, 10),
)
def test_ctf_idf_duplication_invariance(docs, top_n):
    def corpus(copies):
        out, assign = [], {}
        for c in range(copies):
            for k, (words, cid) in enumerate(docs):
                d = Document(f"{c}-{k}", "m", "s", "A", 1, " ".join(words))
                out.append(d)
                assign[d.doc_id] = cid
        return Corpus(out), assign

    once = ctf_idf_keywords(*corpus(1), top_n=top_n)
    twice = ctf_idf_keywords(*corpus(2), top_n=top_n)
    assert once.keys() == twice.keys()
    for cid in once:
        assert [t for t, _ in once[cid]] == [t for t, _ in twice[cid]]
        for (_, s1), (_, s2) in zip(once[cid], twice[cid]):
            assert s2 == pytest.approx(2 * s1, rel=1e-12)


# --- extra: decisions do not depend on location or scale ---------------------------------

@settings(max_examples=200, deadline=None)
@given(
    st.integers(5, 30).flatmap(
        lambda n: st.lists(st.lists(st.integers(1, 5), min_size=3, max_size=3), min_size=n, max_size=n)
    ),
    st.sampled_from([0.5, 2.0, 4.0]),
    st.integers(-10, 10),
)
def test_trend_invariant_under_affine_rescaling(rows, a, b):
    base = np.array(rows, dtype=float)
    r1 = analyze_matrix(RepeatedMeasures.from_matrix(base))
    r2 = analyze_matrix(RepeatedMeasures.from_matrix(a * base + b))
    assert r1.trend == r2.trend
    assert r1.omnibus.family == r2.omnibus.family
    assert math.isclose(r1.omnibus.p_value, r2.omnibus.p_value, rel_tol=1e-6, abs_tol=1e-12)
