"""Plain-text and TSV reports: the trend grid, the per-factor statistics
table and the per-model topic table."""
from __future__ import annotations

import csv
import io
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

from .stats import TRENDS, FactorAnalysis
from .topics import TopicRank

GLYPHS = {"stay": "=", "up": "↑", "down": "↓", "random": "~"}
MISSING = "·"
LEGEND = "= no significant change   ↑ consistent increase   ↓ consistent decrease   ~ inconsistent change   · no data"

ASPECTS = (
    ("Personality", ("BFI", "EPQ-R", "DTDD")),
    ("Interpersonal Relationship", ("BSRI", "CABIN", "ICB", "ECR-R", "MFQ-FF")),
    ("Motivation", ("GSE", "LOT-R", "LMS")),
    ("Emotion", ("EIS", "WLEIS", "Empathy")),
)
OTHER_ASPECT = "Other"


@dataclass(frozen=True)
class TrendCell:
    model_id: str
    questionnaire_id: str
    factor_id: str
    trend: str


def glyph(trend: str) -> str:
    try:
        return GLYPHS[trend]
    except KeyError:
        raise ValueError(f"unknown trend {trend!r}; expected one of {TRENDS}") from None


def _cell(item: Union[FactorAnalysis, Mapping, TrendCell], model_id: Optional[str] = None) -> TrendCell:
    if isinstance(item, TrendCell):
        cell = item
    elif isinstance(item, FactorAnalysis):
        cell = TrendCell(model_id or item.model_id, item.questionnaire_id, item.factor_id, item.trend)
    else:
        cell = TrendCell(item["model_id"], item["questionnaire_id"], item["factor_id"], item["trend"])
    glyph(cell.trend)
    return cell


def aspect_of(questionnaire_id: str) -> str:
    for aspect, ids in ASPECTS:
        if questionnaire_id in ids:
            return aspect
    return OTHER_ASPECT


def _row_order(cells: Iterable[TrendCell], factor_order: Optional[Mapping] = None):
    rank = {qid: (a, i) for a, (_, ids) in enumerate(ASPECTS) for i, qid in enumerate(ids)}
    keys = {(c.questionnaire_id, c.factor_id) for c in cells}
    factor_order = factor_order or {}

    def sort_key(key):
        qid, fid = key
        aspect, pos = rank.get(qid, (len(ASPECTS), 0))
        return (aspect, pos, qid, factor_order.get(key, 10**6), fid)

    return sorted(keys, key=sort_key)


def _width(text: str) -> int:
    return sum(2 if unicodedata.east_asian_width(ch) in "WF" else 1 for ch in text)


def _pad(text: str, width: int) -> str:
    return text + " " * (width - _width(text))


def trend_grid(
    analyses: Sequence, models: Sequence[str], factor_names: Optional[Mapping] = None
) -> tuple[list[str], list[tuple[str, str, str, str, list[str]]]]:
    """Header and rows (aspect, questionnaire, factor_id, label, trends) of the grid.

    Trends are the raw names ("up", ...) or None for a missing cell.
    """
    cells = [_cell(a) for a in analyses]
    factor_names = factor_names or {}
    order = {key: i for i, key in enumerate(factor_names)}
    lookup = {(c.model_id, c.questionnaire_id, c.factor_id): c.trend for c in cells}
    rows = []
    for qid, fid in _row_order(cells, order):
        label = factor_names.get((qid, fid), fid)
        rows.append((aspect_of(qid), qid, fid, label, [lookup.get((m, qid, fid)) for m in models]))
    return ["Aspect", "Questionnaire", "Factor", *models], rows


def render_trend_table(
    analyses: Sequence,
    models: Sequence[str],
    factor_names: Optional[Mapping] = None,
    expected: Optional[Mapping] = None,
) -> str:
    """Fixed-width grid, one row per factor and one column per model.

    ``factor_names`` maps (questionnaire_id, factor_id) to a display name and
    fixes the row order within a questionnaire. ``expected`` maps
    (model_id, questionnaire_id, factor_id) to a reference trend; every cell
    that differs from it gets a numbered footnote.
    """
    header, rows = trend_grid(analyses, models, factor_names)
    expected = expected or {}
    notes = []
    table = []
    for aspect, qid, fid, label, trends in rows:
        shown = []
        for model, trend in zip(models, trends):
            g = MISSING if trend is None else glyph(trend)
            want = expected.get((model, qid, fid))
            if want is not None and trend is not None and want != trend:
                notes.append(
                    f"[{len(notes) + 1}] {model} {qid} {label}: rule gives {trend} ({glyph(trend)}), "
                    f"reference shows {want} ({glyph(want)})"
                )
                g = f"{g}[{len(notes)}]"
            shown.append(g)
        table.append((aspect, qid, label, shown))

    widths = [max([_width(header[i])] + [_width(r[i]) for r in table]) for i in range(3)]
    col_widths = [max([_width(m)] + [_width(r[3][j]) for r in table]) for j, m in enumerate(models)]
    lines = []
    head = [_pad(h, w) for h, w in zip(header[:3], widths)] + [_pad(m, w) for m, w in zip(models, col_widths)]
    lines.append("  ".join(head).rstrip())
    lines.append("  ".join("-" * w for w in widths + col_widths))
    last_aspect = None
    for aspect, qid, label, shown in table:
        parts = [_pad(aspect if aspect != last_aspect else "", widths[0]), _pad(qid, widths[1]), _pad(label, widths[2])]
        parts += [_pad(g, w) for g, w in zip(shown, col_widths)]
        lines.append("  ".join(parts).rstrip())
        last_aspect = aspect
    lines.append("")
    lines.append(LEGEND)
    if notes:
        lines.append("")
        lines.extend(notes)
    return "\n".join(lines) + "\n"


def _tsv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def trend_table_tsv(analyses: Sequence, models: Sequence[str], factor_names: Optional[Mapping] = None) -> str:
    """Machine-readable twin of :func:`render_trend_table` (trend names instead of glyphs)."""
    header, rows = trend_grid(analyses, models, factor_names)
    out = [[aspect, qid, label, *[t or "" for t in trends]] for aspect, qid, fid, label, trends in rows]
    return _tsv(header, out)


def _fmt(value, digits=3):
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return value


ANALYSIS_COLUMNS = (
    "model_id", "questionnaire_id", "factor_id", "family", "statistic", "effect", "p_value", "stars",
    "delta_12_24", "stars_12_24", "delta_24_36", "stars_24_36", "delta_12_36", "stars_12_36", "trend",
)


def analysis_table_tsv(records: Sequence[Mapping]) -> str:
    """Per-factor statistics: omnibus test, signed pairwise deltas with stars, and raw p-values."""
    extra = ("p_adj_12_24", "p_adj_24_36", "p_adj_12_36", "normality_W", "normality_p", "n_subjects", "note")
    header = ANALYSIS_COLUMNS + extra
    rows = []
    for r in sorted(records, key=lambda r: (r["model_id"], r["questionnaire_id"], r["factor_id"])):
        rows.append([_fmt(r.get(c), 3 if not c.startswith(("p_", "normality_p")) else 6) for c in header])
    return _tsv(header, rows)


def render_analysis_table(records: Sequence[Mapping]) -> str:
    lines = []
    header = ("model", "questionnaire", "factor", "test", "stat", "effect", "12-24", "24-36", "12-36", "trend")
    rows = []
    for r in sorted(records, key=lambda r: (r["model_id"], r["questionnaire_id"], r["factor_id"])):
        pairs = []
        for key in ("12_24", "24_36", "12_36"):
            d = r.get(f"delta_{key}")
            pairs.append("-" if d is None else f"{d:+.2f}{r.get(f'stars_{key}', '')}")
        rows.append((
            r["model_id"], r["questionnaire_id"], r["factor_id"], r["family"],
            f"{r['statistic']:.3f}{r.get('stars', '')}", f"{r['effect']:.3f}", *pairs, r["trend"],
        ))
    widths = [max([len(h)] + [len(str(row[i])) for row in rows]) for i, h in enumerate(header)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_topic_report(ranks: Mapping[str, Sequence[TopicRank]], excluded: Optional[Mapping[str, int]] = None) -> str:
    lines = []
    for model_id in sorted(ranks):
        lines.append(f"{model_id}")
        for pos, r in enumerate(ranks[model_id], start=1):
            theme = f" (Theme {r.dominant_theme})" if r.dominant_theme is not None else ""
            lines.append(f"  {pos:2d}. #{r.cluster_id:03d}  n={r.count:<5d} {', '.join(r.keywords)}{theme}")
        skipped = (excluded or {}).get(model_id, 0)
        if skipped:
            lines.append(f"  empty answers excluded from clustering: {skipped}")
        lines.append("")
    return "\n".join(lines)


def topic_report_tsv(ranks: Mapping[str, Sequence[TopicRank]]) -> str:
    rows = []
    for model_id in sorted(ranks):
        for pos, r in enumerate(ranks[model_id], start=1):
            rows.append([model_id, pos, r.cluster_id, r.count, "" if r.dominant_theme is None else r.dominant_theme,
                         " ".join(r.keywords)])
    return _tsv(["model_id", "rank", "cluster_id", "count", "dominant_theme", "keywords"], rows)
