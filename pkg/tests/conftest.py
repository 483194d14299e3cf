import csv
from pathlib import Path

import pytest

from psychdepth.stats import OmnibusResult, PairwiseComparison, classify_trend

FIXTURES = Path(__file__).parent / "fixtures"

# star marks stand in for p-values: any value inside the marked band
STAR_P = {"***": 0.0005, "**": 0.005, "*": 0.03, "": 0.5}


def appendix_rows() -> list[dict]:
    with open(FIXTURES / "appendix_trends.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def row_omnibus(row) -> OmnibusResult:
    return OmnibusResult("friedman", 0.0, float(row["omnibus_stat"]), (2,), STAR_P[row["omnibus_stars"]])


def row_pairs(row) -> list[PairwiseComparison]:
    pairs = []
    for (a, b), key in zip(((12, 24), (24, 36), (12, 36)), ("12_24", "24_36", "12_36")):
        delta = float(row[f"delta_{key}"] or 0.0)
        p = STAR_P[row[f"stars_{key}"]] if row[f"delta_{key}"] else 1.0
        pairs.append(PairwiseComparison((a, b), delta, delta, p, p, p < 0.05, "wilcoxon"))
    return pairs


def row_trend(row, alpha=0.05) -> str:
    return classify_trend(row_omnibus(row), row_pairs(row), alpha)


@pytest.fixture(scope="session")
def appendix():
    return appendix_rows()


# acceptance criteria append "criterion N: PASS|FAIL - detail" lines here
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
