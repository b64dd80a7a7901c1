"""Prevalence scores and the ablation-effect correlation.

A query's prevalence score counts how many of the first ten non-government
search results could answer it (0-10); the scores are filled in by hand and
ingested from a CSV. The correlation pairs each non-control query's ablation
difference with its prevalence score.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .coding import QueryDifference

SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class PrevalenceScore:
    query_id: int
    score: int
    evidence_urls: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 10:
            raise ValueError(f"prevalence score must be in [0, 10], got {self.score}")


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def prevalence_correlation(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Pearson correlation of paired observations with a two-sided p-value
    from the exact t-transform of r at n-2 degrees of freedom.

    Raises ValueError for fewer than 3 pairs or zero variance in either
    variable.
    """
    if len(x) != len(y):
        raise ValueError("x and y must be the same length")
    n = len(x)
    if n < 3:
        raise ValueError(f"need at least 3 paired observations, got {n}")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("undefined correlation: zero variance in an input")
    r = float(np.dot(xc, yc) / math.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * float(stats.t.sf(abs(t), df=n - 2))
    return CorrelationResult(r=r, n=n, p_value=p)


def pair_differences_with_prevalence(
    differences: Sequence[QueryDifference],
    scores: Sequence[PrevalenceScore],
) -> tuple[list[float], list[float]]:
    """Pair per-query differences with prevalence scores by query id.

    Control queries are excluded. Queries without a prevalence score are
    skipped (the scores file may cover a subset).
    """
    by_id = {s.query_id: s for s in scores}
    xs, ys = [], []
    for diff in differences:
        if diff.is_control:
            continue
        score = by_id.get(diff.query_id)
        if score is None:
            continue
        xs.append(float(diff.difference))
        ys.append(float(score.score))
    return xs, ys


# ---------------------------------------------------------------------------
# prevalence.csv: query_id, score[, evidence urls ...]
# ---------------------------------------------------------------------------

def load_prevalence(path: Path | str) -> list[PrevalenceScore]:
    scores = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("query_id", ""):
                continue
            scores.append(
                PrevalenceScore(
                    query_id=int(row[0]),
                    score=int(row[1]),
                    evidence_urls=tuple(cell.strip() for cell in row[2:] if cell.strip()),
                )
            )
    return scores


def save_prevalence(scores: Iterable[PrevalenceScore], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "score"])
        for s in scores:
            writer.writerow([s.query_id, s.score, *s.evidence_urls])
