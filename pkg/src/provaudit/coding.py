"""Annotations and error tallies.

A human annotator attaches a (possibly empty) set of codes to each captured
response. Tallies count code instances by class, grouped per model or per
query and split by phase. Starred codes are reported in their own column and
never inflate the type-2 error count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .codes import CodeClass, CodeLabel, code_class, parse_codes
from .evaluation import Phase


@dataclass(frozen=True)
class ResponseKey:
    query_id: int
    model_id: str
    phase: Phase


@dataclass(frozen=True)
class Annotation:
    response: ResponseKey
    annotator_id: str
    codes: frozenset[CodeLabel]
    note: str = ""


class GroupBy(Enum):
    MODEL = "model"
    QUERY = "query"


@dataclass(frozen=True)
class ErrorTally:
    group: str | int  # model_id or query_id
    phase: Phase
    type1: int
    type2: int
    type2_star: int


def validate_annotations(annotations: Sequence[Annotation]) -> None:
    seen: set[tuple[ResponseKey, str]] = set()
    for ann in annotations:
        key = (ann.response, ann.annotator_id)
        if key in seen:
            raise ValueError(
                f"duplicate annotation for response {ann.response} by {ann.annotator_id}"
            )
        seen.add(key)


def tally(
    annotations: Sequence[Annotation],
    by: GroupBy,
    groups: Sequence[str | int] | None = None,
) -> list[ErrorTally]:
    """Count code instances per (group, phase) cell.

    Groups with no annotations still appear with zeros; by default the group
    universe is whatever the annotations reference, but an explicit `groups`
    list (e.g. all models in the evaluation set) widens it.
    """
    validate_annotations(annotations)
    universe: set[str | int] = set(groups or [])
    for ann in annotations:
        universe.add(ann.response.model_id if by is GroupBy.MODEL else ann.response.query_id)

    counts: dict[tuple[str | int, Phase], dict[CodeClass, int]] = {
        (g, phase): {c: 0 for c in CodeClass} for g in universe for phase in Phase
    }
    for ann in annotations:
        group = ann.response.model_id if by is GroupBy.MODEL else ann.response.query_id
        cell = counts[(group, ann.response.phase)]
        for code in ann.codes:
            cell[code_class(code)] += 1

    tallies = [
        ErrorTally(
            group=g,
            phase=phase,
            type1=cell[CodeClass.TYPE1],
            type2=cell[CodeClass.TYPE2],
            type2_star=cell[CodeClass.TYPE2_STAR],
        )
        for (g, phase), cell in counts.items()
    ]
    tallies.sort(key=lambda t: (str(t.group), t.phase.value))
    return tallies


@dataclass(frozen=True)
class QueryDifference:
    query_id: int
    type2_pre: int
    type2_post: int
    difference: int  # type2 post minus pre
    is_control: bool = False


@dataclass(frozen=True)
class ControlCheck:
    """The intrusiveness guard: a non-zero difference on the control query
    means the ablation reached beyond the target material."""

    query_id: int
    difference: int
    passed: bool


def ablation_effect(
    tallies_by_query: Sequence[ErrorTally],
    control_query_ids: set[int] | None = None,
) -> tuple[list[QueryDifference], list[ControlCheck]]:
    """Per-query type-2 difference (post minus pre), controls reported apart."""
    control_query_ids = control_query_ids or set()
    pre = {t.group: t for t in tallies_by_query if t.phase is Phase.PRE}
    post = {t.group: t for t in tallies_by_query if t.phase is Phase.POST}
    differences = []
    checks = []
    for qid in sorted(set(pre) | set(post), key=lambda g: int(g)):
        t2_pre = pre[qid].type2 if qid in pre else 0
        t2_post = post[qid].type2 if qid in post else 0
        diff = t2_post - t2_pre
        is_control = int(qid) in control_query_ids
        differences.append(QueryDifference(int(qid), t2_pre, t2_post, diff, is_control))
        if is_control:
            checks.append(ControlCheck(int(qid), diff, passed=diff == 0))
    return differences, checks


# ---------------------------------------------------------------------------
# annotations.jsonl
# ---------------------------------------------------------------------------

def save_annotations(annotations: Iterable[Annotation], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(annotation_to_record(ann), ensure_ascii=False) + "\n")


def annotation_to_record(ann: Annotation) -> dict:
    return {
        "query_id": ann.response.query_id,
        "model_id": ann.response.model_id,
        "phase": ann.response.phase.value,
        "annotator_id": ann.annotator_id,
        "codes": sorted(c.value for c in ann.codes),
        "note": ann.note,
    }


def annotation_from_record(rec: dict) -> Annotation:
    return Annotation(
        response=ResponseKey(
            query_id=int(rec["query_id"]),
            model_id=rec["model_id"],
            phase=Phase(rec["phase"]),
        ),
        annotator_id=rec.get("annotator_id", ""),
        codes=parse_codes(rec.get("codes", [])),
        note=rec.get("note", ""),
    )


def load_annotations(path: Path | str) -> list[Annotation]:
    annotations = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                annotations.append(annotation_from_record(json.loads(line)))
    validate_annotations(annotations)
    return annotations


def save_tallies(tallies: Iterable[ErrorTally], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for t in tallies:
            fh.write(
                json.dumps(
                    {
                        "group": t.group,
                        "phase": t.phase.value,
                        "type1": t.type1,
                        "type2": t.type2,
                        "type2_star": t.type2_star,
                    }
                )
                + "\n"
            )


def load_tallies(path: Path | str) -> list[ErrorTally]:
    tallies = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            tallies.append(
                ErrorTally(
                    group=rec["group"],
                    phase=Phase(rec["phase"]),
                    type1=int(rec["type1"]),
                    type2=int(rec["type2"]),
                    type2_star=int(rec["type2_star"]),
                )
            )
    return tallies
