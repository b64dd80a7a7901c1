"""Statistic-recall probes: prompt rendering, outcome classification, and the
full datasets-by-models-by-settings result matrix.

Base models get completion prompts rendered from four templates at 0, 1, or
5 shots, where shots are genuine earlier (year, value) pairs from the
statistic's history, listed chronologically with the probe year's value
elided. Instruct models get a single direct question under a fixed system
prompt. A response is Recalled when its first extracted number matches the
published value under the configured comparator; instruct models may instead
be Reticent (refusal or no number at all), which is never treated as
evidence of absence.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .models import (
    BackendUnavailableError,
    GenerationParams,
    ModelHandle,
    generate,
)

TEMPLATE_IDS = ("a", "b", "c", "d")
DEFAULT_SHOTS = (0, 1, 5)

INSTRUCT_SYSTEM_PROMPT = (
    "You are a helpful AI assistant. Answer the following question to the "
    "best of your ability. Keep your answer concise, returning a single "
    "number if appropriate."
)

DEFAULT_RETICENCE_PHRASES = (
    "i cannot",
    "i'm sorry",
    "i don't have access",
    "as an ai",
)


@dataclass(frozen=True)
class StatisticRecord:
    dataset_abbrev: str
    statistic_name: str
    collecting_org: str
    year_label: str
    value: str  # decimal exactly as printed in the publication
    unit: str = ""
    is_control: bool = False
    history: tuple[tuple[str, str], ...] = ()  # (year_label, value), oldest first

    def __post_init__(self) -> None:
        if not self.history:
            raise ValueError(f"{self.dataset_abbrev}: history must not be empty")
        last_year, last_value = self.history[-1]
        if last_year != self.year_label or last_value != self.value:
            raise ValueError(
                f"{self.dataset_abbrev}: history must end with the probe year entry "
                f"({self.year_label}, {self.value})"
            )
        Decimal(self.value)  # must parse

    @property
    def value_decimal(self) -> Decimal:
        return Decimal(self.value)

    def prior_entries(self) -> tuple[tuple[str, str], ...]:
        return self.history[:-1]


class ProbeMode(Enum):
    BASE_COMPLETION = "base_completion"
    INSTRUCT_QA = "instruct_qa"


class Outcome(Enum):
    RECALLED = "recalled"
    NOT_RECALLED = "not_recalled"
    RETICENT = "reticent"


@dataclass(frozen=True)
class ProbeSpec:
    dataset_abbrev: str
    model_id: str
    mode: ProbeMode
    template_id: str | None = None  # base completion only
    shots: int | None = None  # base completion only

    def __post_init__(self) -> None:
        if self.mode is ProbeMode.BASE_COMPLETION:
            if self.template_id not in TEMPLATE_IDS:
                raise ValueError(f"template must be one of {TEMPLATE_IDS}, got {self.template_id}")
            if self.shots is None or self.shots < 0:
                raise ValueError("base completion probes need a non-negative shot count")
        else:
            if self.template_id is not None or self.shots is not None:
                raise ValueError("instruct probes take no template or shot count")

    def setting(self) -> str:
        if self.mode is ProbeMode.INSTRUCT_QA:
            return "instruct"
        return f"{self.template_id}/{self.shots}-shot"


@dataclass(frozen=True)
class ProbeOutcome:
    spec: ProbeSpec
    raw_response: str
    extracted_value: Decimal | None
    outcome: Outcome


# ---------------------------------------------------------------------------
# Prompt rendering
# ---------------------------------------------------------------------------

def _line(template_id: str, record: StatisticRecord, year: str, value: str | None) -> str:
    name = record.statistic_name
    if template_id == "a":
        base = f"the {name} in {year} was"
    elif template_id == "b":
        base = f"according to the {record.collecting_org}, the {name} in {year} was"
    elif template_id == "c":
        base = f"{name} {year}:"
    elif template_id == "d":
        return f"{year}, {value}" if value is not None else f"{year},"
    else:
        raise ValueError(f"unknown template {template_id!r}")
    return f"{base} {value}" if value is not None else base


def render_prompt(record: StatisticRecord, template_id: str, shots: int) -> str:
    """Render a completion probe. A k-shot prompt lists the k most recent
    prior (year, value) pairs in chronological order, then the probe year with
    its value elided."""
    if template_id not in TEMPLATE_IDS:
        raise ValueError(f"template must be one of {TEMPLATE_IDS}, got {template_id!r}")
    prior = record.prior_entries()
    if shots > len(prior):
        raise ValueError(
            f"{record.dataset_abbrev}: {shots}-shot prompt needs {shots} prior history "
            f"entries, only {len(prior)} available"
        )
    selected = prior[len(prior) - shots :] if shots else ()
    lines = []
    if template_id == "d":
        lines.append(f"'year', '{record.statistic_name}'")
    for year, value in selected:
        lines.append(_line(template_id, record, year, value))
    lines.append(_line(template_id, record, record.year_label, None))
    return "\n".join(lines)


def render_instruct_probe(record: StatisticRecord) -> tuple[str, str]:
    """(system prompt, user question) for instruct-model probing."""
    question = f"What was the {record.statistic_name} in {record.year_label}?"
    return INSTRUCT_SYSTEM_PROMPT, question


# ---------------------------------------------------------------------------
# Response scoring
# ---------------------------------------------------------------------------

_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")


def extract_value(response: str) -> Decimal | None:
    """First numeric token of the response after normalization: thousands
    separators inside numbers dropped, currency and percent sigils stripped,
    surrounding words ignored."""
    text = re.sub(r"(?<=\d),(?=\d{3}\b)", "", response)
    text = re.sub(r"[£$€%]", " ", text)
    match = _NUMBER.search(text)
    if not match:
        return None
    try:
        return Decimal(match.group())
    except InvalidOperation:  # pragma: no cover - regex precludes this
        return None


@dataclass(frozen=True)
class ValueComparator:
    """Exact mode compares decimals (trailing zeros are insignificant, so
    "52.60" matches "52.6"). Relative mode tolerates a fractional deviation,
    and always accepts anything exact mode accepts."""

    relative_tolerance: float | None = None  # e.g. 0.005 for 0.5%

    def matches(self, extracted: Decimal, truth: Decimal) -> bool:
        if extracted == truth:
            return True
        if self.relative_tolerance is None:
            return False
        if truth == 0:
            return False
        return abs(float(extracted - truth) / float(truth)) <= self.relative_tolerance


@dataclass(frozen=True)
class ReticenceConfig:
    phrases: tuple[str, ...] = DEFAULT_RETICENCE_PHRASES

    def is_reticent(self, response: str) -> bool:
        lowered = response.lower()
        if any(p in lowered for p in self.phrases):
            return True
        return extract_value(response) is None


def load_reticence_phrases(path: Path | str) -> ReticenceConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return ReticenceConfig(phrases=tuple(p.lower() for p in data["phrases"]))


def classify(
    spec: ProbeSpec,
    response: str,
    record: StatisticRecord,
    comparator: ValueComparator = ValueComparator(),
    reticence: ReticenceConfig = ReticenceConfig(),
) -> ProbeOutcome:
    """Total and deterministic. Reticent applies only to instruct probes."""
    if spec.mode is ProbeMode.INSTRUCT_QA and reticence.is_reticent(response):
        return ProbeOutcome(spec, response, extract_value(response), Outcome.RETICENT)
    value = extract_value(response)
    if value is not None and comparator.matches(value, record.value_decimal):
        outcome = Outcome.RECALLED
    else:
        outcome = Outcome.NOT_RECALLED
    return ProbeOutcome(spec, response, value, outcome)


# ---------------------------------------------------------------------------
# The result matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelFamily:
    """A base/instruct pair probed together. Either side may be omitted."""

    name: str
    base: ModelHandle | None = None
    instruct: ModelHandle | None = None


@dataclass(frozen=True)
class ProbeFailure:
    spec: ProbeSpec
    error: str


@dataclass
class ResultMatrix:
    records: list[StatisticRecord]
    families: list[str]
    templates: tuple[str, ...]
    shots: tuple[int, ...]
    outcomes: list[ProbeOutcome] = field(default_factory=list)
    failures: list[ProbeFailure] = field(default_factory=list)
    family_models: dict[str, dict[str, str | None]] = field(default_factory=dict)

    def non_control_outcomes(self) -> list[ProbeOutcome]:
        controls = {r.dataset_abbrev for r in self.records if r.is_control}
        return [o for o in self.outcomes if o.spec.dataset_abbrev not in controls]

    def counts(self, include_controls: bool = False) -> dict[str, int]:
        pool = self.outcomes if include_controls else self.non_control_outcomes()
        return {
            outcome.value: sum(1 for o in pool if o.outcome is outcome)
            for outcome in Outcome
        }

    def expected_non_control_cells(self) -> int:
        d = sum(1 for r in self.records if not r.is_control)
        m = len(self.families)
        return d * m * (len(self.shots) * len(self.templates) + 1)

    def cell(self, dataset: str, family: str, setting: str) -> ProbeOutcome | None:
        for o in self.outcomes:
            if (
                o.spec.dataset_abbrev == dataset
                and o.spec.model_id.startswith(family)
                and o.spec.setting() == setting
            ):
                return o
        return None


_OUTCOME_MARK = {Outcome.RECALLED: "R", Outcome.NOT_RECALLED: "X", Outcome.RETICENT: "*"}


def run_matrix(
    records: Sequence[StatisticRecord],
    families: Sequence[ModelFamily],
    comparator: ValueComparator = ValueComparator(),
    params: GenerationParams = GenerationParams(),
    templates: Sequence[str] = TEMPLATE_IDS,
    shots: Sequence[int] = DEFAULT_SHOTS,
    reticence: ReticenceConfig = ReticenceConfig(),
    retry_cap: int = 2,
) -> ResultMatrix:
    """Execute every probe cell. Transient backend failures are retried up to
    retry_cap times, then recorded as failures without stopping the run."""
    matrix = ResultMatrix(
        records=list(records),
        families=[f.name for f in families],
        templates=tuple(templates),
        shots=tuple(shots),
        family_models={
            f.name: {
                "base": f.base.model_id if f.base else None,
                "instruct": f.instruct.model_id if f.instruct else None,
            }
            for f in families
        },
    )

    def attempt(handle: ModelHandle, system: str | None, prompt: str, spec: ProbeSpec, record):
        last = None
        for _ in range(retry_cap + 1):
            try:
                response = generate(handle, system, prompt, params)
            except BackendUnavailableError as exc:
                last = exc
                continue
            matrix.outcomes.append(classify(spec, response, record, comparator, reticence))
            return
        matrix.failures.append(ProbeFailure(spec, f"{type(last).__name__}: {last}"))

    for record in records:
        for family in families:
            if family.base is not None:
                for template_id in templates:
                    for k in shots:
                        spec = ProbeSpec(
                            dataset_abbrev=record.dataset_abbrev,
                            model_id=family.base.model_id,
                            mode=ProbeMode.BASE_COMPLETION,
                            template_id=template_id,
                            shots=k,
                        )
                        prompt = render_prompt(record, template_id, k)
                        attempt(family.base, None, prompt, spec, record)
            if family.instruct is not None:
                spec = ProbeSpec(
                    dataset_abbrev=record.dataset_abbrev,
                    model_id=family.instruct.model_id,
                    mode=ProbeMode.INSTRUCT_QA,
                )
                system, question = render_instruct_probe(record)
                attempt(family.instruct, system, question, spec, record)
    return matrix


def matrix_to_csv(matrix: ResultMatrix, path: Path | str) -> None:
    """One row per probe cell: dataset, control flag, model, setting, outcome,
    extracted value."""
    import csv as _csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    controls = {r.dataset_abbrev for r in matrix.records if r.is_control}
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["dataset", "is_control", "model", "setting", "outcome", "mark", "extracted_value"])
        for o in matrix.outcomes:
            writer.writerow(
                [
                    o.spec.dataset_abbrev,
                    int(o.spec.dataset_abbrev in controls),
                    o.spec.model_id,
                    o.spec.setting(),
                    o.outcome.value,
                    _OUTCOME_MARK[o.outcome],
                    "" if o.extracted_value is None else str(o.extracted_value),
                ]
            )


def matrix_to_json(matrix: ResultMatrix, path: Path | str) -> None:
    """Full matrix with raw responses."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "families": matrix.families,
        "family_models": matrix.family_models,
        "templates": list(matrix.templates),
        "shots": list(matrix.shots),
        "records": [
            {
                "dataset_abbrev": r.dataset_abbrev,
                "statistic_name": r.statistic_name,
                "collecting_org": r.collecting_org,
                "year_label": r.year_label,
                "value": r.value,
                "unit": r.unit,
                "is_control": r.is_control,
                "history": [list(entry) for entry in r.history],
            }
            for r in matrix.records
        ],
        "counts_non_control": matrix.counts(include_controls=False),
        "counts_all": matrix.counts(include_controls=True),
        "outcomes": [
            {
                "dataset": o.spec.dataset_abbrev,
                "model": o.spec.model_id,
                "mode": o.spec.mode.value,
                "template": o.spec.template_id,
                "shots": o.spec.shots,
                "setting": o.spec.setting(),
                "outcome": o.outcome.value,
                "extracted_value": None if o.extracted_value is None else str(o.extracted_value),
                "raw_response": o.raw_response,
            }
            for o in matrix.outcomes
        ],
        "failures": [
            {"dataset": f.spec.dataset_abbrev, "model": f.spec.model_id, "setting": f.spec.setting(), "error": f.error}
            for f in matrix.failures
        ],
    }
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def oracle_responder(
    records: Sequence[StatisticRecord],
    known_datasets: set[str],
    wrong_value: str = "0",
    reticent_datasets: set[str] | None = None,
):
    """Scripted-double responder: answers the published value for known
    datasets, a wrong number otherwise, and a refusal for reticent ones.
    Matches probes to records by statistic name."""
    reticent_datasets = reticent_datasets or set()

    def respond(system_prompt: str | None, prompt: str) -> str:
        for record in records:
            if record.statistic_name in prompt:
                if record.dataset_abbrev in reticent_datasets:
                    return "I cannot answer the question"
                if record.dataset_abbrev in known_datasets:
                    return record.value
                return wrong_value
        return wrong_value

    return respond


def load_matrix_json(path: Path | str) -> ResultMatrix:
    """Rebuild a ResultMatrix from a matrix.json export (for reporting)."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    records = [
        StatisticRecord(
            dataset_abbrev=r["dataset_abbrev"],
            statistic_name=r["statistic_name"],
            collecting_org=r["collecting_org"],
            year_label=r["year_label"],
            value=r["value"],
            unit=r.get("unit", ""),
            is_control=bool(r.get("is_control", False)),
            history=tuple((y, v) for y, v in r["history"]),
        )
        for r in payload["records"]
    ]
    matrix = ResultMatrix(
        records=records,
        families=payload["families"],
        templates=tuple(payload["templates"]),
        shots=tuple(payload["shots"]),
        family_models=payload.get("family_models", {}),
    )
    for o in payload["outcomes"]:
        spec = ProbeSpec(
            dataset_abbrev=o["dataset"],
            model_id=o["model"],
            mode=ProbeMode(o["mode"]),
            template_id=o.get("template"),
            shots=o.get("shots"),
        )
        matrix.outcomes.append(
            ProbeOutcome(
                spec=spec,
                raw_response=o.get("raw_response", ""),
                extracted_value=None
                if o.get("extracted_value") is None
                else Decimal(o["extracted_value"]),
                outcome=Outcome(o["outcome"]),
            )
        )
    return matrix


# ---------------------------------------------------------------------------
# records.jsonl
# ---------------------------------------------------------------------------

def save_records(records: Iterable[StatisticRecord], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "dataset_abbrev": r.dataset_abbrev,
                        "statistic_name": r.statistic_name,
                        "collecting_org": r.collecting_org,
                        "year_label": r.year_label,
                        "value": r.value,
                        "unit": r.unit,
                        "is_control": r.is_control,
                        "history": [list(entry) for entry in r.history],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_records(path: Path | str) -> list[StatisticRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.append(
                StatisticRecord(
                    dataset_abbrev=rec["dataset_abbrev"],
                    statistic_name=rec["statistic_name"],
                    collecting_org=rec["collecting_org"],
                    year_label=rec["year_label"],
                    value=rec["value"],
                    unit=rec.get("unit", ""),
                    is_control=bool(rec.get("is_control", False)),
                    history=tuple((y, v) for y, v in rec.get("history", [])),
                )
            )
    return records
