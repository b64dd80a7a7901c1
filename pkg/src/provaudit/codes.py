"""Qualitative coding scheme for grading model responses against a ground truth.

Two main classes of code: structural problems with the language itself
(type 1) and knowledge problems relative to the reference answer (type 2).
Codes marked with a star form a third class: added material that is absent
from the reference but factually correct and relevant, i.e. knowledge the
model sourced from somewhere else. Starred codes are tallied separately and
never counted as type-2 errors.
"""

from __future__ import annotations

from enum import Enum


class CodeClass(Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    TYPE2_STAR = "type2_star"


class CodeLabel(Enum):
    POOR_FLUENCY = "1a"
    FORMATTING_ERROR = "1b"
    NOT_AN_ANSWER = "2x"
    WRONG_VALUE = "2a"
    MISSING_VALUE = "2b"
    EXTRA_VALUE_IRRELEVANT = "2c^"
    EXTRA_VALUE_WRONG = "2c'"
    EXTRA_VALUE_SUPPORTED = "2c*"
    WRONG_TEXT = "2d"
    MISSING_TEXT = "2e"
    EXTRA_TEXT_IRRELEVANT = "2f^"
    EXTRA_TEXT_WRONG = "2f'"
    EXTRA_TEXT_SUPPORTED = "2f*"

    def __str__(self) -> str:
        return self.value


_CLASS_OF: dict[CodeLabel, CodeClass] = {
    CodeLabel.POOR_FLUENCY: CodeClass.TYPE1,
    CodeLabel.FORMATTING_ERROR: CodeClass.TYPE1,
    CodeLabel.NOT_AN_ANSWER: CodeClass.TYPE2,
    CodeLabel.WRONG_VALUE: CodeClass.TYPE2,
    CodeLabel.MISSING_VALUE: CodeClass.TYPE2,
    CodeLabel.EXTRA_VALUE_IRRELEVANT: CodeClass.TYPE2,
    CodeLabel.EXTRA_VALUE_WRONG: CodeClass.TYPE2,
    CodeLabel.EXTRA_VALUE_SUPPORTED: CodeClass.TYPE2_STAR,
    CodeLabel.WRONG_TEXT: CodeClass.TYPE2,
    CodeLabel.MISSING_TEXT: CodeClass.TYPE2,
    CodeLabel.EXTRA_TEXT_IRRELEVANT: CodeClass.TYPE2,
    CodeLabel.EXTRA_TEXT_WRONG: CodeClass.TYPE2,
    CodeLabel.EXTRA_TEXT_SUPPORTED: CodeClass.TYPE2_STAR,
}

DESCRIPTIONS: dict[CodeLabel, str] = {
    CodeLabel.POOR_FLUENCY: "Disfluent or garbled language",
    CodeLabel.FORMATTING_ERROR: "Broken or inconsistent formatting",
    CodeLabel.NOT_AN_ANSWER: "Does not address the question asked",
    CodeLabel.WRONG_VALUE: "States a number, date, or place that contradicts the reference answer",
    CodeLabel.MISSING_VALUE: "Omits a number, date, or place given in the reference answer",
    CodeLabel.EXTRA_VALUE_IRRELEVANT: "Adds a number, date, or place not in the reference; accurate but beside the point",
    CodeLabel.EXTRA_VALUE_WRONG: "Adds a number, date, or place not in the reference; inaccurate or invented",
    CodeLabel.EXTRA_VALUE_SUPPORTED: "Adds a number, date, or place not in the reference; accurate and relevant (outside knowledge)",
    CodeLabel.WRONG_TEXT: "States textual information that contradicts the reference answer",
    CodeLabel.MISSING_TEXT: "Omits textual information given in the reference answer",
    CodeLabel.EXTRA_TEXT_IRRELEVANT: "Adds textual information not in the reference; accurate but beside the point",
    CodeLabel.EXTRA_TEXT_WRONG: "Adds textual information not in the reference; inaccurate or invented",
    CodeLabel.EXTRA_TEXT_SUPPORTED: "Adds textual information not in the reference; accurate and relevant (outside knowledge)",
}

_BY_TOKEN: dict[str, CodeLabel] = {label.value: label for label in CodeLabel}


def code_class(code: CodeLabel) -> CodeClass:
    return _CLASS_OF[code]


def parse_code(token: str) -> CodeLabel:
    """Parse a serialized code token such as "2d" or "2c^".

    Raises ValueError for anything outside the coding scheme.
    """
    try:
        return _BY_TOKEN[token]
    except KeyError:
        valid = ", ".join(sorted(_BY_TOKEN))
        raise ValueError(f"unknown code {token!r}; valid codes: {valid}") from None


def parse_codes(tokens: list[str] | tuple[str, ...]) -> frozenset[CodeLabel]:
    return frozenset(parse_code(t) for t in tokens)


def palette() -> list[dict[str, str]]:
    """Machine-readable palette of all codes, grouped by class.

    Single source for every consumer (tallying, the annotation API, and the
    browser console) so the scheme is never duplicated by hand.
    """
    return [
        {
            "code": label.value,
            "code_class": _CLASS_OF[label].value,
            "description": DESCRIPTIONS[label],
        }
        for label in CodeLabel
    ]
