from __future__ import annotations

import pytest

from provaudit.codes import CodeClass, CodeLabel, code_class, palette, parse_code, parse_codes


def test_every_code_maps_to_exactly_one_class() -> None:
    for label in CodeLabel:
        assert code_class(label) in CodeClass


def test_class_partition_matches_scheme() -> None:
    type1 = {c for c in CodeLabel if code_class(c) is CodeClass.TYPE1}
    type2 = {c for c in CodeLabel if code_class(c) is CodeClass.TYPE2}
    star = {c for c in CodeLabel if code_class(c) is CodeClass.TYPE2_STAR}
    assert {c.value for c in type1} == {"1a", "1b"}
    assert {c.value for c in type2} == {"2x", "2a", "2b", "2c^", "2c'", "2d", "2e", "2f^", "2f'"}
    assert {c.value for c in star} == {"2c*", "2f*"}
    assert type1 | type2 | star == set(CodeLabel)


def test_parse_round_trip() -> None:
    for label in CodeLabel:
        assert parse_code(label.value) is label


def test_parse_rejects_unknown_code() -> None:
    with pytest.raises(ValueError, match="9z"):
        parse_code("9z")


def test_parse_codes_builds_a_set() -> None:
    assert parse_codes(["2d", "2d", "1a"]) == frozenset({CodeLabel.WRONG_TEXT, CodeLabel.POOR_FLUENCY})


def test_palette_covers_scheme_with_descriptions() -> None:
    entries = palette()
    assert {e["code"] for e in entries} == {c.value for c in CodeLabel}
    assert all(e["description"] for e in entries)
    assert all(e["code_class"] in {c.value for c in CodeClass} for e in entries)
