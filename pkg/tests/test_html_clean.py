from __future__ import annotations

import re
from pathlib import Path

import pytest

from provaudit.html_clean import NoExtractableTextError, clean_html

GOLDEN = Path(__file__).parent / "golden"
FIXTURE_PAGES = Path(__file__).parents[1] / "src" / "provaudit" / "fixtures" / "target_pages"


def test_single_paragraph() -> None:
    assert clean_html("<html><body><p>Hello</p></body></html>") == "Hello"


def test_script_stripped_between_paragraphs() -> None:
    assert clean_html("<p>A</p><script>x()</script><p>B</p>") == "A\nB"


def test_style_and_nav_removed() -> None:
    html = "<style>p{color:red}</style><nav><a href='/'>Home</a></nav><p>Body text</p>"
    assert clean_html(html) == "Body text"


def test_whitespace_collapsed() -> None:
    assert clean_html("<p>a   b\n\t c</p>") == "a b c"


def test_entities_unescaped() -> None:
    assert clean_html("<p>fish &amp; chips &pound;5</p>") == "fish & chips £5"


def test_no_taglike_residue() -> None:
    cleaned = clean_html("<p>payments &lt;b&gt; and 1 &lt; 2 and x&lt;y</p>")
    assert re.search(r"<[a-zA-Z/]", cleaned) is None


def test_all_markup_page_raises() -> None:
    with pytest.raises(NoExtractableTextError, match="no extractable text"):
        clean_html("<script>x()</script><style>a{}</style>")


def test_empty_input_rejected() -> None:
    with pytest.raises(ValueError):
        clean_html("")


def test_saved_page_matches_golden() -> None:
    raw = (FIXTURE_PAGES / "universal-credit-rates.html").read_text(encoding="utf-8")
    golden = (GOLDEN / "universal_credit_rates.txt").read_text(encoding="utf-8")
    assert clean_html(raw) == golden
