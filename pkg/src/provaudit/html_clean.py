"""First-pass HTML to plaintext cleaning for fetched web pages.

Strips script/style/navigation chrome, turns block elements into
newline-separated paragraphs, and collapses whitespace. Hand editing of the
output is still expected for corpus curation; this only automates the
mechanical part.
"""

from __future__ import annotations

import re
from html.parser import HTMLParser


class NoExtractableTextError(ValueError):
    """Raised when a page yields no text after cleaning."""


_SKIP_TAGS = {"script", "style", "noscript", "template", "svg", "head"}
_CHROME_TAGS = {"nav", "header", "footer", "aside"}
_BLOCK_TAGS = {
    "p", "div", "section", "article", "main", "li", "ul", "ol", "br", "hr",
    "tr", "table", "h1", "h2", "h3", "h4", "h5", "h6", "blockquote", "pre",
    "dt", "dd", "figcaption", "summary", "details",
}

# A leftover "<" directly followed by a letter or slash would look like markup.
_TAGLIKE = re.compile(r"<(?=[a-zA-Z/])")

# Block boundary marker; raw newlines inside text data are ordinary whitespace.
_BREAK = "\x00"


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag in _SKIP_TAGS or tag in _CHROME_TAGS:
            self._skip_depth += 1
            return
        if tag in _BLOCK_TAGS:
            self._parts.append(_BREAK)

    def handle_startendtag(self, tag: str, attrs) -> None:
        if tag in _BLOCK_TAGS:
            self._parts.append(_BREAK)

    def handle_endtag(self, tag: str) -> None:
        if tag in _SKIP_TAGS or tag in _CHROME_TAGS:
            if self._skip_depth > 0:
                self._skip_depth -= 1
            return
        if tag in _BLOCK_TAGS:
            self._parts.append(_BREAK)

    def handle_data(self, data: str) -> None:
        if self._skip_depth == 0:
            self._parts.append(data)

    def text(self) -> str:
        return "".join(self._parts)


def clean_html(raw_html: str) -> str:
    """Extract readable plaintext from an HTML document.

    Raises NoExtractableTextError when nothing survives cleaning (e.g. a page
    that is all markup and scripts).
    """
    if not raw_html:
        raise ValueError("raw_html is empty")

    extractor = _TextExtractor()
    extractor.feed(raw_html)
    extractor.close()

    lines = []
    for block in extractor.text().split(_BREAK):
        collapsed = re.sub(r"\s+", " ", block).strip()
        if collapsed:
            lines.append(collapsed)
    text = "\n".join(lines)
    text = _TAGLIKE.sub("< ", text)

    if not text:
        raise NoExtractableTextError("no extractable text")
    return text
