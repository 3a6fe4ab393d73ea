"""Best-effort conversion of rich LMS page bodies to plain text."""

from __future__ import annotations

from html.parser import HTMLParser

# Elements whose text content is dropped outright.
_DROP = {"script", "style", "head", "title", "template"}

# Elements that force a line break around their content.
_BLOCK = {
    "p", "div", "br", "li", "ul", "ol", "table", "thead", "tbody", "tr",
    "h1", "h2", "h3", "h4", "h5", "h6", "blockquote", "pre", "section",
    "article", "header", "footer", "hr", "dt", "dd", "figure",
}


class _Extractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._drop_depth = 0

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag in _DROP:
            self._drop_depth += 1
        elif tag in _BLOCK:
            self.parts.append("\n")

    def handle_startendtag(self, tag: str, attrs) -> None:
        if tag in _BLOCK:
            self.parts.append("\n")

    def handle_endtag(self, tag: str) -> None:
        if tag in _DROP:
            self._drop_depth = max(0, self._drop_depth - 1)
        elif tag in _BLOCK:
            self.parts.append("\n")

    def handle_data(self, data: str) -> None:
        if not self._drop_depth:
            self.parts.append(data)


def _strip_once(raw: str) -> str:
    parser = _Extractor()
    parser.feed(raw)
    parser.close()
    lines = "".join(parser.parts).split("\n")
    cleaned = (" ".join(line.split()) for line in lines)
    return "\n".join(line for line in cleaned if line)


def strip_markup(raw: str) -> str:
    """Strip tags and character references from raw, yielding plain text.

    Script and style content is dropped, block elements become line
    breaks, entities are decoded, and runs of blank lines collapse away.
    Never fails: anything the parser cannot make sense of passes through
    as literal text. The result is a fixed point, so stripping an
    already-stripped string changes nothing, even when entity decoding
    exposed new tag-like text on the previous pass.
    """
    text = _strip_once(raw)
    for _ in range(32):
        again = _strip_once(text)
        if again == text:
            break
        text = again
    return text
