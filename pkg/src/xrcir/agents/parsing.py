"""Reply formats for the generative agents, with parsers and matching formatters.

Imagination replies are a two-part payload: a bullet block (edits for text
imagination, ``attribute: present|absent`` lines for vision imagination),
then the delimiter line ``### CAPTION``, then the caption. The payload may be
wrapped in a Markdown code fence.

Question replies hold one ``<statement> => True|False`` pair per line.
"""

from __future__ import annotations

import re
import string
from typing import Iterable, Sequence

from ..errors import ParseError, UnparsableVerdict

CAPTION_DELIMITER = "### CAPTION"
ANSWER_SEPARATOR = "=>"

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_TRUE = {"true", "yes", "present"}
_FALSE = {"false", "no", "absent"}


def _strip_fences(reply: str) -> list[str]:
    return [line for line in reply.splitlines() if not line.strip().startswith("```")]


def _split_payload(reply: str) -> tuple[list[str], str]:
    lines = _strip_fences(reply)
    marks = [i for i, line in enumerate(lines) if line.strip().upper() == CAPTION_DELIMITER]
    if len(marks) != 1:
        raise ParseError(
            f"expected exactly one {CAPTION_DELIMITER!r} delimiter line, found {len(marks)}"
        )
    head, tail = lines[: marks[0]], lines[marks[0] + 1 :]
    caption = " ".join(line.strip() for line in tail if line.strip())
    if not caption:
        raise ParseError("caption block is empty")
    items = [_BULLET.sub("", line).strip() for line in head]
    return [item for item in items if item], caption


def _truth_word(word: str) -> bool | None:
    word = word.strip().strip(string.punctuation).lower()
    if word in _TRUE:
        return True
    if word in _FALSE:
        return False
    return None


def parse_text_imagination(reply: str) -> tuple[list[str], str]:
    """Return ``(edits, caption)``; raise ParseError on schema violations."""
    edits, caption = _split_payload(reply)
    if not edits:
        raise ParseError("edit block is empty")
    return edits, caption


def parse_vision_imagination(reply: str) -> tuple[list[tuple[str, bool]], str]:
    items, caption = _split_payload(reply)
    attributes = []
    for item in items:
        name, sep, value = item.rpartition(":")
        present = _truth_word(value) if sep else None
        if present is None or not name.strip():
            raise ParseError(f"malformed attribute line {item!r}")
        attributes.append((name.strip(), present))
    return attributes, caption


def parse_questions(reply: str) -> list[tuple[str, bool]]:
    """Extract every parseable statement/answer pair; other lines are skipped."""
    pairs = []
    for line in _strip_fences(reply):
        line = _BULLET.sub("", line).strip()
        statement, sep, answer = line.rpartition(ANSWER_SEPARATOR)
        if not sep or not statement.strip():
            continue
        word = answer.strip().strip(string.punctuation).lower()
        if word in ("true", "false"):
            pairs.append((statement.strip(), word == "true"))
    return pairs


def parse_verdict(reply: str) -> bool:
    """Read a True/False verdict from the first whitespace token of ``reply``."""
    tokens = reply.split()
    word = tokens[0].strip(string.punctuation).lower() if tokens else ""
    if word == "true":
        return True
    if word == "false":
        return False
    raise UnparsableVerdict(f"unparsable verdict {reply[:40]!r}")


def format_text_imagination(edits: Sequence[str], caption: str) -> str:
    return "\n".join([*(f"- {e}" for e in edits), CAPTION_DELIMITER, caption])


def format_vision_imagination(attributes: Iterable[tuple[str, bool]], caption: str) -> str:
    lines = [f"- {name}: {'present' if present else 'absent'}" for name, present in attributes]
    return "\n".join([*lines, CAPTION_DELIMITER, caption])


def format_questions(pairs: Iterable[tuple[str, bool]]) -> str:
    return "\n".join(
        f"{i}. {statement} {ANSWER_SEPARATOR} {'True' if answer else 'False'}"
        for i, (statement, answer) in enumerate(pairs, start=1)
    )


def render_edits(edits: Sequence[str]) -> str:
    return "\n".join(f"- {e}" for e in edits) or "(none)"


def render_attributes(attributes: Sequence[tuple[str, bool]]) -> str:
    lines = [f"- {name}: {'present' if present else 'absent'}" for name, present in attributes]
    return "\n".join(lines) or "(none)"
