"""Collects one verdict line per acceptance criterion for the terminal summary."""

from __future__ import annotations

RESULTS: dict[int, str] = {}


def record(number: int, status: str, title: str, detail: str = "") -> None:
    line = f"criterion {number:>2} {status:<4} {title}"
    if detail:
        line += f" [{detail}]"
    RESULTS[number] = line
    print(line)
