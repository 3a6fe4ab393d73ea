"""Weekly schedule parsing and date-based week selection.

The weekly-topics knowledge base stores its schedule as JSON on a
course page:

    {"course": "...", "weeks": [{"week": 1, "title": "...",
      "start_date": "YYYY-MM-DD", "end_date": "YYYY-MM-DD",
      "topics": ["..."], "body": "..."}]}

Week ranges are inclusive on both ends. Ranges may share a boundary
day; on that day the later week wins, since new material supersedes
the old on transition day.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from datetime import date


class SchemaError(Exception):
    """The document does not match the schedule schema.

    field names the first offending location, e.g. "weeks[2].start_date".
    """

    def __init__(self, field: str, message: str = "") -> None:
        detail = f"invalid curriculum document at {field}"
        if message:
            detail += f": {message}"
        super().__init__(detail)
        self.field = field


class NoActiveWeek(Exception):
    """The date falls outside every week's range."""


@dataclass(frozen=True)
class CurriculumWeek:
    week_index: int
    title: str
    start_date: date
    end_date: date
    topics: tuple[str, ...]
    body: str

    def as_context_text(self) -> str:
        lines = [
            f"Week {self.week_index}: {self.title}",
            f"Dates: {self.start_date.isoformat()} to {self.end_date.isoformat()}",
        ]
        if self.topics:
            lines.append("Topics:")
            lines.extend(f"- {topic}" for topic in self.topics)
        if self.body:
            lines.append("")
            lines.append(self.body)
        return "\n".join(lines)


def _parse_date(value, field: str) -> date:
    if not isinstance(value, str):
        raise SchemaError(field, "expected a YYYY-MM-DD string")
    try:
        return date.fromisoformat(value)
    except ValueError as exc:
        raise SchemaError(field, str(exc)) from exc


def parse_weeks(doc_text: str) -> tuple[CurriculumWeek, ...]:
    """Parse and validate the full schedule, sorted by start date."""
    try:
        doc = json.loads(doc_text)
    except ValueError as exc:
        raise SchemaError("document", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("document", "expected a JSON object")
    if "course" not in doc or not isinstance(doc["course"], str):
        raise SchemaError("course", "expected a string")
    raw_weeks = doc.get("weeks")
    if not isinstance(raw_weeks, list) or not raw_weeks:
        raise SchemaError("weeks", "expected a non-empty list")
    weeks: list[CurriculumWeek] = []
    for i, entry in enumerate(raw_weeks):
        where = f"weeks[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(where, "expected an object")
        index = entry.get("week")
        if not isinstance(index, int) or isinstance(index, bool) or index < 1:
            raise SchemaError(f"{where}.week", "expected a positive integer")
        title = entry.get("title")
        if not isinstance(title, str):
            raise SchemaError(f"{where}.title", "expected a string")
        start = _parse_date(entry.get("start_date"), f"{where}.start_date")
        end = _parse_date(entry.get("end_date"), f"{where}.end_date")
        if end < start:
            raise SchemaError(f"{where}.end_date", "before start_date")
        topics = entry.get("topics")
        if not isinstance(topics, list) or any(not isinstance(t, str) for t in topics):
            raise SchemaError(f"{where}.topics", "expected a list of strings")
        body = entry.get("body")
        if not isinstance(body, str):
            raise SchemaError(f"{where}.body", "expected a string")
        weeks.append(
            CurriculumWeek(
                week_index=index,
                title=title,
                start_date=start,
                end_date=end,
                topics=tuple(topics),
                body=body,
            )
        )
    ordered = sorted(range(len(weeks)), key=lambda i: weeks[i].start_date)
    for prev_pos, next_pos in zip(ordered, ordered[1:]):
        # A shared boundary day is allowed (the later week wins there);
        # anything deeper is an authoring error.
        if weeks[next_pos].start_date < weeks[prev_pos].end_date:
            raise SchemaError(
                f"weeks[{next_pos}].start_date",
                "overlaps the previous week beyond a shared boundary day",
            )
    return tuple(weeks[i] for i in ordered)


def select_active_week(weeks: tuple[CurriculumWeek, ...], today: date) -> CurriculumWeek:
    """Return the week containing today; later week wins a shared boundary.

    weeks must be sorted by start_date (parse_weeks guarantees it).
    """
    starts = [w.start_date for w in weeks]
    pos = bisect.bisect_right(starts, today) - 1
    if pos < 0 or weeks[pos].end_date < today:
        raise NoActiveWeek(f"{today.isoformat()} falls outside every week range")
    return weeks[pos]


def parse_curriculum_navigator(doc_text: str, today: date) -> CurriculumWeek:
    """Parse the schedule document and pick the week containing today."""
    return select_active_week(parse_weeks(doc_text), today)
