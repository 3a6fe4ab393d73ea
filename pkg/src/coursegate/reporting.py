"""Plain-text and CSV rendering of satisfaction and usage reports."""

from __future__ import annotations

import csv
import io

from .analytics import RATING_VALUES, RatingAggregate, UsageReport

_HEADERS = ["Knowledge Base", "1 (%)", "2 (%)", "3 (%)", "4 (%)", "5 (%)", "Average"]


def _row_cells(row: RatingAggregate) -> list[str]:
    cells = [row.kb_id]
    cells.extend(f"{row.percentages[value]:.2f}" for value in RATING_VALUES)
    cells.append(f"{row.average:.3f}" if row.average is not None else "-")
    return cells


def render_rating_table(rows: list[RatingAggregate], total: RatingAggregate | None = None) -> str:
    """Fixed-width table, one row per knowledge base, then the total line."""
    table = [_HEADERS] + [_row_cells(row) for row in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(_HEADERS))]
    lines = []
    for row in table:
        lines.append(
            "  ".join(
                cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                for i, cell in enumerate(row)
            ).rstrip()
        )
    if total is not None and total.total_average is not None:
        lines.append("")
        lines.append(f"Total Average {total.total_average:.3f}")
    return "\n".join(lines) + "\n"


def render_rating_csv(rows: list[RatingAggregate], total: RatingAggregate | None = None) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["knowledge_base", "pct_1", "pct_2", "pct_3", "pct_4", "pct_5", "average", "n"])
    for row in rows:
        writer.writerow(
            [row.kb_id]
            + [f"{row.percentages[value]:.2f}" for value in RATING_VALUES]
            + [f"{row.average:.3f}" if row.average is not None else "", row.n]
        )
    if total is not None:
        writer.writerow(
            ["TOTAL"]
            + [f"{total.percentages[value]:.2f}" for value in RATING_VALUES]
            + [
                f"{total.total_average:.3f}" if total.total_average is not None else "",
                total.n,
            ]
        )
    return buffer.getvalue()


def render_usage(report: UsageReport) -> str:
    lines = [
        f"Queries: {report.total_queries}",
        f"Sessions: {report.session_count}",
        f"Unique users: {report.unique_users}",
    ]
    if report.mean_session_minutes is not None:
        lines.append(f"Mean session minutes: {report.mean_session_minutes:.2f}")
    else:
        lines.append("Mean session minutes: -")
    for kb_id, count in report.per_kb_counts.items():
        lines.append(f"  {kb_id}: {count}")
    return "\n".join(lines) + "\n"
