"""Time sources.

Everything that needs wall time takes a Clock so tests and the replay
command can drive a deterministic one. Timestamps are POSIX epoch
seconds (UTC).
"""

from __future__ import annotations

import time
from datetime import date, datetime, time as _dtime, timedelta, timezone
from typing import Protocol


class Clock(Protocol):
    def now(self) -> float:
        """Current time as epoch seconds."""
        ...


class SystemClock:
    def now(self) -> float:
        return time.time()


class MockClock:
    """Manually advanced clock. Never moves backwards."""

    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        self._now += seconds

    def set_to(self, timestamp: float) -> None:
        if timestamp < self._now:
            raise ValueError("clock cannot move backwards")
        self._now = float(timestamp)


def utc_datetime(timestamp: float) -> datetime:
    return datetime.fromtimestamp(timestamp, tz=timezone.utc)


def utc_date(timestamp: float) -> date:
    return utc_datetime(timestamp).date()


def next_utc_midnight(timestamp: float) -> float:
    """Epoch seconds of the first UTC midnight strictly after timestamp."""
    day_after = utc_date(timestamp) + timedelta(days=1)
    return datetime.combine(day_after, _dtime.min, tzinfo=timezone.utc).timestamp()


def isoformat(timestamp: float) -> str:
    return utc_datetime(timestamp).isoformat()
