"""Token estimation and context-window budgeting.

The estimator follows the 0.75 words-per-token rule of thumb: a text of
6,144 whitespace-separated words is treated as 8,192 tokens, and one of
750,000 words as 1,000,000. It is deliberately cheap and deterministic.
Anything smarter (a real tokenizer) can be passed wherever an estimator
argument is offered; the default is this module's formula.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

TRUNCATION_MARKER = "\n[...content truncated to fit context window...]"

# The marker competes for the same budget as the content it replaces.
_MARKER_WORDS = len(TRUNCATION_MARKER.split())

_WORD_RE = re.compile(r"\S+")


class BudgetTooSmall(Exception):
    """The budget cannot hold even the truncation marker."""


def estimate_tokens(text: str) -> int:
    """Estimate the token cost of text as ceil(words * 4 / 3).

    Words are split on whitespace; the empty string costs zero.
    """
    words = len(text.split())
    return math.ceil(words * 4 / 3)


@dataclass(frozen=True)
class TokenBudget:
    """How much of a provider's context window may hold retrieved content.

    window_tokens is the provider's full context window. reserved_output
    keeps room for the model's answer. overhead is the token cost of the
    prompt scaffolding around the content (template text, directives,
    user query), measured from the rendered template rather than guessed.
    """

    window_tokens: int
    reserved_output: int = 1024
    overhead: int = 0

    def __post_init__(self) -> None:
        if self.window_tokens <= 0:
            raise ValueError("window_tokens must be positive")
        if self.reserved_output <= 0:
            raise ValueError("reserved_output must be positive")
        if self.overhead < 0:
            raise ValueError("overhead must be non-negative")

    @property
    def available_for_context(self) -> int:
        return max(0, self.window_tokens - self.reserved_output - self.overhead)


def fit_to_budget(text: str, budget: TokenBudget) -> tuple[str, bool]:
    """Fit text into budget.available_for_context, truncating if needed.

    Truncation keeps the head of the document, cuts at the last word
    boundary that fits, and appends TRUNCATION_MARKER. The marker's own
    tokens count against the same budget, so the returned text always
    re-estimates at or under the available amount. The kept portion is a
    verbatim prefix of the input, never rewrapped or re-spaced.
    """
    available = budget.available_for_context
    if estimate_tokens(text) <= available:
        return text, False
    # Largest word count w with ceil(w * 4 / 3) <= available.
    max_words = available * 3 // 4
    keep = max_words - _MARKER_WORDS
    if keep < 0:
        raise BudgetTooSmall(
            f"budget of {available} tokens cannot hold the truncation marker"
        )
    end = 0
    for index, match in enumerate(_WORD_RE.finditer(text)):
        if index >= keep:
            break
        end = match.end()
    return text[:end] + TRUNCATION_MARKER, True
