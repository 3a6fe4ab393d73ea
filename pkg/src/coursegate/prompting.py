"""Grounded prompt assembly.

A prompt template is a text file with three regions: leading system
text (which must carry the {directive} placeholder and may carry
{display_name}), then {context}, then {query}, each separated by blank
lines and with nothing else after or between them. That layout keeps
the assembled envelope's blocks honest: the context block is exactly
the fitted source text, never mixed with labels or instructions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .knowledge import RetrievedContext
from .tokens import TokenBudget, estimate_tokens, fit_to_budget

ANTI_SKEPTICISM_DIRECTIVE = (
    "answer only from the provided content when it covers the question; "
    "when the user expresses doubt, re-check the provided content and "
    "change your answer only if new supporting information is given; if "
    "the content does not address the question, answer from general "
    "knowledge and say so"
)

NO_CONTENT_SENTENCE = "No course content is available for this question."

DEFAULT_TEMPLATES_DIR = Path(__file__).parent / "templates"

_TAIL_RE = re.compile(r"\{context\}\s*\{query\}\s*\Z")


class EmptyQuery(Exception):
    """The user query is empty after trimming."""


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str  # raw, with {directive} and optional {display_name}


@dataclass(frozen=True)
class PromptEnvelope:
    """The fully assembled model input.

    context_block is a verbatim prefix of the retrieved source text
    (plus the truncation marker when cut), or the no-content sentence.
    """

    system_block: str
    context_block: str
    user_block: str
    metadata: dict = field(default_factory=dict)
    total_estimated_tokens: int = 0

    def flatten(self) -> str:
        return f"{self.system_block}\n\n{self.context_block}\n\n{self.user_block}"


_template_cache: dict[tuple[str, str], PromptTemplate] = {}


def load_template(template_id: str, templates_dir: Path | None = None) -> PromptTemplate:
    directory = Path(templates_dir) if templates_dir else DEFAULT_TEMPLATES_DIR
    key = (str(directory), template_id)
    cached = _template_cache.get(key)
    if cached is not None:
        return cached
    path = directory / f"{template_id}.txt"
    if not path.is_file():
        raise TemplateError(f"no template {template_id!r} in {directory}")
    text = path.read_text()
    match = _TAIL_RE.search(text)
    if match is None or text.count("{context}") != 1 or text.count("{query}") != 1:
        raise TemplateError(
            f"template {template_id!r} must end with a lone {{context}} region "
            "followed by a lone {query} region"
        )
    system_text = text[: match.start()].rstrip()
    if "{directive}" not in system_text:
        raise TemplateError(f"template {template_id!r} is missing the {{directive}} placeholder")
    template = PromptTemplate(template_id=template_id, system_text=system_text)
    _template_cache[key] = template
    return template


def _flatten(system_block: str, context_block: str, user_block: str) -> str:
    return f"{system_block}\n\n{context_block}\n\n{user_block}"


def assemble_prompt(
    ctx: Optional[RetrievedContext],
    query: str,
    display_name: str,
    budget: TokenBudget,
    template_id: str = "grounded",
    templates_dir: Path | None = None,
) -> PromptEnvelope:
    """Assemble the grounded prompt envelope for one chat turn.

    The template scaffolding and the query are measured first and
    charged to the budget as overhead; the retrieved text then gets
    whatever remains and is truncated to fit. Token counts add up so
    the finished envelope never exceeds window_tokens - reserved_output.
    An absent or empty context yields the explicit no-content sentence
    in place of source text.
    """
    if not query.strip():
        raise EmptyQuery("query is empty after trimming")
    template = load_template(template_id, templates_dir)
    system_block = template.system_text.replace(
        "{directive}", ANTI_SKEPTICISM_DIRECTIVE
    ).replace("{display_name}", display_name)
    user_block = query
    overhead = estimate_tokens(_flatten(system_block, "", user_block))
    fit_budget = TokenBudget(
        window_tokens=budget.window_tokens,
        reserved_output=budget.reserved_output,
        overhead=overhead,
    )
    source_text = ctx.text if ctx is not None else ""
    context_block, truncated = fit_to_budget(source_text or NO_CONTENT_SENTENCE, fit_budget)
    total = estimate_tokens(_flatten(system_block, context_block, user_block))
    metadata = {
        "display_name": display_name,
        "template_id": template_id,
        "kb_id": ctx.kb_id if ctx is not None else None,
        "source_label": ctx.source_label if ctx is not None else None,
        "context_truncated": truncated,
        "overhead_tokens": overhead,
        "grounded": bool(source_text),
    }
    return PromptEnvelope(
        system_block=system_block,
        context_block=context_block,
        user_block=user_block,
        metadata=metadata,
        total_estimated_tokens=total,
    )
