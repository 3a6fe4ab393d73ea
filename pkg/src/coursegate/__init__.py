"""Self-hostable gateway that grounds course chatbot replies in live LMS
content, routes completions across rate-limited providers with local
failover, and records turn-level satisfaction ratings."""

from __future__ import annotations

__version__ = "0.1.0"

from .analytics import AnalyticsService, AppendLogStore, InMemoryStore, RatingAggregate
from .config import ConfigError, ServiceConfig, default_config, load_config
from .gateway import build_state, create_app
from .knowledge import KnowledgeBaseConfig, KnowledgeRegistry, RetrievedContext
from .lms import CoursePageRef, LmsClient, LmsCredentials, PageContent
from .prompting import ANTI_SKEPTICISM_DIRECTIVE, PromptEnvelope, assemble_prompt
from .providers import (
    CompletionRequest,
    CompletionResult,
    ProviderProfile,
    ProviderRegistry,
    complete_with_failover,
)
from .tokens import TokenBudget, estimate_tokens, fit_to_budget

__all__ = [
    "__version__",
    "ANTI_SKEPTICISM_DIRECTIVE",
    "AnalyticsService",
    "AppendLogStore",
    "CompletionRequest",
    "CompletionResult",
    "ConfigError",
    "CoursePageRef",
    "InMemoryStore",
    "KnowledgeBaseConfig",
    "KnowledgeRegistry",
    "LmsClient",
    "LmsCredentials",
    "PageContent",
    "PromptEnvelope",
    "ProviderProfile",
    "ProviderRegistry",
    "RatingAggregate",
    "RetrievedContext",
    "ServiceConfig",
    "TokenBudget",
    "assemble_prompt",
    "build_state",
    "complete_with_failover",
    "create_app",
    "default_config",
    "estimate_tokens",
    "fit_to_budget",
    "load_config",
]
