"""Model-backed agents over a live HTTP backend or a scripted mock."""

from .backends import Backend, HttpBackend, MockBackend, MockRecord, MockScript, image_url
from .cache import ResponseCache
from .core import Agents, QuestionSet
from .prompts import PromptBook
from .request import ARITY, AgentKind, AgentRequest, fingerprint

__all__ = [
    "ARITY",
    "AgentKind",
    "AgentRequest",
    "Agents",
    "Backend",
    "HttpBackend",
    "MockBackend",
    "MockRecord",
    "MockScript",
    "PromptBook",
    "QuestionSet",
    "ResponseCache",
    "fingerprint",
    "image_url",
]
