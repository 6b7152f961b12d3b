from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path

from .request import AgentKind, AgentRequest

_CHAT_KINDS = [
    AgentKind.CAPTION,
    AgentKind.TEXT_IMAGINATION,
    AgentKind.VISION_IMAGINATION,
    AgentKind.QUESTION_GEN,
    AgentKind.TEXT_VERIFIER,
    AgentKind.VISION_VERIFIER,
]

RETRY_NOTE = (
    "\nYour previous reply did not contain {n} valid statements. "
    "Follow the output format exactly."
)


class PromptBook:
    """Prompt templates for the chat agents, one text file per agent kind.

    Templates ship inside the package; pass ``directory`` to use edited copies.
    """

    def __init__(self, directory: str | Path | None = None):
        self.templates: dict[AgentKind, str] = {}
        for kind in _CHAT_KINDS:
            name = f"{kind.value}.txt"
            if directory is None:
                text = resources.files(__package__).joinpath("prompts", name).read_text("utf-8")
            else:
                text = (Path(directory) / name).read_text("utf-8")
            self.templates[kind] = text
        digest = hashlib.sha256()
        for kind in _CHAT_KINDS:
            digest.update(self.templates[kind].encode("utf-8"))
        self.version = digest.hexdigest()[:12]

    def render(self, request: AgentRequest) -> str:
        kind = request.agent_kind
        texts = request.text_inputs
        opts = request.option_map
        template = self.templates[kind]
        if kind is AgentKind.CAPTION:
            return template.strip()
        if kind is AgentKind.TEXT_IMAGINATION:
            return template.format(t_m=texts[0], c_r=texts[1]).strip()
        if kind is AgentKind.VISION_IMAGINATION:
            return template.format(t_m=texts[0]).strip()
        if kind is AgentKind.QUESTION_GEN:
            n = opts.get("n", 3)
            note = RETRY_NOTE.format(n=n) if opts.get("attempt", 0) else ""
            return template.format(
                t_m=texts[0], m_t=texts[1], m_v=texts[2], n=n, retry_note=note
            ).strip()
        if kind is AgentKind.TEXT_VERIFIER:
            return template.format(caption=texts[0], statement=texts[1]).strip()
        if kind is AgentKind.VISION_VERIFIER:
            return template.format(statement=texts[0]).strip()
        raise ValueError(f"{kind.value} is not a chat agent")
