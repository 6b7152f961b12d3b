from __future__ import annotations

import enum
import hashlib
import json
import unicodedata
from dataclasses import dataclass, field
from typing import Mapping

from ..domain import ImageHandle
from ..errors import InputError


class AgentKind(str, enum.Enum):
    CAPTION = "caption"
    TEXT_IMAGINATION = "text_imagination"
    VISION_IMAGINATION = "vision_imagination"
    QUESTION_GEN = "question_gen"
    TEXT_VERIFIER = "text_verifier"
    VISION_VERIFIER = "vision_verifier"
    EMBED_TEXT = "embed_text"
    EMBED_IMAGE = "embed_image"

    @property
    def is_embedding(self) -> bool:
        return self in (AgentKind.EMBED_TEXT, AgentKind.EMBED_IMAGE)


# (number of text inputs, number of image inputs) per kind.
ARITY: dict[AgentKind, tuple[int, int]] = {
    AgentKind.CAPTION: (0, 1),
    AgentKind.TEXT_IMAGINATION: (2, 0),  # T_m, C_r
    AgentKind.VISION_IMAGINATION: (1, 1),  # T_m, I_r
    AgentKind.QUESTION_GEN: (3, 0),  # T_m, rendered M_t, rendered M_v
    AgentKind.TEXT_VERIFIER: (2, 0),  # C_a, statement
    AgentKind.VISION_VERIFIER: (1, 1),  # statement, I_a
    AgentKind.EMBED_TEXT: (1, 0),
    AgentKind.EMBED_IMAGE: (0, 1),
}


def canonical_text(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


def fingerprint(
    kind: AgentKind | str,
    texts: tuple[str, ...] | list[str] = (),
    image_ids: tuple[str, ...] | list[str] = (),
    options: Mapping[str, int] | None = None,
) -> str:
    """Stable hash of a request's kind and canonicalized inputs.

    Images contribute their id only; ids are assumed to identify image content.
    """
    payload = {
        "kind": AgentKind(kind).value,
        "texts": [canonical_text(t) for t in texts],
        "images": list(image_ids),
        "options": dict(sorted((options or {}).items())),
    }
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]


@dataclass(frozen=True)
class AgentRequest:
    agent_kind: AgentKind
    text_inputs: tuple[str, ...] = ()
    image_inputs: tuple[ImageHandle, ...] = ()
    temperature: float = 0.0
    top_p: float = 1.0
    options: tuple[tuple[str, int], ...] = field(default=())

    def __post_init__(self) -> None:
        kind = AgentKind(self.agent_kind)
        object.__setattr__(self, "agent_kind", kind)
        object.__setattr__(self, "text_inputs", tuple(self.text_inputs))
        object.__setattr__(self, "image_inputs", tuple(self.image_inputs))
        object.__setattr__(self, "options", tuple(sorted(dict(self.options).items())))
        n_text, n_image = ARITY[kind]
        if len(self.text_inputs) != n_text or len(self.image_inputs) != n_image:
            raise InputError(
                f"{kind.value} expects {n_text} text and {n_image} image input(s), got "
                f"{len(self.text_inputs)} and {len(self.image_inputs)}"
            )
        for text in self.text_inputs:
            if not isinstance(text, str) or not text.strip():
                raise InputError(f"{kind.value}: text inputs must be non-empty strings")
        for image in self.image_inputs:
            if not isinstance(image, ImageHandle):
                raise InputError(f"{kind.value}: image inputs must be ImageHandle objects")

    @property
    def option_map(self) -> dict[str, int]:
        return dict(self.options)

    @property
    def fingerprint(self) -> str:
        return fingerprint(
            self.agent_kind,
            self.text_inputs,
            [im.id for im in self.image_inputs],
            self.option_map,
        )
