"""Fine filtering: True/False verification of the shortlist and re-ranking."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .agents import QuestionSet
from .embed_index import Catalog
from .errors import InputError, LengthMismatch, UnparsableVerdict

log = logging.getLogger(__name__)


class VerifyMode(str, enum.Enum):
    INDEPENDENT = "independent"  # text and vision counts summed separately
    CONJUNCTIVE = "conjunctive"  # a question counts only if both modalities agree with the answer


@dataclass(frozen=True, eq=False)
class VerificationScores:
    s_q_text: np.ndarray
    s_q_vision: np.ndarray
    # per (candidate, question) correctness; None where the modality was not asked
    text_correct: np.ndarray | None = None
    vision_correct: np.ndarray | None = None
    unparsable: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "s_q_text", np.asarray(self.s_q_text, dtype=np.int64))
        object.__setattr__(self, "s_q_vision", np.asarray(self.s_q_vision, dtype=np.int64))
        if self.s_q_text.shape != self.s_q_vision.shape:
            raise LengthMismatch("text and vision verification vectors differ in length")

    def __len__(self) -> int:
        return len(self.s_q_text)

    @property
    def total(self) -> np.ndarray:
        return self.s_q_text + self.s_q_vision


@dataclass(frozen=True, eq=False)
class RankedResult:
    ids: tuple[str, ...]  # shortlist ids, in shortlist order
    final_scores: np.ndarray
    order: tuple[int, ...]  # positions into ``ids``
    top_k: tuple[int, ...]
    provenance: tuple[dict[str, Any], ...] = field(default=())

    @property
    def ranked_ids(self) -> list[str]:
        return [self.ids[i] for i in self.order]

    @property
    def top_k_ids(self) -> list[str]:
        return [self.ids[i] for i in self.top_k]


def verify(
    shortlist: Sequence[str],
    catalog: Catalog,
    question_set: QuestionSet,
    text_verifier,
    vision_verifier,
    *,
    mode: VerifyMode | str = VerifyMode.INDEPENDENT,
    use_text: bool = True,
    use_vision: bool = True,
    max_workers: int = 8,
) -> VerificationScores:
    """Ask every question about every shortlisted candidate in both modalities.

    A verdict matching the expected answer scores 1, anything else 0. An
    unparsable verdict scores 0 and is logged. Backend errors propagate.
    """
    if not shortlist:
        raise InputError("shortlist is empty")
    mode = VerifyMode(mode)
    images = [catalog.images[catalog.index_of[i]] for i in shortlist]
    captions = [catalog.caption_of(i) for i in shortlist]
    n_c, n_q = len(shortlist), len(question_set)

    cells: list[tuple[str, int, int]] = []
    for a in range(n_c):
        for q in range(n_q):
            if use_text:
                cells.append(("text", a, q))
            if use_vision:
                cells.append(("vision", a, q))

    def ask(cell: tuple[str, int, int]) -> bool | None:
        modality, a, q = cell
        question = question_set.questions[q]
        try:
            if modality == "text":
                return text_verifier.answer_question_text(captions[a], question)
            return vision_verifier.answer_question_vision(images[a], question)
        except UnparsableVerdict as exc:
            log.warning("%s verdict for %s on question %d unparsable: %s", modality, shortlist[a], q, exc)
            return None

    if max_workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            verdicts = list(pool.map(ask, cells))
    else:
        verdicts = [ask(c) for c in cells]

    expected = np.asarray(question_set.expected, dtype=bool)
    text_ok = np.zeros((n_c, n_q), dtype=bool)
    vision_ok = np.zeros((n_c, n_q), dtype=bool)
    unparsable = 0
    for (modality, a, q), verdict in zip(cells, verdicts):
        if verdict is None:
            unparsable += 1
            continue
        grid = text_ok if modality == "text" else vision_ok
        grid[a, q] = verdict == expected[q]

    if mode is VerifyMode.CONJUNCTIVE and use_text and use_vision:
        both = (text_ok & vision_ok).sum(axis=1)
        s_text, s_vision = both, both.copy()
    else:
        s_text = text_ok.sum(axis=1) if use_text else np.zeros(n_c, dtype=np.int64)
        s_vision = vision_ok.sum(axis=1) if use_vision else np.zeros(n_c, dtype=np.int64)
    return VerificationScores(
        s_text,
        s_vision,
        text_ok if use_text else None,
        vision_ok if use_vision else None,
        unparsable,
    )


def fuse_similarity(s_text, s_vision, lam: float) -> np.ndarray:
    s_text = np.asarray(s_text, dtype=np.float64)
    s_vision = np.asarray(s_vision, dtype=np.float64)
    if s_text.shape != s_vision.shape:
        raise LengthMismatch(f"similarity vectors differ in length: {s_text.shape} vs {s_vision.shape}")
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"lambda must lie in [0, 1], got {lam}")
    return lam * s_text + (1.0 - lam) * s_vision


def min_max(values) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant vector maps to all ones."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones_like(values)
    return (values - lo) / (hi - lo)


def normalize_similarity(s_text_subset, s_vision_subset, lam: float) -> np.ndarray:
    """Min-max normalized ``lam * S^t + (1 - lam) * S^v`` over the shortlist."""
    return min_max(fuse_similarity(s_text_subset, s_vision_subset, lam))


def rerank(
    verif: VerificationScores,
    norm_sim,
    fused_sim,
    k: int,
    ids: Sequence[str] | None = None,
) -> RankedResult:
    """Score = (text count + vision count) * normalized similarity, sorted descending.

    Ties (including every candidate whose product is zero) fall back to the
    raw fused similarity, descending, then to the candidate id, ascending.
    """
    norm_sim = np.asarray(norm_sim, dtype=np.float64)
    fused_sim = np.asarray(fused_sim, dtype=np.float64)
    n = len(verif)
    if norm_sim.shape != (n,) or fused_sim.shape != (n,):
        raise LengthMismatch(
            f"rerank inputs differ in length: {n}, {norm_sim.shape}, {fused_sim.shape}"
        )
    if k < 1:
        raise InputError(f"k must be positive, got {k}")
    if ids is None:
        ids, tiebreak = tuple(str(i) for i in range(n)), list(range(n))
    else:
        ids = tuple(ids)
        tiebreak = list(ids)
    if len(ids) != n:
        raise LengthMismatch("ids and verification scores differ in length")
    final = verif.total * norm_sim
    order = sorted(range(n), key=lambda a: (-final[a], -fused_sim[a], tiebreak[a]))
    provenance = tuple(
        {
            "id": ids[a],
            "s_q_text": int(verif.s_q_text[a]),
            "s_q_vision": int(verif.s_q_vision[a]),
            "fused_sim": float(fused_sim[a]),
            "norm_sim": float(norm_sim[a]),
            "final": float(final[a]),
        }
        for a in range(n)
    )
    return RankedResult(ids, final, tuple(order), tuple(order[:k]), provenance)
