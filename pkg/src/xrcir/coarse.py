"""Coarse filtering: four-way similarity scoring, per-modality sums, rank fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import Caption
from .embed_index import Catalog, Side, batch_similarity
from .errors import InputError, StateError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityQuad:
    s_tt: float  # C_t vs candidate caption
    s_tv: float  # C_v vs candidate caption
    s_vt: float  # C_t vs candidate image
    s_vv: float  # C_v vs candidate image


@dataclass(frozen=True, eq=False)
class QuadScores:
    """Column-wise storage of N similarity quads (one array per pairing)."""

    s_tt: np.ndarray
    s_tv: np.ndarray
    s_vt: np.ndarray
    s_vv: np.ndarray

    def __len__(self) -> int:
        return len(self.s_tt)

    def __getitem__(self, a: int) -> SimilarityQuad:
        return SimilarityQuad(
            float(self.s_tt[a]), float(self.s_tv[a]), float(self.s_vt[a]), float(self.s_vv[a])
        )

    def __iter__(self):
        return (self[a] for a in range(len(self)))

    @classmethod
    def from_quads(cls, quads: Iterable[SimilarityQuad]) -> "QuadScores":
        rows = np.array([(q.s_tt, q.s_tv, q.s_vt, q.s_vv) for q in quads], dtype=np.float64)
        if rows.size == 0:
            raise InputError("no similarity quads to aggregate")
        return cls(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])

    def take(self, indices: Sequence[int]) -> "QuadScores":
        idx = np.asarray(indices, dtype=np.intp)
        return QuadScores(self.s_tt[idx], self.s_tv[idx], self.s_vt[idx], self.s_vv[idx])


@dataclass(frozen=True, eq=False)
class ModalityScores:
    s_text: np.ndarray  # S^t, from C_t
    s_vision: np.ndarray  # S^v, from C_v

    def __post_init__(self) -> None:
        object.__setattr__(self, "s_text", np.asarray(self.s_text, dtype=np.float64))
        object.__setattr__(self, "s_vision", np.asarray(self.s_vision, dtype=np.float64))
        if self.s_text.shape != self.s_vision.shape or self.s_text.ndim != 1:
            raise InputError("text and vision score vectors must be 1-D and equally long")

    def __len__(self) -> int:
        return len(self.s_text)


@dataclass(frozen=True, eq=False)
class FusedRanking:
    rrf_scores: np.ndarray
    order: np.ndarray
    rank_text: np.ndarray | None = None
    rank_vision: np.ndarray | None = None

    def top(self, k_prime: int) -> np.ndarray:
        return self.order[:k_prime]


def score_all(c_t: Caption, c_v: Caption, catalog: Catalog, embedder) -> QuadScores:
    """Score every candidate against both imagination captions.

    Exactly two embedding calls are made (for ``c_t`` and ``c_v``); candidate
    vectors come from the catalog.
    """
    if not catalog.is_complete:
        raise StateError("catalog is not fully built")
    e_t = embedder.embed_text(c_t.text)
    e_v = embedder.embed_text(c_v.text)
    return QuadScores(
        s_tt=batch_similarity(e_t, catalog, Side.CAPTION_VECTORS),
        s_tv=batch_similarity(e_v, catalog, Side.CAPTION_VECTORS),
        s_vt=batch_similarity(e_t, catalog, Side.IMAGE_VECTORS),
        s_vv=batch_similarity(e_v, catalog, Side.IMAGE_VECTORS),
    )


def aggregate(quads: QuadScores | Sequence[SimilarityQuad]) -> ModalityScores:
    """Sum the quad by imagination-caption origin: C_t pairs and C_v pairs."""
    if not isinstance(quads, QuadScores):
        quads = QuadScores.from_quads(quads)
    if len(quads) == 0:
        raise InputError("no similarity quads to aggregate")
    return ModalityScores(quads.s_tt + quads.s_vt, quads.s_vv + quads.s_tv)


def ranks(scores: np.ndarray) -> np.ndarray:
    """1-based positions under a descending sort; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise InputError("scores contain NaN")
    order = np.argsort(-scores, kind="stable")
    out = np.empty(len(scores), dtype=np.int64)
    out[order] = np.arange(1, len(scores) + 1)
    return out


def _order_desc(values: np.ndarray) -> np.ndarray:
    # descending by value, ascending by index on ties
    return np.lexsort((np.arange(len(values)), -values))


def rrf_fuse(
    scores: ModalityScores,
    z: float,
    *,
    use_text: bool = True,
    use_vision: bool = True,
) -> FusedRanking:
    """Reciprocal rank fusion of the text and vision score lists.

    Disabling one list leaves the single-list form 1/(z + rank).
    """
    if len(scores) == 0:
        raise InputError("cannot fuse empty score lists")
    if not z > 0:
        raise InputError(f"z must be positive, got {z}")
    if not (use_text or use_vision):
        raise InputError("at least one score list is required")
    rank_t = ranks(scores.s_text)
    rank_v = ranks(scores.s_vision)
    rrf = np.zeros(len(scores), dtype=np.float64)
    if use_text:
        rrf = rrf + 1.0 / (z + rank_t)
    if use_vision:
        rrf = rrf + 1.0 / (z + rank_v)
    return FusedRanking(rrf, _order_desc(rrf), rank_t, rank_v)


def sum_fuse(scores: ModalityScores, *, use_text: bool = True, use_vision: bool = True) -> FusedRanking:
    """Direct score summation, the ablation baseline for rank fusion."""
    if not (use_text or use_vision):
        raise InputError("at least one score list is required")
    total = np.zeros(len(scores), dtype=np.float64)
    if use_text:
        total = total + scores.s_text
    if use_vision:
        total = total + scores.s_vision
    return FusedRanking(total, _order_desc(total), ranks(scores.s_text), ranks(scores.s_vision))


def select_top(fused: FusedRanking, k_prime: int) -> list[int]:
    if k_prime < 1:
        raise InputError(f"k_prime must be positive, got {k_prime}")
    n = len(fused.order)
    if k_prime > n:
        log.warning("k_prime=%d exceeds catalog size %d; keeping all candidates", k_prime, n)
    return [int(i) for i in fused.order[: min(k_prime, n)]]
