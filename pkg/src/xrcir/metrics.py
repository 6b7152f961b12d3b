"""Retrieval metrics, evaluation reports, and paired significance tests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Collection, Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateInput, EmptyRanking, EmptySubsetRanking, InputError

EXACT_WILCOXON_MAX_N = 25


@dataclass(frozen=True)
class GroundTruth:
    query_id: str
    targets: frozenset[str]
    subset: frozenset[str] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", frozenset(self.targets))
        if self.subset is not None:
            object.__setattr__(self, "subset", frozenset(self.subset))
        if not self.targets:
            raise InputError(f"query {self.query_id!r} has no targets")
        if self.subset is not None and not (self.targets & self.subset):
            raise InputError(f"query {self.query_id!r}: no target lies in its subset")


def _check(ranked: Sequence[str], k: int) -> None:
    if k < 1:
        raise InputError(f"k must be positive, got {k}")
    if len(ranked) == 0:
        raise EmptyRanking("ranking is empty")


def recall_at_k(ranked: Sequence[str], targets: Collection[str], k: int) -> float:
    """1.0 if any target is among the first k ranked ids, else 0.0."""
    _check(ranked, k)
    targets = set(targets)
    return 1.0 if any(r in targets for r in ranked[:k]) else 0.0


def map_at_k(ranked: Sequence[str], targets: Collection[str], k: int) -> float:
    """Truncated average precision, normalized by min(|targets|, k)."""
    _check(ranked, k)
    targets = set(targets)
    if not targets:
        raise InputError("target set is empty")
    hits = 0
    total = 0.0
    for position, r in enumerate(ranked[:k], start=1):
        if r in targets:
            hits += 1
            total += hits / position
    return total / min(len(targets), k)


def subset_recall_at_k(
    ranked: Sequence[str], targets: Collection[str], subset: Collection[str], k: int
) -> float:
    """Recall@k on the ranking restricted (order preserved) to ``subset``."""
    subset = set(subset)
    if not subset:
        raise InputError("subset is empty")
    restricted = [r for r in ranked if r in subset]
    if not restricted:
        raise EmptySubsetRanking("no subset member appears in the ranking")
    return recall_at_k(restricted, targets, k)


def mean(values: Iterable[float]) -> float:
    values = list(values)
    return float(sum(values) / len(values)) if values else float("nan")


# -- significance -------------------------------------------------------------


def _differences(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("paired samples must be 1-D and equally long")
    if len(a) < 2:
        raise InputError("paired tests need at least two pairs")
    return a - b


def paired_t_one_sided(a: Sequence[float], b: Sequence[float]) -> float:
    """p-value of the paired t-test for mean(a) > mean(b)."""
    d = _differences(a, b)
    n = len(d)
    spread = float(d.max() - d.min())
    if spread <= 1e-12 * max(1.0, float(np.abs(d).max())):
        raise DegenerateInput("differences have zero variance")
    sd = math.sqrt(float(np.sum((d - d.mean()) ** 2)) / (n - 1))
    t = float(d.mean()) / (sd / math.sqrt(n))
    return float(stats.t.sf(t, n - 1))


def _midranks(values: np.ndarray) -> tuple[np.ndarray, list[int]]:
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    tie_sizes = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, tie_sizes


def _exact_upper_tail(doubled_ranks: Sequence[int], observed: int) -> float:
    """P(sum of a random signed subset of ranks >= observed) by counting subsets."""
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    return sum(counts[observed:]) / 2 ** len(doubled_ranks)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided Wilcoxon signed-rank p-value for a > b.

    Zero differences are dropped. Up to 25 remaining pairs the exact null
    distribution is enumerated (midranks for ties); above that a normal
    approximation with continuity and tie correction is used.
    """
    d = _differences(a, b)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateInput("all paired differences are zero")
    ranks, tie_sizes = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        return _exact_upper_tail(doubled, int(round(2 * w_plus)))
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t**3 - t for t in tie_sizes) / 48.0
    z = (w_plus - mu - 0.5) / math.sqrt(var)
    return float(stats.norm.sf(z))


# -- reports ------------------------------------------------------------------

TIMING_KEYS = ("timing", "timings", "wall_clock_s")


def strip_timing(obj: Any) -> Any:
    """Copy of a JSON-like object with every timing field removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


@dataclass
class EvalReport:
    metrics: dict[str, float]
    per_query: list[dict[str, Any]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"metrics": self.metrics, "per_query": self.per_query, "meta": self.meta}

    def dumps(self, *, timing: bool = True) -> str:
        data = self.to_json() if timing else strip_timing(self.to_json())
        return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_table(self) -> str:
        """Aligned two-column text table of the aggregate metrics."""
        rows = [("metric", "value")] + [(k, f"{v:.4f}") for k, v in sorted(self.metrics.items())]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name.ljust(width)}  {value:>8}" for name, value in rows]
        lines.insert(1, "-" * (width + 10))
        failed = self.meta.get("n_failed")
        if failed:
            lines.append(f"({failed} failed queries excluded)")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        path.with_suffix(".txt").write_text(self.to_table(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(dict(data["metrics"]), list(data.get("per_query", [])), dict(data.get("meta", {})))
