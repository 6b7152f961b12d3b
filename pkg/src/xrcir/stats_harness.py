"""Repeat benchmarks across seeds and compare methods with paired tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import DegenerateInput, InputError, TooFewRuns, UnpairedRuns
from .metrics import EvalReport, paired_t_one_sided, wilcoxon_signed_rank

ALPHA = 0.05


@dataclass(frozen=True)
class RunSeries:
    label: str
    runs: tuple[EvalReport, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(self.runs))
        if self.runs:
            keys = set(self.runs[0].metrics)
            datasets = {r.meta.get("dataset") for r in self.runs}
            if any(set(r.metrics) != keys for r in self.runs) or len(datasets) > 1:
                raise InputError(f"series {self.label!r} mixes runs with different datasets or metric sets")

    def values(self, metric: str) -> list[float]:
        try:
            return [float(r.metrics[metric]) for r in self.runs]
        except KeyError:
            raise InputError(f"series {self.label!r} has no metric {metric!r}") from None

    @property
    def seeds(self) -> list | None:
        seeds = [r.meta.get("seed") for r in self.runs]
        return None if any(s is None for s in seeds) else seeds


@dataclass(frozen=True)
class Significance:
    metric: str
    mean_a: float
    mean_b: float
    t_p: float | None
    wilcoxon_p: float | None
    verdict: str  # "reject" or "no evidence"
    alpha: float = ALPHA
    note: str = ""


def sample_stats(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard deviation (n - 1 denominator)."""
    n = len(values)
    if n < 2:
        raise TooFewRuns(f"need at least 2 runs, got {n}")
    mu = math.fsum(values) / n
    var = math.fsum((v - mu) ** 2 for v in values) / (n - 1)
    return mu, math.sqrt(var)


def summarize(series: RunSeries) -> dict[str, tuple[float, float]]:
    if len(series.runs) < 2:
        raise TooFewRuns(f"series {series.label!r} has {len(series.runs)} run(s); need at least 2")
    return {m: sample_stats(series.values(m)) for m in sorted(series.runs[0].metrics)}


def compare_values(a: Sequence[float], b: Sequence[float], metric: str = "", alpha: float = ALPHA) -> Significance:
    """Test H1: a is better than b. Rejection requires both tests below alpha."""
    if len(a) != len(b):
        raise UnpairedRuns(f"series lengths differ: {len(a)} vs {len(b)}")
    mean_a, mean_b = sum(a) / len(a), sum(b) / len(b)
    notes = []
    try:
        t_p: float | None = paired_t_one_sided(a, b)
    except DegenerateInput as exc:
        t_p = None
        notes.append(f"t-test: {exc}")
    try:
        w_p: float | None = wilcoxon_signed_rank(a, b)
    except DegenerateInput as exc:
        w_p = None
        notes.append(f"wilcoxon: {exc}")
    reject = t_p is not None and w_p is not None and t_p < alpha and w_p < alpha
    return Significance(metric, mean_a, mean_b, t_p, w_p, "reject" if reject else "no evidence", alpha, "; ".join(notes))


def compare(series_a: RunSeries, series_b: RunSeries, metric: str, alpha: float = ALPHA) -> Significance:
    if len(series_a.runs) != len(series_b.runs):
        raise UnpairedRuns(
            f"{series_a.label!r} has {len(series_a.runs)} runs, {series_b.label!r} has {len(series_b.runs)}"
        )
    seeds_a, seeds_b = series_a.seeds, series_b.seeds
    if seeds_a is not None and seeds_b is not None and seeds_a != seeds_b:
        raise UnpairedRuns("runs are not paired by seed")
    return compare_values(series_a.values(metric), series_b.values(metric), metric, alpha)


def run_series(label: str, seeds: Iterable[int], run: Callable[[int], EvalReport]) -> RunSeries:
    """Call ``run(seed)`` once per seed, tagging each report with its seed."""
    reports = []
    for seed in seeds:
        report = run(seed)
        report.meta["seed"] = seed
        reports.append(report)
    return RunSeries(label, tuple(reports))


def load_series(directory: str | Path, label: str | None = None) -> RunSeries:
    """All ``*.json`` reports in a directory, paired by sorted file name."""
    directory = Path(directory)
    paths = sorted(p for p in directory.glob("*.json") if p.is_file())
    if not paths:
        raise InputError(f"no report files in {directory}")
    return RunSeries(label or directory.name, tuple(EvalReport.load(p) for p in paths))


def _fmt_p(p: float | None) -> str:
    return "--" if p is None else f"{p:.3g}"


def comparison_table(series: Sequence[RunSeries], metric: str, alpha: float = ALPHA) -> str:
    """Mean, standard deviation, and p-values of the best series against each other one."""
    stats = {s.label: sample_stats(s.values(metric)) for s in series}
    best = max(series, key=lambda s: stats[s.label][0])
    rows = [("Method", "Mean (%)", "StdDev", "t-test p", "Wilcoxon p", "Verdict")]
    for s in sorted(series, key=lambda s: stats[s.label][0]):
        mu, sd = stats[s.label]
        if s is best:
            rows.append((s.label, f"{100 * mu:.2f}", f"{100 * sd:.2f}", "--", "--", ""))
        else:
            sig = compare(best, s, metric, alpha)
            rows.append((s.label, f"{100 * mu:.2f}", f"{100 * sd:.2f}", _fmt_p(sig.t_p), _fmt_p(sig.wilcoxon_p), sig.verdict))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    lines.append(f"metric: {metric}; H1: {best.label} > other; alpha = {alpha}")
    return "\n".join(lines) + "\n"
