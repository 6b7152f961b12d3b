"""End-to-end orchestration: one query, a whole benchmark, or an ablation grid."""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import coarse, fine
from .agents import Agents, QuestionSet
from .domain import Caption, CaptionSource, ImaginationResult, PipelineConfig, Query, validate_config
from .datasets import DatasetKind, Manifest, ManifestQuery
from .embed_index import Catalog
from .errors import BenchmarkAborted, ConfigError, InputError, StageError, XRError
from .fine import VerifyMode
from .metrics import EvalReport, EmptyRanking, map_at_k, recall_at_k, subset_recall_at_k

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS: dict[DatasetKind, dict[str, tuple[int, ...]]] = {
    DatasetKind.CIRR: {"R": (1, 5, 10, 50), "R_subset": (1, 2, 3)},
    DatasetKind.CIRCO: {"mAP": (5, 10, 25, 50)},
    DatasetKind.FASHIONIQ_SHIRT: {"R": (10, 50)},
    DatasetKind.FASHIONIQ_DRESS: {"R": (10, 50)},
    DatasetKind.FASHIONIQ_TOPTEE: {"R": (10, 50)},
    DatasetKind.CUSTOM: {"R": (1, 5, 10), "mAP": (5, 10)},
}


@dataclass(frozen=True)
class Switches:
    """Ablation switches; the defaults run the full method."""

    text_sim: bool = True
    vision_sim: bool = True
    text_q: bool = True
    vision_q: bool = True
    fusion: str = "rrf"
    verify_mode: VerifyMode = VerifyMode.INDEPENDENT
    bypass_select: bool = False  # send every candidate, unfiltered, to fine filtering

    def __post_init__(self) -> None:
        object.__setattr__(self, "verify_mode", VerifyMode(self.verify_mode))
        if self.fusion not in ("rrf", "sum"):
            raise ConfigError(f"fusion must be 'rrf' or 'sum', got {self.fusion!r}")
        if not (self.text_sim or self.vision_sim or self.text_q or self.vision_q):
            raise ConfigError("all four scoring agents are disabled; nothing left to rank")
        if not (self.text_sim or self.vision_sim):
            raise ConfigError("at least one similarity modality must stay enabled")

    @property
    def fine_enabled(self) -> bool:
        return self.text_q or self.vision_q

    def label(self) -> str:
        parts = [f"-{name}" for name in ("text_sim", "vision_sim", "text_q", "vision_q") if not getattr(self, name)]
        if self.fusion != "rrf":
            parts.append(f"fusion={self.fusion}")
        if self.verify_mode is not VerifyMode.INDEPENDENT:
            parts.append(f"verify={self.verify_mode.value}")
        if self.bypass_select:
            parts.append("bypass_select")
        return ",".join(parts) or "full"

    def to_json(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["verify_mode"] = self.verify_mode.value
        return out


@dataclass(frozen=True, eq=False)
class QueryTrace:
    query: Query
    reference_caption: Caption
    imagination: ImaginationResult
    catalog_ids: tuple[str, ...]
    quads: coarse.QuadScores
    scores: coarse.ModalityScores
    fused: coarse.FusedRanking
    shortlist: tuple[int, ...]  # catalog indices
    question_set: QuestionSet | None
    verification: fine.VerificationScores | None
    fine: fine.RankedResult
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def query_id(self) -> str:
        return self.query.query_id

    @property
    def shortlist_ids(self) -> list[str]:
        return [self.catalog_ids[i] for i in self.shortlist]

    @property
    def top_k(self) -> list[str]:
        return self.fine.top_k_ids

    def full_ranking(self) -> list[str]:
        """Re-ranked shortlist followed by the remaining candidates in coarse order."""
        head = self.fine.ranked_ids
        chosen = set(self.shortlist)
        tail = [self.catalog_ids[i] for i in self.fused.order if int(i) not in chosen]
        return head + tail

    def records(self, *, timings: bool = True) -> list[dict[str, Any]]:
        recs: list[dict[str, Any]] = [
            {
                "stage": "query",
                "query_id": self.query.query_id,
                "reference": self.query.reference.id,
                "text": self.query.modification_text,
            },
            {"stage": "reference_caption", "text": self.reference_caption.text},
            {"stage": "imagination", **self.imagination.to_json()},
        ]
        f = self.fused
        for a, image_id in enumerate(self.catalog_ids):
            q = self.quads[a]
            recs.append(
                {
                    "stage": "coarse",
                    "id": image_id,
                    "s_tt": q.s_tt,
                    "s_tv": q.s_tv,
                    "s_vt": q.s_vt,
                    "s_vv": q.s_vv,
                    "s_t": float(self.scores.s_text[a]),
                    "s_v": float(self.scores.s_vision[a]),
                    "rank_t": int(f.rank_text[a]),
                    "rank_v": int(f.rank_vision[a]),
                    "rrf": float(f.rrf_scores[a]),
                }
            )
        recs.append({"stage": "shortlist", "ids": self.shortlist_ids})
        if self.question_set is not None:
            recs.append({"stage": "questions", **self.question_set.to_json()})
        for pos in self.fine.order:
            recs.append({"stage": "fine", **self.fine.provenance[pos]})
        recs.append({"stage": "result", "top_k": self.top_k})
        if timings:
            recs.append({"stage": "timings", "timings": dict(self.timings)})
        return recs

    def dumps(self, *, timings: bool = True) -> str:
        return "".join(
            json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in self.records(timings=timings)
        )


class _Stages:
    """Run named stages, timing each and tagging failures with the stage name."""

    def __init__(self) -> None:
        self.timings: dict[str, float] = {}

    def run(self, name: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except XRError as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - start


def _imagine(agents: Agents, query: Query, c_r: Caption) -> ImaginationResult:
    m_t, c_t = agents.imagine_text(query.modification_text, c_r)
    m_v, c_v = agents.imagine_vision(query.modification_text, query.reference)
    return ImaginationResult(c_t, c_v, tuple(m_t), tuple(m_v))


def run_query(
    query: Query,
    catalog: Catalog,
    agents: Agents,
    cfg: PipelineConfig,
    switches: Switches = Switches(),
) -> QueryTrace:
    """Run every stage for one query and return the full trace."""
    validate_config(cfg)
    stages = _Stages()
    c_r = stages.run("reference_caption", agents.caption, query.reference, CaptionSource.REFERENCE)
    imagination = stages.run("imagination", _imagine, agents, query, c_r)

    def coarse_stage():
        quads = coarse.score_all(imagination.c_t, imagination.c_v, catalog, agents)
        scores = coarse.aggregate(quads)
        if switches.fusion == "sum":
            fused = coarse.sum_fuse(scores, use_text=switches.text_sim, use_vision=switches.vision_sim)
        else:
            fused = coarse.rrf_fuse(scores, cfg.z, use_text=switches.text_sim, use_vision=switches.vision_sim)
        if switches.bypass_select:
            shortlist = list(range(len(catalog)))
        else:
            shortlist = coarse.select_top(fused, cfg.k_prime)
        return quads, scores, fused, shortlist

    quads, scores, fused, shortlist = stages.run("coarse", coarse_stage)
    ids = catalog.ids
    shortlist_ids = [ids[i] for i in shortlist]
    idx = np.asarray(shortlist, dtype=np.intp)

    question_set = None
    verification = None
    if switches.fine_enabled:
        question_set = stages.run(
            "questions",
            agents.generate_questions,
            imagination.m_t,
            imagination.m_v,
            query.modification_text,
            cfg.n_questions,
        )
        verification = stages.run(
            "verification",
            fine.verify,
            shortlist_ids,
            catalog,
            question_set,
            agents,
            agents,
            mode=switches.verify_mode,
            use_text=switches.text_q,
            use_vision=switches.vision_q,
            max_workers=cfg.max_inflight,
        )

        def rerank_stage():
            lam = cfg.lambda_
            if not switches.text_sim:
                lam = 0.0
            elif not switches.vision_sim:
                lam = 1.0
            fused_sim = fine.fuse_similarity(scores.s_text[idx], scores.s_vision[idx], lam)
            norm_sim = fine.min_max(fused_sim)
            return fine.rerank(verification, norm_sim, fused_sim, cfg.k, shortlist_ids)

        result = stages.run("rerank", rerank_stage)
    else:
        result = stages.run("rerank", _coarse_only_result, fused, shortlist, shortlist_ids, cfg.k)

    return QueryTrace(
        query=query,
        reference_caption=c_r,
        imagination=imagination,
        catalog_ids=tuple(ids),
        quads=quads,
        scores=scores,
        fused=fused,
        shortlist=tuple(shortlist),
        question_set=question_set,
        verification=verification,
        fine=result,
        timings=stages.timings,
    )


def _coarse_only_result(fused: coarse.FusedRanking, shortlist: Sequence[int], ids: Sequence[str], k: int) -> fine.RankedResult:
    """Without verification the shortlist keeps its fused-score order."""
    score = fused.rrf_scores[np.asarray(shortlist, dtype=np.intp)]
    order = sorted(range(len(shortlist)), key=lambda p: (-score[p], shortlist[p]))
    provenance = tuple(
        {"id": ids[p], "s_q_text": 0, "s_q_vision": 0, "fused_sim": float(score[p]), "norm_sim": None, "final": float(score[p])}
        for p in range(len(shortlist))
    )
    return fine.RankedResult(tuple(ids), score, tuple(order), tuple(order[:k]), provenance)


# -- benchmark ------------------------------------------------------------------


def version_string() -> str:
    try:
        base = metadata.version("xrcir")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"{base}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _cutoffs(dataset: DatasetKind, cfg: PipelineConfig) -> dict[str, tuple[int, ...]]:
    return DEFAULT_CUTOFFS[dataset]


def ranking_depth(cutoffs: Mapping[str, Sequence[int]], cfg: PipelineConfig) -> int:
    return max([cfg.k_prime, *itertools.chain.from_iterable(cutoffs.values())])


def score_query(
    ranking: Sequence[str],
    mq: ManifestQuery,
    cutoffs: Mapping[str, Sequence[int]],
    subset_ranking: Sequence[str] | None = None,
) -> dict[str, float]:
    """Per-query metric values; the reference image never counts as a result."""
    ranked = [r for r in ranking if r != mq.ref]
    if not ranked:
        raise EmptyRanking(f"query {mq.query_id!r}: ranking is empty")
    out: dict[str, float] = {}
    for k in cutoffs.get("R", ()):
        out[f"R@{k}"] = recall_at_k(ranked, mq.targets, k)
    for k in cutoffs.get("mAP", ()):
        out[f"mAP@{k}"] = map_at_k(ranked, mq.targets, k)
    if mq.subset:
        sub_source = subset_ranking if subset_ranking is not None else ranked
        for k in cutoffs.get("R_subset", ()):
            out[f"R_subset@{k}"] = subset_recall_at_k(sub_source, mq.targets, mq.subset, k)
    return out


def evaluate_rankings(
    manifest: Manifest,
    rankings: Mapping[str, Mapping[str, Any]],
    cfg: PipelineConfig,
    cutoffs: Mapping[str, Sequence[int]] | None = None,
) -> tuple[dict[str, float], list[dict[str, Any]]]:
    """Score ranking records (``{"ranking": [...], "subset_ranking": [...]?}``)
    per query and average every metric over the scored queries."""
    cutoffs = cutoffs or _cutoffs(manifest.dataset, cfg)
    sums: dict[str, list[float]] = {}
    rows = []
    for mq in manifest.queries:
        rec = rankings.get(mq.query_id)
        if rec is None:
            rows.append({"query_id": mq.query_id, "status": "failed"})
            continue
        row: dict[str, Any] = {"query_id": mq.query_id, "status": "ok", "top_k": list(rec.get("top_k", []))}
        if mq.targets:
            values = score_query(rec["ranking"], mq, cutoffs, rec.get("subset_ranking"))
            row["metrics"] = values
            for name, v in values.items():
                sums.setdefault(name, []).append(v)
        else:
            row["status"] = "unscored"
        rows.append(row)
    metrics = {name: float(np.mean(vals)) for name, vals in sums.items()}
    return metrics, rows


def _ranking_record(trace: QueryTrace, mq: ManifestQuery, depth: int, k: int) -> dict[str, Any]:
    full = trace.full_ranking()
    rec: dict[str, Any] = {"query_id": mq.query_id, "top_k": trace.top_k[:k], "ranking": full[:depth]}
    if mq.subset:
        members = set(mq.subset)
        rec["subset_ranking"] = [r for r in full if r in members and r != mq.ref]
    return rec


def run_benchmark(
    manifest: Manifest,
    catalog: Catalog,
    agents: Agents,
    cfg: PipelineConfig,
    switches: Switches = Switches(),
    *,
    run_dir: str | Path | None = None,
    trace: bool = False,
    max_failure_rate: float = 0.10,
    label: str | None = None,
) -> EvalReport:
    """Run every manifest query and aggregate metrics.

    Failed queries are isolated, counted, and excluded from the means. If more
    than ``max_failure_rate`` of the queries fail, BenchmarkAborted is raised
    with the partial report attached.
    """
    validate_config(cfg)
    missing = {im.id for im in manifest.images} - set(catalog.ids)
    if missing:
        raise InputError(f"catalog lacks {len(missing)} manifest image(s), e.g. {sorted(missing)[0]!r}")
    cutoffs = _cutoffs(manifest.dataset, cfg)
    depth = ranking_depth(cutoffs, cfg)
    started = time.perf_counter()

    def one(mq: ManifestQuery):
        try:
            return mq, run_query(manifest.query(mq), catalog, agents, cfg, switches), None
        except XRError as exc:
            log.warning("query %s failed: %s", mq.query_id, exc)
            return mq, None, exc

    if cfg.query_parallelism > 1 and len(manifest.queries) > 1:
        with ThreadPoolExecutor(max_workers=cfg.query_parallelism) as pool:
            outcomes = list(pool.map(one, manifest.queries))
    else:
        outcomes = [one(mq) for mq in manifest.queries]

    rankings: dict[str, dict[str, Any]] = {}
    traces: dict[str, QueryTrace] = {}
    failures: dict[str, str] = {}
    for mq, tr, err in outcomes:
        if tr is None:
            failures[mq.query_id] = str(err)
            continue
        traces[mq.query_id] = tr
        rankings[mq.query_id] = _ranking_record(tr, mq, depth, cfg.k)

    metrics, rows = evaluate_rankings(manifest, rankings, cfg, cutoffs)
    stage_totals: dict[str, float] = {}
    for row in rows:
        qid = row["query_id"]
        if qid in failures:
            row["error"] = failures[qid]
        elif qid in traces:
            row["timing"] = dict(traces[qid].timings)
            for stage, seconds in traces[qid].timings.items():
                stage_totals[stage] = stage_totals.get(stage, 0.0) + seconds

    n = len(manifest.queries)
    meta = {
        "label": label or switches.label(),
        "dataset": manifest.dataset.value,
        "config": cfg.to_json(),
        "switches": switches.to_json(),
        "backend": agents.identity,
        "catalog_embedder": catalog.embedder,
        "version": version_string(),
        "n_queries": n,
        "n_scored": sum(1 for r in rows if r["status"] == "ok" and "metrics" in r),
        "n_failed": len(failures),
        "failures": failures,
        "timing": {
            "wall_clock_s": time.perf_counter() - started,
            "mean_stage_s": {s: t / max(1, len(traces)) for s, t in sorted(stage_totals.items())},
        },
    }
    report = EvalReport(metrics, rows, meta)

    if run_dir is not None:
        write_run(Path(run_dir), report, rankings, traces if trace else {})

    if n and len(failures) / n > max_failure_rate:
        raise BenchmarkAborted(
            f"{len(failures)} of {n} queries failed (limit {max_failure_rate:.0%})", report
        )
    if failures:
        log.warning("%d queries failed and were excluded from the metrics", len(failures))
    return report


def write_run(run_dir: Path, report: EvalReport, rankings: Mapping[str, Any], traces: Mapping[str, QueryTrace]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    run_info = {k: report.meta[k] for k in ("label", "dataset", "config", "switches", "backend", "catalog_embedder", "version")}
    (run_dir / "run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with (run_dir / "rankings.jsonl").open("w", encoding="utf-8") as fh:
        for qid in sorted(rankings):
            fh.write(json.dumps(rankings[qid], ensure_ascii=False) + "\n")
    if traces:
        trace_dir = run_dir / "traces"
        trace_dir.mkdir(exist_ok=True)
        for qid, tr in traces.items():
            (trace_dir / f"{safe_name(qid)}.jsonl").write_text(tr.dumps(), encoding="utf-8")
    report.save(run_dir / "report.json")


def safe_name(query_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in query_id)


def load_rankings(path: str | Path) -> dict[str, dict[str, Any]]:
    out = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["query_id"]] = rec
    return out


# -- ablation -------------------------------------------------------------------

_SWITCH_KEYS = {
    "disable_text_sim": "text_sim",
    "disable_vision_sim": "vision_sim",
    "disable_text_q": "text_q",
    "disable_vision_q": "vision_q",
}
_SWEEP_KEYS = {"lambda": "lambda_", "z": "z", "k_prime": "k_prime", "n_questions": "n_questions"}


@dataclass(frozen=True)
class Variant:
    label: str
    cfg: PipelineConfig
    switches: Switches


def make_variant(base: PipelineConfig, spec: Mapping[str, Any]) -> Variant:
    """Build one ablation variant from a mapping such as
    ``{"disable_text_q": True, "lambda": 0.5, "fusion": "sum"}``."""
    switch_args: dict[str, Any] = {}
    cfg_changes: dict[str, Any] = {}
    parts = []
    for key, value in spec.items():
        if key in _SWITCH_KEYS:
            if value:
                switch_args[_SWITCH_KEYS[key]] = False
                parts.append(key)
        elif key == "fusion":
            switch_args["fusion"] = value
            parts.append(f"fusion={value}")
        elif key == "verify_mode":
            switch_args["verify_mode"] = value
            parts.append(f"verify_mode={value}")
        elif key in _SWEEP_KEYS:
            cfg_changes[_SWEEP_KEYS[key]] = value
            parts.append(f"{key}={value}")
        else:
            raise ConfigError(f"unknown ablation switch {key!r}")
    cfg = base.replace(**cfg_changes)
    if "k_prime" in cfg_changes and cfg.k > cfg.k_prime:
        cfg = cfg.replace(k=cfg.k_prime)
    validate_config(cfg)
    return Variant(",".join(parts) or "full", cfg, Switches(**switch_args))


def sweep(name: str, values: Iterable[Any]) -> list[dict[str, Any]]:
    if name not in _SWEEP_KEYS:
        raise ConfigError(f"cannot sweep {name!r}")
    return [{name: v} for v in values]


def ablate(
    manifest: Manifest,
    catalog: Catalog,
    agents: Agents,
    cfg: PipelineConfig,
    switches: Sequence[Mapping[str, Any]],
    **kwargs: Any,
) -> dict[str, EvalReport]:
    """One report per variant, keyed by variant label, in input order."""
    variants = [make_variant(cfg, spec) for spec in switches]
    return {
        v.label: run_benchmark(manifest, catalog, agents, v.cfg, v.switches, label=v.label, **kwargs)
        for v in variants
    }
