"""Command-line interface: ``xr <verb> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import pipeline
from .agents import Agents, HttpBackend, MockBackend, MockScript, ResponseCache
from .datasets import DatasetKind, adapt_upstream, load_manifest, manifest_counts
from .domain import CONFIG_KEYS, PipelineConfig, load_config_file, validate_config
from .embed_index import build_catalog, load_catalog, save_catalog
from .errors import BenchmarkAborted, ConfigError, XRError
from .fine import VerifyMode
from .metrics import EvalReport
from .stats_harness import comparison_table, load_series

log = logging.getLogger("xrcir")

_DEFAULTS = PipelineConfig()
_CONFIG_FLAG_TYPES = {
    "lambda": float,
    "z": float,
    "k": int,
    "k_prime": int,
    "n_questions": int,
    "temperature": float,
    "top_p": float,
    "max_inflight": int,
    "query_parallelism": int,
}
_CONFIG_FLAG_HELP = {
    "lambda": "weight of text similarity in the re-ranking fusion",
    "z": "rank fusion smoothing constant",
    "k": "number of results returned per query",
    "k_prime": "shortlist size passed to fine filtering",
    "n_questions": "True/False questions per query",
    "temperature": "decoding temperature forwarded to live backends",
    "top_p": "nucleus sampling mass forwarded to live backends",
    "max_inflight": "maximum concurrent backend requests",
    "query_parallelism": "queries processed concurrently",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def _opt(parser: argparse.ArgumentParser, flag: str, *, help: str, default: Any = None, shown: Any = None, **kw: Any) -> None:
    """Add an option whose help always states its default."""
    if kw.get("required"):
        suffix = "(required)"
    else:
        suffix = f"(default: {shown if shown is not None else default})"
    parser.add_argument(flag, default=default, help=f"{help} {suffix}", **kw)


def _config_flags(parser: argparse.ArgumentParser, keys: Sequence[str] = tuple(CONFIG_KEYS)) -> None:
    _opt(parser, "--config", help="YAML/JSON file with config keys; flags override it", metavar="FILE", shown="none")
    for key in keys:
        attr = CONFIG_KEYS[key]
        _opt(
            parser,
            "--" + key.replace("_", "-"),
            dest=attr,
            type=_CONFIG_FLAG_TYPES[key],
            metavar=key.upper(),
            help=_CONFIG_FLAG_HELP[key],
            shown=getattr(_DEFAULTS, attr),
        )


def _backend_flags(parser: argparse.ArgumentParser) -> None:
    _opt(parser, "--mock", metavar="SCRIPT", help="scripted mock backend (JSON lines); omit for live HTTP backends", shown="none")
    _opt(parser, "--mock-noise", type=float, default=0.0, help="std-dev of seeded noise added to mock embeddings")
    _opt(parser, "--seed", type=int, default=0, help="seed for mock noise")
    _opt(parser, "--chat-model", default="internvl3-8b", help="model name sent to XR_CHAT_URL")
    _opt(parser, "--embed-model", default="clip-vit-b-32", help="model name sent to XR_EMBED_URL")
    _opt(parser, "--cache", metavar="FILE", help="persistent agent response cache (JSON lines)", shown="in-memory")
    _opt(parser, "--retry-backoff", type=float, default=0.5, help="base seconds of exponential retry backoff")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xr", description="Multi-agent composed image retrieval harness.")
    _opt(parser, "--log-level", default="WARNING", help="logging level")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="convert upstream benchmark annotations into a manifest")
    _opt(p, "--dataset", required=True, choices=[d.value for d in DatasetKind if d is not DatasetKind.CUSTOM], help="benchmark kind")
    _opt(p, "--raw", required=True, metavar="DIR", help="directory with the upstream annotation layout")
    _opt(p, "--out", required=True, metavar="FILE", help="manifest to write")
    _opt(p, "--split", help="upstream split", shown="test1 for cirr, test for circo, val for fashioniq")
    _opt(p, "--image-root", metavar="DIR", help="where image files live", shown="dataset-specific subdirectory of --raw")

    p = sub.add_parser("embed", help="caption and embed every manifest image into a catalog")
    _opt(p, "--manifest", required=True, metavar="FILE", help="manifest whose images form the catalog")
    _opt(p, "--catalog", required=True, metavar="FILE", help="catalog file to write")
    _backend_flags(p)
    _config_flags(p, ("temperature", "top_p", "max_inflight"))

    p = sub.add_parser("run", help="run the pipeline over a manifest and write a report")
    _opt(p, "--manifest", required=True, metavar="FILE", help="benchmark manifest")
    _opt(p, "--catalog", required=True, metavar="FILE", help="catalog built by 'xr embed'")
    _opt(p, "--report-path", default="report.json", metavar="FILE", help="JSON report (a .txt table is written beside it)")
    _opt(p, "--run-dir", metavar="DIR", help="directory for run.json, rankings and traces", shown="none")
    _opt(p, "--trace", action="store_true", default=False, help="write one trace file per query under RUN_DIR/traces")
    _opt(p, "--fusion", choices=["rrf", "sum"], default="rrf", help="coarse score fusion")
    _opt(p, "--verify-mode", choices=[m.value for m in VerifyMode], default="independent", help="how text and vision verdicts combine")
    _opt(p, "--max-failure-rate", type=float, default=0.10, help="abort when more than this fraction of queries fail")
    _backend_flags(p)
    _config_flags(p)

    p = sub.add_parser("eval", help="score a rankings file against a manifest")
    _opt(p, "--manifest", required=True, metavar="FILE", help="benchmark manifest")
    _opt(p, "--rankings", required=True, metavar="FILE", help="rankings.jsonl from a run directory")
    _opt(p, "--report-path", default="report.json", metavar="FILE", help="JSON report to write")
    _config_flags(p, ("k_prime",))

    p = sub.add_parser("ablate", help="run ablation variants, or compare report series")
    _opt(p, "--manifest", metavar="FILE", help="benchmark manifest", shown="none")
    _opt(p, "--catalog", metavar="FILE", help="catalog built by 'xr embed'", shown="none")
    _opt(p, "--switch", action="append", metavar="SPEC", help="variant as comma-separated switches, e.g. disable_text_q,fusion=sum; repeatable", shown="full method only")
    _opt(p, "--sweep", action="append", metavar="NAME=V1,V2", help="sweep lambda, z, k_prime or n_questions; repeatable", shown="none")
    _opt(p, "--out-dir", default="ablation", metavar="DIR", help="one report per variant is written here")
    _opt(p, "--series", action="append", metavar="DIR", help="compare report series instead of running: one directory per series, or one directory of series subdirectories", shown="none")
    _opt(p, "--metric", metavar="NAME", help="metric compared across series", shown="first metric of the first report")
    _opt(p, "--max-failure-rate", type=float, default=0.10, help="abort a variant when more than this fraction of queries fail")
    _backend_flags(p)
    _config_flags(p)

    p = sub.add_parser("trace-dump", help="flatten per-query traces into one JSON-lines stream")
    _opt(p, "--run-dir", required=True, metavar="DIR", help="run directory containing traces/")
    _opt(p, "--stage", default="coarse", help="trace stage to extract (coarse, fine, imagination, ...)")
    _opt(p, "--out", metavar="FILE", help="output file", shown="standard output")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, cfg)
    overrides = {
        attr: getattr(args, attr)
        for attr in CONFIG_KEYS.values()
        if getattr(args, attr, None) is not None
    }
    return validate_config(cfg.replace(**overrides))


def make_agents(args: argparse.Namespace, cfg: PipelineConfig) -> Agents:
    if args.mock:
        backend = MockBackend(MockScript.load(args.mock), embed_noise=args.mock_noise, seed=args.seed)
    else:
        backend = HttpBackend.from_env(chat_model=args.chat_model, embed_model=args.embed_model)
    cache = ResponseCache(args.cache) if args.cache else None
    return Agents.from_config(backend, cfg, cache=cache, backoff=args.retry_backoff)


def _write_report(report: EvalReport, path: str) -> None:
    report.save(path)
    sys.stdout.write(report.to_table())


def cmd_ingest(args: argparse.Namespace) -> int:
    manifest = adapt_upstream(args.dataset, args.raw, args.out, split=args.split, image_root=args.image_root)
    counts = manifest_counts(manifest)
    print(json.dumps({"dataset": manifest.dataset.value, **counts, "out": args.out}))
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    manifest = load_manifest(args.manifest)
    agents = make_agents(args, cfg)
    catalog = build_catalog(manifest.images, agents, agents)
    save_catalog(catalog, args.catalog)
    print(json.dumps({"catalog": args.catalog, "images": len(catalog), "dim": catalog.dim}))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    switches = pipeline.Switches(fusion=args.fusion, verify_mode=args.verify_mode)
    manifest = load_manifest(args.manifest)
    catalog = load_catalog(args.catalog)
    agents = make_agents(args, cfg)
    try:
        report = pipeline.run_benchmark(
            manifest,
            catalog,
            agents,
            cfg,
            switches,
            run_dir=args.run_dir,
            trace=args.trace,
            max_failure_rate=args.max_failure_rate,
        )
    except BenchmarkAborted as exc:
        if exc.report is not None:
            exc.report.save(args.report_path)
        raise
    _write_report(report, args.report_path)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    manifest = load_manifest(args.manifest)
    rankings = pipeline.load_rankings(args.rankings)
    metrics, rows = pipeline.evaluate_rankings(manifest, rankings, cfg)
    report = EvalReport(
        metrics,
        rows,
        {"dataset": manifest.dataset.value, "n_queries": len(manifest.queries), "rankings": str(args.rankings)},
    )
    _write_report(report, args.report_path)
    return 0


def _parse_switch(spec: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        if part == "full":
            continue
        key, sep, value = part.partition("=")
        if not sep:
            out[key] = True
        elif key in ("lambda", "z"):
            out[key] = float(value)
        elif key in ("k_prime", "n_questions"):
            out[key] = int(value)
        else:
            out[key] = value
    return out


def _series_dirs(paths: Sequence[str]) -> list[Path]:
    if len(paths) == 1:
        subdirs = sorted(p for p in Path(paths[0]).iterdir() if p.is_dir())
        if subdirs:
            return subdirs
    return [Path(p) for p in paths]


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.series:
        series = [load_series(d) for d in _series_dirs(args.series)]
        if len(series) < 2:
            raise UsageError("--series needs at least two series to compare")
        metric = args.metric or sorted(series[0].runs[0].metrics)[0]
        sys.stdout.write(comparison_table(series, metric))
        return 0
    if not args.manifest or not args.catalog:
        raise UsageError("ablate needs --manifest and --catalog (or --series)")
    cfg = resolve_config(args)
    specs: list[dict[str, Any]] = [_parse_switch(s) for s in (args.switch or [])]
    for sweep_spec in args.sweep or []:
        name, sep, values = sweep_spec.partition("=")
        if not sep or not values:
            raise UsageError(f"bad --sweep {sweep_spec!r}; expected NAME=V1,V2")
        cast = int if name in ("k_prime", "n_questions") else float
        specs.extend(pipeline.sweep(name, [cast(v) for v in values.split(",")]))
    if not specs:
        specs = [{}]
    manifest = load_manifest(args.manifest)
    catalog = load_catalog(args.catalog)
    agents = make_agents(args, cfg)
    reports = pipeline.ablate(manifest, catalog, agents, cfg, specs, max_failure_rate=args.max_failure_rate)
    out_dir = Path(args.out_dir)
    for label, report in reports.items():
        report.save(out_dir / f"{pipeline.safe_name(label)}.json")
        sys.stdout.write(f"== {label}\n{report.to_table()}")
    return 0


def cmd_trace_dump(args: argparse.Namespace) -> int:
    trace_dir = Path(args.run_dir) / "traces"
    if not trace_dir.is_dir():
        raise XRError(f"no traces under {args.run_dir}; run with --run-dir and --trace")
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for path in sorted(trace_dir.glob("*.jsonl")):
            query_id = None
            for line in path.read_text(encoding="utf-8").splitlines():
                rec = json.loads(line)
                if rec.get("stage") == "query":
                    query_id = rec["query_id"]
                if rec.get("stage") == args.stage:
                    out.write(json.dumps({"query_id": query_id, **rec}, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "embed": cmd_embed,
    "run": cmd_run,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "trace-dump": cmd_trace_dump,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), stream=sys.stderr)
        return COMMANDS[args.verb](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except XRError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
