from __future__ import annotations

import json
import re
import subprocess
import sys

import pytest

import upstream
from xrcir.cli import build_parser, main
from xrcir.embed_index import load_catalog
from xrcir.metrics import EvalReport

VERBS = ["ingest", "embed", "run", "eval", "ablate", "trace-dump"]


def _subparsers():
    parser = build_parser()
    action = next(a for a in parser._actions if a.dest == "verb")
    return action.choices


@pytest.mark.parametrize("verb", VERBS)
def test_help_lists_every_flag_with_default(verb, capsys):
    assert main([verb, "--help"]) == 0
    text = " ".join(capsys.readouterr().out.split())
    sub = _subparsers()[verb]
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            flag = max(action.option_strings, key=len)
            assert flag in text
            assert action.help and re.search(r"\((default: .+|required)\)$", action.help), flag


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "xrcir.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert all(v in out.stdout for v in VERBS)


def test_usage_errors_exit_1(capsys, tmp_path):
    assert main([]) == 1
    assert main(["run"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["eval", "--manifest", "m", "--rankings", "r", "--k-prime", "0"]) == 1
    err = capsys.readouterr().err
    assert "k_prime" in err


def test_runtime_errors_exit_2(capsys, tmp_path):
    assert main(["ingest", "--dataset", "cirr", "--raw", str(tmp_path / "none"), "--out", str(tmp_path / "m.jsonl")]) == 2
    assert "MissingFile" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path, golden_dir):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("k: 5\nk_prime: 200\n")
    args = build_parser().parse_args(["eval", "--manifest", "m", "--rankings", "r", "--config", str(cfg), "--k-prime", "8"])
    from xrcir.cli import resolve_config

    resolved = resolve_config(args)
    assert (resolved.k, resolved.k_prime) == (5, 8)


def test_ingest(tmp_path, capsys):
    raw = upstream.write_cirr(tmp_path / "raw")
    out = tmp_path / "cirr.jsonl"
    assert main(["ingest", "--dataset", "cirr", "--raw", str(raw), "--split", "val", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["queries"] == 3
    assert out.exists()


def test_end_to_end_mock(tmp_path, golden_dir, capsys):
    manifest = str(golden_dir / "manifest.jsonl")
    script = str(golden_dir / "script.jsonl")
    catalog = str(tmp_path / "cat.xrcat")
    assert main(["embed", "--manifest", manifest, "--catalog", catalog, "--mock", script]) == 0
    built, golden = load_catalog(catalog), load_catalog(golden_dir / "catalog.xrcat")
    assert built.embedder.startswith("mock:")
    assert all(built.image_vectors[i].tobytes() == golden.image_vectors[i].tobytes() for i in golden.ids)

    run_dir = tmp_path / "run"
    report_path = tmp_path / "report.json"
    rc = main(
        ["run", "--manifest", manifest, "--catalog", catalog, "--mock", script,
         "--run-dir", str(run_dir), "--trace", "--report-path", str(report_path)]
    )
    assert rc == 0
    report = EvalReport.load(report_path)
    assert report.metrics["R@1"] == 1.0
    assert (tmp_path / "report.txt").exists()

    eval_path = tmp_path / "eval.json"
    assert main(["eval", "--manifest", manifest, "--rankings", str(run_dir / "rankings.jsonl"), "--report-path", str(eval_path)]) == 0
    assert EvalReport.load(eval_path).metrics == report.metrics

    capsys.readouterr()
    assert main(["trace-dump", "--run-dir", str(run_dir), "--stage", "result"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [(r["query_id"], r["top_k"][0]) for r in lines] == [("q0", "tgt0"), ("q1", "tgt1"), ("q2", "tgt2")]


def test_run_abort_exits_2(tmp_path, golden_dir, capsys):
    lines = (golden_dir / "script.jsonl").read_text().splitlines(True)
    kept = [x for x in lines if '"kind": "vision_imagination"' not in x]
    (tmp_path / "s.jsonl").write_text("".join(kept))
    rc = main(
        ["run", "--manifest", str(golden_dir / "manifest.jsonl"), "--catalog", str(golden_dir / "catalog.xrcat"),
         "--mock", str(tmp_path / "s.jsonl"), "--report-path", str(tmp_path / "r.json")]
    )
    assert rc == 2
    assert "BenchmarkAborted" in capsys.readouterr().err
    assert EvalReport.load(tmp_path / "r.json").meta["n_failed"] == 3


def test_ablate_variants_and_series(tmp_path, golden_dir, capsys):
    out_dir = tmp_path / "abl"
    rc = main(
        ["ablate", "--manifest", str(golden_dir / "manifest.jsonl"), "--catalog", str(golden_dir / "catalog.xrcat"),
         "--mock", str(golden_dir / "script.jsonl"), "--switch", "full", "--switch", "disable_text_q,fusion=sum",
         "--sweep", "lambda=0,1", "--out-dir", str(out_dir)]
    )
    assert rc == 0
    names = sorted(p.name for p in out_dir.glob("*.json"))
    assert names == ["disable_text_q_fusion_sum.json", "full.json", "lambda_0.0.json", "lambda_1.0.json"]

    series_root = tmp_path / "series"
    for label, vals in {"a": [0.6, 0.7, 0.65, 0.72], "b": [0.5, 0.52, 0.49, 0.55]}.items():
        for i, v in enumerate(vals):
            d = series_root / label
            d.mkdir(parents=True, exist_ok=True)
            EvalReport({"R@1": v}, [], {"dataset": "custom", "seed": i}).save(d / f"{i}.json")
    capsys.readouterr()
    assert main(["ablate", "--series", str(series_root), "--metric", "R@1"]) == 0
    assert "H1: a > other" in capsys.readouterr().out
    assert main(["ablate", "--series", str(series_root / "a")]) == 1
