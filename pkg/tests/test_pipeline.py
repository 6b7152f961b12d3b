from __future__ import annotations

import json

import pytest

import golden_fixture
from xrcir import pipeline
from xrcir.agents import AgentKind, MockScript
from xrcir.domain import PipelineConfig
from xrcir.embed_index import Catalog
from xrcir.errors import BenchmarkAborted, ConfigError, InputError, StageError
from xrcir.metrics import strip_timing
from xrcir.pipeline import Switches, ablate, make_variant, run_benchmark, run_query, sweep


def _without_timings(text: str) -> str:
    return "".join(line for line in text.splitlines(True) if '"stage": "timings"' not in line)


class TestGoldenRun:
    def test_traces_match_checked_in_files(self, golden_manifest, golden_catalog, golden_agents, golden_dir, tmp_path):
        report = run_benchmark(golden_manifest, golden_catalog, golden_agents, PipelineConfig(), run_dir=tmp_path, trace=True)
        assert report.metrics["R@1"] == 1.0
        for expected in sorted((golden_dir / "traces").glob("*.jsonl")):
            produced = (tmp_path / "traces" / expected.name).read_text(encoding="utf-8")
            assert _without_timings(produced) == expected.read_text(encoding="utf-8")

    def test_catalog_file_matches_fresh_build(self, golden_manifest, golden_catalog, golden_agents):
        from xrcir.embed_index import build_catalog

        assert build_catalog(golden_manifest.images, golden_agents, golden_agents) == golden_catalog

    def test_budget_per_query(self, golden_manifest, golden_catalog, golden_agents):
        cfg = PipelineConfig()
        backend = golden_agents.backend
        run_query(golden_manifest.query(golden_manifest.queries[0]), golden_catalog, golden_agents, cfg)
        k_prime = min(cfg.k_prime, len(golden_catalog))
        assert backend.call_count == 2 + 1 + 2 + 1 + 2 * k_prime * cfg.n_questions
        assert backend.calls["text_verifier"] == backend.calls["vision_verifier"] == k_prime * cfg.n_questions

    def test_rerun_is_served_from_cache(self, golden_manifest, golden_catalog, golden_agents):
        q = golden_manifest.query(golden_manifest.queries[1])
        first = run_query(q, golden_catalog, golden_agents, PipelineConfig())
        calls = golden_agents.backend.call_count
        second = run_query(q, golden_catalog, golden_agents, PipelineConfig())
        assert golden_agents.backend.call_count == calls
        assert first.dumps(timings=False) == second.dumps(timings=False)

    def test_query_parallelism_gives_identical_report(self, golden_manifest, golden_catalog, golden_dir):
        reports = []
        for par in (1, 3):
            agents = golden_fixture.agents_for(MockScript.load(golden_dir / "script.jsonl"))
            cfg = PipelineConfig(query_parallelism=par, max_inflight=4)
            reports.append(run_benchmark(golden_manifest, golden_catalog, agents, cfg))
        a, b = (strip_timing(r.to_json()) for r in reports)
        a["meta"].pop("config"), b["meta"].pop("config")
        assert a == b

    def test_distractor_overtakes_target_that_fails_a_question(self, golden_manifest, golden_catalog, golden_dir):
        agents = golden_fixture.agents_for(MockScript.load(golden_dir / "script_distractor.jsonl"))
        report = run_benchmark(golden_manifest, golden_catalog, agents, PipelineConfig())
        first = report.per_query[0]
        assert first["top_k"][:2] == ["dis0", "tgt0"]
        assert report.metrics["R@1"] == pytest.approx(2 / 3, abs=1e-4)

    def test_permuted_catalog_gives_same_results(self, golden_manifest, golden_catalog, golden_agents):
        c = golden_catalog
        perm = list(reversed(c.images))
        shuffled = Catalog(perm, c.captions, c.image_vectors, c.caption_vectors, dim=c.dim, embedder=c.embedder)
        for mq in golden_manifest.queries:
            q = golden_manifest.query(mq)
            a = run_query(q, c, golden_agents, PipelineConfig())
            b = run_query(q, shuffled, golden_agents, PipelineConfig())
            assert a.full_ranking() == b.full_ranking()


class TestDegenerateModes:
    def test_k_prime_n_equals_bypass(self, golden_manifest, golden_catalog, golden_agents):
        cfg = PipelineConfig(k=len(golden_catalog), k_prime=len(golden_catalog))
        for mq in golden_manifest.queries:
            q = golden_manifest.query(mq)
            a = run_query(q, golden_catalog, golden_agents, cfg)
            b = run_query(q, golden_catalog, golden_agents, cfg, Switches(bypass_select=True))
            assert a.fine.ranked_ids == b.fine.ranked_ids
            assert [p["final"] for p in sorted(a.fine.provenance, key=lambda p: p["id"])] == [
                p["final"] for p in sorted(b.fine.provenance, key=lambda p: p["id"])
            ]

    def test_k_prime_equal_k_keeps_coarse_set(self, golden_manifest, golden_catalog, golden_agents):
        cfg = PipelineConfig(k=5, k_prime=5)
        for mq in golden_manifest.queries:
            tr = run_query(golden_manifest.query(mq), golden_catalog, golden_agents, cfg)
            coarse_top = {golden_catalog.ids[i] for i in tr.fused.top(5)}
            assert set(tr.top_k) == coarse_top


class TestFailures:
    def test_one_failed_query_is_excluded(self, golden_manifest, golden_catalog):
        s = golden_fixture.script()
        mq = golden_manifest.queries[2]
        golden_fixture.drop(s, AgentKind.VISION_IMAGINATION, texts=[mq.text], images=[mq.ref])
        agents = golden_fixture.agents_for(s)
        report = run_benchmark(golden_manifest, golden_catalog, agents, PipelineConfig(), max_failure_rate=0.5)
        assert report.meta["n_failed"] == 1
        assert report.meta["n_scored"] == 2
        assert report.metrics["R@1"] == 1.0
        assert "imagination" in report.meta["failures"]["q2"]

    def test_too_many_failures_abort(self, golden_manifest, golden_catalog):
        s = golden_fixture.script()
        mq = golden_manifest.queries[0]
        golden_fixture.drop(s, AgentKind.TEXT_IMAGINATION, texts=[mq.text, golden_catalog.caption_of(mq.ref).text])
        with pytest.raises(BenchmarkAborted) as info:
            run_benchmark(golden_manifest, golden_catalog, golden_fixture.agents_for(s), PipelineConfig())
        assert info.value.report.meta["n_failed"] == 1

    def test_stage_is_named(self, golden_manifest, golden_catalog):
        s = golden_fixture.script()
        mq = golden_manifest.queries[0]
        golden_fixture.drop(
            s, AgentKind.TEXT_VERIFIER, texts=[golden_catalog.caption_of("fill0").text, "The dress is red."]
        )
        with pytest.raises(StageError) as info:
            run_query(golden_manifest.query(mq), golden_catalog, golden_fixture.agents_for(s), PipelineConfig())
        assert info.value.stage == "verification"

    def test_catalog_must_cover_manifest(self, golden_manifest, golden_catalog, golden_agents):
        c = golden_catalog
        small = Catalog(c.images[:-1], c.captions, {i: c.image_vectors[i] for i in c.ids[:-1]},
                        {i: c.caption_vectors[i] for i in c.ids[:-1]}, dim=c.dim)
        with pytest.raises(InputError):
            run_benchmark(golden_manifest, small, golden_agents, PipelineConfig())


class TestSwitchesAndAblation:
    def test_invalid_switches(self):
        with pytest.raises(ConfigError):
            Switches(text_sim=False, vision_sim=False)
        with pytest.raises(ConfigError):
            Switches(fusion="max")

    def test_no_questions_means_coarse_order(self, golden_manifest, golden_catalog, golden_agents):
        sw = Switches(text_q=False, vision_q=False)
        tr = run_query(golden_manifest.query(golden_manifest.queries[0]), golden_catalog, golden_agents, PipelineConfig(), sw)
        assert golden_agents.backend.calls["text_verifier"] == 0
        assert tr.fine.ranked_ids == [golden_catalog.ids[i] for i in tr.fused.order]

    def test_single_question_modality(self, golden_manifest, golden_catalog, golden_agents):
        sw = Switches(vision_q=False)
        run_query(golden_manifest.query(golden_manifest.queries[0]), golden_catalog, golden_agents, PipelineConfig(), sw)
        assert golden_agents.backend.calls["vision_verifier"] == 0
        assert golden_agents.backend.calls["text_verifier"] == 36

    def test_make_variant(self):
        v = make_variant(PipelineConfig(), {"disable_text_q": True, "lambda": 0.5, "fusion": "sum"})
        assert v.label == "disable_text_q,lambda=0.5,fusion=sum"
        assert v.cfg.lambda_ == 0.5 and not v.switches.text_q and v.switches.fusion == "sum"
        assert make_variant(PipelineConfig(), {"k_prime": 10}).cfg.k == 10
        with pytest.raises(ConfigError):
            make_variant(PipelineConfig(), {"disable_everything": True})
        with pytest.raises(ConfigError):
            sweep("temperature", [0.1])

    def test_ablate_produces_one_report_per_variant(self, golden_manifest, golden_catalog, golden_agents):
        specs = [{}, {"disable_text_q": True}, {"disable_vision_sim": True}, *sweep("lambda", [0.0, 1.0])]
        reports = ablate(golden_manifest, golden_catalog, golden_agents, PipelineConfig(), specs)
        assert list(reports) == ["full", "disable_text_q", "disable_vision_sim", "lambda=0.0", "lambda=1.0"]
        assert all("R@1" in r.metrics for r in reports.values())


class TestRunDirectory:
    def test_write_and_reevaluate(self, golden_manifest, golden_catalog, golden_agents, tmp_path):
        report = run_benchmark(golden_manifest, golden_catalog, golden_agents, PipelineConfig(), run_dir=tmp_path)
        run_info = json.loads((tmp_path / "run.json").read_text())
        assert run_info["backend"] == golden_agents.identity
        rankings = pipeline.load_rankings(tmp_path / "rankings.jsonl")
        metrics, _ = pipeline.evaluate_rankings(golden_manifest, rankings, PipelineConfig())
        assert metrics == report.metrics
        assert not (tmp_path / "traces").exists()

    def test_reference_never_counts(self, golden_manifest):
        mq = golden_manifest.queries[0]
        values = pipeline.score_query([mq.ref, "tgt0"], mq, {"R": (1,)})
        assert values == {"R@1": 1.0}
