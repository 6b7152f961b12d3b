from __future__ import annotations

import json

import httpx
import numpy as np
import pytest

from xrcir.agents import (
    AgentKind,
    AgentRequest,
    Agents,
    HttpBackend,
    MockBackend,
    MockScript,
    PromptBook,
    ResponseCache,
    fingerprint,
)
from xrcir.agents.cache import cache_key
from xrcir.agents.parsing import (
    format_questions,
    format_text_imagination,
    format_vision_imagination,
    parse_questions,
    parse_text_imagination,
    parse_verdict,
    parse_vision_imagination,
)
from xrcir.domain import Caption, CaptionSource, ImageHandle
from xrcir.errors import (
    BackendError,
    DimensionMismatch,
    EmptyResponse,
    FormatError,
    InputError,
    MockScriptError,
    ParseError,
    SchemaError,
    UnparsableVerdict,
)

IMG = ImageHandle("img1", "mock://img1")


class TestRequest:
    def test_arity_enforced(self):
        with pytest.raises(InputError):
            AgentRequest(AgentKind.CAPTION, ("extra",), (IMG,))
        with pytest.raises(InputError):
            AgentRequest(AgentKind.TEXT_VERIFIER, ("caption", "  "), ())

    def test_fingerprint_canonicalizes_text(self):
        a = fingerprint(AgentKind.EMBED_TEXT, [" Café "], [], None)
        b = fingerprint(AgentKind.EMBED_TEXT, ["Café"], [], None)
        assert a == b
        assert a != fingerprint(AgentKind.EMBED_TEXT, ["cafe"], [], None)

    def test_fingerprint_uses_image_id_only(self):
        r1 = AgentRequest(AgentKind.CAPTION, (), (ImageHandle("x", "mock://a"),))
        r2 = AgentRequest(AgentKind.CAPTION, (), (ImageHandle("x", "mock://b"),))
        assert r1.fingerprint == r2.fingerprint


class TestParsing:
    def test_text_imagination_roundtrip(self):
        reply = format_text_imagination(["make it red", "add a hat"], "a red hat")
        assert parse_text_imagination(reply) == (["make it red", "add a hat"], "a red hat")

    def test_fences_and_bullets(self):
        reply = "```\n1. turn blue\n* add stripes\n### CAPTION\na blue striped shirt\n```"
        assert parse_text_imagination(reply) == (["turn blue", "add stripes"], "a blue striped shirt")

    def test_missing_delimiter(self):
        with pytest.raises(ParseError):
            parse_text_imagination("just a caption")
        with pytest.raises(ParseError):
            parse_text_imagination("### CAPTION\nonly caption")

    def test_vision_imagination(self):
        reply = format_vision_imagination([("red hat", True), ("scarf", False)], "a person in a red hat")
        attrs, cap = parse_vision_imagination(reply)
        assert attrs == [("red hat", True), ("scarf", False)]
        assert cap == "a person in a red hat"

    def test_questions(self):
        pairs = [("The hat is red.", True), ("There is a scarf.", False)]
        assert parse_questions(format_questions(pairs)) == pairs
        assert parse_questions("noise\nA => maybe\nB => TRUE") == [("B", True)]

    @pytest.mark.parametrize("reply,value", [("True", True), ("false.", False), (" TRUE, because", True), ("False\n", False)])
    def test_verdicts(self, reply, value):
        assert parse_verdict(reply) is value

    @pytest.mark.parametrize("reply", ["", "maybe", "yes"])
    def test_unparsable_verdicts(self, reply):
        with pytest.raises(UnparsableVerdict):
            parse_verdict(reply)


class TestCache:
    def test_persist_and_reload(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        c = ResponseCache(path)
        key = cache_key("caption", "mock:x", (0.0, 1.0), "abc")
        assert c.get(key) is None
        c.put(key, "hello")
        assert ResponseCache(path).get(key) == "hello"
        assert c.hits == 0 and c.misses == 1

    def test_key_separates_identity_and_decode(self):
        base = cache_key("caption", "a", (0.0, 1.0), "fp")
        assert base != cache_key("caption", "b", (0.0, 1.0), "fp")
        assert base != cache_key("caption", "a", (0.7, 1.0), "fp")
        assert base != cache_key("text_verifier", "a", (0.0, 1.0), "fp")

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        path.write_text('{"key": "a", "value": 1}\nnot json\n')
        with pytest.raises(FormatError) as info:
            ResponseCache(path)
        assert info.value.line == 2


def _script():
    s = MockScript()
    s.add(AgentKind.CAPTION, images=["img1"], response="a cat on a mat")
    s.add(AgentKind.EMBED_TEXT, texts=["a cat on a mat"], response=[3.0, 4.0])
    s.add(AgentKind.EMBED_IMAGE, images=["img1"], response=[0.0, 2.0])
    return s


class TestMockAndAgents:
    def test_caption_and_cache(self):
        backend = MockBackend(_script())
        agents = Agents(backend)
        assert agents.caption(IMG) == Caption("a cat on a mat", CaptionSource.CANDIDATE)
        agents.caption(IMG)
        assert backend.calls["caption"] == 1
        assert agents.cache.hits == 1

    def test_embeddings_are_unit_norm(self):
        agents = Agents(MockBackend(_script()))
        assert agents.embed_text("a cat on a mat").tolist() == pytest.approx([0.6, 0.8])
        assert agents.embed_image(IMG).tolist() == [0.0, 1.0]
        assert agents.dim == 2

    def test_dimension_change(self):
        s = _script()
        s.add(AgentKind.EMBED_TEXT, texts=["other"], response=[1.0, 0.0, 0.0])
        agents = Agents(MockBackend(s))
        agents.embed_text("a cat on a mat")
        with pytest.raises(DimensionMismatch):
            agents.embed_text("other")

    def test_zero_vector(self):
        s = MockScript()
        s.add(AgentKind.EMBED_TEXT, texts=["z"], response=[0.0, 0.0])
        with pytest.raises(BackendError):
            Agents(MockBackend(s)).embed_text("z")

    def test_unknown_input(self):
        with pytest.raises(MockScriptError):
            Agents(MockBackend(_script())).embed_text("never scripted")

    def test_transient_errors_retried(self):
        s = _script()
        s.add(AgentKind.CAPTION, images=["img1"], response="ok", error={"status": 503, "times": 2})
        backend = MockBackend(s)
        assert Agents(backend, backoff=0.0).caption(IMG).text == "ok"
        assert backend.calls["caption"] == 3

    def test_retries_exhausted(self):
        s = _script()
        s.add(AgentKind.CAPTION, images=["img1"], response="ok", error={"status": 500, "times": 3})
        backend = MockBackend(s)
        with pytest.raises(BackendError, match="after 3 attempts"):
            Agents(backend, backoff=0.0).caption(IMG)
        assert backend.calls["caption"] == 3

    def test_client_errors_not_retried(self):
        s = _script()
        s.add(AgentKind.CAPTION, images=["img1"], response="ok", error={"status": 400, "times": 1})
        backend = MockBackend(s)
        with pytest.raises(BackendError):
            Agents(backend, backoff=0.0).caption(IMG)
        assert backend.calls["caption"] == 1

    def test_empty_reply(self):
        s = MockScript()
        s.add(AgentKind.CAPTION, images=["img1"], response="   ")
        with pytest.raises(EmptyResponse):
            Agents(MockBackend(s)).caption(IMG)

    def test_question_truncation_and_reprompt(self):
        s = MockScript()
        texts = ["make it red", "- recolor", "- red: present"]
        s.add(AgentKind.QUESTION_GEN, texts=texts, options={"n": 2}, response="A => True")
        s.add(AgentKind.QUESTION_GEN, texts=texts, options={"n": 2, "attempt": 1}, response="A => True\nB => False\nC => True")
        backend = MockBackend(s)
        qs = Agents(backend).generate_questions(["recolor"], [("red", True)], "make it red", 2)
        assert list(qs.questions) == ["A", "B"]
        assert list(qs.expected) == [True, False]
        assert backend.calls["question_gen"] == 2

    def test_question_shortfall(self):
        s = MockScript()
        texts = ["make it red", "- recolor", "- red: present"]
        for attempt in range(3):
            opts = {"n": 3, "attempt": attempt} if attempt else {"n": 3}
            s.add(AgentKind.QUESTION_GEN, texts=texts, options=opts, response="A => True")
        with pytest.raises(SchemaError):
            Agents(MockBackend(s)).generate_questions(["recolor"], [("red", True)], "make it red", 3)

    def test_script_roundtrip(self, tmp_path):
        s = _script()
        s.save(tmp_path / "s.jsonl")
        back = MockScript.load(tmp_path / "s.jsonl")
        assert back.dumps() == s.dumps()
        (tmp_path / "bad.jsonl").write_text(s.dumps() + "{broken\n")
        with pytest.raises(FormatError) as info:
            MockScript.load(tmp_path / "bad.jsonl")
        assert info.value.line == 4

    def test_noise_is_seeded(self):
        a = MockBackend(_script(), embed_noise=0.1, seed=1)
        b = MockBackend(_script(), embed_noise=0.1, seed=1)
        c = MockBackend(_script(), embed_noise=0.1, seed=2)
        va, vb, vc = (Agents(x).embed_text("a cat on a mat") for x in (a, b, c))
        assert np.array_equal(va, vb)
        assert not np.array_equal(va, vc)


class TestHttpBackend:
    def _backend(self, handler, **kw):
        client = httpx.Client(transport=httpx.MockTransport(handler))
        return HttpBackend("http://chat/v1/chat/completions", "http://embed/v1/embeddings", api_key="k", client=client, **kw)

    def test_chat_wire_format(self):
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            assert request.headers["authorization"] == "Bearer k"
            return httpx.Response(200, json={"choices": [{"message": {"content": "True"}}]})

        backend = self._backend(handler)
        img = ImageHandle("a", "https://example.org/a.jpg")
        agents = Agents(backend, temperature=0.0, top_p=1.0)
        assert agents.answer_question_vision(img, "The cat is black.") is True
        body = seen[0]
        assert body["model"] == "internvl3-8b"
        assert body["temperature"] == 0.0 and body["top_p"] == 1.0
        parts = body["messages"][0]["content"]
        assert parts[0] == {"type": "image_url", "image_url": {"url": "https://example.org/a.jpg"}}
        assert "The cat is black." in parts[1]["text"]

    def test_local_image_inlined(self, tmp_path):
        path = tmp_path / "x.png"
        path.write_bytes(b"\x89PNG")
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return httpx.Response(200, json={"data": [{"embedding": [1.0, 1.0]}]})

        vec = Agents(self._backend(handler)).embed_image(ImageHandle("x", str(path)))
        assert seen[0]["input"].startswith("data:image/png;base64,")
        assert vec.tolist() == pytest.approx([2**-0.5, 2**-0.5])

    def test_server_error_retried_then_succeeds(self):
        statuses = iter([502, 200])

        def handler(request):
            status = next(statuses)
            if status != 200:
                return httpx.Response(status)
            return httpx.Response(200, json={"choices": [{"message": {"content": "a dog"}}]})

        backend = self._backend(handler)
        assert Agents(backend, backoff=0.0).caption(ImageHandle("a", "https://x/a.jpg")).text == "a dog"
        assert backend.calls["caption"] == 2

    def test_timeout_is_transient(self):
        calls = []

        def handler(request):
            calls.append(1)
            raise httpx.ReadTimeout("slow", request=request)

        with pytest.raises(BackendError, match="after 3 attempts"):
            Agents(self._backend(handler), backoff=0.0).embed_text("hello")
        assert len(calls) == 3

    def test_bad_payload(self):
        backend = self._backend(lambda r: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(BackendError):
            Agents(backend).embed_text("hello")

    def test_from_env(self):
        with pytest.raises(BackendError):
            HttpBackend.from_env({})
        b = HttpBackend.from_env({"XR_CHAT_URL": "http://c", "XR_EMBED_URL": "http://e"})
        assert b.identity.startswith("http:")


def test_prompt_book_renders_every_kind():
    book = PromptBook()
    samples = {
        AgentKind.CAPTION: ((), (IMG,), ()),
        AgentKind.TEXT_IMAGINATION: (("make it red", "a white hat"), (), ()),
        AgentKind.VISION_IMAGINATION: (("make it red",), (IMG,), ()),
        AgentKind.QUESTION_GEN: (("make it red", "- x", "- y: present"), (), (("n", 3),)),
        AgentKind.TEXT_VERIFIER: (("a hat", "The hat is red."), (), ()),
        AgentKind.VISION_VERIFIER: (("The hat is red.",), (IMG,), ()),
    }
    for kind, (texts, images, options) in samples.items():
        text = book.render(AgentRequest(kind, texts, images, options=options))
        assert "{" not in text and all(t in text for t in texts)
    assert len(book.version) == 12
