"""Backends: synthetic generator, replay archive, and the HTTP client."""

import json

import numpy as np
import pytest
import requests
from hypothesis import given
from hypothesis import strategies as st

from cribench.backends import (
    CompletionRequest,
    CompletionResponse,
    HttpBackend,
    ReplayBackend,
    SyntheticBackend,
    VerboseCompensationParams,
    archive_entry,
    complete,
    count_output_tokens,
    make_backend,
    request_digest,
    synthesize_length,
)
from cribench.errors import (
    ConfigError,
    InvalidParamsError,
    PermanentBackendError,
    ReplayMissError,
    TransientBackendError,
)
from cribench.prompts import tokenize

from conftest import chat_response

PARAMS = VerboseCompensationParams(t0=25.0, alpha=379.0, tau=0.35, t_max=1024,
                                   beta=0.74, dispersion=0.0)


def request(text="Write a Python function to solve", psi=None, **kw):
    return CompletionRequest(model_name="test-model", prompt_text=text, psi=psi, **kw)


class TestTokenCount:
    def test_three_words(self):
        assert count_output_tokens("a b c") == 3

    def test_empty(self):
        assert count_output_tokens("") == 0

    @given(st.text(max_size=200))
    def test_agrees_with_tokenizer(self, text):
        expected = len(tokenize(text).tokens) if text.split() else 0
        assert count_output_tokens(text) == expected


class TestParams:
    @pytest.mark.parametrize("field,value", [
        ("t0", -1), ("tau", 0.0), ("tau", 1.0), ("beta", 1.5), ("beta", -0.1),
        ("t_max", 10), ("alpha", -5), ("dispersion", -0.2),
    ])
    def test_rejects_bad_values(self, field, value):
        kwargs = dict(t0=25.0, alpha=379.0, tau=0.35, t_max=1024, beta=0.74)
        kwargs[field] = value
        with pytest.raises(InvalidParamsError):
            VerboseCompensationParams(**kwargs)

    def test_from_dict_missing_key(self):
        with pytest.raises(InvalidParamsError):
            VerboseCompensationParams.from_dict({"t0": 25})


class TestSynthesizeLength:
    def test_full_survival_is_baseline(self):
        rng = np.random.default_rng(0)
        params = VerboseCompensationParams(18.1, 379.0, 0.35, 1024, 0.74, dispersion=0.0)
        assert synthesize_length(params, 1.0, rng) == 18

    def test_linear_branch(self):
        rng = np.random.default_rng(0)
        assert synthesize_length(PARAMS, 0.72, rng) == 131  # 25 + 379 * 0.28

    def test_ceiling_fraction_matches_beta(self):
        rng = np.random.default_rng(42)
        draws = [synthesize_length(PARAMS, 0.15, rng) for _ in range(10_000)]
        ceiling = sum(d == 1024 for d in draws) / len(draws)
        assert abs(ceiling - 0.74) <= 0.02

    def test_mean_non_increasing_and_piecewise(self):
        rng = np.random.default_rng(1)
        grid = [i / 20 for i in range(21)]
        means = []
        for psi in grid:
            if psi >= PARAMS.tau:
                means.append(synthesize_length(PARAMS, psi, rng))
            else:
                means.append(np.mean([synthesize_length(PARAMS, psi, rng)
                                      for _ in range(4000)]))
        for lo, hi in zip(means[1:], means[:-1]):
            assert lo <= hi + 12  # sampling slack below tau
        # linear branch is exact at zero dispersion
        rng = np.random.default_rng(2)
        assert synthesize_length(PARAMS, 0.5, rng) == round(25 + 379 * 0.5)

    def test_psi_out_of_range(self):
        with pytest.raises(InvalidParamsError):
            synthesize_length(PARAMS, 1.2, np.random.default_rng(0))

    def test_clamped_to_ceiling(self):
        params = VerboseCompensationParams(900.0, 500.0, 0.35, 1024, 0.74, dispersion=0.0)
        rng = np.random.default_rng(0)
        assert synthesize_length(params, 0.4, rng) == 1024  # 900 + 500*0.6 clamps


class TestSyntheticBackend:
    def test_baseline_example(self):
        backend = SyntheticBackend(VerboseCompensationParams(18.1, 379.0, 0.35, 1024, 0.74))
        response = backend.complete(request(psi=1.0))
        assert response.output_tokens == 18
        assert not response.hit_ceiling

    def test_requires_psi(self):
        backend = SyntheticBackend(PARAMS)
        with pytest.raises(InvalidParamsError):
            backend.complete(request())

    def test_bit_reproducible(self):
        params = VerboseCompensationParams(25.0, 379.0, 0.35, 1024, 0.74, dispersion=0.3)
        a = SyntheticBackend(params, seed=5).complete(request(psi=0.5))
        b = SyntheticBackend(params, seed=5).complete(request(psi=0.5))
        assert a == b
        c = SyntheticBackend(params, seed=6).complete(request(psi=0.5))
        assert a.output_tokens != c.output_tokens

    def test_text_matches_token_count(self):
        response = SyntheticBackend(PARAMS).complete(request(psi=0.72))
        assert count_output_tokens(response.output_text) == response.output_tokens

    def test_request_ceiling_caps_lengths(self):
        backend = SyntheticBackend(PARAMS)
        response = backend.complete(request(psi=0.1, max_tokens=64))
        assert response.output_tokens <= 64
        assert response.hit_ceiling


class TestReplayBackend:
    def make_archive(self, tmp_path, pairs):
        path = tmp_path / "archive.jsonl"
        with path.open("w", encoding="utf-8") as sink:
            for req, resp in pairs:
                sink.write(json.dumps(archive_entry(req, resp)) + "\n")
        return path

    def test_replay_is_deterministic(self, tmp_path):
        req = request()
        resp = CompletionResponse("def f(): pass", 3, False, latency_ms=12.5)
        backend = ReplayBackend(self.make_archive(tmp_path, [(req, resp)]))
        for _ in range(3):
            replayed = backend.complete(request())
            assert replayed.output_tokens == 3
            assert replayed.output_text == "def f(): pass"

    def test_any_field_change_misses(self, tmp_path):
        req = request()
        resp = CompletionResponse("ok", 1, False)
        backend = ReplayBackend(self.make_archive(tmp_path, [(req, resp)]))
        for changed in (
            request(text="different prompt"),
            request(temperature=0.5),
            request(max_tokens=256),
            CompletionRequest(model_name="other", prompt_text=req.prompt_text),
            CompletionRequest(model_name=req.model_name, prompt_text=req.prompt_text,
                              system_prompt="be terse"),
        ):
            with pytest.raises(ReplayMissError) as err:
                backend.complete(changed)
            assert err.value.digest == request_digest(changed)

    def test_psi_not_in_digest(self):
        assert request_digest(request(psi=0.1)) == request_digest(request(psi=0.9))

    def test_never_touches_network(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise AssertionError("network call attempted")

        monkeypatch.setattr(requests, "post", boom)
        monkeypatch.setattr(requests.Session, "request", boom)
        req = request()
        backend = ReplayBackend(self.make_archive(tmp_path, [(req, CompletionResponse("x", 1, False))]))
        assert backend.complete(req).output_tokens == 1

    def test_missing_archive(self, tmp_path):
        with pytest.raises(ConfigError):
            ReplayBackend(tmp_path / "nope.jsonl")


class TestHttpBackend:
    def backend(self, server, **kw):
        kw.setdefault("backoff_s", 0.01)
        return HttpBackend(server.endpoint, **kw)

    def test_reported_usage_preferred(self, stub_server):
        stub_server.responses.append((200, chat_response("a b", completion_tokens=9)))
        response = self.backend(stub_server).complete(request())
        assert response.output_tokens == 9
        assert response.token_source == "reported"
        assert response.latency_ms is not None

    def test_word_count_fallback_flagged(self, stub_server):
        stub_server.responses.append((200, chat_response("one two three four five")))
        response = self.backend(stub_server).complete(request())
        assert response.output_tokens == 5
        assert response.token_source == "word_count"

    def test_length_finish_sets_ceiling(self, stub_server):
        stub_server.responses.append(
            (200, chat_response("long", completion_tokens=1000, finish_reason="length")))
        response = self.backend(stub_server).complete(request(max_tokens=1024))
        assert response.hit_ceiling
        assert response.output_tokens == 1024

    def test_payload_shape_and_auth(self, stub_server, monkeypatch):
        monkeypatch.setenv("STUB_TOKEN", "sekret")
        backend = self.backend(stub_server, auth_env="STUB_TOKEN")
        backend.complete(request(system_prompt="be brief", temperature=0.0, max_tokens=77))
        seen = stub_server.seen[-1]
        assert seen["headers"]["Authorization"] == "Bearer sekret"
        assert seen["payload"]["model"] == "test-model"
        assert seen["payload"]["max_tokens"] == 77
        assert seen["payload"]["messages"][0] == {"role": "system", "content": "be brief"}
        assert seen["payload"]["messages"][1]["role"] == "user"

    def test_missing_auth_env(self, stub_server, monkeypatch):
        monkeypatch.delenv("STUB_TOKEN", raising=False)
        with pytest.raises(PermanentBackendError):
            self.backend(stub_server, auth_env="STUB_TOKEN").complete(request())

    def test_retries_transient_then_succeeds(self, stub_server):
        stub_server.responses.extend([
            (500, {"error": "boom"}),
            (429, {"error": "slow down"}),
            (200, chat_response("ok", completion_tokens=1)),
        ])
        response = self.backend(stub_server, max_retries=3).complete(request())
        assert response.output_tokens == 1
        assert len(stub_server.seen) == 3

    def test_exhausted_retries_raise_transient(self, stub_server):
        stub_server.responses.extend([(503, {"error": "down"})] * 4)
        with pytest.raises(TransientBackendError):
            self.backend(stub_server, max_retries=2).complete(request())

    def test_client_error_is_permanent(self, stub_server):
        stub_server.responses.append((401, {"error": "bad key"}))
        with pytest.raises(PermanentBackendError):
            self.backend(stub_server).complete(request())
        assert len(stub_server.seen) == 1

    def test_malformed_body_is_permanent(self, stub_server):
        stub_server.responses.append((200, {"surprise": True}))
        with pytest.raises(PermanentBackendError):
            self.backend(stub_server).complete(request())

    def test_connection_error_transient(self):
        backend = HttpBackend("http://127.0.0.1:1/v1/chat", max_retries=1, backoff_s=0.01)
        with pytest.raises(TransientBackendError):
            backend.complete(request())


class TestBackendFactory:
    def test_synthetic_roundtrip(self):
        config = {"kind": "synthetic", "seed": 3,
                  "params": {"t0": 18.1, "alpha": 300, "tau": 0.35, "beta": 0.74}}
        response = complete(config, request(psi=1.0))
        assert response.output_tokens == 18

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            make_backend({"kind": "quantum"})

    def test_cross_kind_fields_rejected(self):
        with pytest.raises(ConfigError):
            make_backend({"kind": "replay", "archive": "x.jsonl", "endpoint": "http://x"})

    def test_http_requires_endpoint(self):
        with pytest.raises(ConfigError):
            make_backend({"kind": "http"})


class TestRequestValidation:
    def test_bad_max_tokens(self):
        with pytest.raises(ValueError):
            CompletionRequest("m", "p", max_tokens=0)

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            CompletionRequest("m", "p", temperature=-1.0)

    def test_negative_output_tokens(self):
        with pytest.raises(ValueError):
            CompletionResponse("x", -1, False)
