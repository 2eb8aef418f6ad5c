"""Model backends: live chat-completion HTTP client, deterministic replay, and
a synthetic generator that lengthens output as instruction survival drops.

All backends expose ``complete(request) -> CompletionResponse``. Requests are
keyed for replay by a digest over (model, prompt, system prompt, temperature,
max_tokens); any change in those fields misses the archive rather than
silently reusing a response.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from itertools import cycle, islice
from pathlib import Path

import numpy as np
import requests

from .errors import (
    ConfigError,
    InvalidParamsError,
    PermanentBackendError,
    ReplayMissError,
    TransientBackendError,
)

TOKENS_REPORTED = "reported"
TOKENS_WORD_COUNT = "word_count"

_FILLER = ("lorem", "ipsum", "dolor", "sit", "amet")


@dataclass(frozen=True)
class CompletionRequest:
    """One chat-completion call. ``psi`` carries instruction survival for the
    synthetic backend; it is metadata and never part of the replay digest."""

    model_name: str
    prompt_text: str
    system_prompt: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    psi: float | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResponse:
    output_text: str
    output_tokens: int
    hit_ceiling: bool
    latency_ms: float | None = None
    token_source: str = TOKENS_REPORTED

    def __post_init__(self):
        if self.output_tokens < 0:
            raise ValueError("output_tokens must be >= 0")


def count_output_tokens(text: str) -> int:
    """Whitespace word count, same token rule as prompt tokenization."""
    return len(text.split())


def request_digest(request: CompletionRequest) -> str:
    key = json.dumps(
        [request.model_name, request.prompt_text, request.system_prompt or "",
         request.temperature, request.max_tokens],
        separators=(",", ":"), ensure_ascii=False, sort_keys=True,
    )
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class VerboseCompensationParams:
    """Piecewise output-length model: linear lengthening while survival stays
    above ``tau``, ceiling-seeking behavior below it.

    Above tau the expected length is t0 + alpha * (1 - psi). Below tau a draw
    hits the ceiling exactly with probability beta, otherwise centers on
    t_max * beta. ``dispersion`` is the coefficient of variation of the noisy
    body around its center; zero makes every draw exact.
    """

    t0: float
    alpha: float
    tau: float
    t_max: int
    beta: float
    dispersion: float = 0.0

    def __post_init__(self):
        if self.t0 < 0:
            raise InvalidParamsError("t0 must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise InvalidParamsError("tau must be in (0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidParamsError("beta must be in [0, 1]")
        if self.t_max <= self.t0:
            raise InvalidParamsError("t_max must exceed t0")
        if self.alpha < 0:
            raise InvalidParamsError("alpha must be >= 0")
        if self.dispersion < 0:
            raise InvalidParamsError("dispersion must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "VerboseCompensationParams":
        try:
            return cls(
                t0=float(doc["t0"]),
                alpha=float(doc["alpha"]),
                tau=float(doc["tau"]),
                t_max=int(doc.get("t_max", 1024)),
                beta=float(doc["beta"]),
                dispersion=float(doc.get("dispersion", 0.0)),
            )
        except KeyError as exc:
            raise InvalidParamsError(f"missing parameter {exc}") from exc


def synthesize_length(params: VerboseCompensationParams, psi: float,
                      rng: np.random.Generator) -> int:
    """Draw one output-token count for survival ``psi``; deterministic given rng state.

    Draws are clamped to [0, t_max], so a clamped-high draw reads as a
    ceiling hit downstream.
    """
    if not 0.0 <= psi <= 1.0:
        raise InvalidParamsError(f"psi must be in [0, 1], got {psi}")
    if psi >= params.tau:
        center = params.t0 + params.alpha * (1.0 - psi)
    else:
        if rng.random() < params.beta:
            return params.t_max
        center = params.t_max * params.beta
    if params.dispersion > 0.0:
        draw = rng.normal(center, params.dispersion * center)
    else:
        draw = center
    return int(round(min(max(draw, 0.0), float(params.t_max))))


class SyntheticBackend:
    """Generates responses from the verbose-compensation model.

    The per-request RNG is seeded from (backend seed, request digest), so an
    identical request always reproduces the same response — replicate calls
    behave like a temperature-0 API — while different prompts get
    independent draws.
    """

    def __init__(self, params: VerboseCompensationParams, seed: int = 0):
        self.params = params
        self.seed = seed

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if request.psi is None:
            raise InvalidParamsError("synthetic backend needs request.psi")
        digest_int = int.from_bytes(
            hashlib.sha256(request_digest(request).encode()).digest()[:8], "big"
        )
        rng = np.random.default_rng([self.seed, digest_int])
        params = self.params
        if params.t_max > request.max_tokens:
            params = VerboseCompensationParams(
                params.t0, params.alpha, params.tau, request.max_tokens,
                params.beta, params.dispersion,
            )
        tokens = synthesize_length(params, request.psi, rng)
        return CompletionResponse(
            output_text=" ".join(islice(cycle(_FILLER), tokens)),
            output_tokens=tokens,
            hit_ceiling=tokens >= params.t_max,
            latency_ms=0.0,
        )


class ReplayBackend:
    """Serves archived responses keyed by request digest; never touches the network."""

    def __init__(self, archive_path: str | Path):
        self.archive: dict[str, dict] = {}
        path = Path(archive_path)
        if not path.is_file():
            raise ConfigError(f"replay archive {path} does not exist")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                self.archive[entry["digest"]] = entry["response"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad archive entry: {exc}") from exc

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        digest = request_digest(request)
        if digest not in self.archive:
            raise ReplayMissError(digest)
        doc = self.archive[digest]
        return CompletionResponse(
            output_text=doc.get("output_text", ""),
            output_tokens=int(doc["output_tokens"]),
            hit_ceiling=bool(doc.get("hit_ceiling", False)),
            latency_ms=doc.get("latency_ms"),
            token_source=doc.get("token_source", TOKENS_REPORTED),
        )


def archive_entry(request: CompletionRequest, response: CompletionResponse) -> dict:
    """JSONL-ready replay archive line for a (request, response) pair."""
    return {
        "digest": request_digest(request),
        "request": {
            "model_name": request.model_name,
            "prompt_text": request.prompt_text,
            "system_prompt": request.system_prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        },
        "response": {
            "output_text": response.output_text,
            "output_tokens": response.output_tokens,
            "hit_ceiling": response.hit_ceiling,
            "latency_ms": response.latency_ms,
            "token_source": response.token_source,
        },
    }


class HttpBackend:
    """OpenAI-style chat-completions client with bounded retry.

    Transient failures (network errors, timeouts, 429, 5xx) retry with
    exponential backoff up to ``max_retries`` times; other 4xx responses are
    permanent. Token counts prefer the provider-reported usage field and fall
    back to a word count, flagged via ``token_source``.
    """

    def __init__(self, endpoint: str, auth_env: str | None = None,
                 timeout_s: float = 60.0, max_retries: int = 3,
                 backoff_s: float = 0.5, max_parallel: int = 4,
                 extra_headers: dict | None = None, session=None):
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.extra_headers = dict(extra_headers or {})
        self._session = session or requests.Session()
        self._limiter = threading.Semaphore(max_parallel)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json", **self.extra_headers}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if not token:
                raise PermanentBackendError(
                    f"auth environment variable {self.auth_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.prompt_text})
        payload = {
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = self._headers()

        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(min(self.backoff_s * 2 ** (attempt - 1), 30.0))
            started = time.monotonic()
            try:
                with self._limiter:
                    resp = self._session.post(self.endpoint, json=payload,
                                              headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            latency_ms = (time.monotonic() - started) * 1000.0
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise PermanentBackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp, request, latency_ms)
        raise TransientBackendError(
            f"gave up after {self.max_retries + 1} attempts ({last_error})"
        )

    def _parse(self, resp, request: CompletionRequest, latency_ms: float) -> CompletionResponse:
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason")
        except (ValueError, LookupError, TypeError) as exc:
            raise PermanentBackendError(f"unexpected response shape: {exc}") from exc
        usage = (data.get("usage") or {}).get("completion_tokens")
        if usage is not None:
            tokens, source = int(usage), TOKENS_REPORTED
        else:
            tokens, source = count_output_tokens(text), TOKENS_WORD_COUNT
        hit = finish == "length" or tokens >= request.max_tokens
        if hit:
            tokens = request.max_tokens
        return CompletionResponse(text, tokens, hit, latency_ms, source)


_KIND_FIELDS = {
    "http": {"endpoint", "auth_env", "timeout_s", "max_retries", "backoff_s",
             "max_parallel", "extra_headers"},
    "replay": {"archive"},
    "synthetic": {"params", "seed"},
}


def make_backend(config: dict):
    """Build a backend from its config dict; exactly one kind's fields allowed."""
    kind = config.get("kind")
    if kind not in _KIND_FIELDS:
        raise ConfigError(f"unknown backend kind {kind!r}")
    extras = set(config) - _KIND_FIELDS[kind] - {"kind"}
    if extras:
        raise ConfigError(f"fields {sorted(extras)} do not belong to backend kind {kind!r}")
    if kind == "http":
        if "endpoint" not in config:
            raise ConfigError("http backend needs an endpoint")
        return HttpBackend(
            endpoint=config["endpoint"],
            auth_env=config.get("auth_env"),
            timeout_s=float(config.get("timeout_s", 60.0)),
            max_retries=int(config.get("max_retries", 3)),
            backoff_s=float(config.get("backoff_s", 0.5)),
            max_parallel=int(config.get("max_parallel", 4)),
            extra_headers=config.get("extra_headers"),
        )
    if kind == "replay":
        if "archive" not in config:
            raise ConfigError("replay backend needs an archive path")
        return ReplayBackend(config["archive"])
    params = config.get("params")
    if not isinstance(params, dict):
        raise ConfigError("synthetic backend needs a params object")
    return SyntheticBackend(VerboseCompensationParams.from_dict(params),
                            seed=int(config.get("seed", 0)))


def complete(config_or_backend, request: CompletionRequest) -> CompletionResponse:
    """One-shot convenience: accepts a backend object or a config dict."""
    backend = config_or_backend
    if isinstance(config_or_backend, dict):
        backend = make_backend(config_or_backend)
    return backend.complete(request)
