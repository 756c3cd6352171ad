"""Text-generation backends.

Two backends share one duck-typed contract (``generate``, ``embed``,
``candidate_distribution``):

* ``ScriptedBackend`` answers from an ordered rule list and derives
  embeddings from a seeded hash. It is a pure function of its config and is
  what every offline test runs on.
* ``HttpBackend`` speaks the OpenAI-compatible chat-completions and
  embeddings wire format.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import struct
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .entropy import Distribution
from .errors import GatewayError, InvalidInput, NoRule, ParseError
from .text import normalize

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.5
CONFIDENCE_SUFFIX = (
    "\n\nAnswer, then on the last line write your confidence between 0 and 1 "
    "as 'confidence: <number>'."
)
SCORING_PROMPT = (
    "{prompt}\n\nScore how likely each candidate answer is, from 0 to 100. "
    'Reply with JSON only, in the form {{"scores": [<one number per candidate>]}}.\n'
    "Candidates:\n{candidates}"
)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.prompt or not self.prompt.strip():
            raise InvalidInput("prompt must be non-empty")
        if self.max_tokens < 1:
            raise InvalidInput("max_tokens must be positive")
        if self.temperature < 0:
            raise InvalidInput("temperature must be >= 0")


@dataclass(frozen=True)
class Generation:
    text: str
    confidence: float
    # False when the backend gave no parseable confidence and the default was used
    confidence_reported: bool = True

    def __iter__(self):
        return iter((self.text, self.confidence))


class Gateway(Protocol):
    def generate(self, request: GenerationRequest) -> Generation: ...

    def embed(self, text: str) -> list[float]: ...

    def candidate_distribution(self, prompt: str, candidates: Sequence[str]) -> Distribution: ...


def as_request(prompt: str | GenerationRequest) -> GenerationRequest:
    return prompt if isinstance(prompt, GenerationRequest) else GenerationRequest(prompt)


def _check_candidates(candidates: Sequence[str]) -> list[str]:
    cands = list(candidates)
    if len(cands) < 2:
        raise InvalidInput("candidate_distribution needs at least two candidates")
    return cands


def _finish_distribution(candidates: list[str], weights: Sequence[float]) -> Distribution:
    if not any(w > 0 for w in weights):
        weights = [1.0] * len(candidates)
    return Distribution(tuple(candidates), tuple(weights))


# ---------------------------------------------------------------------------
# scripted backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    pattern: str
    response: str
    confidence: float = 1.0
    regex: bool = False

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.pattern, prompt, flags=re.DOTALL) is not None
        return self.pattern in prompt


@dataclass(frozen=True)
class ScriptedBackendConfig:
    rules: tuple[Rule, ...] = ()
    embedding_seed: int = 0
    embedding_dim: int = 16
    # prompt substring -> positional weight list, or candidate -> weight map
    distributions: tuple[tuple[str, list[float] | dict[str, float]], ...] = ()

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise InvalidInput("embedding_dim must be positive")
        for rule in self.rules:
            if not 0.0 <= rule.confidence <= 1.0:
                raise InvalidInput(f"rule confidence out of [0,1]: {rule}")

    @classmethod
    def from_dict(cls, data: dict) -> ScriptedBackendConfig:
        rules = []
        for raw in data.get("rules", []):
            if isinstance(raw, dict):
                rules.append(Rule(raw["pattern"], raw["response"],
                                  float(raw.get("confidence", 1.0)), bool(raw.get("regex", False))))
            else:
                pattern, response, *rest = raw
                rules.append(Rule(pattern, response, float(rest[0]) if rest else 1.0))
        dists = data.get("distributions", {})
        return cls(
            rules=tuple(rules),
            embedding_seed=int(data.get("embedding_seed", 0)),
            embedding_dim=int(data.get("embedding_dim", 16)),
            distributions=tuple(dists.items()),
        )

    @classmethod
    def load(cls, path: str | Path) -> ScriptedBackendConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def hash_embedding(text: str, seed: int, dim: int) -> list[float]:
    """Unit vector derived from a seeded SHA-256 expansion of normalized text."""
    key = normalize(text).encode("utf-8")
    values: list[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(b"%d:%d:" % (seed, block) + key).digest()
        for (word,) in struct.iter_unpack(">Q", digest):
            values.append(word / 2**63 - 1.0)
        block += 1
    values = values[:dim]
    norm = math.sqrt(math.fsum(v * v for v in values))
    return [v / norm for v in values]


class ScriptedBackend:
    """Deterministic offline backend: first matching rule wins."""

    def __init__(self, config: ScriptedBackendConfig):
        self.config = config

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        return cls(ScriptedBackendConfig.load(path))

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def generate(self, request: GenerationRequest | str) -> Generation:
        request = as_request(request)
        for rule in self.config.rules:
            if rule.matches(request.prompt):
                return Generation(rule.response, rule.confidence)
        raise NoRule(f"no scripted rule matches prompt: {request.prompt[:120]!r}")

    def embed(self, text: str) -> list[float]:
        if not text or not text.strip():
            raise InvalidInput("cannot embed empty text")
        return hash_embedding(text, self.config.embedding_seed, self.config.embedding_dim)

    def candidate_distribution(self, prompt: str, candidates: Sequence[str]) -> Distribution:
        cands = _check_candidates(candidates)
        for pattern, spec in self.config.distributions:
            if pattern not in prompt:
                continue
            if isinstance(spec, dict):
                weights = [float(spec.get(c, 0.0)) for c in cands]
            else:
                if len(spec) != len(cands):
                    raise InvalidInput(
                        f"scripted distribution for {pattern!r} has {len(spec)} weights, "
                        f"{len(cands)} candidates given"
                    )
                weights = [float(w) for w in spec]
            return _finish_distribution(cands, weights)
        raise NoRule(f"no scripted distribution matches prompt: {prompt[:120]!r}")


class RecordingGateway:
    """Wraps a gateway and logs every generate() prompt and reply, in call order."""

    def __init__(self, inner):
        self.inner = inner
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def generate(self, request):
        request = as_request(request)
        result = self.inner.generate(request)
        with self._lock:
            self.calls.append((request.prompt, result.text))
        return result

    def embed(self, text):
        return self.inner.embed(text)

    def candidate_distribution(self, prompt, candidates):
        return self.inner.candidate_distribution(prompt, candidates)

    @property
    def prompts(self) -> list[str]:
        return [p for p, _ in self.calls]


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------

_CONF_RE = re.compile(r"(?i)confidence\s*[:=]?\s*([0-9]*\.?[0-9]+)\s*(%?)")
_NUM_ONLY_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(%?)\s*$")


def parse_confidence(text: str) -> tuple[str, float, bool]:
    """Split a reply into (answer, confidence, reported).

    Looks at the last non-empty line only. Accepts ``confidence: 0.8``,
    ``Confidence = 80%`` or a bare number. Unparseable or out-of-range values
    fall back to ``DEFAULT_CONFIDENCE``.
    """
    lines = text.rstrip().splitlines()
    if not lines:
        return "", DEFAULT_CONFIDENCE, False
    last = lines[-1]
    m = _CONF_RE.search(last) or _NUM_ONLY_RE.match(last)
    if m:
        value = float(m.group(1))
        if m.group(2) == "%" or value > 1.0:
            value /= 100.0
        if 0.0 <= value <= 1.0:
            return "\n".join(lines[:-1]).strip(), value, True
    return text.strip(), DEFAULT_CONFIDENCE, False


def parse_scores(raw: str, n: int) -> list[float]:
    """Parse ``{"scores": [...]}`` (optionally inside a code fence)."""
    body = raw.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", body, flags=re.DOTALL)
    if fence:
        body = fence.group(1)
    start, end = body.find("{"), body.rfind("}")
    try:
        data = json.loads(body[start:end + 1] if start >= 0 else body)
        scores = data["scores"] if isinstance(data, dict) else data
        values = [float(s) for s in scores]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed candidate scores: {exc}", raw=raw) from exc
    if len(values) != n or any(not math.isfinite(v) or v < 0 for v in values):
        raise ParseError(f"expected {n} nonnegative scores, got {values}", raw=raw)
    return values


@dataclass
class HttpSettings:
    base_url: str
    api_key: str = ""
    model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-3-small"
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5

    @classmethod
    def from_env(cls, env: dict | None = None) -> HttpSettings:
        env = os.environ if env is None else env
        base = env.get("SCOPEX_API_BASE", "").strip()
        if not base:
            raise InvalidInput("SCOPEX_API_BASE is not set")
        kwargs = {"base_url": base, "api_key": env.get("SCOPEX_API_KEY", "")}
        if env.get("SCOPEX_MODEL"):
            kwargs["model"] = env["SCOPEX_MODEL"]
        if env.get("SCOPEX_EMBED_MODEL"):
            kwargs["embed_model"] = env["SCOPEX_EMBED_MODEL"]
        return cls(**kwargs)


class HttpBackend:
    """OpenAI-compatible client with retries on 5xx responses and timeouts."""

    def __init__(
        self,
        settings: HttpSettings,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.settings = settings
        headers = {"Content-Type": "application/json"}
        if settings.api_key:
            headers["Authorization"] = f"Bearer {settings.api_key}"
        self._client = httpx.Client(
            base_url=settings.base_url.rstrip("/"),
            headers=headers,
            timeout=settings.timeout,
            transport=transport,
        )
        self._sleep = sleep

    @classmethod
    def from_env(cls, **kwargs) -> HttpBackend:
        return cls(HttpSettings.from_env(), **kwargs)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, body: dict) -> dict:
        attempts = self.settings.retries + 1
        for attempt in range(attempts):
            last = attempt == attempts - 1
            try:
                resp = self._client.post(path, json=body)
            except httpx.TimeoutException as exc:
                if last:
                    raise GatewayError(f"timeout calling {path}: {exc}") from exc
                logger.warning("timeout on %s (attempt %d/%d)", path, attempt + 1, attempts)
            except httpx.HTTPError as exc:
                raise GatewayError(f"transport failure calling {path}: {exc}") from exc
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ParseError("response is not JSON", raw=resp.text) from exc
                if resp.status_code < 500 or last:
                    raise GatewayError(f"{path} failed: {resp.text[:200]}", status=resp.status_code)
                logger.warning("%s returned %d (attempt %d/%d)", path, resp.status_code,
                               attempt + 1, attempts)
            self._sleep(self.settings.backoff * 2**attempt)
        raise AssertionError("unreachable")

    def _chat(self, request: GenerationRequest) -> str:
        body = {
            "model": self.settings.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post("/v1/chat/completions", body)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ParseError("unexpected chat-completion payload", raw=json.dumps(data)) from exc

    def generate(self, request: GenerationRequest | str) -> Generation:
        request = as_request(request)
        asked = GenerationRequest(request.prompt + CONFIDENCE_SUFFIX,
                                  request.max_tokens, request.temperature)
        answer, confidence, reported = parse_confidence(self._chat(asked))
        return Generation(answer, confidence, reported)

    def embed(self, text: str) -> list[float]:
        if not text or not text.strip():
            raise InvalidInput("cannot embed empty text")
        data = self._post("/v1/embeddings", {"model": self.settings.embed_model, "input": text})
        try:
            return [float(x) for x in data["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ParseError("unexpected embeddings payload", raw=json.dumps(data)) from exc

    def candidate_distribution(self, prompt: str, candidates: Sequence[str]) -> Distribution:
        cands = _check_candidates(candidates)
        listing = "\n".join(f"{i + 1}. {c}" for i, c in enumerate(cands))
        raw = self._chat(GenerationRequest(SCORING_PROMPT.format(prompt=prompt, candidates=listing)))
        return _finish_distribution(cands, parse_scores(raw, len(cands)))


__all__ = [
    "Gateway", "Generation", "GenerationRequest", "HttpBackend", "HttpSettings",
    "RecordingGateway", "Rule", "ScriptedBackend", "ScriptedBackendConfig",
    "hash_embedding", "parse_confidence", "parse_scores",
]
