"""Scope-extension operators, explicit composition and the extension registry."""

from __future__ import annotations

import json
import threading
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from .errors import (
    AlreadyCommon,
    ExtensionEmpty,
    GatewayError,
    InvalidInput,
    NoGeneralization,
    NotFound,
    ParseError,
)
from .text import content_key, normalize, question_key, split_lines

VERTICAL = "vertical"
HORIZONTAL = "horizontal"
GENERALIZATION = "generalization"
TEMPORAL = "temporal"
SPATIAL = "spatial"
SCATTER = "scatter"
BUILTIN_KINDS = (VERTICAL, HORIZONTAL, GENERALIZATION, TEMPORAL, SPATIAL, SCATTER)

MODEL = "model-generated"
USER = "user-supplied"

SEPARATOR = "\n---\n"
DEFAULT_PROMOTION_THRESHOLD = 3


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def load_templates(path: str | Path | None = None) -> dict[str, str]:
    """Packaged defaults, overlaid with the JSON map at ``path`` if given."""
    text = resources.files("scopex").joinpath("templates.json").read_text(encoding="utf-8")
    templates = json.loads(text)
    if path is not None:
        templates.update(json.loads(Path(path).read_text(encoding="utf-8")))
    return templates


DEFAULT_TEMPLATES = load_templates()


def render(templates: Mapping[str, str], name: str, **fields) -> str:
    try:
        return templates[name].format(**fields)
    except KeyError as exc:
        raise InvalidInput(f"template {name!r} missing or has unknown field {exc}") from None


def _ask(gateway, prompt: str, stage: str) -> str:
    try:
        return gateway.generate(prompt).text
    except GatewayError as exc:
        exc.stage = exc.stage or stage
        raise


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Extension:
    kind: str
    anchor: str
    payload: tuple[str, ...]
    weight: float = 1.0
    source: str = MODEL

    def __post_init__(self) -> None:
        payload = tuple(self.payload)
        if not payload or any(not p.strip() for p in payload):
            raise ExtensionEmpty(f"{self.kind} extension has an empty payload")
        if self.weight < 0:
            raise InvalidInput("extension weight must be >= 0")
        if not self.kind or not self.kind.strip():
            raise InvalidInput("extension kind must be non-empty")
        object.__setattr__(self, "payload", payload)

    @property
    def id(self) -> str:
        return content_key(self.kind, self.anchor, *self.payload, length=12)

    @property
    def is_dynamic(self) -> bool:
        return self.kind not in BUILTIN_KINDS

    def fragment(self) -> str:
        return f"[[{self.kind}]]\n" + "\n".join(self.payload)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "anchor": self.anchor,
            "payload": list(self.payload),
            "weight": self.weight,
            "source": self.source,
        }

    @classmethod
    def from_json(cls, data: dict) -> Extension:
        return cls(data["kind"], data["anchor"], tuple(data["payload"]),
                   float(data.get("weight", 1.0)), data.get("source", MODEL))


@dataclass(frozen=True)
class ExtendedQuestion:
    original: str
    fragments: tuple[tuple[str, tuple[str, ...]], ...] = ()
    composed: str = ""

    def to_json(self) -> dict:
        return {
            "original": self.original,
            "fragments": [{"kind": k, "payload": list(p)} for k, p in self.fragments],
            "composed": self.composed,
        }


def compose(original: str | ExtendedQuestion, extensions: Sequence[Extension]) -> ExtendedQuestion:
    """Append each extension's labeled payload to the question, in order."""
    if isinstance(original, ExtendedQuestion):
        base, fragments, composed = original.original, list(original.fragments), original.composed
    else:
        base, fragments, composed = original, [], original
    parts = [composed]
    for ext in extensions:
        fragments.append((ext.kind, ext.payload))
        parts.append(ext.fragment())
    return ExtendedQuestion(base, tuple(fragments), SEPARATOR.join(parts))


def decompose(composed: str) -> tuple[str, list[tuple[str, list[str]]]]:
    """Inverse of ``compose`` for originals that do not contain the separator."""
    head, *chunks = composed.split(SEPARATOR)
    fragments = []
    for chunk in chunks:
        label, _, body = chunk.partition("\n")
        if not (label.startswith("[[") and label.endswith("]]")):
            raise InvalidInput(f"not a composed fragment: {chunk[:40]!r}")
        fragments.append((label[2:-2], body.split("\n")))
    return head, fragments


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _require_question(question: str) -> None:
    if not question or not question.strip():
        raise InvalidInput("question must be non-empty")


def extend_vertical(
    question: str,
    gateway=None,
    *,
    causes: Sequence[str] | None = None,
    templates: Mapping[str, str] = DEFAULT_TEMPLATES,
) -> Extension:
    """Candidate causes for ``question``; user-supplied ``causes`` skip the gateway."""
    _require_question(question)
    if causes is not None:
        return Extension(VERTICAL, question_key(question), tuple(causes), source=USER)
    reply = _ask(gateway, render(templates, VERTICAL, question=question), VERTICAL)
    payload = split_lines(reply)
    if not payload:
        raise ExtensionEmpty("backend returned no causes")
    return Extension(VERTICAL, question_key(question), tuple(payload))


def extend_horizontal(
    question: str,
    gateway=None,
    n: int = 3,
    *,
    neighbors: Sequence[str] | None = None,
    templates: Mapping[str, str] = DEFAULT_TEMPLATES,
) -> Extension:
    """Up to ``n`` parallel questions, in the order the backend listed them."""
    _require_question(question)
    if n < 1:
        raise InvalidInput("n must be positive")
    if neighbors is not None:
        return Extension(HORIZONTAL, question_key(question), tuple(neighbors)[:n], source=USER)
    reply = _ask(gateway, render(templates, HORIZONTAL, question=question, n=n), HORIZONTAL)
    payload = split_lines(reply)[:n]
    if not payload:
        raise ExtensionEmpty("backend returned no related questions")
    return Extension(HORIZONTAL, question_key(question), tuple(payload))


@dataclass(frozen=True)
class ContainmentReport:
    question_id: str
    generalized_id: str
    methods: tuple[str, ...]  # M(q), sorted
    registered: tuple[str, ...]  # the subset newly recorded against q_g
    holds: bool  # M(q) <= M(q_g), checked against the store after registration


def generalize(
    question: str,
    gateway,
    store,
    *,
    templates: Mapping[str, str] = DEFAULT_TEMPLATES,
) -> tuple[str, ContainmentReport]:
    """Ask for a more general question and make M(q) a subset of M(q_g).

    Every method the store records as applicable to ``question`` is also
    recorded as applicable to the generalized question.
    """
    _require_question(question)
    reply = split_lines(_ask(gateway, render(templates, "generalize", question=question), GENERALIZATION))
    if not reply:
        raise ExtensionEmpty("backend returned no generalization")
    general = reply[0]
    if normalize(general) == normalize(question):
        raise NoGeneralization(f"generalization of {question!r} is the question itself")
    qid, gid = question_key(question), question_key(general)
    methods = sorted(store.applicable_to(qid))
    missing = sorted(set(methods) - store.applicable_to(gid))
    for mid in missing:
        store.record_applicability(mid, gid)
    holds = set(methods) <= store.applicable_to(gid)
    return general, ContainmentReport(qid, gid, tuple(methods), tuple(missing), holds)


def generalization_extension(question: str, general: str) -> Extension:
    return Extension(GENERALIZATION, question_key(question), (general,))


def predict_future(
    state: str,
    gateway,
    n: int = 1,
    *,
    templates: Mapping[str, str] = DEFAULT_TEMPLATES,
) -> list[str]:
    """Ask the backend for up to ``n`` future states, nearest first."""
    _require_question(state)
    reply = _ask(gateway, render(templates, "predict_future", question=state, n=n), "predict_future")
    return split_lines(reply)[:n]


def temporal_labels(n_history: int, n_future: int) -> list[str]:
    return [f"past[{n_history - i}]" for i in range(n_history)] + [
        f"future[{j + 1}]" for j in range(n_future)
    ]


def extend_temporal(input: str, history: Sequence[str] = (), future: Sequence[str] = ()) -> Extension:
    """History (oldest first) then future (nearest first), each labeled."""
    _require_question(input)
    if not history and not future:
        raise ExtensionEmpty("temporal extension needs history or future states")
    labels = temporal_labels(len(history), len(future))
    payload = tuple(f"{label}: {state}" for label, state in zip(labels, [*history, *future]))
    return Extension(TEMPORAL, question_key(input), payload, source=USER)


def parse_temporal(payload: Sequence[str]) -> tuple[list[str], list[str]]:
    """Split a temporal payload back into (history, future) state texts."""
    history, future = [], []
    for item in payload:
        label, sep, state = item.partition(": ")
        if not sep:
            raise InvalidInput(f"unlabeled temporal fragment {item!r}")
        if label.startswith("past["):
            history.append(state)
        elif label.startswith("future["):
            future.append(state)
        else:
            raise InvalidInput(f"unknown temporal label {label!r}")
    return history, future


def extend_spatial(input: str, wider_context: str) -> Extension:
    _require_question(input)
    if not wider_context or not wider_context.strip():
        raise ExtensionEmpty("spatial extension needs a non-empty wider context")
    return Extension(SPATIAL, question_key(input), (wider_context,), source=USER)


class ScatterVerdict(NamedTuple):
    stage: str
    verdict: str  # "applicable" | "not-applicable"
    rationale: str


def _parse_verdict(stage: str, reply: str) -> ScatterVerdict:
    lines = reply.strip().splitlines()
    if not lines:
        raise ParseError(f"empty scatter verdict for stage {stage!r}", raw=reply, stage=stage)
    head = lines[0].strip().lower()
    rest = "\n".join(lines[1:]).strip()
    token = head.replace("_", "-").replace(" ", "-")
    if token.startswith(("not-applicable", "inapplicable", "no")):
        verdict = "not-applicable"
    elif token.startswith(("applicable", "yes")):
        verdict = "applicable"
    else:
        raise ParseError(f"unrecognized scatter verdict {lines[0]!r}", raw=reply, stage=stage)
    return ScatterVerdict(stage, verdict, rest)


def scatter(
    optimization: str,
    source_stage: str,
    stages: Sequence[str],
    gateway,
    *,
    templates: Mapping[str, str] = DEFAULT_TEMPLATES,
    max_workers: int = 4,
) -> list[ScatterVerdict]:
    """Test whether an optimization valid at ``source_stage`` transfers to each other stage.

    Calls may run concurrently; results come back in input order.
    """
    if not stages:
        raise InvalidInput("scatter needs at least one stage")
    targets = [s for s in dict.fromkeys(stages) if s != source_stage]

    def judge(stage: str) -> ScatterVerdict:
        prompt = render(templates, SCATTER, optimization=optimization, source=source_stage, stage=stage)
        return _parse_verdict(stage, _ask(gateway, prompt, f"scatter:{stage}"))

    if not targets:
        return []
    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(targets)))) as pool:
        return list(pool.map(judge, targets))


def scatter_extension(source_stage: str, verdicts: Sequence[ScatterVerdict]) -> Extension:
    """Extension whose payload is the stages the optimization transfers to."""
    applicable = tuple(v.stage for v in verdicts if v.verdict == "applicable")
    return Extension(SCATTER, question_key(source_stage), applicable)


def extend_dynamic(question: str, kind: str, content: Sequence[str], registry=None) -> Extension:
    """Free-form extension of a caller-registered kind; counts toward promotion."""
    _require_question(question)
    if kind in BUILTIN_KINDS:
        raise InvalidInput(f"{kind!r} is a built-in kind; use its operator")
    ext = Extension(kind, question_key(question), tuple(content), source=USER)
    if registry is not None:
        registry.note_usage(kind)
    return ext


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


@dataclass
class ExtensionRegistry:
    """Common extension kinds plus usage-counted dynamic kinds awaiting promotion."""

    common: list[str] = field(default_factory=lambda: list(BUILTIN_KINDS))
    dynamic: dict[str, int] = field(default_factory=dict)
    promotion_threshold: int = DEFAULT_PROMOTION_THRESHOLD

    def __post_init__(self) -> None:
        if self.promotion_threshold < 1:
            raise InvalidInput("promotion_threshold must be a positive integer")
        if set(self.common) & set(self.dynamic):
            raise InvalidInput("common and dynamic kinds overlap")
        self._lock = threading.Lock()

    def register_dynamic(self, kind_name: str) -> ExtensionRegistry:
        name = kind_name.strip()
        if not name:
            raise InvalidInput("kind name must be non-empty")
        with self._lock:
            if name in self.common:
                raise AlreadyCommon(f"{name!r} is already a common extension kind")
            self.dynamic.setdefault(name, 0)
        return self

    def note_usage(self, kind_name: str) -> ExtensionRegistry:
        with self._lock:
            if kind_name in self.common:
                return self
            if kind_name not in self.dynamic:
                raise NotFound(f"{kind_name!r} is not a registered extension kind")
            self.dynamic[kind_name] += 1
            if self.dynamic[kind_name] >= self.promotion_threshold:
                del self.dynamic[kind_name]
                self.common.append(kind_name)
        return self

    def to_json(self) -> dict:
        return {"common": list(self.common), "dynamic": dict(self.dynamic),
                "threshold": self.promotion_threshold}

    @classmethod
    def from_json(cls, data: dict) -> ExtensionRegistry:
        return cls(list(data.get("common", BUILTIN_KINDS)), dict(data.get("dynamic", {})),
                   int(data.get("threshold", DEFAULT_PROMOTION_THRESHOLD)))

    @classmethod
    def load(cls, path: str | Path) -> ExtensionRegistry:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
