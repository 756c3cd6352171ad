"""Staged answering pipeline, difference-based active thinking and method improvement.

``Orchestrator.answer`` tries, in order: a direct (intuition) query, reuse
of a close stored method, scope extension of the question, and borrowing of
methods by distance to the extended question. Each attempted stage is
recorded in a ``ReasoningTrace``.
"""

from __future__ import annotations

import json
import random
import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field

from .errors import (
    ExtensionEmpty,
    GatewayError,
    InvalidInput,
    InvalidStrategy,
    NoFeedback,
    ParseError,
)
from .extensions import (
    DEFAULT_TEMPLATES,
    HORIZONTAL,
    SPATIAL,
    TEMPORAL,
    VERTICAL,
    Extension,
    compose,
    extend_horizontal,
    extend_spatial,
    extend_temporal,
    extend_vertical,
    render,
)
from .store import EXTENDED, ORIGINAL, MethodStore
from .text import question_key, split_lines

INTUITION = "intuition"
METHOD_REUSE = "method-reuse"
SCOPE_EXTENSION = "scope-extension"
BORROWING = "borrowing"
STAGES = (INTUITION, METHOD_REUSE, SCOPE_EXTENSION, BORROWING)

OUTCOMES = {
    INTUITION: "intuition",
    METHOD_REUSE: "method-reuse",
    SCOPE_EXTENSION: "scope-extended",
    BORROWING: "borrowed",
}
UNRESOLVED = "unresolved"

MINIMAL = "minimal"
PARTIAL = "partial"
COMPLETE = "complete"
STRATEGIES = (MINIMAL, PARTIAL, COMPLETE)
EMPIRICAL = "empirical"
PREDICTIVE = "predictive"

NO_CHANGE = re.compile(r"^\s*(no (key )?changes?|none|nothing changed)\W*$", re.IGNORECASE)
_NUMBER = re.compile(r"[-+]?\d*\.?\d+")


@dataclass
class OrchestratorConfig:
    intuition_threshold: float = 0.75
    reuse_threshold: float = 0.25
    borrow_k: int = 3
    extension_order: tuple[str, ...] = (VERTICAL, HORIZONTAL, TEMPORAL, SPATIAL)
    horizontal_n: int = 3
    max_stages: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.intuition_threshold <= 1.0:
            raise InvalidInput("intuition_threshold must lie in [0, 1]")
        if not 0.0 <= self.reuse_threshold <= 2.0:
            raise InvalidInput("reuse_threshold must lie in [0, 2]")
        if self.borrow_k < 1 or self.horizontal_n < 1:
            raise InvalidInput("borrow_k and horizontal_n must be positive")
        if not 1 <= self.max_stages <= len(STAGES):
            raise InvalidInput(f"max_stages must lie in [1, {len(STAGES)}]")
        unknown = set(self.extension_order) - {VERTICAL, HORIZONTAL, TEMPORAL, SPATIAL}
        if unknown:
            raise InvalidInput(f"unsupported stage-3 extension kinds: {sorted(unknown)}")
        self.extension_order = tuple(self.extension_order)


@dataclass
class AnswerContext:
    """Caller-supplied material for the temporal and spatial extensions."""

    history: Sequence[str] = ()
    future: Sequence[str] = ()
    wider_context: str = ""


@dataclass
class StageRecord:
    stage: str
    prompts_issued: list[str] = field(default_factory=list)
    responses: list[str] = field(default_factory=list)
    decision: str = ""
    confidence: float = 0.0
    details: dict = field(default_factory=dict)


@dataclass
class ReasoningTrace:
    question: str
    stages: list[StageRecord] = field(default_factory=list)
    final_answer: str = ""
    outcome: str = UNRESOLVED

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> ReasoningTrace:
        stages = [StageRecord(**s) for s in data.get("stages", [])]
        return cls(data["question"], stages, data.get("final_answer", ""),
                   data.get("outcome", UNRESOLVED))

    def stage_names(self) -> list[str]:
        return [s.stage for s in self.stages]

    def extensions(self) -> list[Extension]:
        """Extensions applied during the scope-extension stage, if it ran."""
        for s in self.stages:
            if s.stage == SCOPE_EXTENSION:
                return [Extension.from_json(e) for e in s.details.get("extensions", [])]
        return []


def is_stage_prefix(names: Sequence[str]) -> bool:
    return bool(names) and list(names) == list(STAGES[: len(names)])


@dataclass(frozen=True)
class ImprovementCandidate:
    base_method: str
    strategy: str
    changed_steps: frozenset[int]
    new_steps: tuple[str, ...]
    score: float
    evaluator: str

    def to_json(self) -> dict:
        return {
            "base_method": self.base_method,
            "strategy": self.strategy,
            "changed_steps": sorted(self.changed_steps),
            "new_steps": list(self.new_steps),
            "score": self.score,
            "evaluator": self.evaluator,
        }


def draw_changed_steps(strategy: str, n_steps: int, rng: random.Random) -> frozenset[int]:
    """Indices to rewrite: one, a strict non-empty subset, or all of them."""
    if strategy not in STRATEGIES:
        raise InvalidStrategy(f"unknown strategy {strategy!r}")
    if n_steps < 1:
        raise InvalidStrategy("method has no steps")
    if strategy == MINIMAL:
        return frozenset({rng.randrange(n_steps)})
    if strategy == COMPLETE:
        return frozenset(range(n_steps))
    if n_steps < 2:
        raise InvalidStrategy("partial change needs a method with at least two steps")
    size = rng.randint(1, n_steps - 1)
    return frozenset(rng.sample(range(n_steps), size))


def _numbered(steps: Sequence[str]) -> str:
    return "\n".join(f"{i + 1}. {s}" for i, s in enumerate(steps))


def _parse_score(text: str) -> float:
    m = _NUMBER.search(text)
    if not m:
        raise ParseError("no score in predictive evaluation", raw=text, stage="predictive-score")
    value = float(m.group())
    if 1.0 < value <= 100.0:
        value /= 100.0
    return min(1.0, max(0.0, value))


class Orchestrator:
    def __init__(
        self,
        gateway,
        store: MethodStore,
        config: OrchestratorConfig | None = None,
        templates: Mapping[str, str] = DEFAULT_TEMPLATES,
    ):
        self.gateway = gateway
        self.store = store
        self.config = config or OrchestratorConfig()
        self.templates = templates

    def _generate(self, record: StageRecord, prompt: str):
        try:
            result = self.gateway.generate(prompt)
        except GatewayError as exc:
            exc.stage = exc.stage or record.stage
            raise
        record.prompts_issued.append(prompt)
        record.responses.append(result.text)
        if not getattr(result, "confidence_reported", True):
            record.details["confidence_defaulted"] = True
        return result

    # -- staged answering --------------------------------------------------

    def answer(
        self, question: str, context: AnswerContext | None = None
    ) -> tuple[str, ReasoningTrace]:
        if not question or not question.strip():
            raise InvalidInput("question must be non-empty")
        context = context or AnswerContext()
        trace = ReasoningTrace(question)
        best: tuple[float, str] | None = None
        steps = (self._intuition, self._method_reuse, self._scope_extension, self._borrow)
        state: dict = {}
        try:
            for run in steps[: self.config.max_stages]:
                record, answer = run(question, context, state)
                trace.stages.append(record)
                if answer is not None and (best is None or record.confidence > best[0]):
                    best = (record.confidence, answer)
                if record.decision == "accepted":
                    trace.final_answer = answer
                    trace.outcome = OUTCOMES[record.stage]
                    return answer, trace
        except GatewayError as exc:
            exc.trace = trace
            raise
        trace.final_answer = best[1] if best else ""
        trace.outcome = UNRESOLVED
        return trace.final_answer, trace

    def _intuition(self, question, context, state):
        record = StageRecord(INTUITION)
        result = self._generate(record, render(self.templates, "intuition", question=question))
        record.confidence = result.confidence
        record.decision = "accepted" if result.confidence >= self.config.intuition_threshold else "rejected"
        return record, result.text

    def _method_reuse(self, question, context, state):
        record = StageRecord(METHOD_REUSE)
        hits = self.store.retrieve_nearest(question, k=1)
        record.details["matched_on"] = ORIGINAL
        if not hits:
            record.decision = "no-methods"
            return record, None
        hit = hits[0]
        record.details["method_id"] = hit.method_id
        record.details["distance"] = hit.distance
        if hit.distance > self.config.reuse_threshold:
            record.decision = "too-distant"
            return record, None
        method = self.store.get(hit.method_id)
        prompt = render(self.templates, "method_apply", question=question,
                        method_question=method.question, steps=_numbered(method.steps))
        result = self._generate(record, prompt)
        record.confidence = result.confidence
        record.decision = "accepted"
        self.store.record_applicability(method.id, question_key(question))
        return record, result.text

    def _scope_extension(self, question, context, state):
        record = StageRecord(SCOPE_EXTENSION)
        record.details["order"] = list(self.config.extension_order)
        applied: list[Extension] = []
        skipped: dict[str, str] = {}
        for kind in self.config.extension_order:
            try:
                applied.append(self._extend(record, kind, question, context))
            except ExtensionEmpty as exc:
                skipped[kind] = str(exc)
        record.details["extensions"] = [e.to_json() for e in applied]
        record.details["skipped"] = skipped
        if not applied:
            record.decision = "no-extensions"
            return record, None
        extended = compose(question, applied)
        state["extended"] = extended
        prompt = render(self.templates, "extended_answer", extended=extended.composed)
        result = self._generate(record, prompt)
        record.confidence = result.confidence
        record.decision = "accepted" if result.confidence >= self.config.intuition_threshold else "rejected"
        return record, result.text

    def _extend(self, record: StageRecord, kind: str, question: str, context: AnswerContext) -> Extension:
        if kind == TEMPORAL:
            return extend_temporal(question, context.history, context.future)
        if kind == SPATIAL:
            return extend_spatial(question, context.wider_context)
        # route the operator's single gateway call through the trace
        recorder = _StageGateway(self, record)
        if kind == VERTICAL:
            return extend_vertical(question, recorder, templates=self.templates)
        return extend_horizontal(question, recorder, self.config.horizontal_n, templates=self.templates)

    def _borrow(self, question, context, state):
        record = StageRecord(BORROWING)
        extended = state.get("extended")
        text = extended.composed if extended is not None else question
        matched_on = EXTENDED if extended is not None else ORIGINAL
        record.details["matched_on"] = matched_on
        hits = self.store.retrieve_nearest(text, k=self.config.borrow_k, matched_on=matched_on)
        record.details["borrowed"] = [{"method_id": h.method_id, "distance": h.distance} for h in hits]
        if not hits:
            record.decision = "no-methods"
            return record, None
        methods = [self.store.get(h.method_id) for h in hits]
        listing = "\n\n".join(
            f"Method {i + 1} (from: {m.question}):\n{_numbered(m.steps)}" for i, m in enumerate(methods)
        )
        result = self._generate(record, render(self.templates, "borrow", question=question, methods=listing))
        record.confidence = result.confidence
        if result.confidence >= self.config.intuition_threshold:
            record.decision = "accepted"
            qid = question_key(question)
            for m in methods:
                self.store.record_applicability(m.id, qid)
        else:
            record.decision = "rejected"
        return record, result.text

    # -- timely active thinking --------------------------------------------

    def active_step(self, goal: str, previous_state: str, current_state: str) -> tuple[list[str], str]:
        """Difference-based prompting: first ask what changed, then ask what to do about it.

        Always two gateway calls, in that order. With no detected change the
        action is ``"maintain"``.
        """
        if not goal or not goal.strip():
            raise InvalidInput("goal must be non-empty")
        first = render(self.templates, "identify_changes", goal=goal,
                       previous=previous_state, current=current_state)
        try:
            reply = self.gateway.generate(first).text
        except GatewayError as exc:
            exc.stage = "change-identification"
            raise
        changes = [c for c in split_lines(reply) if not NO_CHANGE.match(c)]
        listed = "\n".join(f"- {c}" for c in changes) if changes else "- none"
        second = render(self.templates, "solve_changes", goal=goal, current=current_state, changes=listed)
        try:
            action = self.gateway.generate(second).text.strip()
        except GatewayError as exc:
            exc.stage = "solution"
            raise
        if not changes or not action:
            action = "maintain"
        return changes, action

    # -- method improvement ------------------------------------------------

    def critique_method(self, method_id: str) -> str:
        method = self.store.get(method_id)
        prompt = render(self.templates, "critique", question=method.question, steps=_numbered(method.steps))
        try:
            text = self.gateway.generate(prompt).text.strip()
        except GatewayError as exc:
            exc.stage = exc.stage or "critique"
            raise
        if not text:
            raise NoFeedback(f"empty critique for method {method_id}")
        return text

    def improve_method(
        self,
        method_id: str,
        strategy: str,
        evaluator: str = PREDICTIVE,
        trials: int = 1,
        seed: int = 0,
        test: Callable[[list[str]], float] | None = None,
    ) -> list[ImprovementCandidate]:
        """Generate ``trials`` step-change candidates and rank them by score.

        ``evaluator="empirical"`` scores each candidate's step list with the
        ``test`` callback (a pass rate in [0, 1]); ``"predictive"`` asks the
        backend for a score.
        """
        method = self.store.get(method_id)
        if strategy not in STRATEGIES:
            raise InvalidStrategy(f"unknown strategy {strategy!r}")
        if evaluator not in (EMPIRICAL, PREDICTIVE):
            raise InvalidInput(f"unknown evaluator {evaluator!r}")
        if evaluator == EMPIRICAL and test is None:
            raise InvalidInput("empirical evaluation needs a test callback")
        if trials < 1:
            raise InvalidInput("trials must be positive")
        rng = random.Random(seed)
        candidates = []
        for _ in range(trials):
            changed = draw_changed_steps(strategy, len(method.steps), rng)
            new_steps = list(method.steps)
            for i in sorted(changed):
                prompt = render(self.templates, "step_change", question=method.question,
                                steps=_numbered(method.steps), index=i + 1, strategy=strategy,
                                step=method.steps[i])
                rewritten = self.gateway.generate(prompt).text.strip()
                new_steps[i] = rewritten or method.steps[i]
            if evaluator == EMPIRICAL:
                score = float(test(list(new_steps)))
                if not 0.0 <= score <= 1.0:
                    raise InvalidInput(f"test callback returned {score}, expected a pass rate in [0, 1]")
            else:
                prompt = render(self.templates, "predictive_score", question=method.question,
                                old_steps=_numbered(method.steps), new_steps=_numbered(new_steps))
                score = _parse_score(self.gateway.generate(prompt).text)
            candidates.append(ImprovementCandidate(method.id, strategy, changed, tuple(new_steps),
                                                   score, evaluator))
        candidates.sort(key=lambda c: (-c.score, sorted(c.changed_steps)))
        return candidates

    def adopt(self, candidate: ImprovementCandidate) -> str:
        """Store a candidate as a new method derived from its base."""
        base = self.store.get(candidate.base_method)
        solution = "\n".join(candidate.new_steps)
        return self.store.add_method(base.question, solution, list(candidate.new_steps),
                                     tags=base.tags, origin=f"improved-from:{base.id}")


class _StageGateway:
    """Gateway view that logs generate() calls into a stage record."""

    def __init__(self, orchestrator: Orchestrator, record: StageRecord):
        self._orch = orchestrator
        self._record = record

    def generate(self, prompt):
        return self._orch._generate(self._record, prompt)
