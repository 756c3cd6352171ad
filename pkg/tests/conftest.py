from __future__ import annotations

import math
from pathlib import Path

import pytest
from hypothesis import settings

from scopex.gateway import Rule, ScriptedBackend, ScriptedBackendConfig
from scopex.store import MethodStore

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

settings.register_profile("repo", deadline=None)
settings.load_profile("repo")

# acceptance-criterion outcomes, printed in the terminal summary
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def make_backend(rules=(), dim: int = 8, seed: int = 0, distributions=None) -> ScriptedBackend:
    parsed = tuple(r if isinstance(r, Rule) else Rule(*r) for r in rules)
    return ScriptedBackend(ScriptedBackendConfig(parsed, seed, dim, tuple((distributions or {}).items())))


@pytest.fixture
def scripted() -> ScriptedBackend:
    return ScriptedBackend.from_file(FIXTURES / "scripted.json")


@pytest.fixture
def backend() -> ScriptedBackend:
    return make_backend(dim=8)


@pytest.fixture
def store(backend) -> MethodStore:
    return MethodStore(backend, dim=8)


def oracle_entropy(weights) -> float:
    """Plain-Python Shannon sum, independent of the numpy path."""
    total = math.fsum(weights)
    return -math.fsum((w / total) * math.log2(w / total) for w in weights if w > 0)


def oracle_cosine(a, b) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)
