"""Entropy of extension diversity.

All quantities are in bits. ``Distribution`` and ``JointTable`` hold raw
nonnegative weights; normalization happens on read.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolation, DegenerateDistribution, InvalidInput, OutcomeMismatch

EPSILON = 1e-6  # novel-coverage floor for extension weights
KL_SMOOTHING = 1e-9
IDENTITY_TOL = 1e-9
INDEPENDENCE_TOL = 1e-6


def _check_weights(weights: Sequence[float]) -> tuple[float, ...]:
    ws = tuple(float(w) for w in weights)
    if any(not math.isfinite(w) or w < 0 for w in ws):
        raise InvalidInput(f"weights must be finite and nonnegative: {ws!r}")
    if not any(w > 0 for w in ws):
        raise DegenerateDistribution("distribution has no positive weight")
    return ws


@dataclass(frozen=True)
class Distribution:
    outcomes: tuple[str, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcomes", tuple(str(o) for o in self.outcomes))
        if len(self.outcomes) != len(self.weights):
            raise InvalidInput("outcomes and weights differ in length")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise InvalidInput("duplicate outcomes")
        object.__setattr__(self, "weights", _check_weights(self.weights))

    @classmethod
    def uniform(cls, outcomes: Iterable[str]) -> Distribution:
        outs = tuple(outcomes)
        return cls(outs, (1.0,) * len(outs))

    @classmethod
    def from_mapping(cls, weights: Mapping[str, float]) -> Distribution:
        return cls(tuple(weights), tuple(weights.values()))

    @property
    def probabilities(self) -> tuple[float, ...]:
        total = math.fsum(self.weights)
        return tuple(w / total for w in self.weights)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.outcomes, self.probabilities))

    def __len__(self) -> int:
        return len(self.outcomes)


@dataclass(frozen=True)
class JointTable:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    cells: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        cells = tuple(tuple(float(c) for c in row) for row in self.cells)
        if len(cells) != len(self.rows) or any(len(r) != len(self.cols) for r in cells):
            raise InvalidInput("cell shape does not match rows x cols")
        arr = np.asarray(cells, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidInput("cells must be finite and nonnegative")
        if not arr.sum() > 0:
            raise DegenerateDistribution("joint table has no mass")
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "cols", tuple(self.cols))
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_array(cls, cells) -> JointTable:
        arr = np.asarray(cells, dtype=float)
        return cls(
            tuple(f"r{i}" for i in range(arr.shape[0])),
            tuple(f"c{j}" for j in range(arr.shape[1])),
            tuple(map(tuple, arr.tolist())),
        )

    def array(self) -> np.ndarray:
        arr = np.asarray(self.cells, dtype=float)
        return arr / arr.sum()

    def row_marginal(self) -> Distribution:
        return Distribution(self.rows, tuple(np.asarray(self.cells).sum(axis=1).tolist()))

    def col_marginal(self) -> Distribution:
        return Distribution(self.cols, tuple(np.asarray(self.cells).sum(axis=0).tolist()))


def _entropy_of(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0


def entropy(d: Distribution) -> float:
    """Shannon entropy in bits; zero-weight outcomes contribute nothing."""
    return _entropy_of(np.asarray(d.probabilities, dtype=float))


def joint_entropy(joint: JointTable) -> float:
    return _entropy_of(joint.array().ravel())


def is_independent(joint: JointTable, tol: float = INDEPENDENCE_TOL) -> bool:
    """Additivity check: H(X, Y) == H(X) + H(Y) within ``tol``."""
    gap = joint_entropy(joint) - entropy(joint.row_marginal()) - entropy(joint.col_marginal())
    return abs(gap) <= tol


def mutual_information(joint: JointTable) -> float:
    mi = entropy(joint.row_marginal()) + entropy(joint.col_marginal()) - joint_entropy(joint)
    # cancellation noise only; the true value is nonnegative
    return mi if mi > 0 else 0.0


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """KL(p || q) in bits.

    Zero cells of ``q`` under the support of ``p`` receive ``KL_SMOOTHING``
    mass before renormalization, so the result is always finite.
    """
    if p.outcomes != q.outcomes:
        raise OutcomeMismatch(f"outcome lists differ: {p.outcomes} vs {q.outcomes}")
    pp = np.asarray(p.probabilities, dtype=float)
    qq = np.asarray(q.probabilities, dtype=float)
    holes = (qq == 0) & (pp > 0)
    if holes.any():
        qq = np.where(holes, KL_SMOOTHING, qq)
        qq = qq / qq.sum()
    mask = pp > 0
    kl = float(np.sum(pp[mask] * np.log2(pp[mask] / qq[mask])))
    return kl if kl > 0 else 0.0


def information_gain(question: str, extended, candidates: Sequence[str], gateway) -> float:
    """KL(p(.|extended) || p(.|question)) over a finite candidate-answer set."""
    if len(candidates) < 2:
        raise InvalidInput("information gain needs at least two candidates")
    composed = extended if isinstance(extended, str) else extended.composed
    original = gateway.candidate_distribution(question, candidates)
    enriched = gateway.candidate_distribution(composed, candidates)
    return kl_divergence(enriched, original)


def _extension_id(ext) -> str:
    return ext if isinstance(ext, str) else ext.id


def extension_weights(
    extensions: Sequence, coverage: Mapping[str, Iterable[str]], epsilon: float = EPSILON
) -> Distribution:
    """Contribution weights from novel question coverage.

    Each extension is weighted by the number of questions it covers that no
    earlier-listed extension covered, plus ``epsilon``. Accepts extension
    objects (anything with ``.id``) or plain ids.
    """
    ids = [_extension_id(e) for e in extensions]
    if not ids:
        raise DegenerateDistribution("no extensions")
    unknown = set(coverage) - set(ids)
    if unknown:
        raise InvalidInput(f"coverage names unknown extensions: {sorted(unknown)}")
    seen: set[str] = set()
    weights = []
    for ext_id in ids:
        covered = set(coverage.get(ext_id, ()))
        weights.append(len(covered - seen) + epsilon)
        seen |= covered
    return Distribution(tuple(ids), tuple(weights))


def coverage_entropy(method) -> float:
    """Entropy of a method's applicability set under uniform p(q|m)."""
    if not method.applicability:
        raise DegenerateDistribution(f"method {method.id} has empty applicability")
    return entropy(Distribution.uniform(sorted(method.applicability)))


def _uniform_entropy(questions: set[str]) -> float:
    return entropy(Distribution.uniform(sorted(questions)))


def entropy_gain(base: Iterable[str], added: Iterable[str]) -> float:
    base_set, added_set = set(base), set(added)
    if not base_set:
        raise DegenerateDistribution("entropy gain needs a non-empty base")
    union = base_set | added_set
    if union == base_set:
        return 0.0
    return _uniform_entropy(union) - _uniform_entropy(base_set)


def network_entropy(
    sets: Sequence[Iterable[str]],
    coverage: Mapping[str, Iterable[str]],
    *,
    check_bound: bool = True,
) -> tuple[float, list[float]]:
    """Entropy of the union of per-tree extension sets, and of each set alone.

    The union is ordered tree by tree (ids sorted within a tree), which fixes
    the novel-coverage attribution. An empty per-tree set scores 0.0.
    """
    if not sets:
        raise InvalidInput("network_entropy needs at least one extension set")
    ordered = [sorted(set(s)) for s in sets]
    union: list[str] = []
    seen: set[str] = set()
    for ids in ordered:
        for ext_id in ids:
            if ext_id not in seen:
                seen.add(ext_id)
                union.append(ext_id)

    def score(ids: list[str]) -> float:
        if not ids:
            return 0.0
        local = {i: coverage[i] for i in ids if i in coverage}
        return entropy(extension_weights(ids, local))

    if not union:
        raise DegenerateDistribution("union of extension sets is empty")
    combined = score(union)
    per_tree = [score(ids) for ids in ordered]
    if check_bound and combined < max(per_tree) - IDENTITY_TOL:
        raise BoundViolation(
            f"combined entropy {combined:.9f} below best single tree {max(per_tree):.9f}"
        )
    return combined, per_tree


@dataclass
class EntropyReport:
    per_extension: dict[str, float]
    entropy_bits: float
    gains: list[tuple[str, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "probabilities": dict(self.per_extension),
            "entropy_bits": self.entropy_bits,
            "gains": [{"id": i, "delta": d} for i, d in self.gains],
        }


def entropy_report(extensions: Sequence, coverage: Mapping[str, Iterable[str]]) -> EntropyReport:
    """Weights, entropy and the running coverage gain of each extension in order.

    The first extension's gain is measured from an empty base, i.e. it is the
    uniform entropy of its own coverage.
    """
    dist = extension_weights(extensions, coverage)
    gains = []
    covered: set[str] = set()
    for ext_id in dist.outcomes:
        added = set(coverage.get(ext_id, ()))
        if covered:
            delta = entropy_gain(covered, added)
        else:
            delta = _uniform_entropy(added) if added else 0.0
        gains.append((ext_id, delta))
        covered |= added
    return EntropyReport(dist.as_dict(), entropy(dist), gains)

