"""Knowledge trees built from extensions, merged into acyclic knowledge networks.

Node identity is the hash of the normalized label, so trees built
independently fuse wherever they mention the same text.
"""

from __future__ import annotations

import graphlib
import json
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass

from .errors import CycleDetected, ExtensionEmpty, IdentityCollision, InvalidInput, NotFound
from .extensions import (
    GENERALIZATION,
    HORIZONTAL,
    SCATTER,
    SPATIAL,
    TEMPORAL,
    VERTICAL,
    Extension,
    parse_temporal,
)
from .text import content_key, normalize

# node roles
QUESTION = "question"
METHOD = "method"
CONTEXT = "context"
CAUSE = "cause"
STATE = "state"
REGION = "region"
ROLES = (QUESTION, METHOD, CONTEXT, CAUSE, STATE, REGION)

# edge kinds
GENERALIZES = "generalizes"
CAUSES = "causes"
PRECEDES = "precedes"
CONTAINS = "contains"
SCATTER_TRANSFER = "scatter-transfer"
EDGE_KINDS = (GENERALIZES, CAUSES, PRECEDES, CONTAINS, SCATTER_TRANSFER)

# extension kind -> (root role, child role, edge kind, child points at root)
_SHAPES = {
    VERTICAL: (QUESTION, CAUSE, CAUSES, True),
    HORIZONTAL: (QUESTION, QUESTION, GENERALIZES, False),
    GENERALIZATION: (QUESTION, QUESTION, GENERALIZES, True),
    SPATIAL: (REGION, REGION, CONTAINS, True),
    SCATTER: (CONTEXT, CONTEXT, SCATTER_TRANSFER, False),
}


def node_key(label: str) -> str:
    return content_key(label)


@dataclass(frozen=True)
class KnowledgeNode:
    key: str
    label: str
    role: str

    @classmethod
    def of(cls, label: str, role: str) -> KnowledgeNode:
        if role not in ROLES:
            raise InvalidInput(f"unknown node role {role!r}")
        if not normalize(label):
            raise InvalidInput("node label must be non-empty")
        return cls(node_key(label), label, role)


@dataclass(frozen=True, order=True)
class KnowledgeEdge:
    source: str
    target: str
    kind: str

    def __post_init__(self) -> None:
        if self.source == self.target:
            raise InvalidInput(f"self-loop on {self.source}")
        if self.kind not in EDGE_KINDS:
            raise InvalidInput(f"unknown edge kind {self.kind!r}")

    @property
    def id(self) -> str:
        return f"{self.source}>{self.target}:{self.kind}"


def _check_roles(edge: KnowledgeEdge, nodes: dict[str, KnowledgeNode]) -> None:
    src, dst = nodes[edge.source].role, nodes[edge.target].role
    if edge.kind == CAUSES and src != CAUSE:
        raise InvalidInput(f"causes edge must start at a cause node, got {src}")
    if edge.kind == CONTAINS and (src, dst) != (REGION, REGION):
        raise InvalidInput(f"contains edge must join regions, got {src}->{dst}")
    if edge.kind == PRECEDES and (src, dst) != (STATE, STATE):
        raise InvalidInput(f"precedes edge must join states, got {src}->{dst}")


@dataclass(frozen=True)
class KnowledgeTree:
    root: str
    kind: str
    nodes: tuple[KnowledgeNode, ...]
    edges: tuple[KnowledgeEdge, ...]

    @property
    def id(self) -> str:
        return content_key(self.kind, self.root, *(e.id for e in sorted(self.edges)), length=12)

    def node_map(self) -> dict[str, KnowledgeNode]:
        return {n.key: n for n in self.nodes}


def _depths(root: str, keys: Iterable[str], edges: Iterable[KnowledgeEdge]) -> dict[str, int]:
    """Undirected BFS depth of every node reachable from root."""
    adj: dict[str, list[str]] = {k: [] for k in keys}
    for e in edges:
        adj[e.source].append(e.target)
        adj[e.target].append(e.source)
    depth = {root: 0}
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        for nxt in adj[cur]:
            if nxt not in depth:
                depth[nxt] = depth[cur] + 1
                queue.append(nxt)
    return depth


def tree_problems(tree: KnowledgeTree) -> list[str]:
    """Everything that keeps ``tree`` from being a valid rooted tree; empty when valid.

    The underlying graph must be a tree spanning every node from the root.
    Direction depends on the kind: horizontal and scatter trees point away
    from the root (each non-root node has one incoming edge, the root none);
    vertical, generalization and spatial trees point at the root (cause to
    effect, general to specific, global to local); temporal trees are a
    single directed chain through the root.
    """
    problems = []
    nodes = tree.node_map()
    if len(nodes) != len(tree.nodes):
        problems.append("duplicate node keys")
    if tree.root not in nodes:
        return problems + ["root is not a node"]
    for e in tree.edges:
        if e.source not in nodes or e.target not in nodes:
            problems.append(f"edge {e.id} has an endpoint outside the tree")
            continue
        try:
            _check_roles(e, nodes)
        except InvalidInput as exc:
            problems.append(str(exc))
    if problems:
        return problems
    if len(set(tree.edges)) != len(nodes) - 1:
        problems.append(f"{len(nodes)} nodes need {len(nodes) - 1} edges, found {len(set(tree.edges))}")
    depth = _depths(tree.root, nodes, tree.edges)
    if len(depth) != len(nodes):
        problems.append("not every node is connected to the root")
    if problems:
        return problems

    indeg = {k: 0 for k in nodes}
    outdeg = {k: 0 for k in nodes}
    for e in tree.edges:
        indeg[e.target] += 1
        outdeg[e.source] += 1
    if tree.kind == TEMPORAL:
        if any(d > 1 for d in indeg.values()) or any(d > 1 for d in outdeg.values()):
            problems.append("temporal tree is not a single chain")
        return problems
    inward = _SHAPES.get(tree.kind, (None, None, None, False))[3]
    incoming, label = (outdeg, "outgoing") if inward else (indeg, "incoming")
    if incoming[tree.root] != 0:
        problems.append(f"root has {label} edges")
    for key, d in incoming.items():
        if key != tree.root and d != 1:
            problems.append(f"node {nodes[key].label!r} has {d} {label} edges")
    return problems


def is_arborescence(tree: KnowledgeTree) -> bool:
    return not tree_problems(tree)


def tree_from_extension(root_label: str, extension: Extension) -> KnowledgeTree:
    """Root node from ``root_label`` plus one node per payload fragment.

    Fragments that normalize to the root or to an earlier fragment are
    skipped, since they would collapse onto an existing node.
    """
    kind = extension.kind
    if kind == TEMPORAL:
        history, future = parse_temporal(extension.payload)
        root = KnowledgeNode.of(root_label, STATE)
        chain, seen = [], set()
        for label, is_root in [*((h, False) for h in history), (root_label, True),
                               *((f, False) for f in future)]:
            node = root if is_root else KnowledgeNode.of(label, STATE)
            if node.key in seen:
                if is_root:
                    chain = [n for n in chain if n.key != root.key]
                else:
                    continue
            seen.add(node.key)
            chain.append(node)
        if len(chain) < 2:
            raise ExtensionEmpty("temporal extension adds no new state")
        edges = tuple(KnowledgeEdge(a.key, b.key, PRECEDES) for a, b in zip(chain, chain[1:]))
        return KnowledgeTree(root.key, kind, tuple(chain), edges)

    if kind not in _SHAPES:
        raise InvalidInput(f"no tree shape for dynamic extension kind {kind!r}")
    root_role, child_role, edge_kind, inward = _SHAPES[kind]
    root = KnowledgeNode.of(root_label, root_role)
    nodes = {root.key: root}
    edges = []
    for fragment in extension.payload:
        child = KnowledgeNode.of(fragment, child_role)
        if child.key in nodes:
            continue
        nodes[child.key] = child
        edge = (child.key, root.key) if inward else (root.key, child.key)
        edges.append(KnowledgeEdge(*edge, edge_kind))
    if not edges:
        raise ExtensionEmpty(f"{kind} extension adds no node beyond the root")
    return KnowledgeTree(root.key, kind, tuple(nodes.values()), tuple(edges))


class KnowledgeNetwork:
    """Union of merged trees. Immutable; ``merge`` returns a new network."""

    def __init__(
        self,
        nodes: dict[str, KnowledgeNode],
        edges: dict[KnowledgeEdge, str],
        trees: tuple[KnowledgeTree, ...],
    ):
        self._nodes = dict(nodes)
        self._edges = dict(edges)  # edge -> originating tree id, in merge order
        self._trees = tuple(trees)

    @classmethod
    def from_tree(cls, tree: KnowledgeTree) -> KnowledgeNetwork:
        problems = tree_problems(tree)
        if problems:
            raise InvalidInput("invalid knowledge tree: " + "; ".join(problems))
        tid = tree.id
        return cls(tree.node_map(), {e: tid for e in tree.edges}, (tree,))

    @property
    def nodes(self) -> dict[str, KnowledgeNode]:
        return dict(self._nodes)

    @property
    def edges(self) -> frozenset[KnowledgeEdge]:
        return frozenset(self._edges)

    @property
    def tree_provenance(self) -> dict[KnowledgeEdge, str]:
        return dict(self._edges)

    @property
    def trees(self) -> tuple[KnowledgeTree, ...]:
        return self._trees

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeNetwork):
            return NotImplemented
        return (self._nodes == other._nodes and self._edges == other._edges
                and self._trees == other._trees)

    def __repr__(self) -> str:
        return f"KnowledgeNetwork({len(self._nodes)} nodes, {len(self._edges)} edges, {len(self._trees)} trees)"

    def successors(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {k: [] for k in self._nodes}
        for e in self._edges:
            adj[e.source].append(e.target)
        return adj

    def topological_order(self) -> list[str]:
        ts = graphlib.TopologicalSorter()
        for key in sorted(self._nodes):
            ts.add(key)
        for e in sorted(self._edges):
            ts.add(e.target, e.source)
        try:
            return list(ts.static_order())
        except graphlib.CycleError as exc:
            cycle = list(exc.args[1])
            raise CycleDetected(cycle, [self._nodes[k].label for k in cycle]) from None

    # -- export ------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"key": n.key, "label": n.label, "role": n.role}
                for n in sorted(self._nodes.values(), key=lambda n: n.key)
            ],
            "edges": [
                {"from": e.source, "to": e.target, "kind": e.kind, "tree": self._edges[e]}
                for e in sorted(self._edges)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph knowledge {", "  rankdir=LR;"]
        for n in sorted(self._nodes.values(), key=lambda n: n.key):
            lines.append(f"  \"{n.key}\" [label={json.dumps(n.label)}, role=\"{n.role}\"];")
        for e in sorted(self._edges):
            lines.append(f"  \"{e.source}\" -> \"{e.target}\" [label=\"{e.kind}\"];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _as_network(x: KnowledgeTree | KnowledgeNetwork) -> KnowledgeNetwork:
    return x if isinstance(x, KnowledgeNetwork) else KnowledgeNetwork.from_tree(x)


def merge(a: KnowledgeTree | KnowledgeNetwork, b: KnowledgeTree | KnowledgeNetwork) -> KnowledgeNetwork:
    """Exact union of nodes and edges; shared keys fuse, ``a`` wins attribution.

    Raises ``CycleDetected`` if the union is not acyclic and
    ``IdentityCollision`` if one key carries two different labels.
    """
    na, nb = _as_network(a), _as_network(b)
    nodes = na.nodes
    for key, node in nb.nodes.items():
        prior = nodes.get(key)
        if prior is None:
            nodes[key] = node
        elif normalize(prior.label) != normalize(node.label):
            raise IdentityCollision(f"key {key} names both {prior.label!r} and {node.label!r}")
    edges = na.tree_provenance
    for edge, tid in nb.tree_provenance.items():
        edges.setdefault(edge, tid)
    known = {t.id for t in na.trees}
    trees = na.trees + tuple(t for t in nb.trees if t.id not in known)
    network = KnowledgeNetwork(nodes, edges, trees)
    network.topological_order()
    return network


def merge_all(parts: Iterable[KnowledgeTree | KnowledgeNetwork]) -> KnowledgeNetwork:
    parts = list(parts)
    if not parts:
        raise InvalidInput("nothing to merge")
    network = _as_network(parts[0])
    for part in parts[1:]:
        network = merge(network, part)
    return network


def reachable(network: KnowledgeNetwork, start: str) -> set[str]:
    """Keys reachable from ``start`` along directed edges, excluding ``start``."""
    adj = network.successors()
    if start not in adj:
        raise NotFound(f"unknown node {start!r}")
    seen: set[str] = set()
    stack = list(adj[start])
    while stack:
        cur = stack.pop()
        if cur not in seen:
            seen.add(cur)
            stack.extend(adj[cur])
    seen.discard(start)
    return seen


def extension_sets(network: KnowledgeNetwork) -> dict[str, set[str]]:
    """Edge ids grouped by originating tree, in merge order.

    An edge present in several trees belongs to the first merged one, so the
    sets partition the network's edges.
    """
    sets: dict[str, set[str]] = {t.id: set() for t in network.trees}
    for edge, tid in network.tree_provenance.items():
        sets[tid].add(edge.id)
    return sets


def edge_coverage(network: KnowledgeNetwork) -> dict[str, frozenset[str]]:
    """Map each edge id to the node its extension event introduced.

    Within its originating tree, an edge introduces whichever endpoint lies
    farther from the root.
    """
    owner = {t.id: t for t in network.trees}
    depth_cache: dict[str, dict[str, int]] = {}
    coverage = {}
    for edge, tid in network.tree_provenance.items():
        tree = owner[tid]
        if tid not in depth_cache:
            depth_cache[tid] = _depths(tree.root, (n.key for n in tree.nodes), tree.edges)
        depth = depth_cache[tid]
        far = edge.source if depth[edge.source] > depth[edge.target] else edge.target
        coverage[edge.id] = frozenset({far})
    return coverage
