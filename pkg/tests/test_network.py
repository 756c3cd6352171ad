from __future__ import annotations

import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scopex.entropy import network_entropy
from scopex.errors import CycleDetected, ExtensionEmpty, IdentityCollision, InvalidInput, NotFound
from scopex.extensions import (
    Extension,
    extend_horizontal,
    extend_spatial,
    extend_temporal,
    extend_vertical,
    generalization_extension,
)
from scopex.network import (
    CAUSES,
    GENERALIZES,
    PRECEDES,
    KnowledgeEdge,
    KnowledgeNetwork,
    KnowledgeNode,
    KnowledgeTree,
    edge_coverage,
    extension_sets,
    is_arborescence,
    merge,
    merge_all,
    node_key,
    reachable,
    tree_from_extension,
    tree_problems,
)

ROOT = "Why do ferries run late?"


def horizontal(root: str, *children: str):
    return tree_from_extension(root, extend_horizontal(root, neighbors=list(children), n=len(children)))


def closure_oracle(nodes, edges) -> dict[str, set[str]]:
    """Floyd-Warshall transitive closure over a boolean matrix."""
    idx = {k: i for i, k in enumerate(nodes)}
    n = len(nodes)
    reach = [[False] * n for _ in range(n)]
    for a, b in edges:
        reach[idx[a]][idx[b]] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    return {a: {b for b in nodes if reach[idx[a]][idx[b]] and a != b} for a in nodes}


# -- tree construction -----------------------------------------------------


def test_vertical_tree_points_causes_at_root():
    tree = tree_from_extension(ROOT, extend_vertical(ROOT, causes=["tide", "engine"]))
    assert is_arborescence(tree)
    assert {e.target for e in tree.edges} == {node_key(ROOT)}
    assert {e.kind for e in tree.edges} == {CAUSES}


def test_horizontal_tree_points_away_from_root():
    tree = horizontal(ROOT, "Why are trains late?", "Why are buses late?")
    assert is_arborescence(tree)
    assert {e.source for e in tree.edges} == {node_key(ROOT)}
    assert {e.kind for e in tree.edges} == {GENERALIZES}


def test_generalization_and_spatial_trees():
    g = tree_from_extension(ROOT, generalization_extension(ROOT, "Why do schedules slip?"))
    assert is_arborescence(g) and g.edges[0].source == node_key("Why do schedules slip?")
    s = tree_from_extension("harbour", extend_spatial("harbour", "coastline"))
    assert is_arborescence(s) and s.edges[0].kind == "contains"


def test_temporal_tree_is_a_chain():
    tree = tree_from_extension("now", extend_temporal("now", ["t-2", "t-1"], ["t+1"]))
    assert is_arborescence(tree)
    labels = {n.key: n.label for n in tree.nodes}
    chain = [(labels[e.source], labels[e.target]) for e in tree.edges]
    assert chain == [("t-2", "t-1"), ("t-1", "now"), ("now", "t+1")]
    assert {e.kind for e in tree.edges} == {PRECEDES}


def test_duplicate_fragments_collapse():
    tree = horizontal(ROOT, "a?", "A?", ROOT)
    assert len(tree.nodes) == 2
    with pytest.raises(ExtensionEmpty):
        horizontal(ROOT, ROOT)


def test_dynamic_kind_has_no_tree_shape():
    with pytest.raises(InvalidInput):
        tree_from_extension(ROOT, Extension("legal", "a", ("statute",)))


def test_tree_problems_detects_bad_shapes():
    a, b, c = (KnowledgeNode.of(x, "question") for x in "abc")
    two_parents = KnowledgeTree(a.key, "horizontal", (a, b, c), (
        KnowledgeEdge(a.key, b.key, GENERALIZES), KnowledgeEdge(c.key, b.key, GENERALIZES)))
    assert tree_problems(two_parents)
    disconnected = KnowledgeTree(a.key, "horizontal", (a, b, c), (KnowledgeEdge(a.key, b.key, GENERALIZES),))
    assert tree_problems(disconnected)
    with pytest.raises(InvalidInput):
        KnowledgeNetwork.from_tree(two_parents)
    with pytest.raises(InvalidInput):
        KnowledgeEdge(a.key, a.key, GENERALIZES)


# -- merge -----------------------------------------------------------------


def test_merge_fuses_shared_nodes():
    t1 = horizontal("A", "B")
    t2 = horizontal("B", "C")
    net = merge(t1, t2)
    assert len(net.nodes) == 3 and len(net.edges) == 2
    assert reachable(net, node_key("A")) == {node_key("B"), node_key("C")}


def test_merge_is_idempotent_and_commutative_as_sets():
    t1, t2 = horizontal("A", "B", "C"), horizontal("C", "D")
    assert merge(t1, t1).edges == KnowledgeNetwork.from_tree(t1).edges
    m12, m21 = merge(t1, t2), merge(t2, t1)
    assert m12.edges == m21.edges and m12.nodes.keys() == m21.nodes.keys()


def test_merge_first_tree_wins_provenance():
    t1, t2 = horizontal("A", "B"), horizontal("A", "B", "C")
    net = merge(t1, t2)
    edge = KnowledgeEdge(node_key("A"), node_key("B"), GENERALIZES)
    assert net.tree_provenance[edge] == t1.id
    sets = extension_sets(net)
    assert list(sets) == [t1.id, t2.id]
    assert sum(len(s) for s in sets.values()) == len(net.edges)


def test_merge_cycle_detected_with_labels():
    with pytest.raises(CycleDetected) as info:
        merge_all([horizontal("A", "B"), horizontal("B", "C"), horizontal("C", "A")])
    labels = info.value.labels
    assert labels[0] == labels[-1] and set(labels) == {"A", "B", "C"}
    # consecutive labels follow edge direction A -> B -> C -> A
    succ = {"A": "B", "B": "C", "C": "A"}
    assert all(succ[x] == y for x, y in zip(labels, labels[1:]))


def test_merge_identity_collision():
    t1 = horizontal("A", "B")
    forged = KnowledgeNode(node_key("B"), "not B", "question")
    root = KnowledgeNode.of("Z", "question")
    t2 = KnowledgeTree(root.key, "horizontal", (root, forged), (KnowledgeEdge(root.key, forged.key, GENERALIZES),))
    with pytest.raises(IdentityCollision):
        merge(t1, t2)


def test_reachable_unknown_node():
    with pytest.raises(NotFound):
        reachable(KnowledgeNetwork.from_tree(horizontal("A", "B")), "missing")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merged_reachability_matches_closure_oracle(seed):
    rnd = random.Random(seed)
    labels = [f"n{i}" for i in range(rnd.randint(2, 10))]
    pairs = {(a, b) for i, a in enumerate(labels) for b in labels[i + 1:] if rnd.random() < 0.3}
    if not pairs:
        pairs = {(labels[0], labels[1])}
    trees = [horizontal(a, b) for a, b in sorted(pairs)]
    rnd.shuffle(trees)
    net = merge_all(trees)
    keyed = [(node_key(a), node_key(b)) for a, b in pairs]
    closure = closure_oracle(list(net.nodes), keyed)
    for key in net.nodes:
        assert reachable(net, key) == closure[key]


# -- export ----------------------------------------------------------------


def test_json_export_is_deterministic():
    a = merge(horizontal("A", "B"), horizontal("B", "C"))
    b = merge(horizontal("A", "B"), horizontal("B", "C"))
    assert a.dumps() == b.dumps()
    data = json.loads(a.dumps())
    assert set(data) == {"nodes", "edges"}
    assert all(set(e) == {"from", "to", "kind", "tree"} for e in data["edges"])


def test_dot_export():
    dot = KnowledgeNetwork.from_tree(horizontal("A", "B")).to_dot()
    assert dot.startswith("digraph knowledge {") and "->" in dot


# -- network entropy over merged trees -------------------------------------


def test_edge_coverage_is_the_introduced_node():
    t = tree_from_extension("now", extend_temporal("now", ["past"], ["next"]))
    net = KnowledgeNetwork.from_tree(t)
    cov = edge_coverage(net)
    introduced = {next(iter(v)) for v in cov.values()}
    assert introduced == {node_key("past"), node_key("next")}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_network_entropy_bound_holds_on_merged_trees(seed):
    rnd = random.Random(seed)
    trees = []
    for t in range(rnd.randint(1, 4)):
        root = f"r{rnd.randint(0, 5)}"
        kids = [f"c{rnd.randint(0, 12)}" for _ in range(rnd.randint(1, 4))]
        kids = [k for k in kids if k != root] or ["solo"]
        trees.append(horizontal(root, *kids))
    try:
        net = merge_all(trees)
    except CycleDetected:
        return
    sets = [s for s in extension_sets(net).values()]
    combined, per_tree = network_entropy(sets, edge_coverage(net))
    assert combined >= max(per_tree) - 1e-9
    assert combined <= math.log2(len(net.edges)) + 1e-9
