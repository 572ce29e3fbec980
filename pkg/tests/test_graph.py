import numpy as np
import pytest
from scipy.sparse.csgraph import shortest_path

from neogat.graph import build_graph, diameter, k_hop_reach


@pytest.fixture(scope="module")
def graph():
    return build_graph()


def idx(graph, name):
    return graph.nodes.index(name)


def test_shared_electrode_edges(graph):
    a = graph.adjacency
    assert a[idx(graph, "Fp1-T3"), idx(graph, "T3-O1")] == 1
    assert a[idx(graph, "Fp1-T3"), idx(graph, "CZ-C4")] == 0


def test_symmetric_self_looped_read_only(graph):
    a = graph.adjacency
    assert np.array_equal(a, a.T)
    assert np.trace(a) == 12
    with pytest.raises(ValueError):
        a[0, 5] = 1


def test_edge_rule_from_electrodes(graph):
    for i, ci in enumerate(graph.nodes):
        for j, cj in enumerate(graph.nodes):
            shared = set(graph.electrode_map[ci]) & set(graph.electrode_map[cj])
            assert graph.adjacency[i, j] == int(i == j or bool(shared))


def test_hemispheres_linked_through_central_chain(graph):
    d = shortest_path(graph.adjacency, unweighted=True)
    assert np.all(np.isfinite(d))
    chain = ["T3-C3", "C3-CZ", "CZ-C4", "C4-T4"]
    for a, b in zip(chain, chain[1:]):
        assert graph.adjacency[idx(graph, a), idx(graph, b)] == 1


def test_k_hop_reach_against_scipy_paths(graph):
    d = shortest_path(graph.adjacency - np.eye(12, dtype=np.int8), unweighted=True)
    off = ~np.eye(12, dtype=bool)
    for k in range(1, 6):
        assert k_hop_reach(graph, k) == pytest.approx(np.mean(d[off] <= k))


def test_k1_reach_is_mean_degree(graph):
    degree = graph.adjacency.sum(axis=1) - 1
    assert k_hop_reach(graph, 1) == pytest.approx(degree.mean() / 11)


def test_reach_at_diameter_is_one(graph):
    assert k_hop_reach(graph, diameter(graph)) == 1.0
    assert k_hop_reach(graph, diameter(graph) - 1) < 1.0


def test_three_hop_reach_value(graph):
    # 100 of 132 ordered pairs; recorded next to the 78% reference figure
    assert k_hop_reach(graph, 3) == pytest.approx(100 / 132)


def test_k_must_be_positive(graph):
    with pytest.raises(ValueError):
        k_hop_reach(graph, 0)


def test_edge_list_export(graph, tmp_path):
    lines = graph.write_edge_list(tmp_path / "g.txt").read_text().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) - 1 == (graph.adjacency.sum() - 12) // 2
    assert "Fp1-T3 T3-O1" in lines
