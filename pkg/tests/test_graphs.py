import json

import numpy as np
import pytest

from helpers import complete_graph, floyd_warshall, path_graph, random_tree_graph, star_graph
from recgnn.graphs import (DisconnectedGraphError, Graph, Task, bfs_distances,
                           diameter, diameter_lower_bound, graph_from_record,
                           graph_to_record, load_dataset, neighbors, permute,
                           save_dataset)
from recgnn.tasks import GeneratorConfig, generate_dataset


def test_neighbors_path():
    g = path_graph(3)
    assert neighbors(g, 1).tolist() == [0, 2]
    assert neighbors(g, 0).tolist() == [1]


def test_neighbors_star_center():
    g = star_graph(5)
    assert neighbors(g, 0).tolist() == [1, 2, 3, 4]


def test_neighbors_out_of_range():
    g = path_graph(3)
    with pytest.raises(IndexError):
        neighbors(g, 3)
    with pytest.raises(IndexError):
        neighbors(g, -1)


def test_handshake_over_random_trees():
    rng = np.random.default_rng(7)
    for _ in range(25):
        g = random_tree_graph(10, rng)
        degree_sum = sum(len(neighbors(g, v)) for v in range(10))
        assert degree_sum == 2 * (10 - 1)


def test_neighbors_symmetry():
    rng = np.random.default_rng(11)
    g = random_tree_graph(12, rng)
    for v in range(g.num_nodes):
        for u in neighbors(g, v):
            assert v in neighbors(g, int(u)).tolist()


def test_bfs_path_and_star():
    assert bfs_distances(path_graph(3), 0).tolist() == [0, 1, 2]
    assert bfs_distances(star_graph(5), 0).tolist() == [0, 1, 1, 1, 1]


def test_bfs_matches_floyd_warshall():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_tree_graph(8, rng)
        dist = floyd_warshall(g)
        for s in range(8):
            assert bfs_distances(g, s).tolist() == dist[s].tolist()


def test_bfs_requires_connected():
    g = Graph(4, np.array([[0, 1], [2, 3]]), np.zeros((4, 1)),
              np.zeros(4, dtype=np.int64), Task.DISTANCE, validate=False)
    with pytest.raises(DisconnectedGraphError):
        bfs_distances(g, 0)


def test_bfs_edge_step_invariant():
    rng = np.random.default_rng(5)
    g = random_tree_graph(15, rng)
    dist = bfs_distances(g, 4)
    for u, v in g.edges.tolist():
        assert abs(int(dist[u]) - int(dist[v])) <= 1


def test_diameter_examples():
    assert diameter(path_graph(7)) == 6
    assert diameter(complete_graph(4)) == 1


def test_diameter_lower_bound_is_bounded_by_diameter():
    rng = np.random.default_rng(9)
    for _ in range(10):
        g = random_tree_graph(12, rng)
        assert diameter_lower_bound(g) <= diameter(g)
        # the double sweep is exact on trees
        assert diameter_lower_bound(g) == diameter(g)


def test_distance_generator_diameter_grows():
    # generated graphs keep diameter >= n/4 at n=100
    graphs = generate_dataset(GeneratorConfig(Task.DISTANCE, 100, 100, seed=13))
    for g in graphs:
        assert 4 * diameter(g) >= 100


def test_permute_identity_and_inverse():
    rng = np.random.default_rng(21)
    g = random_tree_graph(9, rng, in_dim=2)
    g.labels = rng.integers(0, 2, 9)
    ident = permute(g, np.arange(9))
    assert np.array_equal(ident.edges, g.edges)
    assert np.array_equal(ident.features, g.features)
    p = rng.permutation(9)
    inv = np.argsort(p)
    back = permute(permute(g, p), inv)
    assert np.array_equal(back.edges, g.edges)
    assert np.array_equal(back.features, g.features)
    assert np.array_equal(back.labels, g.labels)


def test_permute_reversal_preserves_path_edges():
    g = path_graph(5)
    rev = permute(g, np.arange(5)[::-1].copy())
    assert rev.edges.tolist() == g.edges.tolist()


def test_permute_rejects_non_bijection():
    g = path_graph(4)
    with pytest.raises(ValueError):
        permute(g, [0, 0, 1, 2])


@pytest.mark.parametrize("bad", [
    {"edges": [[0, 0]]},                      # self loop
    {"edges": [[0, 1], [0, 1], [1, 2]]},      # duplicate
    {"edges": [[0, 5]]},                      # endpoint out of range
    {"features": np.zeros((2, 1))},           # wrong row count
    {"labels": np.array([0, 1, 2])},          # non-binary label
])
def test_invariant_violations_raise(bad):
    n = 3
    kwargs = dict(edges=np.array([[0, 1], [1, 2]]), features=np.zeros((n, 1)),
                  labels=np.zeros(n, dtype=np.int64))
    kwargs.update({k: np.asarray(v) for k, v in bad.items()})
    with pytest.raises(ValueError):
        Graph(n, kwargs["edges"], kwargs["features"], kwargs["labels"], Task.DISTANCE)


def test_disconnected_rejected():
    with pytest.raises(DisconnectedGraphError):
        Graph(4, np.array([[0, 1], [2, 3]]), np.zeros((4, 1)),
              np.zeros(4, dtype=np.int64), Task.DISTANCE)


def test_edges_are_normalized_and_sorted():
    g = Graph(4, np.array([[3, 2], [1, 0], [2, 1]]), np.zeros((4, 1)),
              np.zeros(4, dtype=np.int64), Task.DISTANCE)
    assert g.edges.tolist() == [[0, 1], [1, 2], [2, 3]]


def test_record_round_trip():
    rng = np.random.default_rng(2)
    g = random_tree_graph(8, rng, in_dim=2, task=Task.PREFIX_SUM)
    g2 = graph_from_record(json.loads(json.dumps(graph_to_record(g))))
    assert np.array_equal(g.edges, g2.edges)
    assert np.array_equal(g.features, g2.features)
    assert np.array_equal(g.labels, g2.labels)
    assert g2.task is Task.PREFIX_SUM


def test_dataset_file_round_trip_and_determinism(tmp_path):
    graphs = generate_dataset(GeneratorConfig(Task.DISTANCE, 5, 12, seed=4))
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(p1, graphs)
    save_dataset(p2, graphs)
    assert p1.read_bytes() == p2.read_bytes()
    loaded = load_dataset(p1)
    assert len(loaded) == 5
    for g, h in zip(graphs, loaded):
        assert np.array_equal(g.edges, h.edges)
        assert np.array_equal(g.features, h.features)
        assert np.array_equal(g.labels, h.labels)


def test_load_dataset_task_check(tmp_path):
    graphs = generate_dataset(GeneratorConfig(Task.DISTANCE, 2, 6, seed=4))
    p = tmp_path / "d.jsonl"
    save_dataset(p, graphs)
    with pytest.raises(ValueError, match="task_tag"):
        load_dataset(p, expected_task=Task.PREFIX_SUM)


def test_message_layout_sorted_by_receiver_then_sender():
    g = star_graph(4)
    recv, send, seg = g.message_layout
    assert recv.tolist() == [0, 0, 0, 1, 2, 3]
    assert send.tolist() == [1, 2, 3, 0, 0, 0]
    assert seg.tolist() == [0, 3, 4, 5, 6]
