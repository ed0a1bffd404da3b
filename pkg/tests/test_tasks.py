import numpy as np
import pytest

from helpers import enumerate_simple_paths, floyd_warshall, path_graph, prefix_sum_direct
from recgnn.graphs import Task, bfs_distances, save_dataset
from recgnn.tasks import (FEATURE_SCHEMAS, GenerationError, GeneratorConfig,
                          class_weights, gen_distance, gen_path_finding,
                          gen_prefix_sum, gen_tree, generate_dataset,
                          oracle_prefix_sum, split_dataset, validate_schema)
from recgnn.tasks import _tree_path


# ---------------------------------------------------------------------------
# prefix sum oracle


@pytest.mark.parametrize("bits,expected", [
    ([1, 0, 1, 1], [1, 1, 0, 1]),
    ([0, 0, 0], [0, 0, 0]),
    ([1, 1, 1, 1, 1, 1], [1, 0, 1, 0, 1, 0]),
])
def test_oracle_prefix_sum_examples(bits, expected):
    assert oracle_prefix_sum(bits).tolist() == expected


def test_oracle_prefix_sum_rejects_bad_input():
    with pytest.raises(ValueError):
        oracle_prefix_sum([])
    with pytest.raises(ValueError):
        oracle_prefix_sum([0, 2])


# ---------------------------------------------------------------------------
# trees


def test_gen_tree_minimal():
    g = gen_tree(2, np.random.default_rng(0))
    assert g.num_nodes == 2 and g.edges.tolist() == [[0, 1]]


def test_gen_tree_is_tree():
    rng = np.random.default_rng(1)
    for n in (3, 7, 10, 25):
        g = gen_tree(n, rng)
        assert g.num_edges == n - 1  # connected (validated) + n-1 edges = acyclic


def test_gen_tree_every_index_can_be_internal():
    rng = np.random.default_rng(2)
    seen_internal = np.zeros(10, dtype=bool)
    for _ in range(1000):
        g = gen_tree(10, rng)
        deg = np.zeros(10, dtype=int)
        for u, v in g.edges.tolist():
            deg[u] += 1
            deg[v] += 1
        seen_internal |= deg >= 2
        if seen_internal.all():
            break
    assert seen_internal.all()


# ---------------------------------------------------------------------------
# path finding


def test_tree_path_on_path_graph():
    g = path_graph(5, task=Task.PATH_FINDING, in_dim=1)
    assert sorted(_tree_path(5, g.adjacency, 1, 3)) == [1, 2, 3]


def test_tree_path_through_star_center():
    # two leaves of a star: the path is leaf-center-leaf
    edges = np.array([[0, 1], [0, 2], [0, 3]])
    from recgnn.graphs import Graph
    g = Graph(4, edges, np.zeros((4, 1)), np.zeros(4, dtype=np.int64), Task.PATH_FINDING)
    assert sorted(_tree_path(4, g.adjacency, 1, 3)) == [0, 1, 3]


def test_gen_path_finding_against_exhaustive_search():
    rng = np.random.default_rng(3)
    for _ in range(40):
        n = int(rng.integers(3, 13))
        g = gen_path_finding(n, rng)
        marks = np.flatnonzero(g.features[:, 0]).tolist()
        assert len(marks) == 2
        paths = enumerate_simple_paths(g, marks[0], marks[1])
        assert len(paths) == 1  # trees have a unique simple path
        expected = np.zeros(n, dtype=np.int64)
        expected[paths[0]] = 1
        assert g.labels.tolist() == expected.tolist()
        assert g.labels[marks].tolist() == [1, 1]


# ---------------------------------------------------------------------------
# prefix sum graphs


def _path_order(g):
    """Reconstruct node order along a path graph from its start flag."""
    start = int(np.flatnonzero(g.features[:, 1])[0])
    order = [start]
    prev = -1
    while len(order) < g.num_nodes:
        nxt = [int(u) for u in g.adjacency[order[-1]] if int(u) != prev]
        assert len(nxt) == 1
        prev = order[-1]
        order.append(nxt[0])
    return order


def test_gen_prefix_sum_structure_and_labels():
    rng = np.random.default_rng(4)
    for _ in range(30):
        n = int(rng.integers(2, 14))
        g = gen_prefix_sum(n, rng)
        degrees = sorted(len(g.adjacency[v]) for v in range(n))
        assert degrees == sorted([1, 1] + [2] * (n - 2))  # a path
        order = _path_order(g)
        bits = g.features[order, 0].astype(int).tolist()
        assert g.labels[order].tolist() == prefix_sum_direct(bits)


def test_gen_prefix_sum_bit_flip_propagates():
    rng = np.random.default_rng(5)
    g = gen_prefix_sum(10, rng)
    order = _path_order(g)
    bits = g.features[order, 0].astype(int)
    for flip in range(10):
        flipped = bits.copy()
        flipped[flip] ^= 1
        new_labels = oracle_prefix_sum(flipped)
        old_labels = oracle_prefix_sum(bits)
        changed = new_labels != old_labels
        assert changed[flip:].all() and not changed[:flip].any()


# ---------------------------------------------------------------------------
# distance graphs


def test_gen_distance_retries_exhausted(monkeypatch):
    import recgnn.tasks as tasks_mod
    monkeypatch.setattr(tasks_mod, "diameter_lower_bound", lambda g, start=0: 0)
    with pytest.raises(GenerationError):
        gen_distance(40, np.random.default_rng(0))


def test_gen_distance_small_is_path():
    g = gen_distance(3, np.random.default_rng(6))
    assert g.num_edges == 2
    start = int(np.flatnonzero(g.features[:, 0])[0])
    assert g.labels.tolist() == (bfs_distances(g, start) % 2).tolist()


def test_gen_distance_start_is_zero_and_sparse():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g = gen_distance(50, rng)
        start = int(np.flatnonzero(g.features[:, 0])[0])
        assert g.labels[start] == 0
        assert g.num_edges <= 2 * 50


def test_gen_distance_matches_floyd_warshall():
    rng = np.random.default_rng(8)
    for _ in range(5):
        g = gen_distance(50, rng)
        start = int(np.flatnonzero(g.features[:, 0])[0])
        dist = floyd_warshall(g)[start]
        assert g.labels.tolist() == (dist % 2).tolist()


# ---------------------------------------------------------------------------
# datasets, splits, weights


def test_generate_dataset_schema_and_determinism(tmp_path):
    for task in Task:
        cfg = GeneratorConfig(task, 20, 10, seed=9)
        graphs = generate_dataset(cfg)
        assert len(graphs) == 20
        schema = FEATURE_SCHEMAS[task]
        for g in graphs:
            validate_schema(g)
            assert g.in_dim == schema.in_dim
        again = generate_dataset(cfg)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(a, graphs)
        save_dataset(b, again)
        assert a.read_bytes() == b.read_bytes()


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(Task.DISTANCE, 0, 10, seed=0)
    with pytest.raises(ValueError):
        GeneratorConfig(Task.DISTANCE, 1, 2, seed=0)


def test_label_regeneration_is_idempotent():
    rng = np.random.default_rng(10)
    for g in generate_dataset(GeneratorConfig(Task.DISTANCE, 5, 20, seed=11)):
        start = int(np.flatnonzero(g.features[:, 0])[0])
        assert np.array_equal(g.labels, bfs_distances(g, start) % 2)
    for g in generate_dataset(GeneratorConfig(Task.PATH_FINDING, 5, 10, seed=12)):
        marks = np.flatnonzero(g.features[:, 0]).tolist()
        path = enumerate_simple_paths(g, marks[0], marks[1])[0]
        expected = np.zeros(g.num_nodes, dtype=np.int64)
        expected[path] = 1
        assert np.array_equal(g.labels, expected)


def test_split_dataset():
    graphs = generate_dataset(GeneratorConfig(Task.PREFIX_SUM, 200, 10, seed=13))
    train, val = split_dataset(graphs, 0.8)
    assert len(train) == 160 and len(val) == 40
    assert train + val == graphs
    t10, v10 = split_dataset(graphs[:10], 0.8)
    assert len(t10) == 8 and len(v10) == 2
    with pytest.raises(ValueError):
        split_dataset([], 0.8)
    with pytest.raises(ValueError):
        split_dataset(graphs, 1.0)


def test_class_weights_balanced():
    g = path_graph(4, labels=np.array([0, 1, 0, 1]))
    assert class_weights([g]).tolist() == [1.0, 1.0]


def test_class_weights_imbalanced_formula():
    labels = np.array([0] * 874 + [1] * 126)
    g = path_graph(1000, labels=labels)
    w = class_weights([g])
    assert w[0] == pytest.approx(1000 / (2 * 874))
    assert w[1] == pytest.approx(1000 / (2 * 126))
    assert w[0] == pytest.approx(0.572, abs=5e-4)
    assert w[1] == pytest.approx(3.968, abs=5e-4)


def test_class_weights_prefix_sum_near_balanced():
    graphs = generate_dataset(GeneratorConfig(Task.PREFIX_SUM, 50, 10, seed=14))
    w = class_weights(graphs)
    assert (0.8 <= w).all() and (w <= 1.25).all()


def test_class_weights_requires_both_classes():
    g = path_graph(4, labels=np.zeros(4, dtype=np.int64))
    with pytest.raises(ValueError):
        class_weights([g])
