"""Synthetic dataset generators with exact combinatorial labels.

Three node-classification tasks, all solvable only by propagating
information across the whole graph:

* path_finding: on a random tree, two nodes are marked; label 1 for every
  node on the unique tree path between them (endpoints included).
* prefix_sum: on a path graph, each node carries a random bit and one
  endpoint is marked as the start; label = parity of the bits from the
  start up to and including the node.
* distance: on a sparse graph whose diameter grows linearly with n, one
  node is marked as the start; label = hop distance to the start mod 2.

Every generator draws from a caller-supplied numpy Generator, so a fixed
seed reproduces a dataset byte for byte.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .graphs import Graph, Task, bfs_distances, diameter_lower_bound


class GenerationError(RuntimeError):
    """A generator exhausted its retries without meeting its constraints."""


@dataclass(frozen=True)
class FeatureSchema:
    """Input-column meaning and flag-count contract for one task."""

    task: Task
    in_dim: int
    columns: tuple[str, ...]
    flag_column: int
    flags_per_graph: int


FEATURE_SCHEMAS = {
    Task.PATH_FINDING: FeatureSchema(Task.PATH_FINDING, 1, ("is_marked",), 0, 2),
    Task.PREFIX_SUM: FeatureSchema(Task.PREFIX_SUM, 2, ("bit", "is_start"), 1, 1),
    Task.DISTANCE: FeatureSchema(Task.DISTANCE, 1, ("is_start",), 0, 1),
}


@dataclass(frozen=True)
class GeneratorConfig:
    task: Task
    num_graphs: int
    graph_size: int
    seed: int

    def __post_init__(self) -> None:
        if self.num_graphs < 1:
            raise ValueError("num_graphs must be >= 1")
        if self.graph_size < 3:
            raise ValueError("graph_size must be >= 3")


def validate_schema(g: Graph) -> None:
    schema = FEATURE_SCHEMAS[g.task]
    if g.in_dim != schema.in_dim:
        raise ValueError(f"{g.task.value}: expected in_dim {schema.in_dim}, got {g.in_dim}")
    flags = int(np.count_nonzero(g.features[:, schema.flag_column]))
    if flags != schema.flags_per_graph:
        raise ValueError(
            f"{g.task.value}: expected {schema.flags_per_graph} flag bits, got {flags}"
        )


def _tree_edges(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random-attachment tree followed by a uniform relabeling.

    Attachment alone keeps the last-added node a leaf forever; relabeling
    makes every index equally likely to land on any structural position.
    """
    parents = np.array([int(rng.integers(0, i)) for i in range(1, n)], dtype=np.int64)
    relabel = rng.permutation(n).astype(np.int64)
    edges = np.stack([relabel[parents], relabel[np.arange(1, n)]], axis=1)
    return edges


def gen_tree(n: int, rng: np.random.Generator) -> Graph:
    """Connected acyclic graph on n nodes; features and labels zeroed.

    The returned graph is a structural skeleton (tagged path_finding);
    gen_path_finding adds marks and labels on top of the same construction.
    """
    if n < 2:
        raise ValueError("a tree needs at least 2 nodes")
    edges = _tree_edges(n, rng)
    return Graph(n, edges, np.zeros((n, 1)), np.zeros(n, dtype=np.int64), Task.PATH_FINDING)


def _tree_path(n: int, adjacency, a: int, b: int) -> list[int]:
    """Nodes on the unique tree path from a to b, endpoints included."""
    parent = np.full(n, -1, dtype=np.int64)
    parent[a] = a
    queue = deque([a])
    while queue:
        v = queue.popleft()
        if v == b:
            break
        for u in adjacency[v]:
            if parent[u] < 0:
                parent[u] = v
                queue.append(int(u))
    path = [b]
    while path[-1] != a:
        path.append(int(parent[path[-1]]))
    return path


def gen_path_finding(n: int, rng: np.random.Generator) -> Graph:
    """Random tree with two marked nodes; label 1 on the path between them."""
    if n < 3:
        raise ValueError("path_finding needs n >= 3")
    edges = _tree_edges(n, rng)
    marks = rng.choice(n, size=2, replace=False)
    features = np.zeros((n, 1))
    features[marks, 0] = 1.0
    g = Graph(n, edges, features, np.zeros(n, dtype=np.int64), Task.PATH_FINDING)
    labels = np.zeros(n, dtype=np.int64)
    labels[_tree_path(n, g.adjacency, int(marks[0]), int(marks[1]))] = 1
    g.labels = labels
    return g


def oracle_prefix_sum(bits) -> np.ndarray:
    """Running parity of a bit vector, inclusive of each position's own bit."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size == 0:
        raise ValueError("bit vector must be non-empty")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("bits must be 0/1")
    return np.cumsum(bits) % 2


def gen_prefix_sum(n: int, rng: np.random.Generator) -> Graph:
    """Path graph in shuffled node order with random bits and one start flag."""
    if n < 2:
        raise ValueError("prefix_sum needs n >= 2")
    order = rng.permutation(n).astype(np.int64)
    bits = rng.integers(0, 2, size=n).astype(np.int64)
    edges = np.stack([order[:-1], order[1:]], axis=1)
    features = np.zeros((n, 2))
    features[order, 0] = bits.astype(np.float64)
    features[order[0], 1] = 1.0
    labels = np.zeros(n, dtype=np.int64)
    labels[order] = oracle_prefix_sum(bits)
    return Graph(n, edges, features, labels, Task.PREFIX_SUM)


_DISTANCE_RETRIES = 20


def gen_distance(n: int, rng: np.random.Generator) -> Graph:
    """Sparse graph with linearly growing diameter and one marked start node.

    Construction: a random path over a shuffled node order plus about n/5
    shortcut edges between positions at most 5 apart, which keeps the edge
    count below 2n and the diameter at Theta(n). Regenerates (up to 20
    times) whenever the certified diameter bound falls under n/4.
    """
    if n < 3:
        raise ValueError("distance needs n >= 3")
    for _ in range(_DISTANCE_RETRIES):
        order = rng.permutation(n).astype(np.int64)
        edge_set = {(min(a, b), max(a, b)) for a, b in zip(order[:-1].tolist(), order[1:].tolist())}
        target = len(edge_set) + n // 5
        attempts = 0
        while len(edge_set) < target and attempts < 40 * (n // 5 + 1):
            attempts += 1
            i = int(rng.integers(0, n - 2))
            j = min(i + int(rng.integers(2, 6)), n - 1)
            a, b = int(order[i]), int(order[j])
            edge_set.add((min(a, b), max(a, b)))
        edges = np.array(sorted(edge_set), dtype=np.int64)
        g = Graph(n, edges, np.zeros((n, 1)), np.zeros(n, dtype=np.int64), Task.DISTANCE)
        if 4 * diameter_lower_bound(g, start=int(order[0])) >= n:
            start = int(rng.integers(0, n))
            features = np.zeros((n, 1))
            features[start, 0] = 1.0
            g.features = features
            g.labels = bfs_distances(g, start) % 2
            return g
    raise GenerationError(f"could not reach diameter >= n/4 for n={n} "
                          f"after {_DISTANCE_RETRIES} attempts")


_GENERATORS = {
    Task.PATH_FINDING: gen_path_finding,
    Task.PREFIX_SUM: gen_prefix_sum,
    Task.DISTANCE: gen_distance,
}


def generate_graph(task: Task, n: int, rng: np.random.Generator) -> Graph:
    g = _GENERATORS[task](n, rng)
    validate_schema(g)
    return g


def generate_dataset(cfg: GeneratorConfig) -> list[Graph]:
    """All graphs for one config, drawn from a single seeded stream."""
    rng = np.random.default_rng(cfg.seed)
    return [generate_graph(cfg.task, cfg.graph_size, rng) for _ in range(cfg.num_graphs)]


def split_dataset(graphs: list[Graph], train_fraction: float) -> tuple[list[Graph], list[Graph]]:
    """Deterministic train/validation split of an already shuffled dataset."""
    if not graphs:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    k = int(round(train_fraction * len(graphs)))
    return graphs[:k], graphs[k:]


def class_weights(graphs: list[Graph]) -> np.ndarray:
    """Inverse-frequency class weights, 1.0 each on a balanced set."""
    counts = np.zeros(2, dtype=np.int64)
    for g in graphs:
        counts += np.bincount(g.labels, minlength=2)[:2]
    if (counts == 0).any():
        raise ValueError("both classes must be present to compute weights")
    total = counts.sum()
    return total / (2.0 * counts)
