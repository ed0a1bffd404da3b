"""Undirected graph container, traversal primitives, and dataset files.

Graphs are simple (no self loops, no duplicate edges), connected, and use
dense 0-based node indices. Adjacency is materialized once as sorted
per-node neighbor arrays so that every aggregation over a neighborhood
visits neighbors in the same deterministic order. Instances are treated as
read-only after construction and can be shared freely between workers.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import InitVar, dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class Task(Enum):
    """The three node-classification tasks a dataset can carry."""

    PATH_FINDING = "path_finding"
    PREFIX_SUM = "prefix_sum"
    DISTANCE = "distance"


class DisconnectedGraphError(ValueError):
    """A graph violated the connectivity contract."""


@dataclass(eq=False)
class Graph:
    """A connected undirected graph with node features and binary labels.

    edges holds one row per undirected edge as (u, v) with u < v, sorted
    lexicographically. features is (num_nodes, in_dim) float64 and labels
    is (num_nodes,) int64 with values in {0, 1}.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    task: Task
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a (num_nodes, in_dim) matrix")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.edges.shape[0]:
            lo = np.minimum(self.edges[:, 0], self.edges[:, 1])
            hi = np.maximum(self.edges[:, 0], self.edges[:, 1])
            self.edges = np.stack([lo, hi], axis=1)
            order = np.lexsort((self.edges[:, 1], self.edges[:, 0]))
            self.edges = np.ascontiguousarray(self.edges[order])
        if validate:
            self.check()

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def in_dim(self) -> int:
        return int(self.features.shape[1])

    def check(self) -> None:
        """Assert the structural invariants, raising on the first violation."""
        n = self.num_nodes
        if n < 1:
            raise ValueError("graph needs at least one node")
        if self.features.shape[0] != n:
            raise ValueError("features row count must equal num_nodes")
        if self.labels.shape[0] != n:
            raise ValueError("labels length must equal num_nodes")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1 class indices")
        e = self.edges
        if e.shape[0]:
            if e.min() < 0 or e.max() >= n:
                raise ValueError("edge endpoint out of range")
            if (e[:, 0] == e[:, 1]).any():
                raise ValueError("self loops are not allowed")
            if (np.diff(e, axis=0) == 0).all(axis=1).any():
                raise ValueError("duplicate edges are not allowed")
        if not _is_connected(n, self.adjacency):
            raise DisconnectedGraphError("graph is not connected")

    @cached_property
    def adjacency(self) -> list[np.ndarray]:
        """Sorted neighbor array per node, built once."""
        neigh: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges.tolist():
            neigh[u].append(v)
            neigh[v].append(u)
        return [np.array(sorted(a), dtype=np.int64) for a in neigh]

    @cached_property
    def message_layout(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed-edge arrays (recv, send, seg_starts) for aggregation.

        Both directions of every edge appear once, sorted by receiver then
        sender; seg_starts[v]:seg_starts[v+1] slices receiver v's messages.
        Arrays use the platform index dtype expected by the kernel backends.
        """
        n = self.num_nodes
        if self.num_edges == 0:
            empty = np.zeros(0, dtype=np.intp)
            return empty, empty, np.zeros(n + 1, dtype=np.intp)
        recv = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        send = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((send, recv))
        recv = np.ascontiguousarray(recv[order], dtype=np.intp)
        send = np.ascontiguousarray(send[order], dtype=np.intp)
        seg = np.searchsorted(recv, np.arange(n + 1)).astype(np.intp)
        return recv, send, seg

    def copy_with(self, *, features=None, labels=None) -> "Graph":
        return Graph(
            self.num_nodes,
            self.edges.copy(),
            self.features.copy() if features is None else features,
            self.labels.copy() if labels is None else labels,
            self.task,
        )


def _is_connected(n: int, adjacency: Sequence[np.ndarray]) -> bool:
    if n <= 1:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    reached = 1
    while queue:
        v = queue.popleft()
        for u in adjacency[v]:
            if not seen[u]:
                seen[u] = True
                reached += 1
                queue.append(int(u))
    return reached == n


def neighbors(g: Graph, v: int) -> np.ndarray:
    """All nodes adjacent to v, in ascending index order."""
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node index {v} out of range for n={g.num_nodes}")
    return g.adjacency[v]


def bfs_distances(g: Graph, s: int) -> np.ndarray:
    """Unweighted shortest-path hop counts from s to every node."""
    if not 0 <= s < g.num_nodes:
        raise IndexError(f"node index {s} out of range for n={g.num_nodes}")
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[s] = 0
    queue = deque([s])
    adjacency = g.adjacency
    while queue:
        v = queue.popleft()
        dv = dist[v]
        for u in adjacency[v]:
            if dist[u] < 0:
                dist[u] = dv + 1
                queue.append(int(u))
    if (dist < 0).any():
        raise DisconnectedGraphError("bfs_distances requires a connected graph")
    return dist


def eccentricity(g: Graph, s: int) -> int:
    return int(bfs_distances(g, s).max())


def diameter(g: Graph) -> int:
    """Exact diameter via one BFS per source node."""
    return max(eccentricity(g, s) for s in range(g.num_nodes))


def diameter_lower_bound(g: Graph, start: int = 0) -> int:
    """Cheap certified lower bound on the diameter (double BFS sweep)."""
    d0 = bfs_distances(g, start)
    far = int(d0.argmax())
    return eccentricity(g, far)


def permute(g: Graph, p: Sequence[int]) -> Graph:
    """Relabel nodes so that old node v becomes new node p[v]."""
    p = np.asarray(p, dtype=np.int64)
    if p.shape != (g.num_nodes,) or not np.array_equal(np.sort(p), np.arange(g.num_nodes)):
        raise ValueError("p must be a permutation of 0..num_nodes-1")
    features = np.empty_like(g.features)
    features[p] = g.features
    labels = np.empty_like(g.labels)
    labels[p] = g.labels
    edges = p[g.edges] if g.num_edges else g.edges.copy()
    return Graph(g.num_nodes, edges, features, labels, g.task)


def graph_to_record(g: Graph) -> dict:
    return {
        "num_nodes": g.num_nodes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "labels": g.labels.tolist(),
        "task_tag": g.task.value,
    }


def graph_from_record(rec: dict) -> Graph:
    n = int(rec["num_nodes"])
    edges = np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 2)
    features = np.asarray(rec["features"], dtype=np.float64).reshape(n, -1)
    labels = np.asarray(rec["labels"], dtype=np.int64)
    return Graph(n, edges, features, labels, Task(rec["task_tag"]))


def save_dataset(path, graphs: Iterable[Graph]) -> None:
    """Write graphs to a JSON-lines file, one self-contained record per line.

    Serialization is deterministic: fixed key order, compact separators, and
    repr-exact floats, so identical inputs produce byte-identical files.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path, expected_task: Task | None = None) -> list[Graph]:
    graphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                g = graph_from_record(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad graph record: {exc}") from exc
            if expected_task is not None and g.task is not expected_task:
                raise ValueError(
                    f"{path}:{lineno}: task_tag {g.task.value!r} does not match "
                    f"expected {expected_task.value!r}"
                )
            graphs.append(g)
    return graphs
