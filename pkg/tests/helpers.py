"""Shared test utilities: graph builders and independent oracles.

The oracles deliberately avoid the library's fast paths (they use plain
per-node loops and dense matrices) so they stay meaningful as checks.
"""
from __future__ import annotations

import numpy as np

from recgnn.graphs import Graph, Task
from recgnn.model import ModelConfig, model_loss
from recgnn.nn import ParameterSet


def path_graph(n, task=Task.PREFIX_SUM, in_dim=2, labels=None):
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return Graph(n, edges, np.zeros((n, in_dim)),
                 np.zeros(n, dtype=np.int64) if labels is None else labels, task)


def star_graph(n, task=Task.PATH_FINDING, in_dim=1):
    edges = np.stack([np.zeros(n - 1, dtype=np.int64), np.arange(1, n)], axis=1)
    return Graph(n, edges, np.zeros((n, in_dim)), np.zeros(n, dtype=np.int64), task)


def complete_graph(n, task=Task.DISTANCE, in_dim=1):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n)]
    return Graph(n, np.array(edges), np.zeros((n, in_dim)),
                 np.zeros(n, dtype=np.int64), task)


def random_tree_graph(n, rng, in_dim=1, task=Task.PATH_FINDING, random_labels=False):
    edges = np.array([(int(rng.integers(0, i)), i) for i in range(1, n)])
    features = rng.standard_normal((n, in_dim))
    labels = rng.integers(0, 2, n) if random_labels else np.zeros(n, dtype=np.int64)
    return Graph(n, edges, features, labels, task)


# ---------------------------------------------------------------------------
# combinatorial oracles


def floyd_warshall(g: Graph) -> np.ndarray:
    """Dense all-pairs shortest paths; the slow reference for BFS answers."""
    n = g.num_nodes
    dist = np.full((n, n), n + 10, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    for u, v in g.edges.tolist():
        dist[u, v] = dist[v, u] = 1
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist


def enumerate_simple_paths(g: Graph, a: int, b: int) -> list[list[int]]:
    """Exhaustive DFS over all simple a-to-b paths (n <= 12 or so)."""
    paths = []
    stack = [(a, [a])]
    adjacency = g.adjacency
    while stack:
        v, path = stack.pop()
        if v == b:
            paths.append(path)
            continue
        for u in adjacency[v]:
            if int(u) not in path:
                stack.append((int(u), path + [int(u)]))
    return paths


def prefix_sum_direct(bits) -> list[int]:
    total = 0
    out = []
    for b in bits:
        total += int(b)
        out.append(total % 2)
    return out


# ---------------------------------------------------------------------------
# naive model math (independent of the kernel backends)


def naive_mlp(params: ParameterSet, prefix: str, x: np.ndarray) -> np.ndarray:
    W1, b1 = params[f"{prefix}.W1"], params[f"{prefix}.b1"]
    W2, b2 = params[f"{prefix}.W2"], params[f"{prefix}.b2"]
    hidden = np.maximum(x @ W1 + b1, 0.0)
    return hidden @ W2 + b2


def naive_gru(params: ParameterSet, prefix: str, xm: np.ndarray, h: np.ndarray) -> np.ndarray:
    def p(name):
        return params[f"{prefix}.{name}"]

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    r = sigmoid(xm @ p("Wr") + h @ p("Ur") + p("br"))
    z = sigmoid(xm @ p("Wz") + h @ p("Uz") + p("bz"))
    c = np.tanh(xm @ p("Wn") + r * (h @ p("Un") + p("bnh")) + p("bni"))
    return (1.0 - z) * c + z * h


def naive_convolution(config: ModelConfig, params: ParameterSet, g: Graph,
                      z: np.ndarray, state: np.ndarray | None = None) -> np.ndarray:
    """Per-node double loop over sorted neighbors; no shared code with model."""
    n, d = z.shape
    state = z if state is None else state
    agg = np.zeros((n, d))
    for v in range(n):
        for w in sorted(int(u) for u in g.adjacency[v]):
            if config.conv_type in ("recgin_e", "recgru_e"):
                pair = np.concatenate([z[v], z[w]])[None, :]
                agg[v] += naive_mlp(params, "edge", pair)[0]
            else:
                agg[v] += z[w]
    if config.conv_type in ("recgin", "recgin_e"):
        return naive_mlp(params, "conv1", (1.0 + config.gin_epsilon) * z + agg)
    return naive_gru(params, "gru", agg, state)


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_check(config, params, g, rounds, labels, weights, l2_coeff,
                            grads, eps=1e-6, rel_bound=1e-4, indices=None):
    """Central differences of the total loss against analytic gradients.

    Returns the worst relative error over the checked parameter entries,
    where rel = |a - fd| / max(1e-4, |a|, |fd|).
    """
    flat = params.flat
    gflat = grads.flat
    worst = 0.0
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        lp = model_loss(config, params, g, rounds, labels, weights, l2_coeff)
        flat[i] = orig - eps
        lm = model_loss(config, params, g, rounds, labels, weights, l2_coeff)
        flat[i] = orig
        fd = (lp - lm) / (2.0 * eps)
        rel = abs(gflat[i] - fd) / max(1e-4, abs(gflat[i]), abs(fd))
        worst = max(worst, rel)
    assert worst < rel_bound, f"gradient mismatch: worst rel err {worst:.3e}"
    return worst
