"""Artifact writers: CSV metrics, run manifests, traces, and DOT frames.

All writers are deterministic (fixed key order, repr-exact floats, no
timestamps) so identical runs produce byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
from typing import Iterable, Sequence

import numpy as np

from .graphs import Graph
from .model import TraceFrame
from .training import EpochStats, ExtrapolationRow, SweepPoint


def fmt(value) -> str:
    """repr for floats (exact round trip), str for everything else."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def git_blob_sha1(path) -> str:
    """Content hash of a file, computed the way git hashes blobs."""
    with open(path, "rb") as fh:
        data = fh.read()
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_history_csv(path, history: Sequence[EpochStats]) -> None:
    _write_csv(path, ("epoch", "train_loss", "val_loss", "val_accuracy", "lr"),
               ((h.epoch, h.train_loss, h.val_loss, h.val_accuracy, h.lr)
                for h in history))


def write_extrapolation_csv(path, rows: Sequence[ExtrapolationRow]) -> None:
    _write_csv(path,
               ("task", "size", "rounds", "f1_mean", "f1_std",
                "accuracy_mean", "accuracy_std", "num_checkpoints"),
               ((r.task.value, r.size, r.rounds, r.f1_mean, r.f1_std,
                 r.accuracy_mean, r.accuracy_std, len(r.per_seed_f1))
                for r in rows))


def write_sweep_csv(path, points: Sequence[SweepPoint]) -> None:
    _write_csv(path, ("rounds", "accuracy", "f1"),
               ((p.rounds, p.accuracy, p.f1) for p in points))


def write_eval_csv(path, result, dataset_path: str) -> None:
    _write_csv(path, ("dataset", "num_graphs", "num_nodes", "rounds", "accuracy", "f1"),
               [(dataset_path, result.num_graphs, result.num_nodes,
                 result.rounds, result.accuracy, result.f1)])


def write_manifest(path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace_jsonl(path, frames: Sequence[TraceFrame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            rec = {
                "round": f.round,
                "predictions": f.predictions.tolist(),
                "state_norms": f.state_norms.tolist(),
                "logits": f.logits.tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


_FILL = {0: "#f0f0f0", 1: "#74a9cf"}


def write_dot(path, g: Graph, predictions) -> None:
    """One undirected DOT frame with node fill color by predicted class."""
    predictions = np.asarray(predictions)
    lines = ["graph G {", "  node [shape=circle style=filled fontsize=10];"]
    for v in range(g.num_nodes):
        lines.append(f'  {v} [fillcolor="{_FILL[int(predictions[v])]}"];')
    for u, v in g.edges.tolist():
        lines.append(f"  {u} -- {v};")
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
