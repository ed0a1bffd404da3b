"""Training loop, metrics, and the three experiment protocols.

train() follows the fixed recipe: one graph per Adam step, per-epoch
validation in inference mode, reduce-on-plateau learning-rate decay, and
selection of the parameters with the best validation loss seen anywhere in
the run. The experiment drivers reuse trained checkpoints: an
extrapolation table over generated evaluation sets of growing size, an
accuracy-versus-rounds stabilization sweep, and a multi-seed aggregator.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .graphs import Graph, Task
from .model import (RECURRENT_CONVS, Checkpoint, ModelConfig, backward,
                    forward, init_parameters)
from .tasks import GeneratorConfig, class_weights, generate_dataset


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; records where it happened."""

    def __init__(self, epoch: int, graph_index: int, loss: float):
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, graph index {graph_index}"
        )
        self.epoch = epoch
        self.graph_index = graph_index
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    initial_lr: float = 4e-4
    l2_coeff: float = 1e-4
    clip_norm: float = 5.0
    clip_value: float = 1.0
    train_rounds: int = 12
    scheduler_factor: float = 0.7
    scheduler_patience: int = 20
    min_lr: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 1
    train_fraction: float = 0.8
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        for name in ("initial_lr", "l2_coeff", "clip_norm", "clip_value", "min_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    best_epoch: int
    best_val_loss: float
    history: list[EpochStats]
    class_weights: np.ndarray


@dataclass
class EvalResult:
    accuracy: float
    f1: float
    num_nodes: int
    num_graphs: int
    rounds: int


def accuracy_score(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    return float(np.mean(preds == labels))


def f1_score(preds, labels) -> float:
    """Binary F1 with class 1 as the positive class; 0 when undefined."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def rounds_for_size(n: int) -> int:
    """Evaluation round count for graphs of size n: ceil(1.2 * n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (6 * n + 4) // 5


def _validation_pass(config: ModelConfig, params, graphs: Sequence[Graph],
                     rounds: int, weights, l2_coeff: float) -> tuple[float, float]:
    losses = []
    correct = 0
    total = 0
    for g in graphs:
        result = forward(config, params, g, rounds)
        ce, _ = nn.weighted_cross_entropy(result.logits, g.labels, weights)
        reg, _ = nn.l2_state_loss(result.final_state, l2_coeff)
        losses.append(ce + reg)
        preds = np.argmax(result.logits, axis=1)
        correct += int(np.sum(preds == g.labels))
        total += g.num_nodes
    return float(np.mean(losses)), correct / total


def train(model_cfg: ModelConfig, train_cfg: TrainConfig,
          train_set: Sequence[Graph], val_set: Sequence[Graph],
          seed: int) -> TrainResult:
    """Train one model; deterministic given (configs, data, seed)."""
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    if train_set[0].in_dim != model_cfg.in_dim:
        raise ValueError(
            f"dataset in_dim {train_set[0].in_dim} != model in_dim {model_cfg.in_dim}"
        )
    rng = np.random.default_rng(seed)
    params = init_parameters(model_cfg, rng)
    weights = class_weights(list(train_set))
    opt = nn.OptimizerState.init(params, train_cfg.initial_lr)

    val_loss, val_acc = _validation_pass(
        model_cfg, params, val_set, train_cfg.train_rounds, weights, train_cfg.l2_coeff)
    best_loss, best_params, best_epoch = val_loss, params.copy(), 0

    history: list[EpochStats] = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_losses = np.empty(len(order))
        for pos, gi in enumerate(order):
            g = train_set[int(gi)]
            loss, grads = backward(
                model_cfg, params, g, train_cfg.train_rounds,
                g.labels, weights, train_cfg.l2_coeff, rng=rng, training=True)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, int(gi), loss)
            nn.clip_gradients(grads, train_cfg.clip_norm, train_cfg.clip_value)
            nn.adam_step(params, grads, opt,
                         train_cfg.adam_beta1, train_cfg.adam_beta2,
                         train_cfg.adam_eps, train_cfg.weight_decay)
            epoch_losses[pos] = loss
        val_loss, val_acc = _validation_pass(
            model_cfg, params, val_set, train_cfg.train_rounds, weights, train_cfg.l2_coeff)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, -1, val_loss)
        nn.plateau_scheduler_step(opt, val_loss, train_cfg.scheduler_factor,
                                  train_cfg.scheduler_patience, train_cfg.min_lr)
        if val_loss < best_loss:
            best_loss, best_params, best_epoch = val_loss, params.copy(), epoch
        history.append(EpochStats(epoch, float(epoch_losses.mean()),
                                  val_loss, val_acc, opt.lr))

    ckpt = Checkpoint(config=model_cfg, task=train_set[0].task,
                      params=best_params, train_seed=seed)
    return TrainResult(checkpoint=ckpt, best_epoch=best_epoch,
                       best_val_loss=best_loss, history=history,
                       class_weights=weights)


def evaluate(checkpoint: Checkpoint, dataset: Sequence[Graph], rounds: int) -> EvalResult:
    """Node-level accuracy and F1 pooled over all nodes of all graphs."""
    correct = 0
    total = 0
    tp = fp = fn = 0
    for g in dataset:
        result = forward(checkpoint.config, checkpoint.params, g, rounds)
        preds = np.argmax(result.logits, axis=1)
        correct += int(np.sum(preds == g.labels))
        total += g.num_nodes
        tp += int(np.sum((preds == 1) & (g.labels == 1)))
        fp += int(np.sum((preds == 1) & (g.labels == 0)))
        fn += int(np.sum((preds == 0) & (g.labels == 1)))
    denom = 2 * tp + fp + fn
    f1 = 2.0 * tp / denom if denom else 0.0
    return EvalResult(accuracy=correct / total, f1=f1, num_nodes=total,
                      num_graphs=len(dataset), rounds=rounds)


EVAL_SEED_BASE = 77_000_000


def evaluation_seed(task: Task, size: int, base: int = EVAL_SEED_BASE) -> int:
    """Held-out generation seed, disjoint from the small training seeds."""
    return base + 1_000_003 * list(Task).index(task) + size


@dataclass
class ExtrapolationRow:
    task: Task
    size: int
    rounds: int
    f1_mean: float
    f1_std: float
    accuracy_mean: float
    accuracy_std: float
    per_seed_f1: tuple[float, ...]


def _sample_std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def extrapolation_suite(checkpoints: Sequence[Checkpoint],
                        sizes: Sequence[int] = (10, 50, 100, 1000, 10000),
                        graphs_per_size: int = 10,
                        seed_base: int = EVAL_SEED_BASE,
                        rounds_override: dict[int, int] | None = None) -> list[ExtrapolationRow]:
    """F1 mean and std across checkpoints on fresh graphs of each size."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    task = checkpoints[0].task
    if any(c.task is not task for c in checkpoints):
        raise ValueError("all checkpoints must share one task")
    rows = []
    for size in sizes:
        graphs = generate_dataset(GeneratorConfig(
            task, graphs_per_size, size, evaluation_seed(task, size, seed_base)))
        rounds = (rounds_override or {}).get(size, rounds_for_size(size))
        evals = [evaluate(c, graphs, rounds) for c in checkpoints]
        f1s = [e.f1 for e in evals]
        accs = [e.accuracy for e in evals]
        rows.append(ExtrapolationRow(
            task=task, size=size, rounds=rounds,
            f1_mean=float(np.mean(f1s)), f1_std=_sample_std(f1s),
            accuracy_mean=float(np.mean(accs)), accuracy_std=_sample_std(accs),
            per_seed_f1=tuple(f1s)))
    return rows


@dataclass
class SweepPoint:
    rounds: int
    accuracy: float
    f1: float


def stabilization_sweep(checkpoint: Checkpoint, graphs: Sequence[Graph],
                        round_counts: Sequence[int]) -> list[SweepPoint]:
    """Accuracy as a function of executed rounds on a fixed evaluation set."""
    if checkpoint.config.conv_type not in RECURRENT_CONVS:
        raise ValueError("stabilization sweeps need a recurrent convolution")
    points = []
    for rounds in round_counts:
        res = evaluate(checkpoint, graphs, rounds)
        points.append(SweepPoint(rounds=rounds, accuracy=res.accuracy, f1=res.f1))
    return points


@dataclass
class SeedAggregate:
    per_seed: dict[int, dict]
    failures: dict[int, str]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)


def run_seeds(protocol: Callable[[int], dict], seeds: Sequence[int],
              max_workers: int = 1) -> SeedAggregate:
    """Run a per-seed protocol and aggregate its numeric outputs.

    protocol(seed) returns a flat dict of metric values. Seeds that raise
    are reported in `failures` and excluded from the aggregate. With
    max_workers > 1 the seeds run in separate processes, so the protocol
    must be a picklable module-level callable.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    per_seed: dict[int, dict] = {}
    failures: dict[int, str] = {}
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = {seed: pool.submit(protocol, seed) for seed in seeds}
            for seed, fut in futures.items():
                try:
                    per_seed[seed] = fut.result()
                except Exception as exc:  # noqa: BLE001 - failure flags by contract
                    failures[seed] = f"{type(exc).__name__}: {exc}"
    else:
        for seed in seeds:
            try:
                per_seed[seed] = protocol(seed)
            except Exception as exc:  # noqa: BLE001
                failures[seed] = f"{type(exc).__name__}: {exc}"
    agg = SeedAggregate(per_seed=per_seed, failures=failures)
    if per_seed:
        keys = set.intersection(*(set(r) for r in per_seed.values()))
        for key in sorted(keys):
            values = [r[key] for r in per_seed.values()]
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
                agg.mean[key] = float(np.mean(values))
                agg.std[key] = _sample_std(values)
    return agg
