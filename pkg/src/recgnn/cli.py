"""Command-line entry points.

Subcommands: generate, train, eval, extrapolate, sweep-rounds, trace.
Configuration precedence for train is flags > config file > defaults; the
fully resolved configuration lands in the run manifest next to the
checkpoint. Every command takes a seed where randomness is involved and
identical invocations produce byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

from . import backend, export
from .graphs import Task, load_dataset, save_dataset
from .model import (CONV_TYPES, Checkpoint, ModelConfig, forward,
                    load_checkpoint, save_checkpoint)
from .tasks import FEATURE_SCHEMAS, GeneratorConfig, generate_dataset, split_dataset
from .training import (TrainConfig, evaluate, extrapolation_suite,
                       rounds_for_size, stabilization_sweep, train)

__version__ = "0.1.0"


class CliError(Exception):
    """Command-level failure with a user-facing message."""


@dataclass
class RunConfig:
    """Flat union of generator, model, and training settings.

    Defaults follow the selected hyperparameters: embedding size 6, hidden
    state factor 4, dropout 0.2, batch size 1, L2 state penalty on, weight
    decay off.
    """

    # generation
    task: str = "prefix_sum"
    n: int = 10
    count: int = 200
    seed: int = 0
    # model
    conv: str = "recgru_e"
    embed_dim: int = 6
    hidden_factor: int = 4
    dropout: float = 0.2
    gin_epsilon: float = 0.0
    baseline_layers: int = 10
    input_skip: bool = True
    gru_state_raw: bool = False
    decoder_input_skip: bool = False
    # training
    epochs: int = 1000
    lr: float = 0.0004
    l2_coeff: float = 0.0001
    clip_norm: float = 5.0
    clip_value: float = 1.0
    train_rounds: int = 12
    scheduler_factor: float = 0.7
    scheduler_patience: int = 20
    min_lr: float = 1e-05
    weight_decay: float = 0.0
    train_fraction: float = 0.8
    out_dir: str = "runs"

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in dataclasses.fields(self):
                fh.write(f"{f.name}={export.fmt(getattr(self, f.name))}\n")

    @staticmethod
    def parse_value(name: str, raw: str):
        ftypes = {f.name: f.type for f in dataclasses.fields(RunConfig)}
        if name not in ftypes:
            raise CliError(f"unknown config key {name!r}")
        ftype = ftypes[name]
        if ftype == "bool":
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise CliError(f"bad boolean for {name!r}: {raw!r}")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw

    @classmethod
    def from_file(cls, path) -> dict:
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected key=value")
                name, raw = line.split("=", 1)
                values[name.strip()] = cls.parse_value(name.strip(), raw.strip())
        return values

    def model_config(self, in_dim: int) -> ModelConfig:
        return ModelConfig(
            conv_type=self.conv, in_dim=in_dim, embed_dim=self.embed_dim,
            hidden_factor=self.hidden_factor, dropout=self.dropout,
            gin_epsilon=self.gin_epsilon, baseline_layers=self.baseline_layers,
            input_skip=self.input_skip, gru_state_raw=self.gru_state_raw,
            decoder_input_skip=self.decoder_input_skip)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, initial_lr=self.lr, l2_coeff=self.l2_coeff,
            clip_norm=self.clip_norm, clip_value=self.clip_value,
            train_rounds=self.train_rounds, scheduler_factor=self.scheduler_factor,
            scheduler_patience=self.scheduler_patience, min_lr=self.min_lr,
            weight_decay=self.weight_decay, train_fraction=self.train_fraction)


def _task_from_name(name: str) -> Task:
    try:
        return Task(name)
    except ValueError:
        raise CliError(f"unknown task {name!r}; choose from "
                       f"{', '.join(t.value for t in Task)}") from None


def _int_list(raw: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _load_dataset_checked(path, expected_task: Task | None = None):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"dataset file not found: {path}")
    try:
        graphs = load_dataset(p, expected_task)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if not graphs:
        raise CliError(f"dataset {path} is empty")
    tasks = {g.task for g in graphs}
    if len(tasks) != 1:
        raise CliError(f"dataset {path} mixes tasks: {sorted(t.value for t in tasks)}")
    return graphs


def _load_checkpoint_checked(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"checkpoint file not found: {path}")
    try:
        return load_checkpoint(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"bad checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    task = _task_from_name(args.task)
    cfg = GeneratorConfig(task=task, num_graphs=args.count, graph_size=args.n,
                          seed=args.seed)
    graphs = generate_dataset(cfg)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        raise CliError(f"output directory does not exist: {out.parent}")
    save_dataset(out, graphs)
    ones = sum(int(g.labels.sum()) for g in graphs)
    total = sum(g.num_nodes for g in graphs)
    print(f"wrote {len(graphs)} {task.value} graphs of size {args.n} to {out}")
    print(f"class balance: {total - ones}/{ones} (zeros/ones), "
          f"positive rate {ones / total:.3f}")
    return 0


def _resolve_run_config(args) -> RunConfig:
    values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise CliError(f"config file not found: {args.config}")
        values.update(RunConfig.from_file(args.config))
    for f in dataclasses.fields(RunConfig):
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            values[f.name] = cli_value
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}") from exc


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    graphs = _load_dataset_checked(args.dataset)
    task = graphs[0].task
    schema = FEATURE_SCHEMAS[task]
    model_cfg = cfg.model_config(schema.in_dim)
    train_cfg = cfg.train_config()
    train_set, val_set = split_dataset(graphs, cfg.train_fraction)
    if not val_set:
        raise CliError("validation split is empty; lower train_fraction or add graphs")

    result = train(model_cfg, train_cfg, train_set, val_set, cfg.seed)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.json"
    save_checkpoint(ckpt_path, result.checkpoint)
    export.write_history_csv(out_dir / "history.csv", result.history)
    resolved = dataclasses.asdict(cfg)
    export.write_manifest(out_dir / "manifest.json", {
        "command": "train",
        "version": __version__,
        "backend": backend.name(),
        "config": resolved,
        "task": task.value,
        "dataset": str(args.dataset),
        "dataset_sha1": export.git_blob_sha1(args.dataset),
        "seeds": [cfg.seed],
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    })

    final_acc = result.history[-1].val_accuracy if result.history else float("nan")
    best_acc = max((h.val_accuracy for h in result.history), default=float("nan"))
    print(f"trained {model_cfg.conv_type} on {len(train_set)}/{len(val_set)} "
          f"{task.value} graphs, seed {cfg.seed}")
    print(f"best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; "
          f"final val acc {final_acc:.4f}; best val acc {best_acc:.4f}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint_checked(args.checkpoint)
    graphs = _load_dataset_checked(args.dataset, expected_task=ckpt.task)
    rounds = args.rounds if args.rounds is not None else rounds_for_size(
        max(g.num_nodes for g in graphs))
    result = evaluate(ckpt, graphs, rounds)
    print(f"{len(graphs)} graphs, {result.num_nodes} nodes, {rounds} rounds: "
          f"accuracy {result.accuracy:.4f}, f1 {result.f1:.4f}")
    if args.out:
        export.write_eval_csv(args.out, result, str(args.dataset))
        print(f"wrote {args.out}")
    return 0


def cmd_extrapolate(args) -> int:
    checkpoints = [_load_checkpoint_checked(p) for p in args.checkpoints]
    tasks = {c.task for c in checkpoints}
    if len(tasks) != 1:
        raise CliError(f"checkpoints mix tasks: {sorted(t.value for t in tasks)}")
    rows = extrapolation_suite(checkpoints, sizes=args.sizes,
                               graphs_per_size=args.graphs_per_size,
                               seed_base=args.eval_seed_base)
    for r in rows:
        print(f"n={r.size:>6d} rounds={r.rounds:>6d} "
              f"f1={r.f1_mean:.3f}+-{r.f1_std:.3f} acc={r.accuracy_mean:.3f}")
    if args.out:
        export.write_extrapolation_csv(args.out, rows)
        print(f"wrote {args.out}")
    return 0


def cmd_sweep_rounds(args) -> int:
    ckpt = _load_checkpoint_checked(args.checkpoint)
    graphs = _load_dataset_checked(args.dataset, expected_task=ckpt.task)
    try:
        points = stabilization_sweep(ckpt, graphs, args.rounds_list)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    for p in points:
        print(f"rounds={p.rounds:>6d} accuracy={p.accuracy:.4f} f1={p.f1:.4f}")
    if args.out:
        export.write_sweep_csv(args.out, points)
        print(f"wrote {args.out}")
    return 0


def cmd_trace(args) -> int:
    ckpt = _load_checkpoint_checked(args.checkpoint)
    graphs = _load_dataset_checked(args.dataset, expected_task=ckpt.task)
    if not 0 <= args.index < len(graphs):
        raise CliError(f"graph index {args.index} out of range (dataset has {len(graphs)})")
    g = graphs[args.index]
    rounds = args.rounds if args.rounds is not None else rounds_for_size(g.num_nodes)
    result = forward(ckpt.config, ckpt.params, g, rounds, trace=True)
    frames = result.trace
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export.write_trace_jsonl(out_dir / "trace.jsonl", frames)
    dot_rounds = args.dot_rounds if args.dot_rounds is not None else list(range(len(frames)))
    width = len(str(len(frames) - 1))
    written = 0
    for t in dot_rounds:
        if not 0 <= t < len(frames):
            raise CliError(f"dot round {t} out of range 0..{len(frames) - 1}")
        export.write_dot(out_dir / f"frame_{t:0{width}d}.dot", g, frames[t].predictions)
        written += 1
    print(f"traced graph {args.index} for {rounds} rounds "
          f"({len(frames)} frames, {written} dot files) into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--conv", choices=sorted(CONV_TYPES), default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--hidden-factor", dest="hidden_factor", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--gin-epsilon", dest="gin_epsilon", type=float, default=None)
    p.add_argument("--baseline-layers", dest="baseline_layers", type=int, default=None)
    p.add_argument("--no-input-skip", dest="input_skip", action="store_false",
                   default=None, help="ablation: drop the skip connection to the input")
    p.add_argument("--gru-state-raw", dest="gru_state_raw", action="store_true",
                   default=None, help="ablation: feed the raw previous state to the GRU")
    p.add_argument("--decoder-input-skip", dest="decoder_input_skip",
                   action="store_true", default=None,
                   help="let the decoder see the input features as well")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--l2-coeff", dest="l2_coeff", type=float, default=None)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    p.add_argument("--clip-value", dest="clip_value", type=float, default=None)
    p.add_argument("--train-rounds", dest="train_rounds", type=int, default=None)
    p.add_argument("--scheduler-factor", dest="scheduler_factor", type=float, default=None)
    p.add_argument("--scheduler-patience", dest="scheduler_patience", type=int, default=None)
    p.add_argument("--min-lr", dest="min_lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recgnn",
        description="Recurrent message-passing GNNs for learned graph algorithms")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--task", required=True, choices=[t.value for t in Task])
    p.add_argument("--n", required=True, type=int, help="graph size")
    p.add_argument("--count", required=True, type=int, help="number of graphs")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="output JSON-lines path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--dataset", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out", default=None, help="optional metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extrapolate", help="evaluate checkpoints across graph sizes")
    p.add_argument("--checkpoints", required=True, nargs="+")
    p.add_argument("--sizes", type=_int_list, default=[10, 50, 100, 1000, 10000])
    p.add_argument("--graphs-per-size", dest="graphs_per_size", type=int, default=10)
    p.add_argument("--eval-seed-base", dest="eval_seed_base", type=int,
                   default=77_000_000)
    p.add_argument("--out", default=None, help="optional CSV path")
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("sweep-rounds", help="accuracy as a function of executed rounds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--rounds-list", dest="rounds_list", type=_int_list,
                   default=[10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000])
    p.add_argument("--out", default=None, help="optional CSV path")
    p.set_defaults(func=cmd_sweep_rounds)

    p = sub.add_parser("trace", help="per-round prediction trace and DOT frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0, help="graph index in the dataset")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--dot-rounds", dest="dot_rounds", type=_int_list, default=None,
                   help="rounds to render as DOT frames (default: all)")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "generate" and args.count < 1:
        parser.error("--count must be >= 1")
    if args.command == "generate" and args.n < 3:
        parser.error("--n must be >= 3")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
