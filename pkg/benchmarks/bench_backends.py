"""Compare the compiled kernel core against the pure numpy fallback.

Measures the two regimes that dominate real usage: the small-graph
training step (overhead bound) and large-graph inference (compute bound).

    python benchmarks/bench_backends.py [--train-steps N] [--infer-rounds N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from recgnn import backend, nn
from recgnn.model import ModelConfig, backward, forward, init_parameters
from recgnn.tasks import gen_prefix_sum
from recgnn.training import rounds_for_size


def time_training_step(steps: int) -> float:
    g = gen_prefix_sum(10, np.random.default_rng(1))
    cfg = ModelConfig(conv_type="recgru_e", in_dim=2)
    params = init_parameters(cfg, np.random.default_rng(0))
    opt = nn.OptimizerState.init(params, 4e-4)
    rng = np.random.default_rng(3)
    weights = np.array([1.0, 1.0])

    def step():
        loss, grads = backward(cfg, params, g, 12, g.labels, weights, 1e-4, rng=rng)
        nn.clip_gradients(grads, 5.0, 1.0)
        nn.adam_step(params, grads, opt)

    for _ in range(min(50, steps)):
        step()
    t0 = time.perf_counter()
    for _ in range(steps):
        step()
    return (time.perf_counter() - t0) / steps


def time_inference(n: int, rounds: int) -> float:
    g = gen_prefix_sum(n, np.random.default_rng(7))
    cfg = ModelConfig(conv_type="recgru_e", in_dim=2)
    params = init_parameters(cfg, np.random.default_rng(0))
    t0 = time.perf_counter()
    forward(cfg, params, g, rounds)
    return time.perf_counter() - t0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-steps", type=int, default=500)
    ap.add_argument("--infer-size", type=int, default=1000)
    ap.add_argument("--infer-rounds", type=int, default=None)
    args = ap.parse_args()
    rounds = args.infer_rounds or rounds_for_size(args.infer_size)

    results = {}
    for name in backend.available():
        backend.use(name)
        step_ms = time_training_step(args.train_steps) * 1e3
        infer_s = time_inference(args.infer_size, rounds)
        results[name] = (step_ms, infer_s)
        print(f"{name:9s} train step (n=10, 12 rounds): {step_ms:8.3f} ms   "
              f"inference (n={args.infer_size}, {rounds} rounds): {infer_s:7.3f} s")
    if "compiled" in results and "numpy" in results:
        s = results["numpy"][0] / results["compiled"][0]
        i = results["numpy"][1] / results["compiled"][1]
        print(f"compiled speedup: {s:.2f}x on the training step, {i:.2f}x on inference")


if __name__ == "__main__":
    main()
