"""Recurrent message-passing GNNs that learn graph algorithms on small
graphs and extrapolate to much larger instances.

Subpackages and modules:
    graphs    graph container, traversal primitives, JSON-lines datasets
    tasks     synthetic task generators with exact oracle labels
    backend   kernel backends (compiled extension with numpy fallback)
    nn        MLP/GRU layers, losses, Adam, LR scheduling, clipping
    model     recurrent architecture, forward/backward, checkpoints
    training  training loop, metrics, experiment protocols
    cli       command-line interface (recgnn ...)
"""
from . import backend
from .graphs import Graph, Task
from .model import Checkpoint, ModelConfig, forward, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Graph", "Task", "ModelConfig", "TrainConfig", "Checkpoint",
    "forward", "train", "evaluate", "load_checkpoint", "save_checkpoint",
    "backend", "__version__",
]
