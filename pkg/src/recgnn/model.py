"""Encoder, weight-shared recurrent message-passing layer, and decoder.

The recurrent layer concatenates the original node features onto the
current node state, maps that through a skip MLP to the embedding width,
and runs one graph convolution. Four recurrent convolutions are supported
(GIN- and GRU-style aggregation, each with or without an extra MLP applied
to concatenated endpoint embeddings on every directed edge), plus a
non-recurrent baseline that stacks a fixed number of separately
parameterized GIN layers and ignores the requested round count.

forward unrolls the layer an arbitrary number of rounds; backward replays
the recorded per-round caches in reverse and accumulates exact gradients
into the shared parameters (backpropagation through time).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import backend, nn
from .graphs import Graph, Task

CONV_RECGIN = "recgin"
CONV_RECGIN_E = "recgin_e"
CONV_RECGRU = "recgru"
CONV_RECGRU_E = "recgru_e"
CONV_BASELINE_GIN = "baseline_gin"

CONV_TYPES = (CONV_RECGIN, CONV_RECGIN_E, CONV_RECGRU, CONV_RECGRU_E, CONV_BASELINE_GIN)
RECURRENT_CONVS = frozenset(CONV_TYPES) - {CONV_BASELINE_GIN}

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    conv_type: str = CONV_RECGRU_E
    in_dim: int = 1
    embed_dim: int = 6
    hidden_factor: int = 4
    dropout: float = 0.2
    gin_epsilon: float = 0.0
    out_classes: int = 2
    baseline_layers: int = 10
    input_skip: bool = True
    gru_state_raw: bool = False
    decoder_input_skip: bool = False

    def __post_init__(self) -> None:
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"unknown conv_type {self.conv_type!r}")
        if self.in_dim < 1 or self.embed_dim < 1:
            raise ValueError("in_dim and embed_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.baseline_layers < 1:
            raise ValueError("baseline_layers must be >= 1")

    @property
    def skip_in_dim(self) -> int:
        return self.in_dim + self.embed_dim if self.input_skip else self.embed_dim

    @property
    def decoder_in_dim(self) -> int:
        return self.embed_dim + (self.in_dim if self.decoder_input_skip else 0)

    def enc_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(self.in_dim, self.embed_dim, self.hidden_factor, self.dropout)

    def skip_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(self.skip_in_dim, self.embed_dim, self.hidden_factor, self.dropout)

    def edge_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(2 * self.embed_dim, self.embed_dim, self.hidden_factor, self.dropout)

    def conv1_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(self.embed_dim, self.embed_dim, self.hidden_factor, self.dropout)

    def dec_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(self.decoder_in_dim, self.out_classes, self.hidden_factor, self.dropout)


class _Prefixes(NamedTuple):
    skip: str
    edge: str
    conv1: str
    gru: str


def _recurrent_prefixes(layer: str = "") -> _Prefixes:
    return _Prefixes(f"{layer}skip", f"{layer}edge", f"{layer}conv1", f"{layer}gru")


def parameter_layout(config: ModelConfig) -> nn.ParameterSet:
    """The full named-parameter layout for a config, zero initialized.

    Registration order (also the checkpoint order): encoder, the recurrent
    block (skip MLP, then edge MLP / GIN MLP / GRU as applicable; for the
    baseline one such block per layer), decoder.
    """
    params = nn.ParameterSet()

    def add_mlp(prefix: str, spec: nn.MlpSpec) -> None:
        for name, shape in nn.mlp_param_shapes(prefix, spec):
            params.add(name, shape)

    add_mlp("enc", config.enc_spec())
    if config.conv_type == CONV_BASELINE_GIN:
        for i in range(config.baseline_layers):
            pfx = _recurrent_prefixes(f"layer{i}.")
            add_mlp(pfx.skip, config.skip_spec())
            add_mlp(pfx.conv1, config.conv1_spec())
    else:
        pfx = _recurrent_prefixes()
        add_mlp(pfx.skip, config.skip_spec())
        if config.conv_type in (CONV_RECGIN_E, CONV_RECGRU_E):
            add_mlp(pfx.edge, config.edge_spec())
        if config.conv_type in (CONV_RECGIN, CONV_RECGIN_E):
            add_mlp(pfx.conv1, config.conv1_spec())
        else:
            for name, shape in nn.gru_param_shapes(pfx.gru, config.embed_dim):
                params.add(name, shape)
    add_mlp("dec", config.dec_spec())
    return params.finalize()


def init_parameters(config: ModelConfig, rng: np.random.Generator) -> nn.ParameterSet:
    """Glorot-uniform weights, zero biases, deterministic under the seed."""
    return nn.init_glorot(parameter_layout(config), rng)


# ---------------------------------------------------------------------------
# per-config plan and dropout bookkeeping

_NO_DROPOUT: dict = {}


class _Plan(NamedTuple):
    conv_type: str            # effective convolution (baseline runs plain GIN layers)
    has_edge: bool
    is_gin: bool
    enc_hidden: int
    skip_hidden: int
    edge_hidden: int
    conv1_hidden: int
    dec_hidden: int
    layer_prefixes: tuple[_Prefixes, ...] | None


@lru_cache(maxsize=None)
def _plan(config: ModelConfig) -> _Plan:
    baseline = config.conv_type == CONV_BASELINE_GIN
    conv_type = CONV_RECGIN if baseline else config.conv_type
    return _Plan(
        conv_type=conv_type,
        has_edge=conv_type in (CONV_RECGIN_E, CONV_RECGRU_E),
        is_gin=conv_type in (CONV_RECGIN, CONV_RECGIN_E),
        enc_hidden=config.enc_spec().hidden,
        skip_hidden=config.skip_spec().hidden,
        edge_hidden=config.edge_spec().hidden,
        conv1_hidden=config.conv1_spec().hidden,
        dec_hidden=config.dec_spec().hidden,
        layer_prefixes=(tuple(_recurrent_prefixes(f"layer{i}.")
                              for i in range(config.baseline_layers))
                        if baseline else None),
    )


class _DropoutDraws:
    """Pre-drawn inverted-dropout multipliers for one whole pass.

    Multipliers are drawn in a fixed order (encoder, skip block, edge
    block, GIN block, decoder), one block covering all rounds, which keeps
    the rng stream reproducible and cheap to consume per round.
    """

    def __init__(self, config: ModelConfig, rng, n: int, num_msgs: int, rounds: int):
        plan = _plan(config)
        p = config.dropout
        self.enc = nn.dropout_multiplier(rng, p, (n, plan.enc_hidden))
        self.skip = self.edge = self.conv1 = None
        if rounds > 0:
            self.skip = nn.dropout_multiplier(rng, p, (rounds, n, plan.skip_hidden))
            if plan.has_edge:
                self.edge = nn.dropout_multiplier(rng, p, (rounds, num_msgs, plan.edge_hidden))
            if plan.is_gin:
                self.conv1 = nn.dropout_multiplier(rng, p, (rounds, n, plan.conv1_hidden))
        self.dec = nn.dropout_multiplier(rng, p, (n, plan.dec_hidden))

    def step(self, t: int) -> dict:
        dms = {"skip": self.skip[t]}
        if self.edge is not None:
            dms["edge"] = self.edge[t]
        if self.conv1 is not None:
            dms["conv1"] = self.conv1[t]
        return dms


def _step_dropmuls(config: ModelConfig, rng, n: int, num_msgs: int) -> dict:
    plan = _plan(config)
    p = config.dropout
    dms = {"skip": nn.dropout_multiplier(rng, p, (n, plan.skip_hidden))}
    if plan.has_edge:
        dms["edge"] = nn.dropout_multiplier(rng, p, (num_msgs, plan.edge_hidden))
    if plan.is_gin:
        dms["conv1"] = nn.dropout_multiplier(rng, p, (n, plan.conv1_hidden))
    return dms


# ---------------------------------------------------------------------------
# forward pieces


def encode(config: ModelConfig, params: nn.ParameterSet, features,
           dropmul=None, need_cache=False):
    K = backend.get()
    h0, cache = nn.mlp_forward(K, params, "enc", features, dropmul, need_cache)
    return (h0, cache) if need_cache else h0


def decode(config: ModelConfig, params: nn.ParameterSet, h, features=None,
           dropmul=None, need_cache=False):
    K = backend.get()
    if config.decoder_input_skip:
        if features is None:
            raise ValueError("decoder_input_skip requires the node features")
        h = K.concat_cols(features, h)
    logits, cache = nn.mlp_forward(K, params, "dec", h, dropmul, need_cache)
    return (logits, cache) if need_cache else logits


def _conv_forward(K, config, conv_type, params, g: Graph, z, h_prev, pfx, dms, need_cache):
    recv, send, seg = g.message_layout
    n = g.num_nodes
    if conv_type in (CONV_RECGIN, CONV_RECGIN_E):
        edge_cache = None
        if conv_type == CONV_RECGIN_E:
            pairs = K.edge_concat(z, recv, send)
            msg, edge_cache = nn.mlp_forward(K, params, pfx.edge, pairs,
                                             dms.get("edge"), need_cache)
            agg = K.scatter_sum(msg, seg, n)
        else:
            agg = K.neighbor_sum(z, send, seg, n)
        s = (1.0 + config.gin_epsilon) * z + agg
        h_new, conv1_cache = nn.mlp_forward(K, params, pfx.conv1, s,
                                            dms.get("conv1"), need_cache)
        return h_new, ("gin", edge_cache, conv1_cache)
    # GRU variants
    edge_cache = None
    if conv_type == CONV_RECGRU_E:
        pairs = K.edge_concat(z, recv, send)
        msg, edge_cache = nn.mlp_forward(K, params, pfx.edge, pairs,
                                         dms.get("edge"), need_cache)
        agg = K.scatter_sum(msg, seg, n)
    else:
        agg = K.neighbor_sum(z, send, seg, n)
    state = h_prev if config.gru_state_raw else z
    h_new, gru_cache = nn.gru_forward(K, params, pfx.gru, agg, state, need_cache)
    return h_new, ("gru", edge_cache, gru_cache)


def _conv_backward(K, config, conv_type, params, grads, g: Graph, conv_cache, dh_new):
    """Returns (dz, dh_prev_direct); the latter is nonzero only for raw GRU wiring."""
    recv, send, seg = g.message_layout
    n = g.num_nodes
    kind, edge_cache, top_cache, pfx = conv_cache
    if kind == "gin":
        ds = nn.mlp_backward(K, params, grads, pfx.conv1, dh_new, top_cache)
        dz = np.zeros((n, config.embed_dim))
        if conv_type == CONV_RECGIN_E:
            dmsg = K.gather_rows(ds, recv)
            dpairs = nn.mlp_backward(K, params, grads, pfx.edge, dmsg, edge_cache)
            K.edge_concat_backward(dpairs, recv, send, dz)
        else:
            K.scatter_rows_add(ds, recv, send, dz)
        dz += (1.0 + config.gin_epsilon) * ds
        return dz, None
    dagg, dstate = nn.gru_backward(K, params, grads, pfx.gru, dh_new, top_cache)
    dz = np.zeros((n, config.embed_dim))
    if conv_type == CONV_RECGRU_E:
        dmsg = K.gather_rows(dagg, recv)
        dpairs = nn.mlp_backward(K, params, grads, pfx.edge, dmsg, edge_cache)
        K.edge_concat_backward(dpairs, recv, send, dz)
    else:
        K.scatter_rows_add(dagg, recv, send, dz)
    if config.gru_state_raw:
        return dz, dstate
    dz += dstate
    return dz, None


def _step_forward(K, config, conv_type, params, g: Graph, x, h, pfx, dms, need_cache):
    xh = K.concat_cols(x, h) if config.input_skip else h
    z, skip_cache = nn.mlp_forward(K, params, pfx.skip, xh, dms.get("skip"), need_cache)
    h_new, conv_cache = _conv_forward(K, config, conv_type, params, g, z, h, pfx, dms, need_cache)
    return h_new, (skip_cache, conv_cache + (pfx,))


def _step_backward(K, config, conv_type, params, grads, g: Graph, step_cache, dh_new):
    skip_cache, conv_cache = step_cache
    pfx = conv_cache[3]
    dz, dh_direct = _conv_backward(K, config, conv_type, params, grads, g, conv_cache, dh_new)
    dxh = nn.mlp_backward(K, params, grads, pfx.skip, dz, skip_cache)
    if config.input_skip:
        dh = np.ascontiguousarray(dxh[:, config.in_dim:])
    else:
        dh = dxh
    if dh_direct is not None:
        dh = dh + dh_direct
    return dh


def recurrent_step(config: ModelConfig, params: nn.ParameterSet, g: Graph, h,
                   training: bool = False, rng: np.random.Generator | None = None):
    """One application of the recurrent layer; returns the next state."""
    if config.conv_type == CONV_BASELINE_GIN:
        raise ValueError("the baseline has per-layer parameters; use forward()")
    K = backend.get()
    dms = _NO_DROPOUT
    if training and config.dropout > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        dms = _step_dropmuls(config, rng, g.num_nodes, g.message_layout[0].shape[0])
    h_new, _ = _step_forward(K, config, config.conv_type, params, g, g.features, h,
                             _recurrent_prefixes(), dms, need_cache=False)
    return h_new


def convolve(config: ModelConfig, params: nn.ParameterSet, g: Graph, z, state=None):
    """Apply only the graph convolution to pre-transformed embeddings z.

    For the GRU variants, `state` is the cell's carried state and defaults
    to z, matching the wiring used inside the recurrent layer.
    """
    K = backend.get()
    h_prev = z if state is None else state
    h_new, _ = _conv_forward(K, config, config.conv_type, params, g, z, h_prev,
                             _recurrent_prefixes(), _NO_DROPOUT, need_cache=False)
    return h_new


@dataclass
class TraceFrame:
    round: int
    logits: np.ndarray
    predictions: np.ndarray
    state_norms: np.ndarray


@dataclass
class ForwardResult:
    logits: np.ndarray
    final_state: np.ndarray
    trace: list[TraceFrame] | None = None


def _layer_plan(config: ModelConfig, rounds: int) -> tuple[_Prefixes, ...]:
    plan = _plan(config)
    if plan.layer_prefixes is not None:
        return plan.layer_prefixes
    return (_recurrent_prefixes(),) * rounds


def _trace_frame(config, params, h, x, t: int) -> TraceFrame:
    logits = decode(config, params, h, x)
    return TraceFrame(
        round=t,
        logits=logits,
        predictions=np.argmax(logits, axis=1),
        state_norms=np.sqrt(np.sum(h * h, axis=1)),
    )


def forward(config: ModelConfig, params: nn.ParameterSet, g: Graph, rounds: int,
            training: bool = False, rng: np.random.Generator | None = None,
            trace: bool = False) -> ForwardResult:
    """Run encoder, `rounds` recurrent applications, decoder.

    The baseline applies its fixed stack instead and ignores `rounds`.
    With trace=True (inference only) a frame with per-round logits, argmax
    predictions, and per-node state norms is kept for rounds 0..T.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if trace and training:
        raise ValueError("tracing is an inference feature")
    K = backend.get()
    x = g.features
    dropout_on = training and config.dropout > 0.0
    if dropout_on and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    layers = _layer_plan(config, rounds)
    conv_type = _plan(config).conv_type
    draws = (_DropoutDraws(config, rng, g.num_nodes, g.message_layout[0].shape[0], len(layers))
             if dropout_on else None)

    h = encode(config, params, x, draws.enc if draws else None)
    frames = [_trace_frame(config, params, h, x, 0)] if trace else None
    for t, pfx in enumerate(layers):
        dms = draws.step(t) if draws else _NO_DROPOUT
        h, _ = _step_forward(K, config, conv_type, params, g, x, h, pfx, dms, False)
        if trace:
            frames.append(_trace_frame(config, params, h, x, t + 1))
    logits = decode(config, params, h, x, draws.dec if draws else None)
    return ForwardResult(logits=logits, final_state=h, trace=frames)


def model_loss(config: ModelConfig, params: nn.ParameterSet, g: Graph, rounds: int,
               labels, class_weights, l2_coeff: float) -> float:
    """Inference-mode training objective; the finite-difference target."""
    result = forward(config, params, g, rounds)
    ce, _ = nn.weighted_cross_entropy(result.logits, labels, class_weights)
    reg, _ = nn.l2_state_loss(result.final_state, l2_coeff)
    return ce + reg


def backward(config: ModelConfig, params: nn.ParameterSet, g: Graph, rounds: int,
             labels, class_weights, l2_coeff: float,
             rng: np.random.Generator | None = None,
             training: bool = True) -> tuple[float, nn.ParameterSet]:
    """Total loss and exact gradients through the unrolled recurrence.

    The loss is weighted cross entropy on the decoded logits plus the L2
    penalty on the final embeddings; gradients from every round accumulate
    into the shared recurrent parameters.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    K = backend.get()
    x = g.features
    dropout_on = training and config.dropout > 0.0
    if dropout_on and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    layers = _layer_plan(config, rounds)
    conv_type = _plan(config).conv_type
    draws = (_DropoutDraws(config, rng, g.num_nodes, g.message_layout[0].shape[0], len(layers))
             if dropout_on else None)

    h, enc_cache = encode(config, params, x, draws.enc if draws else None, need_cache=True)
    step_caches = []
    for t, pfx in enumerate(layers):
        dms = draws.step(t) if draws else _NO_DROPOUT
        h, cache = _step_forward(K, config, conv_type, params, g, x, h, pfx, dms, True)
        step_caches.append(cache)
    dec_in = K.concat_cols(x, h) if config.decoder_input_skip else h
    logits, dec_cache = nn.mlp_forward(K, params, "dec", dec_in,
                                       draws.dec if draws else None, need_cache=True)

    ce, dlogits = nn.weighted_cross_entropy(logits, labels, class_weights)
    reg, dh_reg = nn.l2_state_loss(h, l2_coeff)
    total = ce + reg

    grads = params.zeros_like()
    ddec_in = nn.mlp_backward(K, params, grads, "dec", dlogits, dec_cache)
    if config.decoder_input_skip:
        ddec_in = np.ascontiguousarray(ddec_in[:, config.in_dim:])
    dh = ddec_in + dh_reg
    for cache in reversed(step_caches):
        dh = _step_backward(K, config, conv_type, params, grads, g, cache, dh)
    nn.mlp_backward(K, params, grads, "enc", dh, enc_cache, need_dx=False)
    return total, grads


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    task: Task
    params: nn.ParameterSet
    train_seed: int


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write a versioned text checkpoint with repr-exact parameter values."""
    record = {
        "format_version": CHECKPOINT_VERSION,
        "task": ckpt.task.value,
        "train_seed": int(ckpt.train_seed),
        "model": asdict(ckpt.config),
        "params": [
            {
                "name": name,
                "shape": list(ckpt.params.shape(name)),
                "data": ckpt.params[name].reshape(-1).tolist(),
            }
            for name in ckpt.params.names
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        record = json.load(fh)
    version = record.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    config = ModelConfig(**record["model"])
    params = parameter_layout(config)
    stored = {entry["name"]: entry for entry in record["params"]}
    if set(stored) != set(params.names):
        raise ValueError("checkpoint parameter names do not match the config")
    for name in params.names:
        entry = stored[name]
        if tuple(entry["shape"]) != params.shape(name):
            raise ValueError(f"shape mismatch for {name}")
        params[name][...] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return Checkpoint(config=config, task=Task(record["task"]),
                      params=params, train_seed=int(record["train_seed"]))
