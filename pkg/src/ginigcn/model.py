"""Multi-task GCN in two variants built on the autodiff primitives.

Both variants share the convolution stack: each layer updates an atom's
representation from itself plus the sum of its bonded neighbors, followed by
an affine map, batch normalization, and ReLU. Mean and max aggregations of
the final node representations are passed through tanh and concatenated into
the molecular fingerprint.

The explainable variant feeds the fingerprint directly into the output
layer, so each prediction decomposes exactly into per-representation terms
w_ij * tanh(f(x_i)) plus the bias. The reference variant inserts an
intermediate fully-connected layer (with batch norm and ReLU) between the
fingerprint and the output layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .molecules import FEATURE_DIM, MolecularGraph, featurize

__all__ = [
    "ModelConfig",
    "Model",
    "BatchForward",
    "init_model",
    "conv_forward",
    "fingerprint",
    "checkpoint_document",
    "model_from_document",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

CHECKPOINT_FORMAT_VERSION = 1

VARIANT_REFERENCE = "reference"
VARIANT_EXPLAINABLE = "explainable"


class CheckpointError(ValueError):
    """Unreadable or structurally invalid checkpoint document."""


@dataclass
class ModelConfig:
    targets: list[str]
    variant: str = VARIANT_EXPLAINABLE
    num_conv_layers: int = 3
    conv_hidden: int = 64
    intermediate_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.targets:
            raise ValueError("at least one target is required")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("target names must be unique")
        if self.variant not in (VARIANT_REFERENCE, VARIANT_EXPLAINABLE):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.num_conv_layers < 1:
            raise ValueError("at least one convolution layer is required")
        if self.conv_hidden < 1:
            raise ValueError("conv_hidden must be at least 1")
        if self.intermediate_dim < 1:
            raise ValueError("intermediate_dim must be at least 1")

    @property
    def fingerprint_dim(self) -> int:
        return 2 * self.conv_hidden

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    def to_dict(self) -> dict:
        return {
            "targets": list(self.targets),
            "variant": self.variant,
            "num_conv_layers": self.num_conv_layers,
            "conv_hidden": self.conv_hidden,
            "intermediate_dim": self.intermediate_dim,
            "seed": self.seed,
        }


@dataclass
class BatchForward:
    """Everything downstream consumers need from one forward pass."""

    output: ad.Node          # (molecules, targets)
    fingerprint: ad.Node     # (molecules, 2 * conv_hidden)
    node_reps: ad.Node       # (atoms, conv_hidden), pre-tanh last-conv outputs
    segments: list[list[int]]


def conv_forward(
    h: ad.Node,
    adjacency_with_self: np.ndarray,
    weight: ad.Node,
    bias: ad.Node,
    bn_state: ad.BatchNormState,
    mode: str,
) -> ad.Node:
    """One fingerprint convolution: ReLU(BN(W (h_v + sum of neighbors) + b)).

    ``adjacency_with_self`` is the (n, n) 0/1 adjacency matrix plus identity,
    so the matrix product forms the self-plus-neighbor sums for all atoms.
    """
    agg = ad.matmul(ad.constant(adjacency_with_self), h)
    pre = ad.linear(agg, weight, bias)
    return ad.relu(ad.batch_norm(pre, bn_state, mode))


def fingerprint(node_reps: ad.Node, segments) -> ad.Node:
    """Per-molecule [tanh(mean of reps) || tanh(max of reps)].

    tanh is applied after aggregation, so output-layer terms w * tanh(f(x))
    sum exactly to the prediction minus the bias.
    """
    mean_part = ad.tanh(ad.segment_aggregate(node_reps, segments, "mean"))
    max_part = ad.tanh(ad.segment_aggregate(node_reps, segments, "max"))
    return ad.concat_cols(mean_part, max_part)


def _batch_inputs(graphs: list[MolecularGraph]):
    """Stack node features and build the block-diagonal self+neighbor matrix."""
    if not graphs:
        raise ValueError("empty batch")
    feats = [featurize(g) for g in graphs]
    sizes = [f.shape[0] for f in feats]
    total = sum(sizes)
    x = np.vstack(feats)
    adj = np.zeros((total, total))
    segments = []
    offset = 0
    for g, size in zip(graphs, sizes):
        rows = list(range(offset, offset + size))
        segments.append(rows)
        for i, j, _ in g.bonds:
            adj[offset + i, offset + j] = 1.0
            adj[offset + j, offset + i] = 1.0
        offset += size
    adj[np.arange(total), np.arange(total)] = 1.0
    return x, adj, segments


class Model:
    """Layer stack with all parameters; built through :func:`init_model`."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.conv_weights: list[ad.Node] = []
        self.conv_biases: list[ad.Node] = []
        self.conv_bn: list[ad.BatchNormState] = []
        self.mid_weight: ad.Node | None = None
        self.mid_bias: ad.Node | None = None
        self.mid_bn: ad.BatchNormState | None = None
        self.out_weight: ad.Node | None = None
        self.out_bias: ad.Node | None = None

    @property
    def is_explainable(self) -> bool:
        return self.config.variant == VARIANT_EXPLAINABLE

    def named_parameters(self) -> list[tuple[str, ad.Node]]:
        """All trainable parameters in a fixed, checkpoint-stable order."""
        named = []
        for ell in range(self.config.num_conv_layers):
            named.append((f"conv{ell}.weight", self.conv_weights[ell]))
            named.append((f"conv{ell}.bias", self.conv_biases[ell]))
            named.append((f"conv{ell}.gamma", self.conv_bn[ell].gamma))
            named.append((f"conv{ell}.beta", self.conv_bn[ell].beta))
        if self.config.variant == VARIANT_REFERENCE:
            named.append(("intermediate.weight", self.mid_weight))
            named.append(("intermediate.bias", self.mid_bias))
            named.append(("intermediate.gamma", self.mid_bn.gamma))
            named.append(("intermediate.beta", self.mid_bn.beta))
        named.append(("output.weight", self.out_weight))
        named.append(("output.bias", self.out_bias))
        return named

    def parameters(self) -> list[ad.Node]:
        return [node for _, node in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(node.value.size for node in self.parameters())

    def batch_norm_states(self) -> list[tuple[str, ad.BatchNormState]]:
        states = [(f"conv{ell}", st) for ell, st in enumerate(self.conv_bn)]
        if self.mid_bn is not None:
            states.append(("intermediate", self.mid_bn))
        return states

    def zero_grads(self) -> None:
        for node in self.parameters():
            node.zero_grad()

    def forward_batch(self, graphs: list[MolecularGraph], mode: str = "eval") -> BatchForward:
        """Run the full network over a batch of molecules."""
        x, adj, segments = _batch_inputs(graphs)
        h = ad.constant(x)
        for ell in range(self.config.num_conv_layers):
            h = conv_forward(h, adj, self.conv_weights[ell], self.conv_biases[ell],
                             self.conv_bn[ell], mode)
        fp = fingerprint(h, segments)
        if self.config.variant == VARIANT_REFERENCE:
            mid = ad.relu(ad.batch_norm(ad.linear(fp, self.mid_weight, self.mid_bias),
                                        self.mid_bn, mode))
            out = ad.linear(mid, self.out_weight, self.out_bias)
        else:
            out = ad.linear(fp, self.out_weight, self.out_bias)
        return BatchForward(output=out, fingerprint=fp, node_reps=h, segments=segments)

    def predict(self, graphs: list[MolecularGraph], mode: str = "eval") -> np.ndarray:
        """Prediction matrix (molecules, targets); column j is targets[j]."""
        return self.forward_batch(graphs, mode).output.value.copy()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_model(config: ModelConfig) -> Model:
    """Seeded Glorot-uniform weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(config.seed)
    model = Model(config)
    d_in = FEATURE_DIM
    for _ in range(config.num_conv_layers):
        model.conv_weights.append(ad.parameter(_glorot(rng, d_in, config.conv_hidden)))
        model.conv_biases.append(ad.parameter(np.zeros(config.conv_hidden)))
        model.conv_bn.append(ad.BatchNormState(config.conv_hidden))
        d_in = config.conv_hidden
    head_in = config.fingerprint_dim
    if config.variant == VARIANT_REFERENCE:
        model.mid_weight = ad.parameter(_glorot(rng, head_in, config.intermediate_dim))
        model.mid_bias = ad.parameter(np.zeros(config.intermediate_dim))
        model.mid_bn = ad.BatchNormState(config.intermediate_dim)
        head_in = config.intermediate_dim
    model.out_weight = ad.parameter(_glorot(rng, head_in, config.num_targets))
    model.out_bias = ad.parameter(np.zeros(config.num_targets))
    return model


def checkpoint_document(model: Model) -> dict:
    """JSON-serializable snapshot; write -> read round trips bit-exact."""
    params = {}
    for name, node in model.named_parameters():
        params[name] = {
            "shape": list(node.value.shape),
            "data": node.value.ravel().tolist(),
        }
    bn = {}
    for name, state in model.batch_norm_states():
        bn[name] = {
            "running_mean": state.running_mean.tolist(),
            "running_var": state.running_var.tolist(),
            "momentum": state.momentum,
            "epsilon": state.epsilon,
        }
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "parameters": params,
        "batch_norm": bn,
    }


def model_from_document(doc: dict) -> Model:
    """Rebuild a model from a checkpoint document."""
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    try:
        config = ModelConfig(**doc["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"invalid checkpoint config: {e}") from None
    model = init_model(config)
    params = doc.get("parameters", {})
    for name, node in model.named_parameters():
        if name not in params:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        entry = params[name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != node.value.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {arr.shape}, expected {node.value.shape}"
            )
        node.value = arr
        node.zero_grad()
    bn = doc.get("batch_norm", {})
    for name, state in model.batch_norm_states():
        if name not in bn:
            raise CheckpointError(f"checkpoint missing batch_norm state {name!r}")
        entry = bn[name]
        state.running_mean = np.asarray(entry["running_mean"], dtype=np.float64)
        state.running_var = np.asarray(entry["running_var"], dtype=np.float64)
        state.momentum = float(entry["momentum"])
        state.epsilon = float(entry["epsilon"])
        if state.running_mean.shape != (state.dim,) or state.running_var.shape != (state.dim,):
            raise CheckpointError(f"batch_norm state {name!r} has wrong shape")
        if np.any(state.running_var < 0):
            raise CheckpointError(f"batch_norm state {name!r} has negative running variance")
    return model


def save_checkpoint(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_document(model), fh)
        fh.write("\n")


def load_checkpoint(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from None
    return model_from_document(doc)
