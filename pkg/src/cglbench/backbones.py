"""GCN and simplified ST-GCN skeleton classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import SkeletonGraph
from .tensor import (
    Tensor,
    add,
    concat,
    matmul,
    mul,
    relu,
    take,
    tmax,
    tmean,
    tsum,
)

KINDS = ("gcn", "stgcn-lite")
SWEEP_WIDTHS = (32, 64, 128, 256, 512)
SWEEP_DEPTHS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture of a skeleton classifier.

    ``input_feature_length`` is the per-joint feature length: ``3 * frames``
    for the GCN (coordinates flattened over time) and 3 for ST-GCN-lite.
    ``head_width`` defaults to ``width``; width sweeps pin it so only the
    graph layers change.
    """

    kind: str = "gcn"
    depth: int = 2
    width: int = 64
    num_classes: int = 10
    input_feature_length: int = 156
    head_width: int | None = None
    temporal_kernel: int = 9

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        for name in ("depth", "width", "num_classes", "input_feature_length", "temporal_kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.head_width is not None and self.head_width < 1:
            raise ValueError("head_width must be positive")

    @property
    def head_hidden(self) -> int:
        return self.width if self.head_width is None else self.head_width

    @property
    def readout_length(self) -> int:
        return 2 * self.width if self.kind == "gcn" else self.width

    def arch_key(self) -> str:
        key = f"{self.kind}-d{self.depth}-w{self.width}"
        if self.head_width is not None:
            key += f"-h{self.head_width}"
        return key


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Model:
    """Parameters plus the forward pass for one backbone configuration.

    Parameters live in ``self.params`` under stable dotted names, in
    construction order (graph layers first, then the head).
    """

    def __init__(self, config: BackboneConfig, graph: SkeletonGraph, params: dict[str, Tensor]):
        self.config = config
        self.graph = graph
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x, return_messages: bool = False):
        if self.config.kind == "gcn":
            return gcn_forward(self, x, self.graph, return_messages=return_messages)
        return stgcn_lite_forward(self, x, self.graph, return_messages=return_messages)

    __call__ = forward

    def state_vector(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    def load_state_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for p in self.params.values():
            n = p.size
            p.data[...] = vec[offset:offset + n].reshape(p.shape)
            offset += n
        if offset != vec.size:
            raise ValueError(f"state vector has {vec.size} entries, model needs {offset}")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}


def build_backbone(config: BackboneConfig, graph: SkeletonGraph, seed: int) -> Model:
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def weight(name, fan_in, fan_out):
        params[name] = Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True, name=name)

    def bias(name, n):
        params[name] = Tensor(np.zeros(n), requires_grad=True, name=name)

    fan_in = config.input_feature_length
    for layer in range(config.depth):
        if config.kind == "gcn":
            weight(f"gcn.{layer}.weight", fan_in, config.width)
            bias(f"gcn.{layer}.bias", config.width)
        else:
            weight(f"stgcn.{layer}.spatial", fan_in, config.width)
            kernel = rng.uniform(0.0, 1.0, size=(config.temporal_kernel, config.width))
            name = f"stgcn.{layer}.temporal"
            params[name] = Tensor(kernel / kernel.sum(axis=0), requires_grad=True, name=name)
        fan_in = config.width
    weight("head.0.weight", config.readout_length, config.head_hidden)
    bias("head.0.bias", config.head_hidden)
    weight("head.1.weight", config.head_hidden, config.num_classes)
    bias("head.1.bias", config.num_classes)
    return Model(config, graph, params)


def _head(model: Model, readout: Tensor) -> Tensor:
    p = model.params
    hidden = relu(add(matmul(readout, p["head.0.weight"]), p["head.0.bias"]))
    return add(matmul(hidden, p["head.1.weight"]), p["head.1.bias"])


def _adjacency(model: Model, graph: SkeletonGraph, joints: int) -> Tensor:
    if graph.num_joints != joints:
        raise ValueError(f"input has {joints} joints but graph has {graph.num_joints}")
    return Tensor(graph.normalized_adjacency)


def gcn_forward(model: Model, node_features, graph: SkeletonGraph, return_messages: bool = False):
    """Logits for ``[batch, joints, features]`` inputs.

    Each layer computes ``relu(A_hat H W + b)``; the readout concatenates
    the per-channel sum and max over joints.
    """
    x = node_features if isinstance(node_features, Tensor) else Tensor(node_features)
    cfg = model.config
    if x.ndim != 3 or x.shape[2] != cfg.input_feature_length:
        raise ValueError(
            f"expected [batch, joints, {cfg.input_feature_length}] features, got {x.shape}"
        )
    a_hat = _adjacency(model, graph, x.shape[1])
    h = x
    messages = []
    for layer in range(cfg.depth):
        w = model.params[f"gcn.{layer}.weight"]
        b = model.params[f"gcn.{layer}.bias"]
        h = relu(add(matmul(a_hat, matmul(h, w)), b))
        if return_messages:
            messages.append(matmul(a_hat, h))
    readout = concat([tsum(h, axis=1), tmax(h, axis=1)], axis=-1)
    logits = _head(model, readout)
    return (logits, messages) if return_messages else logits


def _temporal_conv(h: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise conv along frames (axis 1), stride 1, edge-replicated padding."""
    frames = h.shape[1]
    k = kernel.shape[0]
    half = k // 2
    out = None
    for offset in range(k):
        idx = np.clip(np.arange(frames) + offset - half, 0, frames - 1)
        term = mul(take(h, idx, axis=1), take(kernel, [offset], axis=0))
        out = term if out is None else add(out, term)
    return out


def stgcn_lite_forward(model: Model, sequence, graph: SkeletonGraph, return_messages: bool = False):
    """Logits for ``[batch, frames, joints, 3]`` coordinate sequences."""
    x = sequence if isinstance(sequence, Tensor) else Tensor(sequence)
    cfg = model.config
    if x.ndim != 4 or x.shape[3] != cfg.input_feature_length:
        raise ValueError(
            f"expected [batch, frames, joints, {cfg.input_feature_length}] input, got {x.shape}"
        )
    if x.shape[1] < cfg.temporal_kernel:
        raise ValueError(
            f"need at least {cfg.temporal_kernel} frames for the temporal kernel, got {x.shape[1]}"
        )
    a_hat = _adjacency(model, graph, x.shape[2])
    h = x
    messages = []
    for layer in range(cfg.depth):
        w = model.params[f"stgcn.{layer}.spatial"]
        h = relu(matmul(a_hat, matmul(h, w)))
        if return_messages:
            messages.append(matmul(a_hat, h))
        h = _temporal_conv(h, model.params[f"stgcn.{layer}.temporal"])
    readout = tmean(h, axis=(1, 2))
    logits = _head(model, readout)
    return (logits, messages) if return_messages else logits


def clone_model(model: Model) -> Model:
    params = {
        k: Tensor(p.data.copy(), requires_grad=p.requires_grad, name=p.name)
        for k, p in model.params.items()
    }
    return Model(model.config, model.graph, params)


def expected_parameter_count(config: BackboneConfig) -> int:
    """Closed-form parameter count, used to cross-check construction."""
    n = 0
    fan_in = config.input_feature_length
    for _ in range(config.depth):
        if config.kind == "gcn":
            n += fan_in * config.width + config.width
        else:
            n += fan_in * config.width + config.temporal_kernel * config.width
        fan_in = config.width
    h = config.head_hidden
    return n + config.readout_length * h + h + h * config.num_classes + config.num_classes


def model_from_state(config: BackboneConfig, graph: SkeletonGraph, state: dict) -> Model:
    params = {
        k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True, name=k)
        for k, v in state.items()
    }
    return Model(config, graph, params)

