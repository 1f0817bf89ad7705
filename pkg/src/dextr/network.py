"""Layer programs and the forward pass that records per-layer conditioning.

A network is a flat, topologically ordered list of :class:`Node` objects.
Node 0 is the input; the last node is the output.  ``forward`` evaluates the
program on a jet tensor and, for every recorded layer, reshapes the value
plane to a (channels x spatial) matrix and measures its conditioning.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jet
from .linalg import ConvergenceError, spectrum

# kinds whose outputs are recorded as layers
RECORDED = frozenset({"conv", "norm", "relu", "pool3", "pool2", "add", "gap", "linear"})


@dataclass(frozen=True)
class Node:
    name: str
    kind: str  # input|conv|norm|relu|pool3|pool2|gap|linear|add|identity|zero
    inputs: tuple[int, ...] = ()
    stride: int = 1
    pad: int = 0


@dataclass
class NetworkSpec:
    nodes: list[Node]
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, int, int]
    init_seed: int = 0
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LayerRecord:
    layer_id: int
    name: str
    kind: str
    channels: int
    spatial: int
    inv_cond: float
    sigma_max: float
    qualifying: bool


@dataclass
class ForwardResult:
    output: jet.Tensor
    records: list[LayerRecord]
    valid: bool
    features: list[np.ndarray] | None = None


def feature_matrix(t: jet.Tensor) -> np.ndarray:
    """Value plane as (channels, spatial); flat tensors become a column."""
    v = t.v
    if v.ndim == 4:
        return v.reshape(v.shape[1], v.shape[2] * v.shape[3])
    return v.reshape(-1, 1)


def _eval_node(node: Node, args: list[jet.Tensor], weights) -> jet.Tensor:
    kind = node.kind
    if kind == "conv":
        return jet.conv2d(args[0], weights[node.name], node.stride, node.pad)
    if kind == "norm":
        return jet.instance_norm(args[0])
    if kind == "relu":
        return jet.relu(args[0])
    if kind == "pool3":
        return jet.avg_pool3x3(args[0])
    if kind == "pool2":
        return jet.avg_pool2x2(args[0])
    if kind == "gap":
        return jet.global_avg_pool(args[0])
    if kind == "linear":
        return jet.linear(args[0], weights[node.name], weights.get(node.name + ".bias"))
    if kind == "add":
        return jet.add(*args)
    if kind == "identity":
        return args[0]
    raise ValueError(f"unknown node kind {kind!r}")


def forward(net: NetworkSpec, x: jet.Tensor, spectra: bool = True, keep_features: bool = False) -> ForwardResult:
    """Run the program on ``x``.

    Nodes whose inputs are all structurally zero (fed only by "none" edges)
    are skipped and produce no record.  A non-finite activation or a
    non-converged spectrum marks the result invalid instead of raising.
    """
    c, h, w = net.input_shape
    if x.shape != (1, c, h, w):
        raise jet.ShapeError(f"input shape {x.shape} does not match network input (1, {c}, {h}, {w})")
    values: list[jet.Tensor | None] = [None] * len(net.nodes)
    values[0] = x
    records: list[LayerRecord] = []
    features: list[np.ndarray] | None = [] if keep_features else None
    valid = x.is_finite()

    for i, node in enumerate(net.nodes[1:], start=1):
        live = [values[j] for j in node.inputs if values[j] is not None]
        if node.kind == "zero" or not live:
            continue  # structural zero
        if node.kind == "add" and len(live) == 1:
            values[i] = live[0]
            continue
        out = _eval_node(node, live, net.weights)
        values[i] = out
        if node.kind not in RECORDED:
            continue
        if not out.is_finite():
            valid = False
        mat = feature_matrix(out)
        rows, cols = mat.shape
        inv, smax, qual = 0.0, 0.0, rows >= 2 and cols >= 2
        if spectra and valid:
            try:
                sp = spectrum(mat)
                inv, smax = sp.inv_cond, sp.sigma_max
            except ConvergenceError:
                valid = False
            if smax == 0.0:
                qual = False  # identically zero output
        records.append(LayerRecord(len(records), node.name, node.kind, rows, cols, inv, smax, qual))
        if keep_features:
            features.append(mat)

    out = values[-1]
    if out is None:
        shape = _output_shape(net)
        out = jet.Tensor(np.zeros((1,) + shape))
    return ForwardResult(out, records, valid and out.is_finite(), features)


def infer_shapes(net: NetworkSpec) -> list[tuple[int, ...]]:
    """Static output shape of every node (batch axis included)."""
    shapes: list[tuple[int, ...]] = [(1,) + tuple(net.input_shape)]
    for node in net.nodes[1:]:
        s = shapes[node.inputs[0]] if node.inputs else shapes[0]
        if node.kind == "conv":
            wt = net.weights[node.name]
            k = wt.shape[2]
            ho = (s[2] + 2 * node.pad - k) // node.stride + 1
            wo = (s[3] + 2 * node.pad - k) // node.stride + 1
            s = (1, wt.shape[0], ho, wo)
        elif node.kind == "pool2":
            s = (1, s[1], s[2] // 2, s[3] // 2)
        elif node.kind == "gap":
            s = (1, s[1])
        elif node.kind == "linear":
            s = (1, net.weights[node.name].shape[0])
        shapes.append(s)
    return shapes


def _output_shape(net: NetworkSpec) -> tuple[int, ...]:
    return infer_shapes(net)[-1]


def count_params(net: NetworkSpec) -> int:
    return int(sum(w.size for w in net.weights.values()))


def count_flops(net: NetworkSpec, input_shape: tuple[int, int, int] | None = None) -> int:
    """2 x multiply-accumulates over conv and linear layers."""
    if input_shape is not None and tuple(input_shape) != tuple(net.input_shape):
        net = NetworkSpec(net.nodes, net.weights, tuple(input_shape), net.init_seed, net.meta)
    shapes = infer_shapes(net)
    total = 0
    for node, s in zip(net.nodes, shapes):
        if node.kind == "conv":
            cout, cin, k, _ = net.weights[node.name].shape
            total += 2 * cout * cin * k * k * s[2] * s[3]
        elif node.kind == "linear":
            total += 2 * net.weights[node.name].size
    return total
