"""NAS-Bench-201-style cell search space.

A cell is a 4-node DAG; every edge j -> i (j < i) carries one of five
operations.  The interchange string lists, for each target node, its
incoming edges::

    |op~0|+|op~0|op~1|+|op~0|op~1|op~2|

Networks follow the published macro skeleton: a 3x3 stem, ``num_stages``
stages of identical cells separated by residual reduction blocks that double
channels and halve resolution, then norm, ReLU, global pooling and a linear
classifier.
"""
from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .network import NetworkSpec, Node, count_flops, count_params

__all__ = [
    "OPS",
    "CellArch",
    "EncodingError",
    "SpaceConfig",
    "parse_encoding",
    "sample",
    "mutate",
    "enumerate_space",
    "instantiate",
    "count_params",
    "count_flops",
]

OPS = ("none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3")
# (target, source) in encoding order
EDGES = ((1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2))
SPACE_SIZE = len(OPS) ** len(EDGES)


class EncodingError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


@dataclass(frozen=True)
class CellArch:
    edges: tuple[str, ...]

    def __post_init__(self):
        if len(self.edges) != len(EDGES):
            raise ValueError(f"a cell has exactly {len(EDGES)} edges, got {len(self.edges)}")
        for op in self.edges:
            if op not in OPS:
                raise ValueError(f"unknown operation {op!r}")

    def encode(self) -> str:
        parts, k = [], 0
        for node in (1, 2, 3):
            tokens = []
            for src in range(node):
                tokens.append(f"{self.edges[k]}~{src}")
                k += 1
            parts.append("|" + "|".join(tokens) + "|")
        return "+".join(parts)

    def op(self, target: int, source: int) -> str:
        return self.edges[EDGES.index((target, source))]

    def index(self) -> int:
        """Position in :func:`enumerate_space` order."""
        i = 0
        for op in self.edges:
            i = i * len(OPS) + OPS.index(op)
        return i

    @classmethod
    def from_index(cls, i: int) -> CellArch:
        if not 0 <= i < SPACE_SIZE:
            raise ValueError(f"index {i} outside the {SPACE_SIZE}-cell space")
        ops = []
        for _ in EDGES:
            i, r = divmod(i, len(OPS))
            ops.append(OPS[r])
        return cls(tuple(reversed(ops)))

    def __str__(self):
        return self.encode()


def parse_encoding(s: str) -> CellArch:
    if not isinstance(s, str):
        raise EncodingError("encoding must be a string")
    groups, pos = [], 0
    for gi, group in enumerate(s.split("+")):
        if gi >= 3:
            raise EncodingError("more than 3 node groups", pos - 1)
        if len(group) < 2 or group[0] != "|" or group[-1] != "|":
            bad = pos if not group.startswith("|") else pos + max(len(group) - 1, 0)
            raise EncodingError("node group must be delimited by '|'", bad)
        tokens, tpos = group[1:-1].split("|"), pos + 1
        if len(tokens) != gi + 1:
            raise EncodingError(f"node {gi + 1} needs {gi + 1} incoming edges, got {len(tokens)}", pos)
        ops = []
        for src, tok in enumerate(tokens):
            op, sep, idx = tok.partition("~")
            if not sep:
                raise EncodingError(f"edge {tok!r} lacks '~source'", tpos)
            if op not in OPS:
                raise EncodingError(f"unknown operation tag {op!r}", tpos)
            if idx != str(src):
                raise EncodingError(f"edge source must be {src}, got {idx!r}", tpos + len(op) + 1)
            ops.append(op)
            tpos += len(tok) + 1
        groups.append(ops)
        pos += len(group) + 1
    if len(groups) != 3:
        raise EncodingError(f"expected 3 node groups, got {len(groups)}", len(s))
    return CellArch(tuple(op for g in groups for op in g))


def sample(seed: int) -> CellArch:
    rng = np.random.default_rng(seed)
    return CellArch(tuple(OPS[i] for i in rng.integers(0, len(OPS), size=len(EDGES))))


def mutate(arch: CellArch, seed) -> CellArch:
    """Resample exactly one edge to a different operation."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e = int(rng.integers(len(EDGES)))
    choices = [op for op in OPS if op != arch.edges[e]]
    edges = list(arch.edges)
    edges[e] = choices[int(rng.integers(len(choices)))]
    return CellArch(tuple(edges))


def enumerate_space(max_count: int | None = None) -> Iterator[CellArch]:
    it = (CellArch(ops) for ops in itertools.product(OPS, repeat=len(EDGES)))
    return itertools.islice(it, max_count) if max_count is not None else it


@dataclass(frozen=True)
class SpaceConfig:
    stem_channels: int = 8
    cells_per_stage: int = 1
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_stages: int = 3

    def __post_init__(self):
        vals = (self.stem_channels, self.cells_per_stage, self.num_classes, self.num_stages, *self.input_shape)
        if any(int(v) < 1 for v in vals):
            raise ValueError(f"space config values must be positive: {self}")


def layer_seed(seed: int, name: str) -> np.random.Generator:
    # keyed per layer so shared layers get identical weights across cells
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


class _Builder:
    def __init__(self, seed: int):
        self.seed = seed
        self.nodes = [Node("input", "input")]
        self.weights: dict[str, np.ndarray] = {}

    def add(self, name, kind, inputs, **kw) -> int:
        self.nodes.append(Node(name, kind, tuple(inputs), **kw))
        return len(self.nodes) - 1

    def conv(self, name, src, cin, cout, k, stride=1) -> int:
        rng = layer_seed(self.seed, name)
        self.weights[name] = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), size=(cout, cin, k, k))
        return self.add(name, "conv", [src], stride=stride, pad=(k - 1) // 2)

    def relu_conv_norm(self, name, src, cin, cout, k, stride=1) -> int:
        r = self.add(name + ".relu", "relu", [src])
        c = self.conv(name + ".conv", r, cin, cout, k, stride)
        return self.add(name + ".bn", "norm", [c])


def _cell(b: _Builder, prefix: str, arch: CellArch, src: int, ch: int) -> int:
    nodes = {0: src}
    for target in (1, 2, 3):
        incoming = []
        for source in range(target):
            op = arch.op(target, source)
            name = f"{prefix}.e{source}{target}"
            x = nodes[source]
            if op == "none":
                continue
            if op == "skip_connect":
                incoming.append(x)
            elif op == "avg_pool_3x3":
                incoming.append(b.add(name + ".pool", "pool3", [x]))
            else:
                k = 1 if op == "nor_conv_1x1" else 3
                incoming.append(b.relu_conv_norm(name, x, ch, ch, k))
        if not incoming:
            # dangling node; ops fed by it are skipped at run time
            nodes[target] = b.add(f"{prefix}.n{target}", "zero", [src])
        elif len(incoming) == 1:
            nodes[target] = incoming[0]
        else:
            nodes[target] = b.add(f"{prefix}.n{target}", "add", incoming)
    return nodes[3]


def _reduction(b: _Builder, prefix: str, src: int, cin: int, cout: int) -> int:
    a = b.relu_conv_norm(prefix + ".a", src, cin, cout, 3, stride=2)
    bb = b.relu_conv_norm(prefix + ".b", a, cout, cout, 3)
    p = b.add(prefix + ".down.pool", "pool2", [src])
    d = b.conv(prefix + ".down.conv", p, cin, cout, 1)
    return b.add(prefix + ".out", "add", [bb, d])


def instantiate(arch: CellArch, cfg: SpaceConfig | None = None, seed: int = 0) -> NetworkSpec:
    """Build a weighted layer program; conv weights are N(0, 2/fan_in)."""
    cfg = cfg or SpaceConfig()
    b = _Builder(seed)
    ch = cfg.stem_channels
    x = b.conv("stem.conv", 0, cfg.input_shape[0], ch, 3)
    x = b.add("stem.bn", "norm", [x])
    for stage in range(cfg.num_stages):
        if stage > 0:
            x = _reduction(b, f"s{stage}.reduce", x, ch, 2 * ch)
            ch *= 2
        for c in range(cfg.cells_per_stage):
            x = _cell(b, f"s{stage}.c{c}", arch, x, ch)
    x = b.add("head.bn", "norm", [x])
    x = b.add("head.relu", "relu", [x])
    x = b.add("head.gap", "gap", [x])
    rng = layer_seed(seed, "head.fc")
    b.weights["head.fc"] = rng.normal(0.0, np.sqrt(2.0 / ch), size=(cfg.num_classes, ch))
    b.weights["head.fc.bias"] = np.zeros(cfg.num_classes)
    b.add("head.fc", "linear", [x])
    meta = {"arch": arch.encode(), "config": cfg}
    return NetworkSpec(b.nodes, b.weights, tuple(cfg.input_shape), seed, meta)
