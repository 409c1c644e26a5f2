"""Operator-graph intermediate representation for inference topologies.

A ComputationGraph is an immutable DAG of typed operator nodes carrying
per-node tensor shapes (batch dimension excluded; dense ops use rank-1
shapes, conv ops rank-3 channel/height/width, token ops rank-2).  It is
what architecture lowering produces and what kernel detection consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .errors import GraphError


class OpKind(str, Enum):
    INPUT = "Input"
    LINEAR = "Linear"
    CONV2D = "Conv2d"
    BATCHNORM = "BatchNorm"
    LAYERNORM = "LayerNorm"
    RELU = "ReLU"
    GELU = "GELU"
    ADD = "Add"
    CONCAT = "Concat"
    ATTENTION = "MultiHeadAttention"
    EMBEDDING = "Embedding"
    OUTPUT = "Output"


# required / optional attribute keys per kind; anything else is a violation
ATTR_SCHEMA: dict[OpKind, tuple[frozenset[str], frozenset[str]]] = {
    OpKind.INPUT: (frozenset(), frozenset()),
    OpKind.LINEAR: (frozenset({"in_features", "out_features"}), frozenset()),
    OpKind.CONV2D: (
        frozenset({"in_channels", "out_channels", "kernel_size", "stride", "groups", "dilation"}),
        frozenset({"padding"}),
    ),
    OpKind.BATCHNORM: (frozenset(), frozenset()),
    OpKind.LAYERNORM: (frozenset(), frozenset()),
    OpKind.RELU: (frozenset(), frozenset()),
    OpKind.GELU: (frozenset(), frozenset()),
    OpKind.ADD: (frozenset(), frozenset()),
    OpKind.CONCAT: (frozenset({"axis"}), frozenset()),
    OpKind.ATTENTION: (frozenset({"num_heads", "embed_dim", "qkv_dim"}), frozenset()),
    OpKind.EMBEDDING: (frozenset({"num_features", "embed_dim"}), frozenset()),
    OpKind.OUTPUT: (frozenset(), frozenset()),
}

# kinds taking exactly one producer
_SINGLE_INPUT = {
    OpKind.LINEAR,
    OpKind.CONV2D,
    OpKind.BATCHNORM,
    OpKind.LAYERNORM,
    OpKind.RELU,
    OpKind.GELU,
    OpKind.ATTENTION,
    OpKind.EMBEDDING,
    OpKind.OUTPUT,
}
_MULTI_INPUT = {OpKind.ADD, OpKind.CONCAT}


@dataclass(frozen=True)
class TensorShape:
    """Tensor extent without the batch dimension."""

    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise GraphError(f"tensor dims must be positive, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def rank(self) -> int:
        return len(self.dims)

    def elements(self) -> int:
        return math.prod(self.dims)

    def to_json(self) -> list[int]:
        return list(self.dims)

    @classmethod
    def from_json(cls, data: Sequence[int]) -> "TensorShape":
        return cls(tuple(data))


@dataclass(frozen=True)
class OpNode:
    """One operator.  ``attrs`` holds exactly the kind-specific keys."""

    id: str
    kind: OpKind
    attrs: dict[str, Any] = field(default_factory=dict)
    input_shape: TensorShape | None = None
    output_shape: TensorShape | None = None

    def with_shapes(self, input_shape: TensorShape | None, output_shape: TensorShape) -> "OpNode":
        return OpNode(self.id, self.kind, dict(self.attrs), input_shape, output_shape)


@dataclass(frozen=True)
class ComputationGraph:
    """Immutable operator DAG.

    ``edges`` order is significant: it defines the input order of
    multi-input nodes (Add, Concat).  ``inputs``/``outputs`` are derived
    from node kinds in node order.
    """

    nodes: tuple[OpNode, ...]
    edges: tuple[tuple[str, str], ...]
    inputs: tuple[str, ...] = field(init=False, compare=False, repr=False)
    outputs: tuple[str, ...] = field(init=False, compare=False, repr=False)
    _by_id: dict = field(init=False, compare=False, repr=False)
    _producers: dict = field(init=False, compare=False, repr=False)
    _consumers: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        edges = tuple((str(a), str(b)) for a, b in self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        by_id: dict[str, OpNode] = {}
        for n in nodes:
            by_id.setdefault(n.id, n)  # duplicates reported by validate()
        producers: dict[str, list[str]] = {n.id: [] for n in nodes}
        consumers: dict[str, list[str]] = {n.id: [] for n in nodes}
        for a, b in edges:
            if b in producers:
                producers[b].append(a)
            if a in consumers:
                consumers[a].append(b)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_producers", producers)
        object.__setattr__(self, "_consumers", consumers)
        object.__setattr__(
            self, "inputs", tuple(n.id for n in nodes if n.kind is OpKind.INPUT)
        )
        object.__setattr__(
            self, "outputs", tuple(n.id for n in nodes if n.kind is OpKind.OUTPUT)
        )

    @classmethod
    def of(cls, nodes: Iterable[OpNode], edges: Iterable[tuple[str, str]]) -> "ComputationGraph":
        return cls(tuple(nodes), tuple(tuple(e) for e in edges))

    def node(self, node_id: str) -> OpNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def producers(self, node_id: str) -> list[str]:
        return list(self._producers.get(node_id, ()))

    def consumers(self, node_id: str) -> list[str]:
        return list(self._consumers.get(node_id, ()))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    nodes: tuple[str, ...] = ()


class GraphBuilder:
    """Incremental constructor used by lowering and tests."""

    def __init__(self) -> None:
        self._nodes: list[OpNode] = []
        self._edges: list[tuple[str, str]] = []
        self._counter = 0

    def add(
        self,
        kind: OpKind,
        attrs: dict[str, Any] | None = None,
        inputs: Sequence[str] = (),
        *,
        id: str | None = None,
        input_shape: TensorShape | None = None,
    ) -> str:
        node_id = id if id is not None else f"n{self._counter}"
        self._counter += 1
        shape = input_shape
        self._nodes.append(OpNode(node_id, kind, dict(attrs or {}), shape, shape if kind is OpKind.INPUT else None))
        for src in inputs:
            self._edges.append((src, node_id))
        return node_id

    def build(self, infer: bool = True) -> ComputationGraph:
        g = ComputationGraph.of(self._nodes, self._edges)
        return infer_shapes(g) if infer else g


def _check_attr_values(node: OpNode) -> str | None:
    a = node.attrs
    positive = {
        OpKind.LINEAR: ("in_features", "out_features"),
        OpKind.CONV2D: ("in_channels", "out_channels", "kernel_size", "stride", "groups", "dilation"),
        OpKind.ATTENTION: ("num_heads", "embed_dim", "qkv_dim"),
        OpKind.EMBEDDING: ("num_features", "embed_dim"),
    }
    for key in positive.get(node.kind, ()):
        v = a.get(key)
        if not isinstance(v, int) or v < 1:
            return f"attribute {key!r} must be a positive integer, got {v!r}"
    if node.kind is OpKind.CONCAT:
        v = a.get("axis")
        if not isinstance(v, int) or v < 0:
            return f"attribute 'axis' must be a non-negative integer, got {v!r}"
    if node.kind is OpKind.CONV2D and "padding" in a:
        v = a["padding"]
        if v != "same" and not (isinstance(v, int) and v >= 0):
            return f"attribute 'padding' must be 'same' or a non-negative integer, got {v!r}"
    return None


def _infer_output(node: OpNode, in_shapes: list[TensorShape]) -> TensorShape:
    """Shape of ``node`` given producer shapes, or raise GraphError."""
    kind, a = node.kind, node.attrs

    def fail(why: str) -> GraphError:
        return GraphError(f"node {node.id!r} ({kind.value}): {why}")

    if kind is OpKind.INPUT:
        declared = node.input_shape or node.output_shape
        if declared is None:
            raise fail("input node has no declared shape")
        return declared
    if kind in _SINGLE_INPUT and len(in_shapes) != 1:
        raise fail(f"expects exactly 1 input, has {len(in_shapes)}")
    if kind in _MULTI_INPUT and len(in_shapes) < 2:
        raise fail(f"expects at least 2 inputs, has {len(in_shapes)}")

    if kind is OpKind.LINEAR:
        s = in_shapes[0]
        if s.rank not in (1, 2):
            raise fail(f"expects rank-1 or rank-2 input, got rank {s.rank}")
        if s.dims[-1] != a["in_features"]:
            raise fail(f"input width {s.dims[-1]} != in_features {a['in_features']}")
        return TensorShape(s.dims[:-1] + (a["out_features"],))

    if kind is OpKind.CONV2D:
        s = in_shapes[0]
        if s.rank != 3:
            raise fail(f"expects rank-3 input, got rank {s.rank}")
        c, h, w = s.dims
        if c != a["in_channels"]:
            raise fail(f"input channels {c} != in_channels {a['in_channels']}")
        g = a["groups"]
        if a["in_channels"] % g or a["out_channels"] % g:
            raise fail(f"channels not divisible by groups {g}")
        k, st, dil = a["kernel_size"], a["stride"], a["dilation"]
        pad = a.get("padding", "same")
        if pad == "same":
            oh, ow = -(-h // st), -(-w // st)
        else:
            eff = dil * (k - 1) + 1
            oh = (h + 2 * pad - eff) // st + 1
            ow = (w + 2 * pad - eff) // st + 1
        if oh < 1 or ow < 1:
            raise fail(f"kernel does not fit input {h}x{w}")
        return TensorShape((a["out_channels"], oh, ow))

    if kind in (OpKind.BATCHNORM, OpKind.LAYERNORM, OpKind.RELU, OpKind.GELU, OpKind.OUTPUT):
        return in_shapes[0]

    if kind is OpKind.ADD:
        first = in_shapes[0]
        if any(s != first for s in in_shapes[1:]):
            raise fail(f"operand shapes differ: {[s.dims for s in in_shapes]}")
        return first

    if kind is OpKind.CONCAT:
        axis = a["axis"]
        first = in_shapes[0]
        if axis >= first.rank:
            raise fail(f"axis {axis} out of range for rank {first.rank}")
        for s in in_shapes[1:]:
            if s.rank != first.rank:
                raise fail("operand ranks differ")
            for d in range(first.rank):
                if d != axis and s.dims[d] != first.dims[d]:
                    raise fail(f"non-axis dims differ at axis {d}")
        dims = list(first.dims)
        dims[axis] = sum(s.dims[axis] for s in in_shapes)
        return TensorShape(tuple(dims))

    if kind is OpKind.ATTENTION:
        s = in_shapes[0]
        if s.rank != 2:
            raise fail(f"expects rank-2 token input, got rank {s.rank}")
        if s.dims[1] != a["embed_dim"]:
            raise fail(f"token width {s.dims[1]} != embed_dim {a['embed_dim']}")
        if a["embed_dim"] % a["num_heads"]:
            raise fail(f"embed_dim {a['embed_dim']} not divisible by num_heads {a['num_heads']}")
        return s

    if kind is OpKind.EMBEDDING:
        s = in_shapes[0]
        if s.rank != 1:
            raise fail(f"expects rank-1 feature input, got rank {s.rank}")
        if s.dims[0] != a["num_features"]:
            raise fail(f"feature count {s.dims[0]} != num_features {a['num_features']}")
        # one token per feature plus an aggregation token
        return TensorShape((a["num_features"] + 1, a["embed_dim"]))

    raise fail("unhandled kind")


def topological_levels(graph: ComputationGraph) -> list[list[str]]:
    """Group node ids by longest-path depth from the graph sources.

    Standard in-degree-decrement BFS: the queue is seeded with every
    zero-in-degree node, and a node enters level k once all producers
    (the last of which sits at level k-1) were dequeued.  Raises on cycles.
    """
    in_degree = {n.id: 0 for n in graph.nodes}
    for _, b in graph.edges:
        if b in in_degree:
            in_degree[b] += 1
    queue = [n.id for n in graph.nodes if in_degree[n.id] == 0]
    levels: list[list[str]] = []
    seen = 0
    while queue:
        levels.append(queue)
        seen += len(queue)
        nxt: list[str] = []
        for cur in queue:
            for succ in graph.consumers(cur):
                in_degree[succ] -= 1
                if in_degree[succ] == 0:
                    nxt.append(succ)
        queue = nxt
    if seen != len(graph.nodes):
        stuck = sorted(i for i, d in in_degree.items() if d > 0)
        raise GraphError(f"graph contains a cycle through nodes {stuck}")
    return levels


def infer_shapes(graph: ComputationGraph) -> ComputationGraph:
    """Return a copy with every node's shapes filled in.

    Requires Input nodes to carry declared shapes.  Idempotent; raises
    GraphError naming the first unshapable node.
    """
    levels = topological_levels(graph)
    shapes: dict[str, TensorShape] = {}
    out_nodes: dict[str, OpNode] = {}
    for level in levels:
        for node_id in level:
            node = graph.node(node_id)
            in_shapes = [shapes[p] for p in graph.producers(node_id)]
            out = _infer_output(node, in_shapes)
            shapes[node_id] = out
            in_shape = in_shapes[0] if in_shapes else out
            out_nodes[node_id] = node.with_shapes(in_shape, out)
    return ComputationGraph.of((out_nodes[n.id] for n in graph.nodes), graph.edges)


def validate(graph: ComputationGraph) -> list[Violation]:
    """Check every structural invariant; violations are returned, not raised."""
    out: list[Violation] = []

    seen_ids: set[str] = set()
    for n in graph.nodes:
        if n.id in seen_ids:
            out.append(Violation("duplicate-node", f"node id {n.id!r} appears more than once", (n.id,)))
        seen_ids.add(n.id)

    seen_edges: set[tuple[str, str]] = set()
    for a, b in graph.edges:
        for end in (a, b):
            if end not in seen_ids:
                out.append(Violation("unknown-endpoint", f"edge ({a!r}, {b!r}) references missing node {end!r}", (end,)))
        if a == b:
            out.append(Violation("self-loop", f"edge ({a!r}, {b!r}) is a self-loop", (a,)))
        if (a, b) in seen_edges:
            out.append(Violation("duplicate-edge", f"edge ({a!r}, {b!r}) appears more than once", (a, b)))
        seen_edges.add((a, b))

    for n in graph.nodes:
        required, optional = ATTR_SCHEMA[n.kind]
        keys = set(n.attrs)
        missing = required - keys
        extra = keys - required - optional
        if missing:
            out.append(Violation("bad-attrs", f"node {n.id!r} missing attrs {sorted(missing)}", (n.id,)))
        if extra:
            out.append(Violation("bad-attrs", f"node {n.id!r} has unexpected attrs {sorted(extra)}", (n.id,)))
        if not missing:
            problem = _check_attr_values(n)
            if problem:
                out.append(Violation("bad-attrs", f"node {n.id!r}: {problem}", (n.id,)))

        n_in = len(graph.producers(n.id))
        if n.kind is OpKind.INPUT:
            if n_in:
                out.append(Violation("bad-arity", f"input node {n.id!r} has producers", (n.id,)))
            if n.input_shape is None and n.output_shape is None:
                out.append(Violation("shape-missing", f"input node {n.id!r} has no declared shape", (n.id,)))
        elif n.kind in _SINGLE_INPUT and n_in != 1:
            out.append(Violation("bad-arity", f"node {n.id!r} ({n.kind.value}) has {n_in} producers, expects 1", (n.id,)))
        elif n.kind in _MULTI_INPUT and n_in < 2:
            out.append(Violation("bad-arity", f"node {n.id!r} ({n.kind.value}) has {n_in} producers, expects >= 2", (n.id,)))
        if n.kind is OpKind.OUTPUT and graph.consumers(n.id):
            out.append(Violation("bad-arity", f"output node {n.id!r} has consumers", (n.id,)))

    if out and any(v.code in ("duplicate-node", "unknown-endpoint") for v in out):
        return out

    try:
        levels = topological_levels(graph)
    except GraphError as exc:
        out.append(Violation("cycle", str(exc)))
        return out

    # shape agreement, in topological order so producer shapes are trusted
    shapes: dict[str, TensorShape] = {}
    for level in levels:
        for node_id in level:
            node = graph.node(node_id)
            producer_ids = graph.producers(node_id)
            if any(p not in shapes for p in producer_ids):
                continue  # producer already reported
            in_shapes = [shapes[p] for p in producer_ids]
            try:
                expected = _infer_output(node, in_shapes)
            except GraphError as exc:
                out.append(Violation("shape-mismatch", str(exc), (node_id, *producer_ids)))
                continue
            shapes[node_id] = expected
            if node.output_shape is None:
                out.append(Violation("shape-missing", f"node {node_id!r} has no output_shape", (node_id,)))
            elif node.output_shape != expected:
                out.append(
                    Violation(
                        "shape-mismatch",
                        f"node {node_id!r} stores output_shape {node.output_shape.dims}, inferred {expected.dims}",
                        (node_id,),
                    )
                )

    reachable: set[str] = set(graph.inputs)
    frontier = list(graph.inputs)
    while frontier:
        cur = frontier.pop()
        for succ in graph.consumers(cur):
            if succ not in reachable:
                reachable.add(succ)
                frontier.append(succ)
    co_reachable: set[str] = set(graph.outputs)
    frontier = list(graph.outputs)
    while frontier:
        cur = frontier.pop()
        for pred in graph.producers(cur):
            if pred not in co_reachable:
                co_reachable.add(pred)
                frontier.append(pred)
    for n in graph.nodes:
        if n.kind is not OpKind.INPUT and n.id not in reachable:
            out.append(Violation("unreachable", f"node {n.id!r} is not reachable from any input", (n.id,)))
        if n.id not in co_reachable:
            out.append(Violation("dead-end", f"node {n.id!r} does not reach any output", (n.id,)))
    return out


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_TOP_KEYS = {"nodes", "edges"}
_NODE_KEYS = {"id", "kind", "attrs", "input_shape", "output_shape"}


def graph_to_dict(graph: ComputationGraph) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "attrs": dict(n.attrs),
                "input_shape": n.input_shape.to_json() if n.input_shape else None,
                "output_shape": n.output_shape.to_json() if n.output_shape else None,
            }
            for n in graph.nodes
        ],
        "edges": [[a, b] for a, b in graph.edges],
    }


def graph_from_dict(data: dict) -> ComputationGraph:
    if not isinstance(data, dict):
        raise GraphError("graph document must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise GraphError(f"unknown top-level keys in graph document: {sorted(unknown)}")
    if "nodes" not in data or "edges" not in data:
        raise GraphError("graph document requires 'nodes' and 'edges'")
    nodes = []
    for i, nd in enumerate(data["nodes"]):
        if not isinstance(nd, dict):
            raise GraphError(f"node #{i} is not an object")
        unknown = set(nd) - _NODE_KEYS
        if unknown:
            raise GraphError(f"node #{i} has unknown keys {sorted(unknown)}")
        if "id" not in nd or "kind" not in nd:
            raise GraphError(f"node #{i} requires 'id' and 'kind'")
        try:
            kind = OpKind(nd["kind"])
        except ValueError:
            raise GraphError(f"node {nd.get('id')!r}: unknown kind {nd['kind']!r}") from None
        in_s = nd.get("input_shape")
        out_s = nd.get("output_shape")
        nodes.append(
            OpNode(
                str(nd["id"]),
                kind,
                dict(nd.get("attrs") or {}),
                TensorShape.from_json(in_s) if in_s else None,
                TensorShape.from_json(out_s) if out_s else None,
            )
        )
    edges = []
    for e in data["edges"]:
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise GraphError(f"edge {e!r} must be a [from, to] pair")
        edges.append((str(e[0]), str(e[1])))
    return ComputationGraph.of(nodes, edges)


def save_graph(graph: ComputationGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_graph(path: str) -> ComputationGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_dict(json.load(fh))
