"""Kernel detection: operator fusion plus parallel-convolution merging.

Two passes turn a computation graph into an execution-kernel plan:

1. ``detect_kernels`` greedily fuses operator chains that match backend
   fusion rules (longest pattern first, in topological order).  A node
   may extend a chain only when it is the sole consumer of the chain
   tail, so fan-out always breaks fusion.
2. ``merge_parallel`` walks the kernel DAG level by level and replaces
   each group of convolution kernels that share label, signature
   (kernel_size, stride, groups, dilation) and input with one generated
   kernel whose filter count is the sum over the group, up to the
   platform's parallel-kernel limit.

Bookkeeping entries in ``Kernel.config`` use a leading underscore and
are ignored when building cost-table lookup keys.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .errors import KenasError
from .graph import ComputationGraph, OpKind, topological_levels

# kernels that only mark graph boundaries or memory layout; the cost
# model assigns them no energy (backends write concatenated outputs in
# place, so a bare Concat never executes as a compute kernel)
NON_COMPUTE_LABELS = frozenset({"Input", "Output", "Concat"})

_SIGNATURE_KEYS = ("kernel_size", "stride", "groups", "dilation")


@dataclass(frozen=True)
class FusionRule:
    pattern: tuple[OpKind, ...]
    name: str

    def __post_init__(self) -> None:
        if len(self.pattern) < 2:
            raise KenasError(f"fusion rule {self.name!r} needs a pattern of length >= 2")


@dataclass
class Kernel:
    """One unit of device execution: a fused chain or a single operator."""

    id: str
    label: str
    member_node_ids: tuple[str, ...]
    signature: tuple[int, int, int, int] | None
    config: dict[str, Any]

    @property
    def is_conv(self) -> bool:
        return self.signature is not None

    @property
    def is_compute(self) -> bool:
        return self.label not in NON_COMPUTE_LABELS

    @property
    def filters(self) -> int | None:
        return self.config.get("filters")

    def clone(self) -> "Kernel":
        return Kernel(self.id, self.label, tuple(self.member_node_ids), self.signature, copy.deepcopy(self.config))


@dataclass
class MergeRecord:
    merged_kernel_ids: tuple[str, ...]
    generated_kernel: Kernel
    summed_filters: int


@dataclass
class KernelPlan:
    kernels: list[Kernel]
    kernel_edges: list[tuple[str, str]]
    merge_log: list[MergeRecord] = field(default_factory=list)

    def kernel(self, kernel_id: str) -> Kernel:
        for k in self.kernels:
            if k.id == kernel_id:
                return k
        raise KenasError(f"unknown kernel id {kernel_id!r}")

    def producers_of(self, kernel_id: str) -> list[str]:
        return [a for a, b in self.kernel_edges if b == kernel_id]

    def consumers_of(self, kernel_id: str) -> list[str]:
        return [b for a, b in self.kernel_edges if a == kernel_id]

    def compute_kernels(self) -> list[Kernel]:
        return [k for k in self.kernels if k.is_compute]


def load_rules(path: str) -> list[FusionRule]:
    """Parse a rules file: one ``kind+kind+...`` pattern per line, '#' comments."""
    by_name: dict[str, OpKind] = {k.value.lower(): k for k in OpKind}
    rules: list[FusionRule] = []
    seen: set[tuple[OpKind, ...]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip().lower() for p in line.split("+")]
            if len(parts) < 2 or any(not p for p in parts):
                raise KenasError(f"{path}:{lineno}: malformed rule {raw.strip()!r}")
            pattern = []
            for p in parts:
                if p not in by_name:
                    raise KenasError(f"{path}:{lineno}: unknown op kind {p!r}")
                pattern.append(by_name[p])
            pattern = tuple(pattern)
            if pattern in seen:
                raise KenasError(f"{path}:{lineno}: duplicate rule {line!r}")
            seen.add(pattern)
            rules.append(FusionRule(pattern, "+".join(parts)))
    return rules


def _output_elements(graph: ComputationGraph, node_id: str) -> int:
    shape = graph.node(node_id).output_shape
    if shape is None:
        raise KenasError(f"node {node_id!r} has no output_shape; run infer_shapes first")
    return shape.elements()


def _kernel_config(graph: ComputationGraph, members: Sequence[str]) -> dict[str, Any]:
    """Cost-lookup configuration, derived from the chain's root node."""
    root = graph.node(members[0])
    a = root.attrs
    if root.kind is OpKind.CONV2D:
        (c, h, w) = root.input_shape.dims
        (f, oh, ow) = root.output_shape.dims
        return {
            "in_channels": a["in_channels"],
            "filters": a["out_channels"],
            "kernel_size": a["kernel_size"],
            "stride": a["stride"],
            "groups": a["groups"],
            "dilation": a["dilation"],
            "in_height": h,
            "in_width": w,
            "out_height": oh,
            "out_width": ow,
        }
    if root.kind is OpKind.LINEAR:
        cfg = {"in_features": a["in_features"], "out_features": a["out_features"]}
        if root.input_shape is not None and root.input_shape.rank == 2:
            cfg["tokens"] = root.input_shape.dims[0]
        return cfg
    if root.kind is OpKind.ATTENTION:
        return {
            "num_heads": a["num_heads"],
            "embed_dim": a["embed_dim"],
            "qkv_dim": a["qkv_dim"],
            "tokens": root.input_shape.dims[0],
        }
    if root.kind is OpKind.EMBEDDING:
        return {"num_features": a["num_features"], "embed_dim": a["embed_dim"]}
    return {"elements": _output_elements(graph, root.id)}


def detect_kernels(graph: ComputationGraph, rules: Iterable[FusionRule]) -> KernelPlan:
    """Cover every node with kernels via greedy longest-match fusion.

    Nodes are visited in topological (BFS level) order.  At each
    unassigned node the longest rule whose pattern starts there is
    matched down the sole-consumer chain; leftovers become single-node
    kernels.  Every node lands in exactly one kernel.
    """
    ordered = [nid for level in topological_levels(graph) for nid in level]
    rule_list = sorted(rules, key=lambda r: -len(r.pattern))
    assigned: set[str] = set()
    kernels: list[Kernel] = []
    kernel_of: dict[str, str] = {}

    for node_id in ordered:
        if node_id in assigned:
            continue
        node = graph.node(node_id)
        members = [node_id]
        label = node.kind.value
        for rule in rule_list:
            if rule.pattern[0] is not node.kind:
                continue
            chain = [node_id]
            ok = True
            for want in rule.pattern[1:]:
                tail = chain[-1]
                nxt = graph.consumers(tail)
                if len(nxt) != 1:
                    ok = False  # fan-out (or dead end) blocks fusion
                    break
                cand = nxt[0]
                if cand in assigned or graph.node(cand).kind is not want:
                    ok = False
                    break
                chain.append(cand)
            if ok:
                members = chain
                label = rule.name
                break
        kid = f"k{len(kernels)}"
        signature = None
        if node.kind is OpKind.CONV2D:
            signature = tuple(node.attrs[k] for k in _SIGNATURE_KEYS)
        kernels.append(Kernel(kid, label, tuple(members), signature, _kernel_config(graph, members)))
        for m in members:
            assigned.add(m)
            kernel_of[m] = kid

    edges: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for a, b in graph.edges:
        ka, kb = kernel_of[a], kernel_of[b]
        if ka != kb and (ka, kb) not in seen:
            seen.add((ka, kb))
            edges.append((ka, kb))
    return KernelPlan(kernels, edges)


def _kernel_levels(plan: KernelPlan) -> list[list[str]]:
    in_degree = {k.id: 0 for k in plan.kernels}
    consumers: dict[str, list[str]] = {k.id: [] for k in plan.kernels}
    for a, b in plan.kernel_edges:
        in_degree[b] += 1
        consumers[a].append(b)
    queue = [k.id for k in plan.kernels if in_degree[k.id] == 0]
    levels = []
    seen = 0
    while queue:
        levels.append(queue)
        seen += len(queue)
        nxt = []
        for cur in queue:
            for succ in consumers[cur]:
                in_degree[succ] -= 1
                if in_degree[succ] == 0:
                    nxt.append(succ)
        queue = nxt
    if seen != len(plan.kernels):
        raise KenasError("kernel dependency graph contains a cycle")
    return levels


def merge_parallel(plan: KernelPlan, max_parallel: int) -> KernelPlan:
    """Merge same-signature parallel convolution kernels level by level.

    Within one dependency level, convolution kernels that share label,
    signature and input are grouped; each group is split into chunks of
    at most ``max_parallel`` members, and every chunk of size >= 2 is
    replaced by one generated kernel whose ``filters`` is the sum over
    its members.  Consumers are rewired to read slices of the generated
    output (recorded under ``_input_slices`` / ``_slices``).  Generated
    kernels are never merged again, so the pass is idempotent.
    """
    if not isinstance(max_parallel, int) or max_parallel < 1:
        raise KenasError(f"max_parallel must be a positive integer, got {max_parallel!r}")

    levels = _kernel_levels(plan)
    kernels = [k.clone() for k in plan.kernels]
    by_id = {k.id: k for k in kernels}
    edges = list(plan.kernel_edges)
    merge_log = list(plan.merge_log)
    alias: dict[str, str] = {}  # merged member id -> generated id

    def resolve(kid: str) -> str:
        while kid in alias:
            kid = alias[kid]
        return kid

    def input_key(kid: str) -> frozenset:
        """Producers of ``kid`` including the exact slice consumed."""
        desc = []
        for a, b in edges:
            if resolve(b) != kid:
                continue
            src = resolve(a)
            producer = by_id[src]
            slices = producer.config.get("_slices", {})
            sl = tuple(slices[a]) if a in slices else None
            desc.append((src, sl))
        return frozenset(desc)

    gen_counter = sum(1 for k in kernels if "_merged_from" in k.config)
    for level in levels:
        candidates = [
            by_id[kid]
            for kid in level
            if by_id[kid].is_conv and "_merged_from" not in by_id[kid].config
        ]
        groups: dict[tuple, list[Kernel]] = {}
        order: list[tuple] = []
        for k in candidates:
            key = (k.label, k.signature, input_key(k.id))
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(k)
        for key in order:
            group = groups[key]
            for start in range(0, len(group), max_parallel):
                chunk = group[start : start + max_parallel]
                if len(chunk) < 2:
                    continue
                gen_id = f"g{gen_counter}"
                gen_counter += 1
                summed = sum(k.config["filters"] for k in chunk)
                slices: dict[str, list[int]] = {}
                offset = 0
                for k in chunk:
                    slices[k.id] = [offset, offset + k.config["filters"]]
                    offset += k.config["filters"]
                config = copy.deepcopy(chunk[0].config)
                config["filters"] = summed
                config["_merged_from"] = [k.id for k in chunk]
                config["_slices"] = slices
                generated = Kernel(
                    gen_id,
                    chunk[0].label,
                    tuple(m for k in chunk for m in k.member_node_ids),
                    chunk[0].signature,
                    config,
                )
                merge_log.append(MergeRecord(tuple(k.id for k in chunk), generated, summed))

                chunk_ids = {k.id for k in chunk}
                first = next(i for i, k in enumerate(kernels) if k.id in chunk_ids)
                kernels = [k for k in kernels if k.id not in chunk_ids]
                kernels.insert(first, generated)
                by_id = {k.id: k for k in kernels}
                for k in chunk:
                    alias[k.id] = gen_id
                # record slice consumption on downstream kernels
                for a, b in edges:
                    if a in chunk_ids and resolve(b) in by_id:
                        consumer = by_id[resolve(b)]
                        rec = consumer.config.setdefault("_input_slices", {})
                        rec.setdefault(gen_id, []).append(slices[a])

    new_edges: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for a, b in edges:
        ra, rb = resolve(a), resolve(b)
        if ra != rb and (ra, rb) not in seen:
            seen.add((ra, rb))
            new_edges.append((ra, rb))
    return KernelPlan(kernels, new_edges, merge_log)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def _kernel_to_dict(k: Kernel) -> dict:
    return {
        "id": k.id,
        "label": k.label,
        "member_node_ids": list(k.member_node_ids),
        "signature": list(k.signature) if k.signature else None,
        "config": dict(k.config),
    }


def _kernel_from_dict(d: dict) -> Kernel:
    sig = d.get("signature")
    return Kernel(
        str(d["id"]),
        str(d["label"]),
        tuple(d["member_node_ids"]),
        tuple(sig) if sig else None,
        dict(d["config"]),
    )


def plan_to_dict(plan: KernelPlan) -> dict:
    return {
        "kernels": [_kernel_to_dict(k) for k in plan.kernels],
        "kernel_edges": [[a, b] for a, b in plan.kernel_edges],
        "merge_log": [
            {
                "merged_kernel_ids": list(r.merged_kernel_ids),
                "generated_kernel": _kernel_to_dict(r.generated_kernel),
                "summed_filters": r.summed_filters,
            }
            for r in plan.merge_log
        ],
    }


def plan_from_dict(data: dict) -> KernelPlan:
    return KernelPlan(
        [_kernel_from_dict(k) for k in data["kernels"]],
        [(str(a), str(b)) for a, b in data["kernel_edges"]],
        [
            MergeRecord(
                tuple(r["merged_kernel_ids"]),
                _kernel_from_dict(r["generated_kernel"]),
                int(r["summed_filters"]),
            )
            for r in data.get("merge_log", [])
        ],
    )
