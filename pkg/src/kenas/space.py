"""Tabular-network search spaces: enumeration, sampling and lowering.

Three families are built in (mlp, resnet, fttransformer), each defined
by a depth range plus per-block (and optionally global) choice ranges.
An ArchitectureSpec fixes every choice and lowers to a ComputationGraph.

Candidate counting supports two conventions: ``paper`` multiplies the
per-block choice product out to the maximum depth (the headline space
sizes), ``enumerative`` sums over the depth range (the number of
distinct specs, which is what encode/decode and brute force iterate).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import KenasError
from .graph import ComputationGraph, GraphBuilder, OpKind, TensorShape

FAMILIES = ("mlp", "resnet", "fttransformer")


@dataclass(frozen=True)
class ChoiceRange:
    """Inclusive arithmetic progression low, low+step, ..., high."""

    low: float | int
    high: float | int
    step: float | int

    def __post_init__(self) -> None:
        if self.step <= 0:
            raise KenasError(f"step must be > 0, got {self.step}")
        if self.high < self.low:
            raise KenasError(f"high {self.high} < low {self.low}")
        span = (self.high - self.low) / self.step
        if abs(span - round(span)) > 1e-9:
            raise KenasError(f"(high - low) must be a multiple of step: {self}")

    def __len__(self) -> int:
        return int(round((self.high - self.low) / self.step)) + 1

    def values(self) -> list:
        if all(isinstance(v, int) for v in (self.low, self.high, self.step)):
            return [self.low + i * self.step for i in range(len(self))]
        return [float(self.low + i * self.step) for i in range(len(self))]

    def value_at(self, index: int):
        if not 0 <= index < len(self):
            raise KenasError(f"index {index} out of range for {self}")
        return self.values()[index]

    def index_of(self, value) -> int:
        i = round((value - self.low) / self.step)
        if 0 <= i < len(self) and abs(self.low + i * self.step - value) < 1e-9:
            return int(i)
        raise KenasError(f"value {value!r} not in range {self}")

    def to_json(self) -> list:
        return [self.low, self.high, self.step]

    @classmethod
    def from_json(cls, data: Sequence) -> "ChoiceRange":
        if len(data) != 3:
            raise KenasError(f"range must be [low, high, step], got {data!r}")
        vals = [int(v) if float(v).is_integer() else float(v) for v in data]
        return cls(*vals)


@dataclass(frozen=True)
class SpaceDef:
    family: str
    input_dim: int
    output_dim: int
    depth: ChoiceRange
    global_choices: dict[str, ChoiceRange]
    block_choices: dict[str, ChoiceRange]

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise KenasError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise KenasError("input_dim and output_dim must be positive")

    @property
    def max_depth(self) -> int:
        return int(self.depth.values()[-1])


@dataclass(frozen=True)
class ArchitectureSpec:
    """One point of a search space: every choice pinned."""

    family: str
    depth: int
    global_choices: dict[str, Any]
    block_choices: tuple[dict[str, Any], ...]
    input_dim: int
    output_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_choices", tuple(dict(b) for b in self.block_choices))
        if len(self.block_choices) != self.depth:
            raise KenasError(
                f"spec has {len(self.block_choices)} block choice maps for depth {self.depth}"
            )


def mlp_space(input_dim: int, output_dim: int = 1, *, depth=(1, 11, 1), hidden=(16, 512, 16)) -> SpaceDef:
    return SpaceDef(
        "mlp",
        input_dim,
        output_dim,
        ChoiceRange(*depth),
        {},
        {"hidden_dim": ChoiceRange(*hidden)},
    )


def resnet_space(
    input_dim: int,
    output_dim: int = 1,
    *,
    depth=(1, 11, 1),
    hidden=(16, 512, 16),
    backbone=(16, 512, 16),
) -> SpaceDef:
    return SpaceDef(
        "resnet",
        input_dim,
        output_dim,
        ChoiceRange(*depth),
        {"backbone_dim": ChoiceRange(*backbone)},
        {"hidden_dim": ChoiceRange(*hidden)},
    )


def fttransformer_space(
    input_dim: int,
    output_dim: int = 1,
    *,
    depth=(1, 8, 1),
    num_heads=(2, 8, 1),
    embed_dim=(16, 256, 16),
    qkv_dim=(16, 256, 16),
    mlp_ratio=(1.0, 4.0, 0.5),
) -> SpaceDef:
    return SpaceDef(
        "fttransformer",
        input_dim,
        output_dim,
        ChoiceRange(*depth),
        {},
        {
            "num_heads": ChoiceRange(*num_heads),
            "embed_dim": ChoiceRange(*embed_dim),
            "qkv_dim": ChoiceRange(*qkv_dim),
            "mlp_ratio": ChoiceRange(*mlp_ratio),
        },
    )


# ---------------------------------------------------------------------------
# Counting, encoding, enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodingSlot:
    name: str
    kind: str  # depth | global | block
    block_index: int | None
    choice_name: str | None
    cardinality: int


def encoding_slots(space: SpaceDef) -> list[EncodingSlot]:
    """Fixed-length decision layout: depth, globals, then block slots."""
    slots = [EncodingSlot("depth", "depth", None, None, len(space.depth))]
    for name, cr in space.global_choices.items():
        slots.append(EncodingSlot(f"global:{name}", "global", None, name, len(cr)))
    for i in range(space.max_depth):
        for name, cr in space.block_choices.items():
            slots.append(EncodingSlot(f"block{i}:{name}", "block", i, name, len(cr)))
    return slots


def candidate_count(space: SpaceDef, convention: str = "paper") -> int:
    block_product = math.prod(len(cr) for cr in space.block_choices.values())
    global_product = math.prod(len(cr) for cr in space.global_choices.values())
    if convention == "paper":
        return block_product ** space.max_depth * global_product
    if convention == "enumerative":
        return sum(global_product * block_product**d for d in space.depth.values())
    raise KenasError(f"unknown counting convention {convention!r}")


def encode(space: SpaceDef, spec: ArchitectureSpec) -> list[int]:
    """Spec -> index vector over encoding_slots; unused block slots are 0."""
    if spec.family != space.family:
        raise KenasError(f"spec family {spec.family!r} != space family {space.family!r}")
    vector = [space.depth.index_of(spec.depth)]
    for name, cr in space.global_choices.items():
        vector.append(cr.index_of(spec.global_choices[name]))
    for i in range(space.max_depth):
        for name, cr in space.block_choices.items():
            vector.append(cr.index_of(spec.block_choices[i][name]) if i < spec.depth else 0)
    return vector


def decode(space: SpaceDef, vector: Sequence[int]) -> ArchitectureSpec:
    """Inverse of encode; rejects out-of-range or non-canonical vectors."""
    slots = encoding_slots(space)
    if len(vector) != len(slots):
        raise KenasError(f"encoding length {len(vector)} != expected {len(slots)}")
    for slot, idx in zip(slots, vector):
        if not 0 <= idx < slot.cardinality:
            raise KenasError(f"slot {slot.name!r}: index {idx} out of range [0, {slot.cardinality})")
    depth = int(space.depth.value_at(vector[0]))
    pos = 1
    global_choices = {}
    for name, cr in space.global_choices.items():
        global_choices[name] = cr.value_at(vector[pos])
        pos += 1
    blocks = []
    for i in range(space.max_depth):
        choices = {}
        for name, cr in space.block_choices.items():
            idx = vector[pos]
            pos += 1
            if i < depth:
                choices[name] = cr.value_at(idx)
            elif idx != 0:
                raise KenasError(f"slot block{i}:{name} beyond depth {depth} must be 0, got {idx}")
        if i < depth:
            blocks.append(choices)
    return ArchitectureSpec(space.family, depth, global_choices, tuple(blocks), space.input_dim, space.output_dim)


def enumerate_specs(space: SpaceDef) -> Iterator[ArchitectureSpec]:
    """All specs in encoding order (depth-major, then slot-lexicographic)."""
    n_block_names = list(space.block_choices)
    for d_idx in range(len(space.depth)):
        depth = int(space.depth.value_at(d_idx))
        used = [range(len(cr)) for cr in space.global_choices.values()]
        used += [range(len(space.block_choices[name])) for _ in range(depth) for name in n_block_names]
        tail_zeros = [0] * ((space.max_depth - depth) * len(n_block_names))
        for combo in itertools.product(*used):
            yield decode(space, [d_idx, *combo, *tail_zeros])


def is_valid_spec(space: SpaceDef, spec: ArchitectureSpec) -> bool:
    """Range membership plus family structural constraints."""
    try:
        encode(space, spec)
    except KenasError:
        return False
    if spec.family == "fttransformer":
        for block in spec.block_choices:
            if block["embed_dim"] % block["num_heads"]:
                return False
    return True


def _draw_block(space: SpaceDef, rng: np.random.Generator) -> dict[str, Any]:
    for _ in range(1000):
        block = {
            name: cr.value_at(int(rng.integers(len(cr))))
            for name, cr in space.block_choices.items()
        }
        if space.family != "fttransformer" or block["embed_dim"] % block["num_heads"] == 0:
            return block
    raise KenasError("could not draw a block satisfying the width/head constraint")


def sample_uniform(space: SpaceDef, rng: np.random.Generator) -> ArchitectureSpec:
    """Depth uniform over its range, every choice uniform over its range.

    fttransformer blocks are redrawn until embed_dim is divisible by
    num_heads.
    """
    depth = int(space.depth.value_at(int(rng.integers(len(space.depth)))))
    global_choices = {
        name: cr.value_at(int(rng.integers(len(cr)))) for name, cr in space.global_choices.items()
    }
    blocks = tuple(_draw_block(space, rng) for _ in range(depth))
    return ArchitectureSpec(space.family, depth, global_choices, blocks, space.input_dim, space.output_dim)


# ---------------------------------------------------------------------------
# Lowering to computation graphs
# ---------------------------------------------------------------------------


def _lower_mlp(spec: ArchitectureSpec) -> ComputationGraph:
    b = GraphBuilder()
    x = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((spec.input_dim,)))
    width = spec.input_dim
    for i, block in enumerate(spec.block_choices):
        hidden = block["hidden_dim"]
        lin = b.add(OpKind.LINEAR, {"in_features": width, "out_features": hidden}, [x], id=f"block{i}_linear")
        x = b.add(OpKind.RELU, {}, [lin], id=f"block{i}_relu")
        width = hidden
    head = b.add(OpKind.LINEAR, {"in_features": width, "out_features": spec.output_dim}, [x], id="head")
    b.add(OpKind.OUTPUT, {}, [head], id="output")
    return b.build()


def _lower_resnet(spec: ArchitectureSpec) -> ComputationGraph:
    backbone = spec.global_choices["backbone_dim"]
    b = GraphBuilder()
    x = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((spec.input_dim,)))
    x = b.add(
        OpKind.LINEAR, {"in_features": spec.input_dim, "out_features": backbone}, [x], id="stem"
    )
    for i, block in enumerate(spec.block_choices):
        hidden = block["hidden_dim"]
        lin1 = b.add(
            OpKind.LINEAR, {"in_features": backbone, "out_features": hidden}, [x], id=f"block{i}_linear1"
        )
        act = b.add(OpKind.RELU, {}, [lin1], id=f"block{i}_relu")
        lin2 = b.add(
            OpKind.LINEAR, {"in_features": hidden, "out_features": backbone}, [act], id=f"block{i}_linear2"
        )
        x = b.add(OpKind.ADD, {}, [x, lin2], id=f"block{i}_add")
    head = b.add(
        OpKind.LINEAR, {"in_features": backbone, "out_features": spec.output_dim}, [x], id="head"
    )
    b.add(OpKind.OUTPUT, {}, [head], id="output")
    return b.build()


def _lower_fttransformer(spec: ArchitectureSpec) -> ComputationGraph:
    b = GraphBuilder()
    x = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((spec.input_dim,)))
    width = spec.block_choices[0]["embed_dim"]
    x = b.add(
        OpKind.EMBEDDING,
        {"num_features": spec.input_dim, "embed_dim": width},
        [x],
        id="tokenizer",
    )
    for i, block in enumerate(spec.block_choices):
        embed = block["embed_dim"]
        if embed != width:
            # residual blocks need a uniform token width; adapt between blocks
            x = b.add(
                OpKind.LINEAR, {"in_features": width, "out_features": embed}, [x], id=f"block{i}_proj"
            )
            width = embed
        att = b.add(
            OpKind.ATTENTION,
            {"num_heads": block["num_heads"], "embed_dim": embed, "qkv_dim": block["qkv_dim"]},
            [x],
            id=f"block{i}_attention",
        )
        x = b.add(OpKind.ADD, {}, [x, att], id=f"block{i}_skip1")
        mlp_dim = int(embed * block["mlp_ratio"])
        ff1 = b.add(
            OpKind.LINEAR, {"in_features": embed, "out_features": mlp_dim}, [x], id=f"block{i}_ffn1"
        )
        act = b.add(OpKind.GELU, {}, [ff1], id=f"block{i}_gelu")
        ff2 = b.add(
            OpKind.LINEAR, {"in_features": mlp_dim, "out_features": embed}, [act], id=f"block{i}_ffn2"
        )
        x = b.add(OpKind.ADD, {}, [x, ff2], id=f"block{i}_skip2")
    head = b.add(
        OpKind.LINEAR, {"in_features": width, "out_features": spec.output_dim}, [x], id="head"
    )
    b.add(OpKind.OUTPUT, {}, [head], id="output")
    return b.build()


def lower(spec: ArchitectureSpec) -> ComputationGraph:
    """Build the inference graph for a spec, with all shapes inferred."""
    if spec.family == "mlp":
        return _lower_mlp(spec)
    if spec.family == "resnet":
        return _lower_resnet(spec)
    if spec.family == "fttransformer":
        return _lower_fttransformer(spec)
    raise KenasError(f"cannot lower family {spec.family!r}")


# ---------------------------------------------------------------------------
# JSON files
# ---------------------------------------------------------------------------


def space_to_dict(space: SpaceDef) -> dict:
    return {
        "family": space.family,
        "input_dim": space.input_dim,
        "output_dim": space.output_dim,
        "depth": space.depth.to_json(),
        "global_choices": {k: v.to_json() for k, v in space.global_choices.items()},
        "block_choices": {k: v.to_json() for k, v in space.block_choices.items()},
    }


def space_from_dict(data: dict) -> SpaceDef:
    """Build a space from JSON: family plus optional range overrides."""
    try:
        family = data["family"]
        input_dim = int(data["input_dim"])
    except KeyError as exc:
        raise KenasError(f"space document missing key {exc}") from None
    output_dim = int(data.get("output_dim", 1))
    builders = {
        "mlp": mlp_space,
        "resnet": resnet_space,
        "fttransformer": fttransformer_space,
    }
    if family not in builders:
        raise KenasError(f"unknown family {family!r}")
    base = builders[family](input_dim, output_dim)
    depth = ChoiceRange.from_json(data["depth"]) if "depth" in data else base.depth
    global_choices = dict(base.global_choices)
    for name, rng in (data.get("global_choices") or {}).items():
        if name not in global_choices:
            raise KenasError(f"family {family!r} has no global choice {name!r}")
        global_choices[name] = ChoiceRange.from_json(rng)
    block_choices = dict(base.block_choices)
    for name, rng in (data.get("block_choices") or {}).items():
        if name not in block_choices:
            raise KenasError(f"family {family!r} has no block choice {name!r}")
        block_choices[name] = ChoiceRange.from_json(rng)
    return SpaceDef(family, input_dim, output_dim, depth, global_choices, block_choices)


def spec_to_dict(spec: ArchitectureSpec) -> dict:
    return {
        "family": spec.family,
        "depth": spec.depth,
        "global_choices": dict(spec.global_choices),
        "block_choices": [dict(b) for b in spec.block_choices],
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
    }


def spec_from_dict(data: dict) -> ArchitectureSpec:
    try:
        return ArchitectureSpec(
            str(data["family"]),
            int(data["depth"]),
            dict(data["global_choices"]),
            tuple(dict(b) for b in data["block_choices"]),
            int(data["input_dim"]),
            int(data["output_dim"]),
        )
    except KeyError as exc:
        raise KenasError(f"spec document missing key {exc}") from None


def load_space(path: str) -> SpaceDef:
    with open(path, "r", encoding="utf-8") as fh:
        return space_from_dict(json.load(fh))


def save_space(space: SpaceDef, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space_to_dict(space), fh, indent=2, sort_keys=True)
        fh.write("\n")
