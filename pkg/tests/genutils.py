"""Shared graph builders, random generators and reference oracles for tests."""

from __future__ import annotations

import numpy as np

from kenas.graph import ComputationGraph, GraphBuilder, OpKind, TensorShape
from kenas.supernet import Supernet

CONV_BASE = {"groups": 1, "dilation": 1, "stride": 1}


def conv_attrs(in_ch: int, filters: int, k: int = 3, stride: int = 1, groups: int = 1, dilation: int = 1) -> dict:
    return {
        "in_channels": in_ch,
        "out_channels": filters,
        "kernel_size": k,
        "stride": stride,
        "groups": groups,
        "dilation": dilation,
    }


def linear_chain(widths: list[int]) -> ComputationGraph:
    """Input -> Linear(widths[0] -> widths[1]) -> ... -> Output."""
    b = GraphBuilder()
    node = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((widths[0],)))
    for i, (w_in, w_out) in enumerate(zip(widths, widths[1:])):
        node = b.add(OpKind.LINEAR, {"in_features": w_in, "out_features": w_out}, [node], id=f"lin{i}")
    b.add(OpKind.OUTPUT, {}, [node], id="output")
    return b.build()


def branch_conv_graph(k: int, filters: int = 16, in_ch: int = 8, spatial: int = 16, kernel: int = 3) -> ComputationGraph:
    """One input fanning out to k identical conv branches joined by concat."""
    b = GraphBuilder()
    inp = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((in_ch, spatial, spatial)))
    tails = [
        b.add(OpKind.CONV2D, conv_attrs(in_ch, filters, kernel), [inp], id=f"conv{i}")
        for i in range(k)
    ]
    cat = b.add(OpKind.CONCAT, {"axis": 0}, tails, id="concat")
    b.add(OpKind.OUTPUT, {}, [cat], id="output")
    return b.build()


def merged_conv_graph(total_filters: int, in_ch: int = 8, spatial: int = 16, kernel: int = 3) -> ComputationGraph:
    """The hand-merged counterpart of branch_conv_graph: one wide conv."""
    b = GraphBuilder()
    inp = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((in_ch, spatial, spatial)))
    conv = b.add(OpKind.CONV2D, conv_attrs(in_ch, total_filters, kernel), [inp], id="conv")
    b.add(OpKind.OUTPUT, {}, [conv], id="output")
    return b.build()


def inception_block(in_ch: int = 16, spatial: int = 8) -> ComputationGraph:
    """Four conv branch heads off one input; two tails of unequal kernel size."""
    b = GraphBuilder()
    inp = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((in_ch, spatial, spatial)))
    h1 = b.add(OpKind.CONV2D, conv_attrs(in_ch, 8, 1), [inp], id="branch1_head")
    h2 = b.add(OpKind.CONV2D, conv_attrs(in_ch, 12, 1), [inp], id="branch2_head")
    h3 = b.add(OpKind.CONV2D, conv_attrs(in_ch, 10, 1), [inp], id="branch3_head")
    h4 = b.add(OpKind.CONV2D, conv_attrs(in_ch, 6, 1), [inp], id="branch4_head")
    t2 = b.add(OpKind.CONV2D, conv_attrs(12, 16, 3), [h2], id="branch2_tail")
    t3 = b.add(OpKind.CONV2D, conv_attrs(10, 16, 5), [h3], id="branch3_tail")
    cat = b.add(OpKind.CONCAT, {"axis": 0}, [h1, t2, t3, h4], id="concat")
    b.add(OpKind.OUTPUT, {}, [cat], id="output")
    return b.build()


_SIGNATURE_POOL = [(1, 1, 1, 1), (3, 1, 1, 1), (5, 1, 1, 1), (3, 1, 1, 2)]


def random_conv_dag(rng: np.random.Generator) -> ComputationGraph:
    """Inception-style DAG: branch groups with mixed signatures, chains, concats.

    All convolutions keep stride 1 with same-padding so any set of
    branch outputs concatenates cleanly.
    """
    channels = int(rng.choice([4, 8, 16]))
    spatial = int(rng.choice([6, 8]))
    b = GraphBuilder()
    node = b.add(OpKind.INPUT, id="input", input_shape=TensorShape((channels, spatial, spatial)))
    n = 0
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.65:
            k = int(rng.integers(2, 7))
            shared_sig = rng.random() < 0.5
            sig0 = _SIGNATURE_POOL[int(rng.integers(len(_SIGNATURE_POOL)))]
            tails = []
            total = 0
            for _ in range(k):
                sig = sig0 if shared_sig else _SIGNATURE_POOL[int(rng.integers(len(_SIGNATURE_POOL)))]
                filters = int(rng.choice([8, 16, 24]))
                conv = b.add(
                    OpKind.CONV2D,
                    {
                        "in_channels": channels,
                        "out_channels": filters,
                        "kernel_size": sig[0],
                        "stride": sig[1],
                        "groups": sig[2],
                        "dilation": sig[3],
                    },
                    [node],
                    id=f"conv{n}",
                )
                n += 1
                tail = conv
                style = int(rng.integers(3))
                if style >= 1:
                    tail = b.add(OpKind.BATCHNORM, {}, [tail], id=f"bn{n}")
                    n += 1
                if style == 2:
                    tail = b.add(OpKind.RELU, {}, [tail], id=f"relu{n}")
                    n += 1
                tails.append(tail)
                total += filters
            node = b.add(OpKind.CONCAT, {"axis": 0}, tails, id=f"concat{n}")
            n += 1
            channels = total
        else:
            filters = int(rng.choice([8, 16, 24]))
            node = b.add(OpKind.CONV2D, conv_attrs(channels, filters, 3), [node], id=f"conv{n}")
            n += 1
            channels = filters
            if rng.random() < 0.5:
                node = b.add(OpKind.RELU, {}, [node], id=f"relu{n}")
                n += 1
    b.add(OpKind.OUTPUT, {}, [node], id="output")
    return b.build()


# ---------------------------------------------------------------------------
# Independent supernet forward (row-by-row matvec; no code shared with the
# package's batched implementation)
# ---------------------------------------------------------------------------


def reference_forward(net: Supernet, spec, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if net.family == "mlp":
        layers = []
        prev = net.space.input_dim
        for i, block in enumerate(spec.block_choices):
            h = block["hidden_dim"]
            p = net.params[f"block{i}"]
            layers.append((p.weight[:h, :prev].copy(), p.bias[:h].copy()))
            prev = h
        hp = net.params["head"]
        w_head, b_head = hp.weight[:1, :prev].copy(), hp.bias[:1].copy()
        out = []
        for row in x:
            v = row.copy()
            for w, c in layers:
                v = np.maximum(w @ v + c, 0.0)
            out.append(float(w_head @ v + b_head))
        return np.asarray(out)
    width = spec.global_choices["backbone_dim"]
    sp = net.params["stem"]
    w_stem = sp.weight[:width, : net.space.input_dim].copy()
    b_stem = sp.bias[:width].copy()
    blocks = []
    for i, block in enumerate(spec.block_choices):
        h = block["hidden_dim"]
        p1 = net.params[f"block{i}.lin1"]
        p2 = net.params[f"block{i}.lin2"]
        blocks.append(
            (
                p1.weight[:h, :width].copy(),
                p1.bias[:h].copy(),
                p2.weight[:width, :h].copy(),
                p2.bias[:width].copy(),
            )
        )
    hp = net.params["head"]
    w_head, b_head = hp.weight[:1, :width].copy(), hp.bias[:1].copy()
    out = []
    for row in x:
        v = w_stem @ row + b_stem
        for w1, c1, w2, c2 in blocks:
            v = v + (w2 @ np.maximum(w1 @ v + c1, 0.0) + c2)
        out.append(float(w_head @ v + b_head))
    return np.asarray(out)


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))
