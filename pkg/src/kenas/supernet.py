"""Weight-entangled supernets for the mlp and resnet spaces.

One maximal parameter store per layer; a subnet reads slices of it, so
every candidate block configuration at a layer shares (a prefix of) the
same weights, and mutating one subnet's slice is visible to every other
subnet overlapping it.  Forward/backward are plain float64 numpy with
hand-written gradients; training is single-path-uniform one-shot SGD.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import KenasError
from .space import (
    ArchitectureSpec,
    SpaceDef,
    encode,
    sample_uniform,
    space_from_dict,
    space_to_dict,
)

CHECKPOINT_VERSION = 1


def r2_score(targets: np.ndarray, predictions: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise KenasError("targets have zero variance; accuracy is undefined")
    ss_res = float(np.sum((targets - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


class EntangledLinear:
    """Maximal weight [max_out, max_in] and bias [max_out] with grad buffers.

    Slicing with numpy basic indexing returns views, so subnets share
    storage rather than copies.
    """

    def __init__(self, max_out: int, max_in: int, rng: np.random.Generator) -> None:
        limit = np.sqrt(6.0 / max_in)
        self.weight = rng.uniform(-limit, limit, size=(max_out, max_in)).astype(np.float64)
        self.bias = np.zeros(max_out, dtype=np.float64)
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)

    def zero_grad(self) -> None:
        self.weight_grad[:] = 0.0
        self.bias_grad[:] = 0.0


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float = 0.0
    sampler: str = "single-path-uniform"
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise KenasError("epochs must be >= 1")
        if self.batch_size < 1:
            raise KenasError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise KenasError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise KenasError("weight_decay must be >= 0")
        if self.sampler != "single-path-uniform":
            raise KenasError(f"unknown sampler {self.sampler!r}")
        if self.loss != "mse":
            raise KenasError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "sampler": self.sampler,
            "seed": self.seed,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise KenasError(f"unknown training config keys {sorted(unknown)}")
        return cls(**known)


@dataclass
class TrainResult:
    loss_history: list[float]
    sampled_specs: list[ArchitectureSpec] = field(default_factory=list)


class Supernet:
    """Entangled parameter store covering every subnet of a space."""

    def __init__(self, space: SpaceDef, seed: int = 0) -> None:
        if space.family not in ("mlp", "resnet"):
            raise KenasError(f"supernet training supports mlp and resnet, not {space.family!r}")
        if space.output_dim != 1:
            raise KenasError("supernet regression requires output_dim == 1")
        self.space = space
        self.family = space.family
        self.seed = seed
        self.step = 0
        rng = np.random.default_rng(seed)
        self.params: dict[str, EntangledLinear] = {}
        max_hidden = int(space.block_choices["hidden_dim"].values()[-1])
        if self.family == "mlp":
            for i in range(space.max_depth):
                max_in = space.input_dim if i == 0 else max_hidden
                self.params[f"block{i}"] = EntangledLinear(max_hidden, max_in, rng)
            self.params["head"] = EntangledLinear(1, max_hidden, rng)
        else:
            max_backbone = int(space.global_choices["backbone_dim"].values()[-1])
            self.params["stem"] = EntangledLinear(max_backbone, space.input_dim, rng)
            for i in range(space.max_depth):
                self.params[f"block{i}.lin1"] = EntangledLinear(max_hidden, max_backbone, rng)
                self.params[f"block{i}.lin2"] = EntangledLinear(max_backbone, max_hidden, rng)
            self.params["head"] = EntangledLinear(1, max_backbone, rng)

    # -- slicing ------------------------------------------------------

    def touched_slices(self, spec: ArchitectureSpec) -> list[tuple[str, tuple[slice, slice], slice]]:
        """(param name, weight slice, bias slice) for every region a spec reads."""
        self._check_spec(spec)
        out = []
        if self.family == "mlp":
            prev = self.space.input_dim
            for i, block in enumerate(spec.block_choices):
                h = block["hidden_dim"]
                out.append((f"block{i}", (slice(0, h), slice(0, prev)), slice(0, h)))
                prev = h
            out.append(("head", (slice(0, 1), slice(0, prev)), slice(0, 1)))
        else:
            b = spec.global_choices["backbone_dim"]
            out.append(("stem", (slice(0, b), slice(0, self.space.input_dim)), slice(0, b)))
            for i, block in enumerate(spec.block_choices):
                h = block["hidden_dim"]
                out.append((f"block{i}.lin1", (slice(0, h), slice(0, b)), slice(0, h)))
                out.append((f"block{i}.lin2", (slice(0, b), slice(0, h)), slice(0, b)))
            out.append(("head", (slice(0, 1), slice(0, b)), slice(0, 1)))
        return out

    def _check_spec(self, spec: ArchitectureSpec) -> None:
        if spec.family != self.family:
            raise KenasError(f"spec family {spec.family!r} != supernet family {self.family!r}")
        # membership in the space's ranges guarantees every slice fits
        encode(self.space, spec)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _forward_cached(net: Supernet, spec: ArchitectureSpec, batch: np.ndarray):
    """Subnet forward pass; returns (predictions [n], cache for backward)."""
    net._check_spec(spec)
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.space.input_dim:
        raise KenasError(
            f"batch must be [n, {net.space.input_dim}], got {getattr(x, 'shape', None)}"
        )
    cache: list[dict] = []
    if net.family == "mlp":
        prev = net.space.input_dim
        h_in = x
        for i, block in enumerate(spec.block_choices):
            h = block["hidden_dim"]
            p = net.params[f"block{i}"]
            z = h_in @ p.weight[:h, :prev].T + p.bias[:h]
            a = np.maximum(z, 0.0)
            cache.append({"name": f"block{i}", "x": h_in, "z": z, "h": h, "prev": prev})
            h_in, prev = a, h
        p = net.params["head"]
        pred = h_in @ p.weight[:1, :prev].T + p.bias[:1]
        cache.append({"name": "head", "x": h_in, "prev": prev})
        return pred[:, 0], cache
    # resnet
    b = spec.global_choices["backbone_dim"]
    p = net.params["stem"]
    stem_out = x @ p.weight[:b, : net.space.input_dim].T + p.bias[:b]
    cache.append({"name": "stem", "x": x, "b": b})
    h_in = stem_out
    for i, block in enumerate(spec.block_choices):
        h = block["hidden_dim"]
        p1 = net.params[f"block{i}.lin1"]
        p2 = net.params[f"block{i}.lin2"]
        z = h_in @ p1.weight[:h, :b].T + p1.bias[:h]
        a = np.maximum(z, 0.0)
        u = a @ p2.weight[:b, :h].T + p2.bias[:b]
        out = h_in + u
        cache.append({"name": f"block{i}", "x": h_in, "z": z, "a": a, "h": h, "b": b})
        h_in = out
    p = net.params["head"]
    pred = h_in @ p.weight[:1, :b].T + p.bias[:1]
    cache.append({"name": "head", "x": h_in, "b": b})
    return pred[:, 0], cache


def subnet_forward(net: Supernet, spec: ArchitectureSpec, batch: np.ndarray) -> np.ndarray:
    return _forward_cached(net, spec, batch)[0]


def subnet_backward(
    net: Supernet, spec: ArchitectureSpec, batch: np.ndarray, targets: np.ndarray
) -> float:
    """MSE loss; gradients accumulate on the slices the spec touches."""
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    pred, cache = _forward_cached(net, spec, batch)
    if y.shape != pred.shape:
        raise KenasError(f"targets shape {y.shape} != predictions shape {pred.shape}")
    n = y.shape[0]
    diff = pred - y
    loss = float(diff @ diff) / n
    d_pred = (2.0 / n) * diff

    head = cache[-1]
    p = net.params["head"]
    width = head["prev"] if net.family == "mlp" else head["b"]
    d = d_pred[:, None]  # [n, 1]
    p.weight_grad[:1, :width] += d.T @ head["x"]
    p.bias_grad[:1] += d.sum(axis=0)
    dx = d @ p.weight[:1, :width]

    if net.family == "mlp":
        for entry in reversed(cache[:-1]):
            pblk = net.params[entry["name"]]
            h, prev = entry["h"], entry["prev"]
            dz = dx * (entry["z"] > 0.0)
            pblk.weight_grad[:h, :prev] += dz.T @ entry["x"]
            pblk.bias_grad[:h] += dz.sum(axis=0)
            dx = dz @ pblk.weight[:h, :prev]
        return loss

    for entry in reversed(cache[1:-1]):
        i = entry["name"]
        p1 = net.params[f"{i}.lin1"]
        p2 = net.params[f"{i}.lin2"]
        h, b = entry["h"], entry["b"]
        du = dx  # residual: d(out)/d(u) = identity
        p2.weight_grad[:b, :h] += du.T @ entry["a"]
        p2.bias_grad[:b] += du.sum(axis=0)
        da = du @ p2.weight[:b, :h]
        dz = da * (entry["z"] > 0.0)
        p1.weight_grad[:h, :b] += dz.T @ entry["x"]
        p1.bias_grad[:h] += dz.sum(axis=0)
        dx = dx + dz @ p1.weight[:h, :b]
    stem = cache[0]
    p = net.params["stem"]
    b = stem["b"]
    p.weight_grad[:b, : net.space.input_dim] += dx.T @ stem["x"]
    p.bias_grad[:b] += dx.sum(axis=0)
    return loss


def apply_sgd_step(net: Supernet, spec: ArchitectureSpec, learning_rate: float, weight_decay: float) -> None:
    """Descend along accumulated gradients, touching only the spec's slices.

    Weight decay applies to weight matrices, not biases.
    """
    for name, wsl, bsl in net.touched_slices(spec):
        p = net.params[name]
        w = p.weight[wsl]
        w -= learning_rate * (p.weight_grad[wsl] + weight_decay * w)
        p.bias[bsl] -= learning_rate * p.bias_grad[bsl]


def train(net: Supernet, features: np.ndarray, targets: np.ndarray, config: TrainConfig) -> TrainResult:
    """One-shot training: each step trains one uniformly sampled subnet."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise KenasError("training requires a non-empty [n, d] feature matrix")
    if x.shape[0] != y.shape[0]:
        raise KenasError("features and targets disagree on row count")
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    sampled: list[ArchitectureSpec] = []
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            spec = sample_uniform(net.space, rng)
            net.zero_grad()
            loss = subnet_backward(net, spec, x[rows], y[rows])
            apply_sgd_step(net, spec, config.learning_rate, config.weight_decay)
            history.append(loss)
            sampled.append(spec)
            net.step += 1
    return TrainResult(history, sampled)


def evaluate_accuracy(
    net: Supernet, spec: ArchitectureSpec, features: np.ndarray, targets: np.ndarray
) -> float:
    """R^2 of the subnet on a data partition; this is the search's accuracy signal."""
    return r2_score(np.asarray(targets, dtype=np.float64).reshape(-1), subnet_forward(net, spec, features))


# ---------------------------------------------------------------------------
# Checkpoints (exact round-trip: raw little-endian float64 payloads)
# ---------------------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)


def save_checkpoint(net: Supernet, path: str) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "supernet-checkpoint",
        "family": net.family,
        "space": space_to_dict(net.space),
        "seed": net.seed,
        "step": net.step,
        "params": {
            name: {"weight": _encode_array(p.weight), "bias": _encode_array(p.bias)}
            for name, p in net.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> Supernet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "supernet-checkpoint":
        raise KenasError(f"{path}: not a supernet checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise KenasError(f"{path}: unsupported checkpoint version {doc.get('format_version')}")
    net = Supernet(space_from_dict(doc["space"]), seed=int(doc["seed"]))
    net.step = int(doc["step"])
    for name, p in net.params.items():
        entry = doc["params"].get(name)
        if entry is None:
            raise KenasError(f"{path}: checkpoint missing parameter {name!r}")
        weight = _decode_array(entry["weight"])
        bias = _decode_array(entry["bias"])
        if weight.shape != p.weight.shape or bias.shape != p.bias.shape:
            raise KenasError(f"{path}: parameter {name!r} has unexpected shape")
        p.weight[:] = weight
        p.bias[:] = bias
    return net
