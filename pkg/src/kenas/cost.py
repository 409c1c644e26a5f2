"""Kernel-level latency/power prediction and model-energy estimation.

Per-kernel latency (ms) and power (W) come from platform lookup tables,
falling back to interpolation over same-label entries and finally to an
analytic model driven by the kernel's arithmetic work.  Model energy is
the sum over execution kernels of latency times power; boundary kernels
(Input, Output, Concat) cost nothing.

Flop counts are computed in exact integer arithmetic so that a kernel
generated by merging parallel convolutions costs exactly as much as the
equivalent single wide convolution.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import KenasError
from .fusion import FusionRule, Kernel, KernelPlan, detect_kernels, merge_parallel
from .graph import ComputationGraph, infer_shapes, validate

_INTERPOLATIONS = ("nearest", "linear-on-flops")


@dataclass(frozen=True)
class AnalyticParams:
    """Fallback coefficients used when a kernel config is not tabulated."""

    latency_per_gflop: float
    latency_floor: float
    idle_power: float
    power_per_gflop_rate: float

    def __post_init__(self) -> None:
        if self.latency_floor <= 0:
            raise KenasError("latency_floor must be > 0")
        for name in ("latency_per_gflop", "idle_power", "power_per_gflop_rate"):
            if getattr(self, name) < 0:
                raise KenasError(f"{name} must be >= 0")


@dataclass
class PlatformProfile:
    platform_name: str
    max_parallel: int
    interpolation: str
    analytic_fallback: AnalyticParams
    latency_table: dict[tuple[str, str], float] = field(default_factory=dict)
    power_table: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise KenasError("max_parallel must be >= 1")
        if self.interpolation not in _INTERPOLATIONS:
            raise KenasError(f"interpolation must be one of {_INTERPOLATIONS}")
        for table, unit in ((self.latency_table, "latency"), (self.power_table, "power")):
            for key, value in table.items():
                if value <= 0:
                    raise KenasError(f"{unit} table entry {key} must be > 0, got {value}")


@dataclass
class KernelEnergy:
    kernel_id: str
    latency_ms: float
    power_w: float
    energy_mj: float


@dataclass
class EnergyEstimate:
    total_energy_mj: float
    total_latency_ms: float
    per_kernel: list[KernelEnergy]

    def to_dict(self) -> dict:
        return {
            "total_energy_mj": self.total_energy_mj,
            "total_latency_ms": self.total_latency_ms,
            "per_kernel": [
                {
                    "kernel_id": r.kernel_id,
                    "latency_ms": r.latency_ms,
                    "power_w": r.power_w,
                    "energy_mj": r.energy_mj,
                }
                for r in self.per_kernel
            ],
        }


def config_key(config: dict[str, Any], batch: int | None = None) -> str:
    """Canonical, order-independent table key; '_'-prefixed entries are bookkeeping."""
    visible = {k: v for k, v in config.items() if not k.startswith("_")}
    if batch is not None:
        visible["batch"] = batch
    return json.dumps(visible, sort_keys=True, separators=(",", ":"))


def _elements(config: dict[str, Any]) -> int:
    """Output element count implied by a kernel config (batch excluded)."""
    if "filters" in config:
        return config["filters"] * config["out_height"] * config["out_width"]
    if "out_features" in config:
        return config["out_features"] * config.get("tokens", 1)
    if "embed_dim" in config and "qkv_dim" in config:
        return config["embed_dim"] * config["tokens"]
    if "embed_dim" in config:
        return (config["num_features"] + 1) * config["embed_dim"]
    if "elements" in config:
        return config["elements"]
    raise KenasError(f"cannot derive element count from config {config!r}")


def flops_of(label: str, config: dict[str, Any]) -> int:
    """Exact per-inference flop count for a kernel label + config.

    Fused labels ('conv2d+batchnorm+relu') sum their members; chained
    elementwise members operate on the root op's output elements.
    """
    total = 0
    for part in label.lower().split("+"):
        if part in ("input", "output", "concat"):
            continue
        if part == "conv2d":
            work = 2 * (config["in_channels"] // config["groups"]) * config["kernel_size"] ** 2 + 1
            total += work * config["filters"] * config["out_height"] * config["out_width"]
        elif part == "linear":
            t = config.get("tokens", 1)
            total += t * (2 * config["in_features"] + 1) * config["out_features"]
        elif part == "multiheadattention":
            t, e, q, h = config["tokens"], config["embed_dim"], config["qkv_dim"], config["num_heads"]
            proj = 3 * t * (2 * e * q + q) + t * (2 * q * e + e)
            attend = 2 * q * t * t + 2 * q * t * t + 5 * h * t * t
            total += proj + attend
        elif part == "embedding":
            total += 2 * (config["num_features"] + 1) * config["embed_dim"]
        elif part == "relu":
            total += _elements(config)
        elif part == "gelu":
            total += 8 * _elements(config)
        elif part == "batchnorm":
            total += 2 * _elements(config)
        elif part == "layernorm":
            total += 5 * _elements(config)
        elif part == "add":
            total += _elements(config)
        else:
            raise KenasError(f"no flop model for kernel part {part!r}")
    return total


def _interpolate(
    table: dict[tuple[str, str], float],
    label: str,
    feature: float,
    mode: str,
) -> float | None:
    points: list[tuple[float, float]] = []
    for (lbl, key), value in table.items():
        if lbl != label:
            continue
        cfg = json.loads(key)
        entry_batch = cfg.pop("batch", 1)
        try:
            points.append((flops_of(label, cfg) * entry_batch, value))
        except KenasError:
            continue
    if not points:
        return None
    points.sort(key=lambda p: (p[0], p[1]))
    if mode == "nearest" or len(points) == 1:
        return min(points, key=lambda p: (abs(p[0] - feature), p[0]))[1]
    # linear-on-flops, clamped at the tabulated range
    if feature <= points[0][0]:
        return points[0][1]
    if feature >= points[-1][0]:
        return points[-1][1]
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x0 <= feature <= x1:
            if x1 == x0:
                return y0
            return y0 + (y1 - y0) * (feature - x0) / (x1 - x0)
    return points[-1][1]


def _resolve(
    table: dict[tuple[str, str], float],
    kernel: Kernel,
    batch: int,
    mode: str,
) -> float | None:
    hit = table.get((kernel.label, config_key(kernel.config, batch)))
    if hit is None:
        hit = table.get((kernel.label, config_key(kernel.config)))
    if hit is not None:
        return hit
    feature = flops_of(kernel.label, kernel.config) * batch
    return _interpolate(table, kernel.label, feature, mode)


def predict_kernel(kernel: Kernel, profile: PlatformProfile, batch: int = 1) -> tuple[float, float]:
    """Predict (latency ms, power W) for one kernel.

    Lookup order per quantity: exact table hit (config plus batch, then
    config alone), interpolation over same-label entries, analytic
    fallback.  The fallback power model uses whichever latency was
    resolved, so power = idle + rate * (gflops / latency).
    """
    if batch < 1:
        raise KenasError("batch must be >= 1")
    p = profile.analytic_fallback
    gflops = flops_of(kernel.label, kernel.config) * batch / 1e9
    latency = _resolve(profile.latency_table, kernel, batch, profile.interpolation)
    if latency is None:
        latency = max(p.latency_floor, gflops * p.latency_per_gflop)
    power = _resolve(profile.power_table, kernel, batch, profile.interpolation)
    if power is None:
        power = p.idle_power + p.power_per_gflop_rate * (gflops / latency)
    return latency, power


def build_plan(
    graph: ComputationGraph,
    rules: Iterable[FusionRule],
    max_parallel: int,
) -> KernelPlan:
    """Shape, validate, fuse and parallel-merge in one step."""
    shaped = infer_shapes(graph)
    problems = validate(shaped)
    if problems:
        raise KenasError("invalid graph: " + "; ".join(v.message for v in problems[:5]))
    return merge_parallel(detect_kernels(shaped, rules), max_parallel)


def plan_energy(plan: KernelPlan, profile: PlatformProfile, batch: int = 1) -> EnergyEstimate:
    rows: list[KernelEnergy] = []
    total_energy = 0.0
    total_latency = 0.0
    for kernel in plan.compute_kernels():
        latency, power = predict_kernel(kernel, profile, batch)
        energy = latency * power
        rows.append(KernelEnergy(kernel.id, latency, power, energy))
        total_energy += energy
        total_latency += latency
    return EnergyEstimate(total_energy, total_latency, rows)


def estimate_energy(
    graph: ComputationGraph,
    rules: Iterable[FusionRule],
    profile: PlatformProfile,
    batch: int = 1,
) -> EnergyEstimate:
    """Full pipeline: fuse, merge (profile.max_parallel), predict, sum."""
    plan = build_plan(graph, rules, profile.max_parallel)
    return plan_energy(plan, profile, batch)


def total_power(
    graph: ComputationGraph,
    rules: Iterable[FusionRule],
    profile: PlatformProfile,
    batch: int = 1,
) -> float:
    """Sum of predicted kernel powers with no latency weighting.

    This deliberately reproduces a power-only objective that cannot see
    how long each kernel runs.
    """
    plan = build_plan(graph, rules, profile.max_parallel)
    return sum(predict_kernel(k, profile, batch)[1] for k in plan.compute_kernels())


# ---------------------------------------------------------------------------
# Power traces (offline profile construction)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerTrace:
    samples: tuple[tuple[float, float], ...]
    window: tuple[float, float]

    def __post_init__(self) -> None:
        samples = tuple((float(t), float(p)) for t, p in self.samples)
        object.__setattr__(self, "samples", samples)
        if len(samples) < 2:
            raise KenasError("trace needs at least 2 samples")
        times = [t for t, _ in samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise KenasError("trace timestamps must be strictly increasing")
        start, end = self.window
        if not (times[0] <= start < end <= times[-1]):
            raise KenasError(
                f"window [{start}, {end}] outside sample span [{times[0]}, {times[-1]}]"
            )
        object.__setattr__(self, "window", (float(start), float(end)))

    @classmethod
    def from_samples(
        cls, samples: Iterable[tuple[float, float]], window: tuple[float, float] | None = None
    ) -> "PowerTrace":
        samples = tuple(samples)
        if window is None:
            if len(samples) < 2:
                raise KenasError("trace needs at least 2 samples")
            window = (samples[0][0], samples[-1][0])
        return cls(samples, window)


def _value_at(samples: tuple[tuple[float, float], ...], t: float) -> float:
    for (t0, p0), (t1, p1) in zip(samples, samples[1:]):
        if t0 <= t <= t1:
            if t1 == t0:
                return p0
            return p0 + (p1 - p0) * (t - t0) / (t1 - t0)
    raise KenasError(f"time {t} outside trace span")


def energy_from_trace(trace: PowerTrace) -> float:
    """Trapezoidal integral of power over the trace window, in millijoules."""
    start, end = trace.window
    inside = [(t, p) for t, p in trace.samples if start < t < end]
    if len([s for s in trace.samples if start <= s[0] <= end]) < 2:
        raise KenasError("window must contain at least 2 samples")
    points = [(start, _value_at(trace.samples, start))] + inside + [(end, _value_at(trace.samples, end))]
    joules = 0.0
    for (t0, p0), (t1, p1) in zip(points, points[1:]):
        joules += 0.5 * (p0 + p1) * (t1 - t0)
    return joules * 1000.0


def moving_average(trace: PowerTrace, window_n: int) -> PowerTrace:
    """Centered simple moving average; windows shrink at the edges."""
    if window_n < 1:
        raise KenasError("window_n must be >= 1")
    left = (window_n - 1) // 2
    right = window_n // 2
    n = len(trace.samples)
    smoothed = []
    for i, (t, _) in enumerate(trace.samples):
        lo = max(0, i - left)
        hi = min(n, i + right + 1)
        mean = sum(p for _, p in trace.samples[lo:hi]) / (hi - lo)
        smoothed.append((t, mean))
    return PowerTrace(tuple(smoothed), trace.window)


def load_trace_csv(path: str, window: tuple[float, float] | None = None) -> PowerTrace:
    samples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp_s", "power_w"]:
            raise KenasError(f"{path}: expected header 'timestamp_s,power_w'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise KenasError(f"{path}:{lineno}: expected 2 columns")
            try:
                samples.append((float(row[0]), float(row[1])))
            except ValueError:
                raise KenasError(f"{path}:{lineno}: non-numeric sample {row!r}") from None
    return PowerTrace.from_samples(samples, window)


# ---------------------------------------------------------------------------
# Profile files
# ---------------------------------------------------------------------------


def _table_from_json(entries: list[dict], what: str) -> dict[tuple[str, str], float]:
    table: dict[tuple[str, str], float] = {}
    for i, entry in enumerate(entries):
        try:
            label = str(entry["label"])
            cfg = dict(entry["config"])
            value = float(entry["value"])
        except (KeyError, TypeError, ValueError):
            raise KenasError(f"{what} table entry #{i} malformed: {entry!r}") from None
        try:
            flops_of(label, cfg)
        except KenasError as exc:
            raise KenasError(f"{what} table entry #{i}: {exc}") from None
        table[(label, config_key(cfg))] = value
    return table


def profile_from_dict(data: dict) -> PlatformProfile:
    try:
        fb = data["analytic_fallback"]
        params = AnalyticParams(
            float(fb["latency_per_gflop"]),
            float(fb["latency_floor"]),
            float(fb["idle_power"]),
            float(fb["power_per_gflop_rate"]),
        )
        return PlatformProfile(
            str(data["platform_name"]),
            int(data["max_parallel"]),
            str(data.get("interpolation", "nearest")),
            params,
            _table_from_json(data.get("latency_table", []), "latency"),
            _table_from_json(data.get("power_table", []), "power"),
        )
    except KeyError as exc:
        raise KenasError(f"profile document missing key {exc}") from None


def profile_to_dict(profile: PlatformProfile) -> dict:
    def table(entries: dict[tuple[str, str], float]) -> list[dict]:
        return [
            {"label": label, "config": json.loads(key), "value": value}
            for (label, key), value in sorted(entries.items())
        ]

    fb = profile.analytic_fallback
    return {
        "platform_name": profile.platform_name,
        "max_parallel": profile.max_parallel,
        "interpolation": profile.interpolation,
        "analytic_fallback": {
            "latency_per_gflop": fb.latency_per_gflop,
            "latency_floor": fb.latency_floor,
            "idle_power": fb.idle_power,
            "power_per_gflop_rate": fb.power_per_gflop_rate,
        },
        "latency_table": table(profile.latency_table),
        "power_table": table(profile.power_table),
    }


def load_profile(path: str) -> PlatformProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return profile_from_dict(json.load(fh))


def save_profile(profile: PlatformProfile, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(profile_to_dict(profile), fh, indent=2, sort_keys=True)
        fh.write("\n")
