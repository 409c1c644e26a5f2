"""Policy-gradient architecture search and baseline objectives.

The controller keeps one categorical logit vector per decision slot of
the space encoding, samples architectures, scores them with one of
three objectives, and applies a REINFORCE update with an exponential
moving-average baseline and an entropy bonus:

* ``proposed``       — energy * (accuracy / T)^w, minimized
* ``conventional``   — negated accuracy (pure accuracy maximization)
* ``adapted_etnas``  — total kernel power * (accuracy / T)^w; power has
  no latency weighting, so this objective cannot see execution time

with w = alpha when accuracy <= T and w = beta otherwise.  A brute-force
enumerator provides exact optima on capped spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cost import PlatformProfile, estimate_energy, total_power
from .errors import KenasError
from .fusion import FusionRule
from .space import (
    ArchitectureSpec,
    SpaceDef,
    candidate_count,
    decode,
    encode,
    encoding_slots,
    enumerate_specs,
    is_valid_spec,
    lower,
)

OBJECTIVE_KINDS = ("proposed", "conventional", "adapted_etnas")

# R^2 can be <= 0 for worse-than-mean subnets; the power law is undefined
# there for fractional exponents, so accuracy is floored before the ratio.
ACCURACY_FLOOR = 1e-3


@dataclass(frozen=True)
class RewardConfig:
    target_T: float
    alpha: float = -2.0
    beta: float = -0.5
    objective_kind: str = "proposed"

    def __post_init__(self) -> None:
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise KenasError(f"objective_kind must be one of {OBJECTIVE_KINDS}")
        if not (0.0 < self.target_T <= 1.0):
            raise KenasError(f"target_T must lie in (0, 1], got {self.target_T}")
        if self.objective_kind != "conventional" and not (self.alpha < 0 and self.beta < 0):
            raise KenasError("alpha and beta must both be negative")

    def to_dict(self) -> dict:
        return {
            "T": self.target_T,
            "alpha": self.alpha,
            "beta": self.beta,
            "kind": self.objective_kind,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        return cls(
            float(data["T"]),
            float(data.get("alpha", -2.0)),
            float(data.get("beta", -0.5)),
            str(data.get("kind", "proposed")),
        )


def objective(energy: float, accuracy: float, cfg: RewardConfig) -> float:
    """Scalar to minimize for one candidate.

    ``energy`` carries total power instead when cfg selects the
    power-only objective; the formula is identical.
    """
    if energy <= 0:
        raise KenasError(f"energy must be > 0, got {energy}")
    if cfg.target_T <= 0:
        raise KenasError("target accuracy must be > 0")
    if cfg.objective_kind == "conventional":
        return -accuracy
    acc = max(accuracy, ACCURACY_FLOOR)
    w = cfg.alpha if acc <= cfg.target_T else cfg.beta
    return energy * (acc / cfg.target_T) ** w


def energy_saving(baseline_energy: float, new_energy: float) -> float:
    """Percent reduction of new vs baseline; render to one decimal."""
    if baseline_energy <= 0:
        raise KenasError(f"baseline energy must be > 0, got {baseline_energy}")
    return 100.0 * (1.0 - new_energy / baseline_energy)


# ---------------------------------------------------------------------------
# Candidate evaluation
# ---------------------------------------------------------------------------


class SpecEvaluator:
    """Caches per-candidate accuracy, energy and power keyed by encoding."""

    def __init__(
        self,
        space: SpaceDef,
        accuracy_fn: Callable[[ArchitectureSpec], float],
        profile: PlatformProfile | None = None,
        rules: list[FusionRule] | None = None,
        batch: int = 1,
        energy_fn: Callable[[ArchitectureSpec], float] | None = None,
        power_fn: Callable[[ArchitectureSpec], float] | None = None,
    ) -> None:
        self.space = space
        self.accuracy_fn = accuracy_fn
        self.profile = profile
        self.rules = list(rules) if rules is not None else []
        self.batch = batch
        self._energy_fn = energy_fn
        self._power_fn = power_fn
        self._cache: dict[tuple, dict[str, float]] = {}

    def _entry(self, spec: ArchitectureSpec) -> dict[str, float]:
        key = tuple(encode(self.space, spec))
        if key not in self._cache:
            self._cache[key] = {}
        return self._cache[key]

    def accuracy(self, spec: ArchitectureSpec) -> float:
        entry = self._entry(spec)
        if "accuracy" not in entry:
            entry["accuracy"] = float(self.accuracy_fn(spec))
        return entry["accuracy"]

    def energy(self, spec: ArchitectureSpec) -> float:
        entry = self._entry(spec)
        if "energy" not in entry:
            if self._energy_fn is not None:
                entry["energy"] = float(self._energy_fn(spec))
            else:
                self._need_profile()
                entry["energy"] = estimate_energy(
                    lower(spec), self.rules, self.profile, self.batch
                ).total_energy_mj
        return entry["energy"]

    def power(self, spec: ArchitectureSpec) -> float:
        entry = self._entry(spec)
        if "power" not in entry:
            if self._power_fn is not None:
                entry["power"] = float(self._power_fn(spec))
            else:
                self._need_profile()
                entry["power"] = total_power(lower(spec), self.rules, self.profile, self.batch)
        return entry["power"]

    def _need_profile(self) -> None:
        if self.profile is None:
            raise KenasError("evaluator needs a platform profile (or an injected cost function)")

    def objective(self, spec: ArchitectureSpec, cfg: RewardConfig) -> float:
        cost = self.power(spec) if cfg.objective_kind == "adapted_etnas" else self.energy(spec)
        return objective(cost, self.accuracy(spec), cfg)


def surrogate_accuracy_fn(
    space: SpaceDef, table: dict[str, float], default: float | None = None
) -> Callable[[ArchitectureSpec], float]:
    """Accuracy lookup keyed by dash-joined encoding, for spaces without a trained supernet."""

    def fn(spec: ArchitectureSpec) -> float:
        key = "-".join(str(i) for i in encode(space, spec))
        if key in table:
            return table[key]
        if default is not None:
            return default
        raise KenasError(f"surrogate has no accuracy for encoding {key!r}")

    return fn


# ---------------------------------------------------------------------------
# Controller
# ---------------------------------------------------------------------------


@dataclass
class ControllerConfig:
    learning_rate: float = 0.05
    entropy_coeff: float = 0.01
    baseline_decay: float = 0.9

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise KenasError(f"unknown controller keys {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - math.log(float(np.exp(z).sum()))


class Policy:
    """Factorized categorical distribution over encoding slots."""

    def __init__(self, space: SpaceDef, config: ControllerConfig | None = None) -> None:
        self.space = space
        self.config = config or ControllerConfig()
        self.slots = encoding_slots(space)
        self.logits = [np.zeros(s.cardinality, dtype=np.float64) for s in self.slots]
        self.baseline: float | None = None

    def probs(self, slot_index: int) -> np.ndarray:
        return np.exp(_log_softmax(self.logits[slot_index]))

    def _draw(self, slot_index: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.slots[slot_index].cardinality, p=self.probs(slot_index)))

    def sample(self, rng: np.random.Generator) -> tuple[ArchitectureSpec, list[tuple[int, int]]]:
        """Draw a spec; returns it with the (slot, action) pairs actually sampled.

        Depth is drawn first; block slots beyond the drawn depth stay at
        their canonical zero and receive no update.
        """
        actions: list[tuple[int, int]] = []
        vector = [0] * len(self.slots)
        depth_action = self._draw(0, rng)
        vector[0] = depth_action
        actions.append((0, depth_action))
        depth = int(self.space.depth.value_at(depth_action))
        by_name = {s.name: i for i, s in enumerate(self.slots)}
        for name in self.space.global_choices:
            i = by_name[f"global:{name}"]
            a = self._draw(i, rng)
            vector[i] = a
            actions.append((i, a))
        block_names = list(self.space.block_choices)
        for blk in range(depth):
            for _ in range(1000):
                drawn = [(by_name[f"block{blk}:{n}"], None) for n in block_names]
                drawn = [(i, self._draw(i, rng)) for i, _ in drawn]
                values = {
                    n: self.space.block_choices[n].value_at(a)
                    for n, (_, a) in zip(block_names, drawn)
                }
                if self.space.family != "fttransformer" or values["embed_dim"] % values["num_heads"] == 0:
                    break
            else:
                raise KenasError("policy could not draw a feasible block")
            for i, a in drawn:
                vector[i] = a
                actions.append((i, a))
        return decode(self.space, vector), actions

    def update(self, actions: list[tuple[int, int]], advantage: float) -> None:
        """REINFORCE step: logits += lr * (advantage * dlogpi + entropy_coeff * dH)."""
        lr = self.config.learning_rate
        coeff = self.config.entropy_coeff
        for slot_index, action in actions:
            logp = _log_softmax(self.logits[slot_index])
            p = np.exp(logp)
            grad_logpi = -p
            grad_logpi[action] += 1.0
            entropy = -float(p @ logp)
            grad_entropy = -p * (logp + entropy)
            self.logits[slot_index] += lr * (advantage * grad_logpi + coeff * grad_entropy)
            if not np.all(np.isfinite(self.logits[slot_index])):
                raise KenasError("policy logits became non-finite")


@dataclass
class HistoryRow:
    iteration: int
    spec: ArchitectureSpec
    encoding: tuple[int, ...]
    energy_mj: float
    accuracy: float
    objective: float


@dataclass
class SearchRun:
    space: SpaceDef
    evaluator: SpecEvaluator
    reward: RewardConfig
    budget: int
    seed: int
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    history: list[HistoryRow] = field(default_factory=list)
    best: HistoryRow | None = None

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise KenasError("budget must be >= 1")


def reinforce_step(policy: Policy, run: SearchRun, rng: np.random.Generator) -> HistoryRow:
    """Sample, score, and update; appends one audit row to the run."""
    if len(run.history) >= run.budget:
        raise KenasError(f"budget of {run.budget} evaluations is exhausted")
    spec, actions = policy.sample(rng)
    accuracy = run.evaluator.accuracy(spec)
    energy = run.evaluator.energy(spec)
    if run.reward.objective_kind == "adapted_etnas":
        value = objective(run.evaluator.power(spec), accuracy, run.reward)
    else:
        value = objective(energy, accuracy, run.reward)
    if policy.baseline is None:
        policy.baseline = value
    advantage = policy.baseline - value  # lower objective -> positive advantage
    policy.update(actions, advantage)
    decay = policy.config.baseline_decay
    policy.baseline = decay * policy.baseline + (1.0 - decay) * value
    row = HistoryRow(
        len(run.history), spec, tuple(encode(run.space, spec)), energy, accuracy, value
    )
    run.history.append(row)
    if run.best is None or value < run.best.objective:
        run.best = row
    return row


def search(run: SearchRun, policy: Policy | None = None) -> tuple[ArchitectureSpec, SearchRun]:
    """Run the controller to budget; returns the best *evaluated* spec."""
    policy = policy or Policy(run.space, run.controller)
    rng = np.random.default_rng(run.seed)
    while len(run.history) < run.budget:
        reinforce_step(policy, run, rng)
    return run.best.spec, run


@dataclass
class BruteForceResult:
    spec: ArchitectureSpec
    objective: float
    energy_mj: float
    accuracy: float


def brute_force(
    space: SpaceDef,
    evaluator: SpecEvaluator,
    cfg: RewardConfig,
    cap: int = 100_000,
) -> BruteForceResult:
    """Exact argmin over every valid spec; ties keep the earliest encoding."""
    count = candidate_count(space, "enumerative")
    if count > cap:
        raise KenasError(f"space has {count} candidates, above the brute-force cap of {cap}")
    best: BruteForceResult | None = None
    for spec in enumerate_specs(space):
        if not is_valid_spec(space, spec):
            continue
        value = evaluator.objective(spec, cfg)
        if best is None or value < best.objective:
            best = BruteForceResult(spec, value, evaluator.energy(spec), evaluator.accuracy(spec))
    if best is None:
        raise KenasError("space contains no valid candidates")
    return best
