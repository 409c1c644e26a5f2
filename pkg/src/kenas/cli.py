"""Command-line surface: thin shells over the library operations.

Every subcommand validates its inputs and exits nonzero with a one-line
JSON error object on stderr.  Outputs are byte-deterministic for fixed
inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import assets
from .cost import (
    energy_from_trace,
    estimate_energy,
    load_profile,
    load_trace_csv,
    moving_average,
)
from .data import SplitSpec, load_csv, split
from .errors import KenasError
from .fusion import detect_kernels, load_rules, merge_parallel, plan_to_dict
from .graph import infer_shapes, load_graph, validate
from .report import render_report_text, run_comparison
from .search import (
    ControllerConfig,
    RewardConfig,
    SearchRun,
    SpecEvaluator,
    brute_force,
    search,
    surrogate_accuracy_fn,
)
from .space import load_space, spec_to_dict
from .supernet import Supernet, TrainConfig, evaluate_accuracy, load_checkpoint, save_checkpoint, train


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_reward(path: str | None, default_kind: str = "proposed") -> tuple[RewardConfig, ControllerConfig]:
    if path is None:
        raise KenasError("a reward config file is required")
    doc = _read_json(path)
    controller = ControllerConfig.from_dict(doc.pop("controller", {}))
    if "kind" not in doc:
        doc["kind"] = default_kind
    return RewardConfig.from_dict(doc), controller


def _validated_graph(path: str):
    graph = infer_shapes(load_graph(path))
    problems = validate(graph)
    if problems:
        raise KenasError(f"{path}: invalid graph: " + "; ".join(v.message for v in problems[:5]))
    return graph


def _history_csv(rows) -> str:
    lines = ["iter,spec_encoding,energy_mj,accuracy,objective"]
    for r in rows:
        enc = "-".join(str(i) for i in r.encoding)
        lines.append(f"{r.iteration},{enc},{r.energy_mj!r},{r.accuracy!r},{r.objective!r}")
    return "\n".join(lines) + "\n"


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _cmd_estimate(args) -> int:
    graph = _validated_graph(args.graph)
    rules = load_rules(args.rules)
    profile = load_profile(args.profile)
    estimate = estimate_energy(graph, rules, profile, args.batch)
    if args.format == "json":
        sys.stdout.write(_dump(estimate.to_dict()))
    else:
        header = f"{'kernel':<14} {'latency (ms)':>14} {'power (W)':>12} {'energy (mJ)':>14}"
        lines = [header, "-" * len(header)]
        for row in estimate.per_kernel:
            lines.append(
                f"{row.kernel_id:<14} {row.latency_ms:>14.6f} {row.power_w:>12.6f} {row.energy_mj:>14.6f}"
            )
        lines.append(f"total latency: {estimate.total_latency_ms:.6f} ms")
        lines.append(f"total energy:  {estimate.total_energy_mj:.6f} mJ")
        sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _cmd_detect_kernels(args) -> int:
    graph = _validated_graph(args.graph)
    rules = load_rules(args.rules)
    plan = detect_kernels(graph, rules)
    if args.max_parallel is not None:
        plan = merge_parallel(plan, args.max_parallel)
    sys.stdout.write(_dump(plan_to_dict(plan)))
    return 0


def _cmd_train_supernet(args) -> int:
    space = load_space(args.space)
    dataset = load_csv(args.data, args.target)
    config = TrainConfig.from_dict(_read_json(args.config))
    parts = split(dataset, SplitSpec(seed=args.split_seed))
    net = Supernet(space, seed=config.seed)
    result = train(net, dataset.features[parts.train], dataset.targets[parts.train], config)
    save_checkpoint(net, args.out)
    history_path = args.history or args.out + ".loss.csv"
    lines = ["step,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(result.loss_history)]
    _write(history_path, "\n".join(lines) + "\n")
    sys.stdout.write(
        _dump(
            {
                "checkpoint": args.out,
                "loss_history": history_path,
                "steps": len(result.loss_history),
                "final_loss": result.loss_history[-1],
            }
        )
    )
    return 0


def _build_evaluator(args, space):
    profile = load_profile(args.profile)
    rules = load_rules(args.rules)
    if (args.ckpt is None) == (args.surrogate is None):
        raise KenasError("exactly one of --ckpt or --surrogate is required")
    if args.surrogate is not None:
        doc = _read_json(args.surrogate)
        accuracy_fn = surrogate_accuracy_fn(space, dict(doc.get("accuracies", {})), doc.get("default"))
        return SpecEvaluator(space, accuracy_fn, profile, rules, args.batch), profile
    if args.data is None or args.target is None:
        raise KenasError("--data and --target are required when searching with a checkpoint")
    net = load_checkpoint(args.ckpt)
    dataset = load_csv(args.data, args.target)
    parts = split(dataset, SplitSpec(seed=args.split_seed))
    x_val, y_val = dataset.features[parts.validation], dataset.targets[parts.validation]

    def accuracy_fn(spec):
        return evaluate_accuracy(net, spec, x_val, y_val)

    return SpecEvaluator(space, accuracy_fn, profile, rules, args.batch), profile


def _cmd_search(args) -> int:
    space = load_space(args.space)
    evaluator, _ = _build_evaluator(args, space)
    reward, controller = _load_reward(args.reward_config)
    run = SearchRun(space, evaluator, reward, args.budget, args.seed, controller)
    best_spec, run = search(run)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "history.csv"), _history_csv(run.history))
    best = {
        "spec": spec_to_dict(best_spec),
        "encoding": list(run.best.encoding),
        "energy_mj": run.best.energy_mj,
        "accuracy": run.best.accuracy,
        "objective": run.best.objective,
    }
    _write(os.path.join(args.out, "best_spec.json"), _dump(best))
    sys.stdout.write(_dump({"out": args.out, "evaluations": len(run.history), "best": best}))
    return 0


def _cmd_compare(args) -> int:
    space = load_space(args.space)
    net = load_checkpoint(args.ckpt)
    profile = load_profile(args.profile)
    rules = load_rules(args.rules)
    dataset = load_csv(args.data, args.target)
    parts = split(dataset, SplitSpec(seed=args.split_seed))
    target_T = alpha = beta = None
    controller = None
    if args.reward_config:
        doc = _read_json(args.reward_config)
        controller = ControllerConfig.from_dict(doc.pop("controller", {}))
        target_T = doc.get("T")
        alpha = doc.get("alpha")
        beta = doc.get("beta")
    report = run_comparison(
        space=space,
        net=net,
        profile=profile,
        rules=rules,
        train_features=dataset.features[parts.train],
        train_targets=dataset.targets[parts.train],
        val_features=dataset.features[parts.validation],
        val_targets=dataset.targets[parts.validation],
        test_features=dataset.features[parts.test],
        test_targets=dataset.targets[parts.test],
        budget=args.budget,
        seed=args.seed,
        batch=args.batch,
        target_T=target_T,
        alpha=alpha if alpha is not None else -2.0,
        beta=beta if beta is not None else -0.5,
        controller=controller,
        dataset_name=dataset.name,
    )
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "report.json"), _dump(report.to_dict()))
    _write(os.path.join(args.out, "report.txt"), render_report_text(report))
    for method, rows in report.histories.items():
        _write(os.path.join(args.out, f"history_{method}.csv"), _history_csv(rows))
    sys.stdout.write(render_report_text(report))
    return 0


def _cmd_trace_energy(args) -> int:
    parts = args.window.split(",")
    if len(parts) != 2:
        raise KenasError("--window expects 'start,end'")
    try:
        window = (float(parts[0]), float(parts[1]))
    except ValueError:
        raise KenasError(f"--window values must be numeric, got {args.window!r}") from None
    trace = load_trace_csv(args.trace, window)
    if args.smooth is not None:
        trace = moving_average(trace, args.smooth)
    sys.stdout.write(_dump({"energy_mj": energy_from_trace(trace)}))
    return 0


def _cmd_brute_force(args) -> int:
    space = load_space(args.space)
    profile = load_profile(args.profile)
    rules = load_rules(args.rules)
    doc = _read_json(args.surrogate)
    accuracy_fn = surrogate_accuracy_fn(space, dict(doc.get("accuracies", {})), doc.get("default"))
    evaluator = SpecEvaluator(space, accuracy_fn, profile, rules, args.batch)
    reward, _ = _load_reward(args.reward_config)
    result = brute_force(space, evaluator, reward, cap=args.cap)
    sys.stdout.write(
        _dump(
            {
                "spec": spec_to_dict(result.spec),
                "objective": result.objective,
                "energy_mj": result.energy_mj,
                "accuracy": result.accuracy,
            }
        )
    )
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kenas",
        description="Kernel-level energy estimation and energy-aware architecture search",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    default_rules = str(assets.default_rules_path())

    p = sub.add_parser("estimate", help="predict the inference energy of a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--rules", default=default_rules)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("detect-kernels", help="fuse a graph into kernels, optionally merging parallel convs")
    p.add_argument("--graph", required=True)
    p.add_argument("--rules", default=default_rules)
    p.add_argument("--max-parallel", type=int, default=None)
    p.set_defaults(func=_cmd_detect_kernels)

    p = sub.add_parser("train-supernet", help="one-shot train an entangled supernet on a CSV dataset")
    p.add_argument("--space", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_supernet)

    p = sub.add_parser("search", help="run the policy-gradient controller")
    p.add_argument("--space", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--rules", default=default_rules)
    p.add_argument("--reward-config", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--surrogate", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("compare", help="conventional vs power-only vs energy objectives, one report")
    p.add_argument("--space", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rules", default=default_rules)
    p.add_argument("--budget", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--reward-config", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("trace-energy", help="integrate a power trace over a window")
    p.add_argument("--trace", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--smooth", type=int, default=None)
    p.set_defaults(func=_cmd_trace_energy)

    p = sub.add_parser("brute-force", help="exact optimum over a capped space with surrogate accuracies")
    p.add_argument("--space", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--reward-config", required=True)
    p.add_argument("--rules", default=default_rules)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--cap", type=int, default=100_000)
    p.set_defaults(func=_cmd_brute_force)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (KenasError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(json.dumps({"error": str(exc)}) + "\n")
        return 2


def entrypoint() -> None:
    raise SystemExit(main())
