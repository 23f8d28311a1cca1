"""Command line: dataset synthesis, graph stats, cross-validation, comparisons.

Run configurations are JSON files with a ``data`` source (either the three CSV
paths or a ``synth`` recipe), optional ``train`` overrides, optional
``edge_rules`` overriding per-element defaults by name, an optional ``out``
path, and an optional ``compare`` block selecting baselines and graph subsets.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .baselines import BaselineKind, run_baseline_cv
from .data import (DataError, Dataset, SynthConfig, generate_synthetic,
                   load_dataset, save_dataset)
from .graph import (EQUALITY, THRESHOLD, EdgeRule, GraphError,
                    build_affinity_matrices, default_edge_rules,
                    graph_statistics)
from .model import finite_diff_check, init_params
from .train import TrainConfig, TrainingError, run_cv

GRADCHECK_TOLERANCE = 1e-5

_SYNTH_KEYS = {"n_nodes", "n_features", "n_classes", "class_separation",
               "informative_elements", "noise_elements", "seed"}
_TRAIN_KEYS = {"hidden_dims", "dropout_rate", "l2_coeff", "learning_rate",
               "phase1_epochs", "max_total_epochs", "patience", "val_fraction",
               "seed", "folds"}
_BASELINE_NAMES = {kind.value for kind in BaselineKind}


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class RunConfig:
    """Parsed run configuration before the dataset is materialized."""

    synth: SynthConfig | None
    data_paths: dict[str, str] | None
    train: TrainConfig
    edge_rule_specs: list[dict]
    out: str | None
    baselines: list[str]
    subsets: list[list[str]] | None


def _parse_synth(raw) -> SynthConfig:
    if not isinstance(raw, dict):
        raise ConfigError("data.synth", "must be an object")
    unknown = set(raw) - _SYNTH_KEYS
    if unknown:
        raise ConfigError(f"data.synth.{sorted(unknown)[0]}", "unknown key")
    kwargs = dict(raw)
    if "informative_elements" in kwargs:
        kwargs["informative_elements"] = tuple(
            (str(name), float(corr)) for name, corr in kwargs["informative_elements"])
    if "noise_elements" in kwargs:
        kwargs["noise_elements"] = tuple(str(n) for n in kwargs["noise_elements"])
    try:
        return SynthConfig(**kwargs)
    except (DataError, TypeError, ValueError) as err:
        raise ConfigError("data.synth", str(err)) from None


def _parse_train(raw) -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError("train", "must be an object")
    unknown = set(raw) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"train.{sorted(unknown)[0]}", "unknown key")
    kwargs = dict(raw)
    if "hidden_dims" in kwargs:
        kwargs["hidden_dims"] = tuple(kwargs["hidden_dims"])
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError("train", str(err)) from None


def _parse_edge_rules(raw) -> list[dict]:
    if not isinstance(raw, list):
        raise ConfigError("edge_rules", "must be a list")
    specs = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or "element" not in entry:
            raise ConfigError(f"edge_rules[{i}].element", "missing element name")
        kind = entry.get("kind", THRESHOLD)
        if kind not in (THRESHOLD, EQUALITY):
            raise ConfigError(f"edge_rules[{i}].kind", f"unknown kind {kind!r}")
        beta = entry.get("beta")
        if kind == THRESHOLD and (beta is None or float(beta) <= 0):
            raise ConfigError(f"edge_rules[{i}].beta",
                              "threshold rules need beta > 0")
        specs.append({"element": str(entry["element"]), "kind": kind,
                      "beta": None if beta is None else float(beta)})
    return specs


def parse_run_config(raw) -> RunConfig:
    """Validate a raw config object; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    data = raw.get("data")
    if not isinstance(data, dict):
        raise ConfigError("data", "missing data source")
    path_keys = ("features", "labels", "demographics")
    has_paths = all(key in data for key in path_keys)
    has_synth = "synth" in data
    if has_paths == has_synth:
        raise ConfigError(
            "data", "exactly one of csv paths or a synth recipe is required")
    synth = _parse_synth(data["synth"]) if has_synth else None
    paths = ({key: str(data[key]) for key in path_keys} if has_paths else None)
    train = _parse_train(raw.get("train", {}))
    rules = _parse_edge_rules(raw.get("edge_rules", []))
    compare = raw.get("compare", {})
    if not isinstance(compare, dict):
        raise ConfigError("compare", "must be an object")
    baselines = compare.get("baselines", sorted(_BASELINE_NAMES))
    for name in baselines:
        if name not in _BASELINE_NAMES:
            raise ConfigError("compare.baselines",
                              f"unknown baseline {name!r}; "
                              f"choose from {sorted(_BASELINE_NAMES)}")
    subsets = compare.get("subsets")
    if subsets is not None:
        if (not isinstance(subsets, list)
                or not all(isinstance(s, list) and s for s in subsets)):
            raise ConfigError("compare.subsets",
                              "must be a list of non-empty name lists")
        subsets = [[str(n) for n in subset] for subset in subsets]
    out = raw.get("out")
    return RunConfig(synth=synth, data_paths=paths, train=train,
                     edge_rule_specs=rules, out=None if out is None else str(out),
                     baselines=list(baselines), subsets=subsets)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("$", f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("$", f"invalid JSON: {err}") from None
    return parse_run_config(raw)


def materialize_dataset(config: RunConfig) -> Dataset:
    if config.synth is not None:
        return generate_synthetic(config.synth)
    paths = config.data_paths
    return load_dataset(paths["features"], paths["labels"],
                        paths["demographics"])


def resolve_edge_rules(dataset: Dataset, specs) -> list[EdgeRule]:
    """Per-element defaults with named overrides applied on top."""
    rules = default_edge_rules(dataset)
    for i, spec in enumerate(specs):
        try:
            index = dataset.element_index(spec["element"])
        except DataError as err:
            raise ConfigError(f"edge_rules[{i}].element", str(err)) from None
        rules[index] = EdgeRule(index, spec["kind"], spec["beta"])
    return rules


def ablate_graph_subsets(dataset: Dataset, config: TrainConfig,
                         subsets) -> dict:
    """Cross-validate the model restricted to each requested graph subset.

    Subsets are lists of element names; keys of the returned mapping join the
    names in dataset element order with "+". All subsets share the fold
    splits and per-fold seeds of ``config.seed``.
    """
    base_rules = (list(config.edge_rules) if config.edge_rules
                  else default_edge_rules(dataset))
    by_element = {dataset.element_names[rule.element_index]: rule
                  for rule in base_rules}
    reports = {}
    for subset in subsets:
        if not subset:
            raise ConfigError("compare.subsets", "empty graph subset")
        for name in subset:
            if name not in by_element:
                raise ConfigError("compare.subsets",
                                  f"unknown element {name!r}")
        chosen = [by_element[name] for name in dataset.element_names
                  if name in set(subset)]
        key = "+".join(name for name in dataset.element_names
                       if name in set(subset))
        subset_config = replace(config, edge_rules=tuple(chosen))
        reports[key] = run_cv(dataset, subset_config).to_dict()
    return reports


def _default_subsets(dataset: Dataset) -> list[list[str]]:
    singletons = [[name] for name in dataset.element_names]
    if dataset.n_elements > 1:
        return singletons + [list(dataset.element_names)]
    return singletons


def _write_report(report: dict, out_path: str | None) -> str | None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_path is None:
        print(text)
        return None
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n")
    return str(path)


def _apply_overrides(run: RunConfig, args) -> RunConfig:
    """Fold --seed/--folds/--out flags into the parsed config."""
    train = run.train
    synth = run.synth
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
        if synth is not None:
            synth = replace(synth, seed=args.seed)
    if getattr(args, "folds", None) is not None:
        try:
            train = replace(train, folds=args.folds)
        except ValueError as err:
            raise ConfigError("train.folds", str(err)) from None
    out = getattr(args, "out", None) or run.out
    return RunConfig(synth=synth, data_paths=run.data_paths, train=train,
                     edge_rule_specs=run.edge_rule_specs, out=out,
                     baselines=run.baselines, subsets=run.subsets)


def cmd_synth(args) -> int:
    informative = tuple(
        _parse_informative_flag(spec) for spec in (args.informative or [])
    ) or (("informative", 0.9),)
    noise = tuple(args.noise or []) or ("noise",)
    config = SynthConfig(n_nodes=args.nodes, n_features=args.features,
                         n_classes=args.classes,
                         class_separation=args.separation,
                         informative_elements=informative,
                         noise_elements=noise, seed=args.seed)
    paths = save_dataset(generate_synthetic(config), args.out)
    for name in ("features", "labels", "demographics"):
        print(f"{name}: {paths[name]}")
    return 0


def _parse_informative_flag(spec: str) -> tuple[str, float]:
    name, sep, corr = spec.rpartition(":")
    if not sep or not name:
        raise ConfigError("--informative", f"expected NAME:CORR, got {spec!r}")
    try:
        return name, float(corr)
    except ValueError:
        raise ConfigError("--informative",
                          f"correlation {corr!r} is not a number") from None


def cmd_graph_stats(args) -> int:
    run = _apply_overrides(load_run_config(args.config), args)
    dataset = materialize_dataset(run)
    rules = resolve_edge_rules(dataset, run.edge_rule_specs)
    affinities = build_affinity_matrices(dataset, rules)
    report = {"n_nodes": dataset.n_nodes,
              "graphs": [graph_statistics(a) for a in affinities]}
    written = _write_report(report, run.out)
    if written:
        print(f"graph-stats: {len(affinities)} graphs -> {written}")
    return 0


def cmd_cv(args) -> int:
    run = _apply_overrides(load_run_config(args.config), args)
    dataset = materialize_dataset(run)
    rules = resolve_edge_rules(dataset, run.edge_rule_specs)
    config = replace(run.train, edge_rules=tuple(rules))
    report = run_cv(dataset, config).to_dict()
    written = _write_report(report, run.out)
    tail = f" -> {written}" if written else ""
    print(f"cv: mean_acc={report['mean_acc']:.4f} "
          f"std_acc={report['std_acc']:.4f} folds={config.folds}{tail}",
          file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    run = _apply_overrides(load_run_config(args.config), args)
    if args.baselines is not None:
        names = [n for n in args.baselines.split(",") if n]
        for name in names:
            if name not in _BASELINE_NAMES:
                raise ConfigError("--baselines",
                                  f"unknown baseline {name!r}; "
                                  f"choose from {sorted(_BASELINE_NAMES)}")
        run.baselines = names
    dataset = materialize_dataset(run)
    rules = resolve_edge_rules(dataset, run.edge_rule_specs)
    config = replace(run.train, edge_rules=tuple(rules))
    subsets = run.subsets
    if args.subsets is not None:
        subsets = [part.split("+") for part in args.subsets.split(",") if part]
    if subsets is None:
        subsets = _default_subsets(dataset)
    proposed = run_cv(dataset, config).to_dict()
    report = {
        "config": proposed["config"],
        "split_hash": proposed["split_hash"],
        "proposed": proposed,
        "baselines": {name: run_baseline_cv(dataset, config, BaselineKind(name))
                      for name in run.baselines},
        "subsets": ablate_graph_subsets(dataset, config, subsets),
    }
    written = _write_report(report, run.out)
    tail = f" -> {written}" if written else ""
    ranked = {name: entry["mean_acc"]
              for name, entry in report["baselines"].items()}
    ranked["proposed"] = proposed["mean_acc"]
    summary = " ".join(f"{name}={acc:.4f}"
                       for name, acc in sorted(ranked.items()))
    print(f"compare: {summary}{tail}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_instances(seed=args.seed, instances=args.instances,
                                  n_coords=args.coords)
    worst = 0.0
    for i, (n_nodes, err) in enumerate(results):
        print(f"instance {i}: n={n_nodes} max_rel_err={err:.3e}")
        worst = max(worst, err)
    print(f"max_relative_error={worst:.3e}")
    if worst < args.tol:
        return 0
    print(f"error: gradient check failed: {worst:.3e} >= {args.tol:g}",
          file=sys.stderr)
    return 1


def gradcheck_instances(seed: int = 0, instances: int = 5, n_coords=None,
                        hidden_dims=(16,)) -> list[tuple[int, float]]:
    """Finite-difference checks on small random two-branch instances.

    Returns one (n_nodes, max_relative_error) pair per instance.
    """
    results = []
    root = np.random.SeedSequence(seed)
    for child in root.spawn(instances):
        rng = np.random.default_rng(child)
        n_nodes = int(rng.integers(6, 13))
        synth = SynthConfig(
            n_nodes=n_nodes, n_features=4, n_classes=3, class_separation=1.5,
            informative_elements=(("informative", 0.8),),
            noise_elements=("noise",), seed=int(rng.integers(0, 2 ** 31)))
        dataset = generate_synthetic(synth)
        config = TrainConfig(hidden_dims=tuple(hidden_dims))
        params = init_params(dataset.n_features, config.hidden_dims,
                             dataset.n_classes, dataset.n_elements, rng)
        err = finite_diff_check(dataset, params, config,
                                seed=int(rng.integers(0, 2 ** 31)),
                                n_coords=n_coords)
        results.append((n_nodes, float(err)))
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popgcn",
        description="Multi-graph spectral GCN with attention-weighted fusion "
                    "for population-graph node classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic dataset as CSVs")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--nodes", type=int, default=300)
    synth.add_argument("--features", type=int, default=20)
    synth.add_argument("--classes", type=int, default=3)
    synth.add_argument("--separation", type=float, default=1.0)
    synth.add_argument("--informative", action="append", metavar="NAME:CORR",
                       help="informative element, repeatable "
                            "(default informative:0.9)")
    synth.add_argument("--noise", action="append", metavar="NAME",
                       help="noise element, repeatable (default noise)")
    synth.set_defaults(func=cmd_synth)

    stats = sub.add_parser("graph-stats",
                           help="per-element graph statistics as JSON")
    stats.add_argument("--config", required=True)
    stats.add_argument("--seed", type=int)
    stats.add_argument("--out")
    stats.set_defaults(func=cmd_graph_stats)

    cv = sub.add_parser("cv", help="stratified cross-validation report")
    cv.add_argument("--config", required=True)
    cv.add_argument("--seed", type=int)
    cv.add_argument("--folds", type=int)
    cv.add_argument("--out")
    cv.set_defaults(func=cmd_cv)

    compare = sub.add_parser(
        "compare", help="model vs baselines plus graph-subset ablations")
    compare.add_argument("--config", required=True)
    compare.add_argument("--seed", type=int)
    compare.add_argument("--folds", type=int)
    compare.add_argument("--out")
    compare.add_argument("--baselines", metavar="A,B,...",
                         help="comma list from linear,dense_nn,avg_gcn "
                              "(default all)")
    compare.add_argument("--subsets", metavar="A+B,C,...",
                         help="comma list of plus-joined element subsets "
                              "(default singletons plus the full set)")
    compare.set_defaults(func=cmd_compare)

    grad = sub.add_parser("gradcheck",
                          help="finite-difference gradient verification")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--instances", type=int, default=5)
    grad.add_argument("--coords", type=int, default=None,
                      help="random coordinate subsample per instance "
                           "(default: all)")
    grad.add_argument("--tol", type=float, default=GRADCHECK_TOLERANCE)
    grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: config: {err}", file=sys.stderr)
        return 1
    except (DataError, GraphError, TrainingError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
