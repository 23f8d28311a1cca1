"""Reference methods: linear classifier, dense network, averaged-graph GCN.

All baselines reuse the shared trainer, fold splits, and per-fold seeds, so a
comparison against the multi-branch model differs only in model structure.
"""

from __future__ import annotations

import time
from dataclasses import replace
from enum import Enum

import numpy as np

from .data import Dataset, FoldSplit
from .graph import (AffinityMatrix, PropagationMatrix, build_affinity_matrices,
                    normalize_affinity)
from .model import model_forward
from .train import (TrainConfig, cv_folds_and_seeds, evaluate, split_hash,
                    train_model)


class BaselineKind(Enum):
    LINEAR = "linear"
    DENSE_NN = "dense_nn"
    AVERAGED_GRAPH_GCN = "avg_gcn"


def identity_propagation(n_nodes: int) -> PropagationMatrix:
    """Graph-free propagation: every node sees only itself."""
    return PropagationMatrix(matrix=np.eye(n_nodes))


def averaged_propagation(dataset: Dataset, rules=None) -> PropagationMatrix:
    """Mean of all element affinity matrices, normalized once."""
    affinities = build_affinity_matrices(dataset, rules)
    mean_weights = np.mean([a.weights for a in affinities], axis=0)
    return normalize_affinity(
        AffinityMatrix(weights=mean_weights, element_name="averaged"))


def _fold_metrics(dataset, fold, config, props, seed, kind: BaselineKind) -> dict:
    if seed is None:
        seed = config.seed
    model = train_model(dataset, props, config, seed, train_idx=fold.train_idx)
    metrics = evaluate(model, dataset, fold.test_idx)
    train_probs = model_forward(props, dataset.features, model.params, 0.0,
                                None, training=False).probabilities
    predictions = train_probs[fold.train_idx].argmax(axis=1)
    metrics["train_accuracy"] = float(
        np.mean(predictions == dataset.labels[fold.train_idx]))
    metrics["kind"] = kind.value
    metrics["fold"] = fold.fold_id
    return metrics


def train_linear(dataset: Dataset, fold: FoldSplit, config: TrainConfig,
                 seed=None) -> dict:
    """Multinomial logistic baseline: one linear map, no graphs, no dropout."""
    cfg = replace(config, hidden_dims=(), dropout_rate=0.0)
    props = [identity_propagation(dataset.n_nodes)]
    return _fold_metrics(dataset, fold, cfg, props, seed, BaselineKind.LINEAR)


def train_dense_nn(dataset: Dataset, fold: FoldSplit, config: TrainConfig,
                   seed=None) -> dict:
    """Dense network on raw features; the graphs are unused.

    Same hidden sizes, dropout, regularizer, and optimizer as one model
    branch, run with an identity propagation matrix.
    """
    props = [identity_propagation(dataset.n_nodes)]
    metrics = _fold_metrics(dataset, fold, config, props, seed,
                            BaselineKind.DENSE_NN)
    metrics["architecture"] = [*config.hidden_dims, dataset.n_classes]
    return metrics


def train_avg_graph_gcn(dataset: Dataset, fold: FoldSplit, config: TrainConfig,
                        seed=None) -> dict:
    """Single-branch GCN on the mean of all element affinity matrices."""
    rules = list(config.edge_rules) if config.edge_rules else None
    props = [averaged_propagation(dataset, rules)]
    return _fold_metrics(dataset, fold, config, props, seed,
                         BaselineKind.AVERAGED_GRAPH_GCN)


_FOLD_TRAINERS = {
    BaselineKind.LINEAR: train_linear,
    BaselineKind.DENSE_NN: train_dense_nn,
    BaselineKind.AVERAGED_GRAPH_GCN: train_avg_graph_gcn,
}


def run_baseline_cv(dataset: Dataset, config: TrainConfig,
                    kind: BaselineKind) -> dict:
    """Cross-validate one baseline on the same folds and seeds as the model."""
    folds, seeds = cv_folds_and_seeds(dataset.labels, config)
    entries = []
    for fold, fold_seed in zip(folds, seeds):
        started = time.perf_counter()
        metrics = _FOLD_TRAINERS[kind](dataset, fold, config, seed=fold_seed)
        metrics["wall_clock_sec"] = time.perf_counter() - started
        entries.append(metrics)
    accs = np.array([entry["accuracy"] for entry in entries])
    return {"kind": kind.value, "folds": entries,
            "mean_acc": float(accs.mean()), "std_acc": float(accs.std()),
            "split_hash": split_hash(folds)}
