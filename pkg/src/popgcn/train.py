"""Two-phase training schedule, early stopping, evaluation, cross-validation."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, stratified_kfold
from .graph import EdgeRule, build_propagation_matrices, default_edge_rules
from .model import (ModelParams, class_weights, compute_gradients, init_params,
                    model_forward, weighted_cross_entropy)

__all__ = [
    "TrainConfig", "TrainedModel", "CVReport", "TrainingError", "Adam",
    "accuracy", "confusion_matrix", "class_weights", "train_model", "evaluate",
    "run_cv", "cv_folds_and_seeds", "split_hash", "config_to_dict",
]


class TrainingError(RuntimeError):
    """Training diverged or was configured inconsistently."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters, schedule, and graph-construction rules.

    ``edge_rules`` empty means per-element defaults are derived from the
    dataset at run time.
    """

    hidden_dims: tuple[int, ...] = (16,)
    dropout_rate: float = 0.3
    l2_coeff: float = 5e-4
    learning_rate: float = 0.01
    phase1_epochs: int = 150
    max_total_epochs: int = 500
    patience: int = 30
    val_fraction: float = 0.1
    seed: int = 0
    edge_rules: tuple[EdgeRule, ...] = ()
    folds: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims",
                           tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "edge_rules", tuple(self.edge_rules))
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.phase1_epochs < self.max_total_epochs:
            raise ValueError(
                "need 0 <= phase1_epochs < max_total_epochs, got "
                f"{self.phase1_epochs} and {self.max_total_epochs}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")


class Adam:
    """Adaptive-moment optimizer with per-tensor state and bias correction."""

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict = {}

    def update(self, key, param: np.ndarray, grad: np.ndarray) -> None:
        """Apply one step to ``param`` in place.

        Each key keeps its own step counter, so a tensor first updated at
        epoch t gets fresh bias correction from its own t=1.
        """
        m, v, t = self._state.get(key, (np.zeros_like(param),
                                        np.zeros_like(param), 0))
        t += 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._state[key] = (m, v, t)
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainedModel:
    """Best-validation parameters plus the per-epoch training history."""

    params: ModelParams
    props: list
    history: list[dict]
    stopped_epoch: int
    best_epoch: int


def accuracy(probabilities, labels, idx) -> float:
    """Fraction of argmax predictions matching labels on ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    predictions = np.asarray(probabilities)[idx].argmax(axis=1)
    return float(np.mean(predictions == np.asarray(labels)[idx]))


def confusion_matrix(labels, predictions, idx, n_classes: int) -> np.ndarray:
    """K x K counts over ``idx``; rows are true classes, columns predictions."""
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    for i in np.asarray(idx, dtype=np.int64):
        out[labels[i], predictions[i]] += 1
    return out


def _stratified_holdout(labels, train_idx, fraction: float, rng):
    """Split train_idx into (optimized, validation) preserving class shares.

    Every class keeps at least one optimized node. If rounding empties the
    validation set, one node is taken from the largest class so early
    stopping still has a signal.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    val_parts, opt_parts = [], []
    for cls in np.unique(labels[train_idx]):
        members = rng.permutation(train_idx[labels[train_idx] == cls])
        n_val = min(members.size - 1, int(round(fraction * members.size)))
        if n_val > 0:
            val_parts.append(members[:n_val])
        opt_parts.append(members[n_val:])
    if not val_parts:
        biggest = int(np.argmax([part.size for part in opt_parts]))
        if opt_parts[biggest].size < 2:
            raise TrainingError(
                "not enough training nodes to hold out a validation set")
        val_parts.append(opt_parts[biggest][:1])
        opt_parts[biggest] = opt_parts[biggest][1:]
    return (np.sort(np.concatenate(opt_parts)),
            np.sort(np.concatenate(val_parts)))


def train_model(dataset: Dataset, props, config: TrainConfig, seed,
                train_idx=None) -> TrainedModel:
    """Train the multi-branch model transductively on ``train_idx``.

    Phase one freezes the fusion weights at 1/M and trains only the branch
    filters for ``phase1_epochs``; phase two trains filters and fusion weights
    jointly with early stopping on a stratified held-out slice of the training
    nodes. Returns the best-validation-loss checkpoint seen at any epoch.
    Labels outside ``train_idx`` are never read, and the whole run is a pure
    function of (dataset, props, config, seed).
    """
    if len(props) == 0:
        raise TrainingError("need at least one propagation matrix")
    if train_idx is None:
        train_idx = np.arange(dataset.n_nodes)
    rng = np.random.default_rng(seed)
    opt_idx, val_idx = _stratified_holdout(dataset.labels, train_idx,
                                           config.val_fraction, rng)
    params = init_params(dataset.n_features, config.hidden_dims,
                         dataset.n_classes, len(props), rng)
    weights = class_weights(dataset.labels, opt_idx)
    optimizer = Adam(config.learning_rate)
    features = dataset.features
    labels = dataset.labels

    history: list[dict] = []
    best_loss = np.inf
    best_params = params.copy()
    best_epoch = -1
    stale = 0

    for epoch in range(config.max_total_epochs):
        phase2 = epoch >= config.phase1_epochs
        if epoch == config.phase1_epochs:
            stale = 0  # phase two gets a full patience window of its own
        trace = model_forward(props, features, params, config.dropout_rate,
                              rng, training=True)
        train_loss = weighted_cross_entropy(trace.probabilities, labels,
                                            opt_idx, weights)
        if not np.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        grads = compute_gradients(trace, labels, opt_idx, weights,
                                  config.l2_coeff, params)
        for m, branch in enumerate(params.branches):
            for i, theta in enumerate(branch.layer_weights):
                optimizer.update(("theta", m, i), theta, grads.branches[m][i])
        if phase2:
            optimizer.update(("omega",), params.omega, grads.omega)

        eval_probs = model_forward(props, features, params, 0.0, None,
                                   training=False).probabilities
        val_loss = weighted_cross_entropy(eval_probs, labels, val_idx, weights)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append({
            "epoch": epoch,
            "phase": 2 if phase2 else 1,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "train_acc": accuracy(eval_probs, labels, opt_idx),
            "val_acc": accuracy(eval_probs, labels, val_idx),
            "omega": params.omega.tolist(),
        })
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if phase2 and stale >= config.patience:
                break

    return TrainedModel(params=best_params, props=list(props), history=history,
                        stopped_epoch=len(history), best_epoch=best_epoch)


def evaluate(model: TrainedModel, dataset: Dataset, test_idx) -> dict:
    """Accuracy, per-class accuracy, and confusion matrix on ``test_idx``."""
    test_idx = np.asarray(test_idx, dtype=np.int64)
    probs = model_forward(model.props, dataset.features, model.params, 0.0,
                          None, training=False).probabilities
    predictions = probs.argmax(axis=1)
    confusion = confusion_matrix(dataset.labels, predictions, test_idx,
                                 dataset.n_classes)
    counts = confusion.sum(axis=1)
    per_class = [float(hit / total) if total else None
                 for hit, total in zip(np.diagonal(confusion), counts)]
    return {
        "accuracy": float(np.mean(
            predictions[test_idx] == dataset.labels[test_idx])),
        "per_class_accuracy": per_class,
        "confusion": confusion.tolist(),
        "n_test": int(test_idx.size),
    }


def cv_folds_and_seeds(labels, config: TrainConfig):
    """Fold splits plus one training seed per fold, derived from config.seed.

    Baselines must consume exactly these splits and seeds so comparisons
    against the multi-branch model differ only in model structure.
    """
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.folds + 1)
    folds = stratified_kfold(labels, config.folds, children[0])
    return folds, children[1:]


def split_hash(folds) -> str:
    """Stable digest of a fold partition, for cross-report fairness checks."""
    payload = json.dumps([fold.test_idx.tolist() for fold in folds])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _rules_to_dicts(rules, element_names) -> list[dict]:
    return [{"element": element_names[rule.element_index], "kind": rule.kind,
             "beta": rule.beta} for rule in rules]


def config_to_dict(config: TrainConfig, rules=None, element_names=None) -> dict:
    """JSON-ready echo of a training configuration."""
    out = {
        "hidden_dims": list(config.hidden_dims),
        "dropout_rate": config.dropout_rate,
        "l2_coeff": config.l2_coeff,
        "learning_rate": config.learning_rate,
        "phase1_epochs": config.phase1_epochs,
        "max_total_epochs": config.max_total_epochs,
        "patience": config.patience,
        "val_fraction": config.val_fraction,
        "seed": config.seed,
        "folds": config.folds,
    }
    if rules is not None and element_names is not None:
        out["edge_rules"] = _rules_to_dicts(rules, element_names)
    return out


@dataclass
class CVReport:
    """Per-fold metrics and fusion weights with aggregate accuracy."""

    folds: list[dict]
    mean_acc: float
    std_acc: float
    config: dict
    split_hash: str

    def __post_init__(self):
        expected = self.config.get("folds")
        if expected is not None and expected != len(self.folds):
            raise ValueError(
                f"report has {len(self.folds)} folds, config says {expected}")

    def to_dict(self) -> dict:
        return {"config": self.config, "folds": self.folds,
                "mean_acc": self.mean_acc, "std_acc": self.std_acc,
                "split_hash": self.split_hash}


def run_cv(dataset: Dataset, config: TrainConfig) -> CVReport:
    """Stratified cross-validation of the multi-branch model.

    Graphs are built once on the full node set (test subjects stay vertices of
    the population graphs); each fold trains on its own training mask and is
    scored on its test mask. Reported omegas come in raw form and normalized
    by the sum of absolute values.
    """
    rules = (list(config.edge_rules) if config.edge_rules
             else default_edge_rules(dataset))
    props = build_propagation_matrices(dataset, rules)
    folds, seeds = cv_folds_and_seeds(dataset.labels, config)
    entries = []
    for fold, fold_seed in zip(folds, seeds):
        started = time.perf_counter()
        model = train_model(dataset, props, config, fold_seed,
                            train_idx=fold.train_idx)
        metrics = evaluate(model, dataset, fold.test_idx)
        omega = model.params.omega
        scale = float(np.sum(np.abs(omega)))
        entries.append({
            "fold": fold.fold_id,
            "accuracy": metrics["accuracy"],
            "per_class_accuracy": metrics["per_class_accuracy"],
            "confusion": metrics["confusion"],
            "train_accuracy": accuracy(
                model_forward(props, dataset.features, model.params, 0.0, None,
                              training=False).probabilities,
                dataset.labels, fold.train_idx),
            "omega_raw": omega.tolist(),
            "omega_normalized": ((omega / scale).tolist() if scale > 0
                                 else omega.tolist()),
            "best_epoch": model.best_epoch,
            "stopped_epoch": model.stopped_epoch,
            "wall_clock_sec": time.perf_counter() - started,
        })
    accs = np.array([entry["accuracy"] for entry in entries])
    echo = config_to_dict(config, rules, dataset.element_names)
    return CVReport(folds=entries, mean_acc=float(accs.mean()),
                    std_acc=float(accs.std()), config=echo,
                    split_hash=split_hash(folds))
