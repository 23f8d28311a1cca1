"""Population-graph construction: edge rules, similarity weighting, normalization.

One graph per demographic element: a binary edge matrix derived from that
element's column, weighted entrywise by feature similarity, then symmetrically
normalized (with self-loops added once) into the propagation operator consumed
by the graph-convolution layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

THRESHOLD = "threshold"
EQUALITY = "equality"

AGE_BETA = 2.0
CONTINUOUS_BETA_FACTOR = 0.5
MAX_CATEGORICAL_LEVELS = 10


class GraphError(ValueError):
    """Invalid graph-construction input."""


@dataclass(frozen=True)
class EdgeRule:
    """How one demographic element's column turns into edges.

    ``threshold`` connects subjects whose values differ by less than ``beta``;
    ``equality`` connects subjects whose values match exactly.
    """

    element_index: int
    kind: str = THRESHOLD
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in (THRESHOLD, EQUALITY):
            raise GraphError(f"unknown edge rule kind {self.kind!r}")
        if self.element_index < 0:
            raise GraphError("element_index must be nonnegative")
        if self.kind == THRESHOLD:
            if self.beta is None or not np.isfinite(self.beta) or self.beta <= 0:
                raise GraphError(f"threshold rules need beta > 0, got {self.beta}")


@dataclass(frozen=True)
class AffinityMatrix:
    """Similarity-weighted edge matrix of one element's graph."""

    weights: np.ndarray
    element_name: str = ""

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
            raise GraphError(f"affinity weights must be square, got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise GraphError("affinity weights must be finite")
        if not np.array_equal(weights, weights.T):
            raise GraphError("affinity weights must be exactly symmetric")
        if np.any(weights < 0):
            raise GraphError("affinity weights must be nonnegative")
        if np.any(np.diagonal(weights) != 0):
            raise GraphError("affinity diagonal must be zero (self-loops are "
                             "added during normalization)")
        object.__setattr__(self, "weights", weights)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class PropagationMatrix:
    """Symmetrically normalized, self-loop-augmented propagation operator."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise GraphError(f"propagation matrix must be square, got {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise GraphError("propagation matrix must be finite")
        if not np.array_equal(matrix, matrix.T):
            raise GraphError("propagation matrix must be exactly symmetric")
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


def build_edge_matrix(delta_column, rule: EdgeRule) -> np.ndarray:
    """Binary symmetric edge matrix from one demographic column.

    Threshold rules connect i != j when |delta_i - delta_j| < beta, equality
    rules when the values match exactly. The diagonal stays zero.
    """
    column = np.asarray(delta_column, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(column))
    if bad.size:
        raise GraphError(f"non-finite demographic value at row {bad[0]}")
    if rule.kind == THRESHOLD:
        edges = np.abs(column[:, None] - column[None, :]) < rule.beta
    else:
        edges = column[:, None] == column[None, :]
    edges = edges.astype(np.float64)
    np.fill_diagonal(edges, 0.0)
    return edges


def similarity_matrix(features) -> np.ndarray:
    """Rectified Pearson correlation between subject feature rows.

    Entries are max(0, corr(X_i, X_j)): anti-correlated subjects disconnect
    rather than injecting negative weight into the degree normalization. The
    diagonal is exactly 1.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] < 2:
        raise GraphError("similarity needs at least 2 feature dimensions per row")
    spread = feats.max(axis=1) - feats.min(axis=1)
    flat = np.flatnonzero(spread == 0)
    if flat.size:
        raise GraphError(
            f"feature row {flat[0]} is constant; correlation undefined")
    sim = np.corrcoef(feats)
    sim = np.clip((sim + sim.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def build_affinity(sim, edges, element_name: str = "") -> AffinityMatrix:
    """Entrywise product of the similarity and binary edge matrices."""
    sim = np.asarray(sim, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if sim.shape != edges.shape:
        raise GraphError(
            f"shape mismatch: similarity {sim.shape} vs edges {edges.shape}")
    if np.any((edges != 0.0) & (edges != 1.0)):
        raise GraphError("edge matrix must be binary")
    if not np.array_equal(edges, edges.T):
        raise GraphError("edge matrix must be symmetric")
    if np.any(np.diagonal(edges) != 0):
        raise GraphError("edge matrix diagonal must be zero")
    return AffinityMatrix(weights=sim * edges, element_name=element_name)


def normalize_affinity(affinity: AffinityMatrix) -> PropagationMatrix:
    """Self-loop-augmented symmetric normalization.

    With W' = W + I and degrees D_ii = sum_j W'_ij, returns
    D^{-1/2} W' D^{-1/2}. The unit self-loop keeps every degree >= 1, so
    isolated subjects propagate only to themselves instead of dividing by
    zero, and the result's spectral radius stays <= 1.
    """
    augmented = affinity.weights + np.eye(affinity.n_nodes)
    inv_sqrt_degree = 1.0 / np.sqrt(augmented.sum(axis=1))
    # outer-product scaling keeps the result bitwise symmetric
    return PropagationMatrix(
        matrix=augmented * np.outer(inv_sqrt_degree, inv_sqrt_degree))


def spectral_radius(matrix, n_iter: int = 1000, seed: int = 0) -> float:
    """Largest absolute eigenvalue, estimated by power iteration."""
    matrix = np.asarray(matrix, dtype=np.float64)
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(matrix.shape[0])
    vec /= np.linalg.norm(vec)
    radius = 0.0
    for _ in range(n_iter):
        prod = matrix @ vec
        radius = float(np.linalg.norm(prod))
        if radius == 0.0:
            return 0.0
        vec = prod / radius
    return radius


def default_edge_rules(dataset: Dataset) -> list[EdgeRule]:
    """Per-element default rules, overridable by name in run configs.

    Columns named "age" get a 2-unit threshold; integer-coded columns with few
    distinct levels (and constant columns) are treated as categorical
    (equality); remaining continuous columns get a threshold of half their
    standard deviation.
    """
    rules = []
    for m, name in enumerate(dataset.element_names):
        column = dataset.demographics[:, m]
        distinct = np.unique(column).size
        if name.lower() == "age":
            rules.append(EdgeRule(m, THRESHOLD, AGE_BETA))
        elif distinct == 1 or (np.all(column == np.round(column))
                               and distinct <= MAX_CATEGORICAL_LEVELS):
            rules.append(EdgeRule(m, EQUALITY))
        else:
            rules.append(EdgeRule(m, THRESHOLD,
                                  CONTINUOUS_BETA_FACTOR * float(column.std())))
    return rules


def build_affinity_matrices(dataset: Dataset, rules=None) -> list[AffinityMatrix]:
    """One similarity-weighted graph per rule (defaults: one rule per element).

    The similarity matrix is computed once and shared across all graphs.
    """
    if rules is None:
        rules = default_edge_rules(dataset)
    sim = similarity_matrix(dataset.features)
    matrices = []
    for rule in rules:
        if not 0 <= rule.element_index < dataset.n_elements:
            raise GraphError(
                f"edge rule references element {rule.element_index}, but the "
                f"dataset has {dataset.n_elements} elements")
        edges = build_edge_matrix(dataset.demographics[:, rule.element_index], rule)
        matrices.append(build_affinity(
            sim, edges, dataset.element_names[rule.element_index]))
    return matrices


def build_propagation_matrices(dataset: Dataset, rules=None) -> list[PropagationMatrix]:
    """Normalized propagation operator per element graph."""
    return [normalize_affinity(a) for a in build_affinity_matrices(dataset, rules)]


def graph_statistics(affinity: AffinityMatrix) -> dict:
    """Edge count, density, and degree histogram of one graph."""
    adjacency = affinity.weights > 0
    n = affinity.n_nodes
    degrees = adjacency.sum(axis=1)
    edge_count = int(degrees.sum()) // 2
    pairs = n * (n - 1) // 2
    return {
        "element": affinity.element_name,
        "n_nodes": n,
        "edge_count": edge_count,
        "density": edge_count / pairs if pairs else 0.0,
        "degree_histogram": np.bincount(degrees, minlength=1).tolist(),
    }
