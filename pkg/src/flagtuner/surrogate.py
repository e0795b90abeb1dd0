"""Random-forest regressor over bit vectors, with per-tree predictions.

The forest's behavior is pinned so independent builds agree bit for bit:
100 trees, bootstrap resamples of dataset size drawn with replacement, all
features considered at every split, variance-reduction criterion with ties
broken by the lowest feature index, nodes with fewer than 2 rows or zero
target variance become leaves, unlimited depth.  Bootstrap indices for tree
``i`` come from an independent seed-derived substream so row order (the
dataset's insertion order) is the only canonical ordering.

The acquisition score combines the cross-tree mean and variance into the
expected improvement over the best time measured so far:

    EI = (f_best - mu) * Phi(Z) + sigma * phi(Z),   Z = (f_best - mu) / sigma

collapsing to max(f_best - mu, 0) when sigma is (numerically) zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, Sequence

SIGMA_FLOOR = 1e-12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_erf_vec = np.vectorize(math.erf, otypes=[np.float64])


def normal_pdf(z: float) -> float:
    """Standard normal density, exp(-z^2/2)/sqrt(2*pi)."""
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the error function.

    math.erf is correctly rounded to double precision, so the absolute error
    is far below the 1e-7 budget this module promises on z in [-8, 8].
    """
    return 0.5 * (1.0 + math.erf(z * _INV_SQRT_2))


@dataclass
class RegressionTree:
    """Array-encoded binary tree splitting on single bit values.

    ``feature[k] >= 0`` marks an internal node: rows with bit 0 descend to
    ``left[k]``, rows with bit 1 to ``right[k]``.  Leaves carry the mean
    target of their training rows in ``value[k]`` and feature -1.
    """

    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if active.size == 0:
                break
            bits = X[active, feat[active]]
            node[active] = np.where(bits == 1, self.right[node[active]], self.left[node[active]])
        return self.value[node]

    def predict_one(self, x: np.ndarray) -> float:
        k = 0
        while self.feature[k] >= 0:
            k = self.right[k] if x[self.feature[k]] == 1 else self.left[k]
        return float(self.value[k])


def _grow_tree(X: np.ndarray, y: np.ndarray, min_samples_split: int = 2) -> RegressionTree:
    """Greedy variance-reduction tree on binary features.

    The split minimizing the summed child squared error wins; exact ties go
    to the lowest feature index.  A feature is only splittable if both sides
    are non-empty.
    """
    Xf = X.astype(np.float64)
    y2 = y * y
    features: list[int] = [-1]
    lefts: list[int] = [-1]
    rights: list[int] = [-1]
    values: list[float] = [0.0]

    # Iterative build; recursion depth could otherwise reach the row count.
    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(X.shape[0]))]
    with np.errstate(divide="ignore", invalid="ignore"):
        while stack:
            node, rows = stack.pop()
            y_node = y[rows]
            m = rows.size
            total_s = float(y_node.sum())
            values[node] = total_s / m
            if m < min_samples_split or y_node.min() == y_node.max():
                continue
            Xn = Xf[rows]
            y2_node = y2[rows]
            c1 = Xn.sum(axis=0)
            s1 = y_node @ Xn
            q1 = y2_node @ Xn
            total_q = float(y2_node.sum())
            c0 = m - c1
            sse = (q1 - s1 * s1 / c1) + ((total_q - q1) - (total_s - s1) ** 2 / c0)
            sse[(c1 == 0) | (c0 == 0)] = np.inf
            j = int(sse.argmin())
            if sse[j] == np.inf:
                continue
            on = X[rows, j] == 1
            features[node] = j
            child = len(features)
            lefts[node] = child
            rights[node] = child + 1
            features += (-1, -1)
            lefts += (-1, -1)
            rights += (-1, -1)
            values += (0.0, 0.0)
            stack.append((child, rows[~on]))
            stack.append((child + 1, rows[on]))

    return RegressionTree(
        feature=np.asarray(features, dtype=np.int32),
        left=np.asarray(lefts, dtype=np.int32),
        right=np.asarray(rights, dtype=np.int32),
        value=np.asarray(values, dtype=np.float64),
    )


@dataclass
class Prediction:
    """Cross-tree summary for one sequence: mean, population variance, raw outputs."""

    mean: float
    variance: float
    per_tree: np.ndarray

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


class Forest:
    """Bagged ensemble of regression trees over flag bits."""

    def __init__(self, trees: list[RegressionTree], n_features: int):
        self.trees = trees
        self.n_features = n_features
        self._arena: tuple[np.ndarray, ...] | None = None

    def __len__(self) -> int:
        return len(self.trees)

    def _node_arena(self) -> tuple[np.ndarray, ...]:
        # All trees' nodes in one address space so a batch descends every
        # tree at once; built lazily, identical outputs to per-tree descent.
        if self._arena is None:
            sizes = np.array([len(t.feature) for t in self.trees])
            offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int32)
            feature = np.concatenate([t.feature for t in self.trees])
            shift = np.repeat(offsets, sizes).astype(np.int32)
            left = np.concatenate([t.left for t in self.trees]) + shift
            right = np.concatenate([t.right for t in self.trees]) + shift
            value = np.concatenate([t.value for t in self.trees])
            self._arena = (offsets, feature, left, right, value)
        return self._arena

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Per-tree predictions, shape (n_trees, n_rows)."""
        if X.shape[1] != self.n_features:
            raise ValueError(f"feature width {X.shape[1]} != training width {self.n_features}")
        offsets, feature, left, right, value = self._node_arena()
        rows = np.arange(X.shape[0])[None, :]
        node = np.broadcast_to(offsets[:, None], (len(self.trees), X.shape[0])).copy()
        while True:
            feat = feature[node]
            active = feat >= 0
            if not active.any():
                break
            bits = X[rows, feat]  # feat=-1 reads a masked-out column; inert
            nxt = np.where(bits == 1, right[node], left[node])
            node = np.where(active, nxt, node)
        return value[node]

    def predict_stats(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(means, population variances) over trees for each row of X."""
        per_tree = self.predict_matrix(X)
        return per_tree.mean(axis=0), per_tree.var(axis=0)


def fit(data: Dataset, trees: int = 100, rng: np.random.Generator | None = None) -> Forest:
    """Fit a forest on the dataset's insertion-ordered rows.

    Each tree sees an independent bootstrap resample (with replacement, same
    size as the dataset) drawn from a substream keyed by the tree index, so
    trees could be fitted in parallel without changing the result.
    """
    if len(data) < 2:
        raise ValueError(f"forest needs at least 2 rows, got {len(data)}")
    rng = rng if rng is not None else np.random.default_rng()
    X, y = data.as_arrays()
    m = X.shape[0]
    entropy = int(rng.integers(0, 2**63))
    streams = np.random.SeedSequence(entropy).spawn(trees)
    grown: list[RegressionTree] = []
    for ss in streams:
        sub = np.random.default_rng(ss)
        idx = sub.integers(0, m, size=m)
        grown.append(_grow_tree(X[idx], y[idx]))
    return Forest(grown, X.shape[1])


def predict(forest: Forest, seq: Sequence) -> Prediction:
    """Per-tree outputs plus their mean and population variance."""
    x = seq.to_array()[None, :]
    per_tree = forest.predict_matrix(x)[:, 0]
    return Prediction(float(per_tree.mean()), float(per_tree.var()), per_tree)


def expected_improvement(pred: Prediction, f_best: float) -> float:
    """Expected improvement of a candidate over the best observed time.

    With sigma at or below the 1e-12 floor the closed-form limit
    max(f_best - mean, 0) applies, avoiding the 0/0 in Z.
    """
    gap = f_best - pred.mean
    sigma = pred.sigma
    if sigma <= SIGMA_FLOOR:
        return max(gap, 0.0)
    z = gap / sigma
    return max(0.0, gap * normal_cdf(z) + sigma * normal_pdf(z))


def expected_improvement_batch(means: np.ndarray, variances: np.ndarray, f_best: float) -> np.ndarray:
    """Vectorized EI for candidate pools; same semantics as the scalar form."""
    sigma = np.sqrt(variances)
    gap = f_best - means
    degenerate = sigma <= SIGMA_FLOOR
    safe_sigma = np.where(degenerate, 1.0, sigma)
    z = gap / safe_sigma
    cdf = 0.5 * (1.0 + _erf_vec(z * _INV_SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = gap * cdf + sigma * pdf
    return np.where(degenerate, np.maximum(gap, 0.0), np.maximum(ei, 0.0))
