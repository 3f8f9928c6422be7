"""Exact data valuation for K-nearest-neighbor utility.

The utility of a coalition of training points is the fraction of the
test label's matches among the coalition's min(|S|, K) members closest
to the test point.  For this utility the Shapley values admit an exact
closed form computed in one sweep from the farthest point to the
nearest, after an O(N log N) sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .games import Game, PlayerSubset, ValueVector

__all__ = [
    "KnnInstance",
    "knn_utility",
    "knn_game",
    "knn_shapley_exact",
    "knn_shapley_testset",
    "pascal_identity_lhs",
]

_METRICS = ("euclidean", "manhattan")


@dataclass
class KnnInstance:
    """Training points paired with one test point.

    On construction the training points are sorted by distance to the
    test point; ties are broken by ascending original index so results
    are deterministic on degenerate data.  Distances are compared
    exactly (no epsilon), which the index tie-break makes safe.
    """

    points: np.ndarray
    labels: np.ndarray
    test_point: np.ndarray
    test_label: Hashable
    k_neighbors: int
    distance: str = "euclidean"
    order: np.ndarray = field(init=False, repr=False)
    matches: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.test_point = np.asarray(self.test_point, dtype=np.float64)
        n = self.points.shape[0]
        if self.points.ndim != 2 or self.labels.shape != (n,):
            raise ValueError("points must be (N, d) with one label per point")
        if not 1 <= self.k_neighbors < n:
            raise ValueError("k_neighbors must satisfy 1 <= K < N")
        if self.distance not in _METRICS:
            raise ValueError(f"unknown metric {self.distance!r}")
        diff = self.points - self.test_point
        if self.distance == "euclidean":
            dist = np.einsum("ij,ij->i", diff, diff)
        else:
            dist = np.abs(diff).sum(axis=1)
        self.order = np.argsort(dist, kind="stable")
        # label-match indicators in distance order
        self.matches = (self.labels[self.order] == self.test_label).astype(np.float64)

    @property
    def n_players(self) -> int:
        return self.points.shape[0]


def _utility_from_sorted(instance: KnnInstance, mask: int) -> float:
    """Match fraction over the coalition's closest min(|S|, K) members."""
    k = instance.k_neighbors
    hits = 0.0
    taken = 0
    for pos, original in enumerate(instance.order):
        if mask >> int(original) & 1:
            hits += instance.matches[pos]
            taken += 1
            if taken == k:
                break
    return hits / k


def knn_utility(instance: KnnInstance, subset: PlayerSubset) -> float:
    """Utility of a coalition of training points for this test point."""
    if subset.n_players != instance.n_players:
        raise ValueError("subset sized for a different training set")
    return _utility_from_sorted(instance, subset.mask)


def knn_game(instances: KnnInstance | Sequence[KnnInstance]) -> Game:
    """Wrap one instance (or the mean utility over several) as a Game."""
    seq = [instances] if isinstance(instances, KnnInstance) else list(instances)
    _check_shared_training(seq)
    n = seq[0].n_players

    def batch(masks: np.ndarray) -> np.ndarray:
        out = np.zeros(masks.shape[0], dtype=np.float64)
        for inst in seq:
            out += np.array([_utility_from_sorted(inst, int(m)) for m in masks])
        return out / len(seq)

    return Game(
        n,
        lambda s: batch(np.array([s.mask], dtype=np.int64))[0],
        range_r=1.0,
        batch_utility=batch,
        monotone=False,
        name="knn",
    )


def knn_shapley_exact(instance: KnnInstance) -> ValueVector:
    """Closed-form exact Shapley values for the KNN utility.

    Walking from the farthest point inward: the farthest point is worth
    match/N, and each step toward the test point adds
    (match_i - match_{i+1}) / K * (min(K-1, i-1) + 1) / i,
    where i is the 1-based distance rank.  Equal adjacent labels
    therefore share exactly equal values.  No utility evaluations are
    consumed.
    """
    n = instance.n_players
    k = instance.k_neighbors
    ind = instance.matches
    ranks = np.arange(1, n, dtype=np.float64)  # i = 1..N-1
    increments = (ind[:-1] - ind[1:]) / k * (np.minimum(k - 1, ranks - 1) + 1.0) / ranks
    sorted_values = np.empty(n, dtype=np.float64)
    sorted_values[n - 1] = ind[n - 1] / n
    sorted_values[:-1] = sorted_values[n - 1] + np.cumsum(increments[::-1])[::-1]
    values = np.empty(n, dtype=np.float64)
    values[instance.order] = sorted_values
    return ValueVector(values, method="knn-exact", eval_count=0)


def _check_shared_training(instances: Sequence[KnnInstance]) -> None:
    if not instances:
        raise ValueError("need at least one instance")
    first = instances[0]
    for inst in instances[1:]:
        if inst.points.shape != first.points.shape or not np.array_equal(
            inst.points, first.points
        ):
            raise ValueError("instances must share the same training points")
        if not np.array_equal(inst.labels, first.labels):
            raise ValueError("instances must share the same training labels")
        if inst.k_neighbors != first.k_neighbors:
            raise ValueError("instances must share the same neighborhood size")


def knn_shapley_testset(instances: Sequence[KnnInstance]) -> ValueVector:
    """Mean of the per-test-point exact values over a shared training set.

    Averaging is exact: values add across utilities, and the test-set
    utility is the mean of the per-test-point utilities.
    """
    _check_shared_training(instances)
    total = np.zeros(instances[0].n_players, dtype=np.float64)
    for inst in instances:
        total += knn_shapley_exact(inst).values
    return ValueVector(total / len(instances), method="knn-testset", eval_count=0)


def pascal_identity_lhs(a: int, n: int, m: int) -> float:
    """Double sum of binomial ratios underlying the closed-form recursion.

    sum_{i=0}^{min(a,n)} sum_{j=0}^{m} C(n,i) C(m,j) / C(n+m, i+j),
    which collapses to (min(a, n) + 1)(m + n + 1)/(n + 1).
    """
    if a < 0 or n < 0 or m < 0:
        raise ValueError("arguments must be nonnegative")
    total = 0.0
    for i in range(min(a, n) + 1):
        for j in range(m + 1):
            total += math.comb(n, i) * math.comb(m, j) / math.comb(n + m, i + j)
    return total
