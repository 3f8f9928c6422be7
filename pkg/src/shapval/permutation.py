"""Monte Carlo Shapley estimation by sampling player orderings.

Each sampled ordering credits every player with its marginal
contribution to the set of preceding players.  Prefix utilities are
cached within an ordering, so one ordering costs exactly N utility
evaluations (the empty prefix is free).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .games import Game, ValueVector
from .parallel import chunk_ranges, ordered_chunk_map, resolve_threads
from .rng import stream

__all__ = [
    "PermutationBudget",
    "required_permutations",
    "estimate_permutation",
    "sample_permutation_marginals",
]

_CHUNK = 256


def required_permutations(range_r: float, n_players: int, epsilon: float, delta: float) -> int:
    """Orderings needed for an (epsilon, delta) guarantee in l2 norm.

    ceil((2 r^2 N / eps^2) * ln(2N / delta)): a union bound over players
    of per-player Hoeffding tails at accuracy eps / sqrt(N).
    """
    if range_r <= 0 or epsilon <= 0:
        raise ValueError("range_r and epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n_players < 1:
        raise ValueError("need at least one player")
    bound = (2.0 * range_r * range_r * n_players / (epsilon * epsilon)) * math.log(
        2.0 * n_players / delta
    )
    return max(1, math.ceil(bound))


@dataclass(frozen=True)
class PermutationBudget:
    """Sampling budget: ordering count plus the accuracy it was sized for."""

    t_permutations: int
    epsilon: float | None = None
    delta: float | None = None
    range_r: float | None = None

    def __post_init__(self) -> None:
        if self.t_permutations < 1:
            raise ValueError("need at least one permutation")

    @classmethod
    def from_accuracy(
        cls, range_r: float, n_players: int, epsilon: float, delta: float
    ) -> "PermutationBudget":
        t = required_permutations(range_r, n_players, epsilon, delta)
        return cls(t, epsilon=epsilon, delta=delta, range_r=range_r)


def _marginal_chunk(game: Game, seed: int, tag: str, lo: int, hi: int) -> np.ndarray:
    """Marginal-contribution rows for orderings lo..hi-1, per player.

    Each ordering is a Fisher-Yates shuffle driven by its own stream
    keyed on (seed, tag, ordering index), so execution order does not
    matter.
    """
    n = game.n_players
    perms = np.stack([stream(seed, tag, t).permutation(n) for t in range(lo, hi)])
    prefixes = np.cumsum(1 << perms.astype(np.int64), axis=1)
    vals = game.values_of_masks(prefixes.reshape(-1)).reshape(prefixes.shape)
    marginals = np.concatenate([vals[:, :1], np.diff(vals, axis=1)], axis=1)
    phi = np.empty_like(marginals)
    np.put_along_axis(phi, perms, marginals, axis=1)
    return phi


def sample_permutation_marginals(
    game: Game, t_permutations: int, seed: int, *, tag: str = "perm"
) -> np.ndarray:
    """Materialized (T, N) matrix of per-ordering marginal contributions."""
    parts = [
        _marginal_chunk(game, seed, tag, lo, hi)
        for lo, hi in chunk_ranges(t_permutations, _CHUNK)
    ]
    return np.concatenate(parts, axis=0)


def estimate_permutation(
    game: Game, budget: PermutationBudget, seed: int, *, threads: int | None = None
) -> ValueVector:
    """Average marginal contributions over ``budget.t_permutations`` orderings."""
    t = budget.t_permutations
    workers = resolve_threads(threads)
    before = game.eval_count
    parts = ordered_chunk_map(
        lambda _i, lo, hi: _marginal_chunk(game, seed, "perm", lo, hi).sum(axis=0),
        chunk_ranges(t, _CHUNK),
        workers,
    )
    totals = np.zeros(game.n_players, dtype=np.float64)
    for p in parts:  # fixed merge order keeps results thread-count independent
        totals += p
    return ValueVector(
        totals / t,
        method="perm",
        eval_count=game.eval_count - before,
        seed=seed,
        epsilon=budget.epsilon,
        delta=budget.delta,
    )
