"""Cooperative games and exact Shapley value computation.

A game is a set of N players (data points) together with a bounded
utility function over player subsets.  This module provides the game
abstraction, subset machinery, exact Shapley oracles (subset form and
permutation form), exact pairwise value differences, and the synthetic
games used as ground truth by the estimators' tests.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import SizeGuardError, UtilityRangeError
from .rng import stream

__all__ = [
    "PlayerSubset",
    "Game",
    "ValueVector",
    "exact_shapley_subsets",
    "exact_shapley_permutations",
    "exact_shapley_difference",
    "make_additive_game",
    "make_symmetric_game",
    "make_glove_game",
    "make_voting_game",
    "make_random_game",
]

# Guard for 2^N subset enumeration; configurable per call.
DEFAULT_SUBSET_GUARD = 25
# Guard for N! permutation enumeration.
DEFAULT_PERMUTATION_GUARD = 10


@dataclass(frozen=True)
class PlayerSubset:
    """Immutable subset of players, stored as a bit mask.

    Iteration yields member indices in ascending order.
    """

    mask: int
    n_players: int

    def __post_init__(self) -> None:
        if not 0 <= self.mask < (1 << self.n_players):
            raise ValueError(f"mask {self.mask:#x} out of range for {self.n_players} players")

    @classmethod
    def from_indices(cls, indices: Sequence[int], n_players: int) -> "PlayerSubset":
        mask = 0
        for i in indices:
            if not 0 <= i < n_players:
                raise ValueError(f"player index {i} out of range")
            mask |= 1 << i
        return cls(mask, n_players)

    @classmethod
    def full(cls, n_players: int) -> "PlayerSubset":
        return cls((1 << n_players) - 1, n_players)

    def indices(self) -> tuple[int, ...]:
        return tuple(self)

    def __iter__(self) -> Iterator[int]:
        m = self.mask
        while m:
            low = m & -m
            yield low.bit_length() - 1
            m ^= low

    def __len__(self) -> int:
        return self.mask.bit_count()

    def __contains__(self, player: int) -> bool:
        return bool(self.mask >> player & 1)


@dataclass(frozen=True)
class ValueVector:
    """Per-player values plus provenance metadata.

    eval_count is the number of utility evaluations the producing method
    consumed (the empty coalition is free and never counted).
    """

    values: np.ndarray
    method: str
    eval_count: int
    seed: int | None = None
    epsilon: float | None = None
    delta: float | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if self.eval_count < 0:
            raise ValueError("eval_count must be nonnegative")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def total(self) -> float:
        return float(self.values.sum())


class Game:
    """N-player game with a utility bounded in [0, range_r].

    The utility callable must be pure (same subset, same value) and safe
    to call from several threads at once.  If the raw utility assigns a
    nonzero value to the empty coalition, that value is measured once at
    construction and subtracted from every evaluation, so U(empty) = 0
    always holds.  Values outside [0, range_r] raise UtilityRangeError
    rather than being clamped: clamping would silently invalidate the
    concentration bounds built on the declared range.

    ``batch_utility``, when provided, maps an int64 array of bit masks to
    a float array and is used by the vectorized evaluation paths.
    """

    def __init__(
        self,
        n_players: int,
        utility: Callable[[PlayerSubset], float] | None,
        range_r: float,
        *,
        batch_utility: Callable[[np.ndarray], np.ndarray] | None = None,
        monotone: bool = False,
        exact_values: np.ndarray | None = None,
        name: str = "",
    ) -> None:
        if n_players < 1:
            raise ValueError("need at least one player")
        if utility is None and batch_utility is None:
            raise ValueError("provide a utility function or a batch form of it")
        if not math.isfinite(range_r) or range_r <= 0:
            raise ValueError("range_r must be a positive finite bound")
        self.n_players = int(n_players)
        self.range_r = float(range_r)
        self.monotone = bool(monotone)
        self.name = name
        self.exact_values = None if exact_values is None else np.asarray(exact_values, float)
        self._utility = utility
        self._batch = batch_utility
        self._lock = threading.Lock()
        self._eval_count = 0
        # construction-time bookkeeping probes are not billed to any method:
        # one evaluation fixes the empty-coalition offset, one caches U(I)
        self._offset = 0.0
        self._offset = float(self._raw_of_masks(np.array([0], dtype=np.int64))[0])
        self._range_tol = 1e-9 * max(1.0, self.range_r)
        full = (1 << self.n_players) - 1
        total = float(self._raw_of_masks(np.array([full], dtype=np.int64))[0]) - self._offset
        if total < -self._range_tol or total > self.range_r + self._range_tol:
            raise UtilityRangeError(
                f"full-coalition utility {total} outside declared range [0, {self.range_r}]"
            )
        self._u_total = total

    # -- evaluation ------------------------------------------------------

    def _raw_of_masks(self, masks: np.ndarray) -> np.ndarray:
        if self._batch is not None:
            return np.asarray(self._batch(masks), dtype=np.float64)
        out = np.empty(masks.shape[0], dtype=np.float64)
        for pos, m in enumerate(masks):
            out[pos] = self._utility(PlayerSubset(int(m), self.n_players))
        return out

    def value(self, subset: PlayerSubset) -> float:
        if subset.n_players != self.n_players:
            raise ValueError("subset is sized for a different game")
        return self.value_of_mask(subset.mask)

    def value_of_mask(self, mask: int) -> float:
        return float(self.values_of_masks(np.array([mask], dtype=np.int64))[0])

    def values_of_masks(self, masks: np.ndarray) -> np.ndarray:
        """Utilities for an array of subset bit masks.

        Empty coalitions are worth 0 by identity and are not counted as
        evaluations.
        """
        masks = np.asarray(masks, dtype=np.int64)
        nonzero = masks != 0
        n_evals = int(nonzero.sum())
        out = np.zeros(masks.shape[0], dtype=np.float64)
        if n_evals:
            vals = self._raw_of_masks(masks[nonzero]) - self._offset
            lo, hi = vals.min(), vals.max()
            if lo < -self._range_tol or hi > self.range_r + self._range_tol:
                raise UtilityRangeError(
                    f"utility value outside declared range [0, {self.range_r}]: "
                    f"saw [{lo}, {hi}]"
                )
            out[nonzero] = vals
            with self._lock:
                self._eval_count += n_evals
        return out

    # -- bookkeeping -----------------------------------------------------

    @property
    def eval_count(self) -> int:
        return self._eval_count

    @property
    def u_total(self) -> float:
        """Utility of the full coalition, cached at construction."""
        return self._u_total


# -- exact oracles --------------------------------------------------------


def _check_guard(n: int, guard: int, what: str) -> None:
    if n > guard:
        raise SizeGuardError(f"{what} is limited to {guard} players, got {n}")


def _inverse_binomial(n: int, k: int) -> float:
    """1 / C(n, k); computed in log space above n = 20 to avoid overflow."""
    if n <= 20:
        return 1.0 / math.comb(n, k)
    return math.exp(math.lgamma(k + 1) + math.lgamma(n - k + 1) - math.lgamma(n + 1))


def utility_table(game: Game) -> np.ndarray:
    """All 2^N utilities indexed by subset mask (mask 0 is free)."""
    masks = np.arange(1 << game.n_players, dtype=np.int64)
    return game.values_of_masks(masks)


def exact_shapley_subsets(game: Game, *, max_players: int = DEFAULT_SUBSET_GUARD) -> ValueVector:
    """Exact Shapley values by enumerating all player subsets.

    value[i] = sum over S not containing i of
               [U(S + i) - U(S)] / (N * C(N-1, |S|)).
    """
    n = game.n_players
    _check_guard(n, max_players, "subset enumeration")
    table = utility_table(game)
    sizes = np.bitwise_count(np.arange(1 << n, dtype=np.uint64)).astype(np.int64)
    # weight by |S|; masks containing i contribute a zero difference, so give
    # size N (only reachable for such masks) a zero weight instead of branching
    weights = np.array([_inverse_binomial(n - 1, s) / n for s in range(n)] + [0.0])
    w = weights[sizes]
    masks = np.arange(1 << n, dtype=np.int64)
    values = np.empty(n, dtype=np.float64)
    for i in range(n):
        values[i] = float(np.sum(w * (table[masks | (1 << i)] - table)))
    return ValueVector(values, method="exact-subsets", eval_count=(1 << n) - 1)


def exact_shapley_permutations(
    game: Game, *, max_players: int = DEFAULT_PERMUTATION_GUARD, chunk: int = 100_000
) -> ValueVector:
    """Exact Shapley values by enumerating all N! player orderings.

    Independent of :func:`exact_shapley_subsets`: the average runs over
    orderings, crediting each player its marginal contribution to the
    set of predecessors.
    """
    n = game.n_players
    _check_guard(n, max_players, "permutation enumeration")
    table = utility_table(game)
    totals = np.zeros(n, dtype=np.float64)
    perm_iter = itertools.permutations(range(n))
    while True:
        block = list(itertools.islice(perm_iter, chunk))
        if not block:
            break
        perms = np.asarray(block, dtype=np.int64)
        prefixes = np.cumsum(1 << perms, axis=1)
        vals = table[prefixes]
        marginals = np.concatenate([vals[:, :1], np.diff(vals, axis=1)], axis=1)
        np.add.at(totals, perms.ravel(), marginals.ravel())
    values = totals / math.factorial(n)
    return ValueVector(values, method="exact-permutations", eval_count=(1 << n) - 1)


def exact_shapley_difference(
    game: Game, i: int, j: int, *, max_players: int = DEFAULT_SUBSET_GUARD
) -> float:
    """Exact value difference s_i - s_j from subsets avoiding both players.

    Uses the identity
    s_i - s_j = 1/(N-1) * sum over S avoiding i, j of
                [U(S + i) - U(S + j)] / C(N-2, |S|),
    which needs only 2^(N-2) subset pairs instead of two full oracles.
    """
    n = game.n_players
    _check_guard(n, max_players, "subset enumeration")
    if i == j:
        raise ValueError("players must be distinct")
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError("player index out of range")
    others = np.array([p for p in range(n) if p not in (i, j)], dtype=np.int64)
    sub = np.arange(1 << (n - 2), dtype=np.int64)
    bits = (sub[:, None] >> np.arange(n - 2)) & 1
    masks = (bits * (1 << others)).sum(axis=1, dtype=np.int64)
    sizes = np.bitwise_count(sub.astype(np.uint64)).astype(np.int64)
    weights = np.array([_inverse_binomial(n - 2, s) for s in range(n - 1)])
    with_i = game.values_of_masks(masks | (1 << i))
    with_j = game.values_of_masks(masks | (1 << j))
    return float(np.sum(weights[sizes] * (with_i - with_j)) / (n - 1))


# -- synthetic games -------------------------------------------------------


def _membership(masks: np.ndarray, n: int) -> np.ndarray:
    """Boolean (len(masks), n) membership matrix."""
    return ((np.asarray(masks, dtype=np.int64)[:, None] >> np.arange(n)) & 1).astype(bool)


def make_additive_game(weights: Sequence[float]) -> Game:
    """U(S) = sum of member weights; the Shapley value is the weight vector."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a nonempty vector")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("at least one weight must be positive")
    n = w.size

    def batch(masks: np.ndarray) -> np.ndarray:
        return _membership(masks, n) @ w

    return Game(
        n,
        lambda s: float(sum(w[k] for k in s)),
        range_r=total,
        batch_utility=batch,
        monotone=True,
        exact_values=w.copy(),
        name="additive",
    )


def make_symmetric_game(n_players: int, size_values: Sequence[float] | None = None) -> Game:
    """Utility depends on coalition size only; all players are equivalent.

    size_values[k] is the worth of any size-k coalition (size_values[0]
    must be 0).  Defaults to k / N.  The exact Shapley value is uniform:
    size_values[N] / N for everyone.
    """
    if n_players < 1:
        raise ValueError("need at least one player")
    if size_values is None:
        f = np.arange(n_players + 1, dtype=np.float64) / n_players
    else:
        f = np.asarray(size_values, dtype=np.float64)
        if f.shape != (n_players + 1,):
            raise ValueError("size_values must have length n_players + 1")
        if f[0] != 0.0:
            raise ValueError("the empty coalition must be worth 0")
        if np.any(f < 0):
            raise ValueError("size values must be nonnegative")
    r = float(f.max())
    if r <= 0:
        raise ValueError("at least one coalition size must have positive worth")

    def batch(masks: np.ndarray) -> np.ndarray:
        sizes = np.bitwise_count(np.asarray(masks, dtype=np.int64).astype(np.uint64))
        return f[sizes.astype(np.int64)]

    return Game(
        n_players,
        lambda s: float(f[len(s)]),
        range_r=r,
        batch_utility=batch,
        monotone=bool(np.all(np.diff(f) >= 0)),
        exact_values=np.full(n_players, f[n_players] / n_players),
        name="symmetric",
    )


def make_glove_game() -> Game:
    """Three players: one left glove (player 0), two right gloves.

    A coalition is worth 1 exactly when it pairs the left glove with at
    least one right glove.
    """

    def batch(masks: np.ndarray) -> np.ndarray:
        m = np.asarray(masks, dtype=np.int64)
        return ((m & 1) > 0).astype(np.float64) * ((m & 0b110) > 0)

    return Game(
        3,
        lambda s: 1.0 if 0 in s and (1 in s or 2 in s) else 0.0,
        range_r=1.0,
        batch_utility=batch,
        monotone=True,
        name="glove",
    )


def make_voting_game(weights: Sequence[float], quota: float) -> Game:
    """U(S) = 1 when the members' combined voting weight reaches the quota."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not 0 < quota <= float(w.sum()):
        raise ValueError("quota must be positive and attainable")
    n = w.size

    def batch(masks: np.ndarray) -> np.ndarray:
        return (_membership(masks, n) @ w >= quota).astype(np.float64)

    return Game(
        n,
        lambda s: 1.0 if sum(w[k] for k in s) >= quota else 0.0,
        range_r=1.0,
        batch_utility=batch,
        monotone=True,
        name="voting",
    )


def make_random_game(n_players: int, seed: int, range_r: float = 1.0) -> Game:
    """Game with i.i.d. uniform utilities in [0, range_r] (empty set worth 0).

    Ground-truth material for property tests; kept to table size 2^N.
    """
    if not 1 <= n_players <= 20:
        raise ValueError("random table games support 1..20 players")
    table = stream(seed, "random-game").uniform(0.0, range_r, size=1 << n_players)
    table[0] = 0.0

    def batch(masks: np.ndarray) -> np.ndarray:
        return table[np.asarray(masks, dtype=np.int64)]

    return Game(
        n_players,
        lambda s: float(table[s.mask]),
        range_r=range_r,
        batch_utility=batch,
        monotone=False,
        name=f"random-{seed}",
    )
