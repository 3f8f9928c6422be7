"""Shared independent oracles for the test suite.

These deliberately avoid the library's own computation paths: the
Shapley oracle walks orderings directly from the definition, the
max-violation oracle is a linear program, and the sparse oracle is an
exhaustive least-squares search.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog


def brute_force_shapley(n, mask_utility):
    """Average marginal contribution over all n! orderings of the players."""
    totals = np.zeros(n)
    for perm in itertools.permutations(range(n)):
        mask = 0
        before = 0.0
        for player in perm:
            mask |= 1 << player
            after = mask_utility(mask)
            totals[player] += after - before
            before = after
    return totals / math.factorial(n)


def glove_mask_utility(mask):
    """Worth 1 when player 0 is paired with player 1 or 2."""
    return 1.0 if (mask & 1) and (mask & 0b110) else 0.0


def random_mask_table(n, seed, high=1.0):
    table = np.random.default_rng(seed).uniform(0.0, high, size=1 << n)
    table[0] = 0.0
    return table


def lp_max_violation(diffs, total):
    """LP oracle: minimize max |s_i - s_j - diffs[i,j]| with sum(s) = total."""
    n = diffs.shape[0]
    rows, rhs = [], []
    for i in range(n):
        for j in range(i + 1, n):
            row = np.zeros(n + 1)
            row[i], row[j], row[n] = 1.0, -1.0, -1.0
            rows.append(row.copy())
            rhs.append(diffs[i, j])
            row[i], row[j] = -1.0, 1.0
            rows.append(row)
            rhs.append(-diffs[i, j])
    cost = np.zeros(n + 1)
    cost[n] = 1.0
    eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    res = linprog(
        cost,
        A_ub=np.asarray(rows),
        b_ub=np.asarray(rhs),
        A_eq=eq,
        b_eq=[total],
        bounds=[(None, None)] * n + [(0, None)],
        method="highs",
    )
    assert res.status == 0, res.message
    return res.x[:n], float(res.x[n])


def exhaustive_one_sparse(matrix, target, fit_tol=1e-9):
    """Best single-column least-squares fits with (coefficient, residual) each."""
    fits = []
    for col in range(matrix.shape[1]):
        a = matrix[:, col]
        coeff = float(a @ target) / float(a @ a)
        residual = float(np.linalg.norm(target - coeff * a))
        fits.append((col, coeff, residual))
    exact = [(c, v) for c, v, r in fits if r <= fit_tol]
    return fits, exact


def _basis_pursuit_lp(matrix, target):
    """min ||x||_1 s.t. matrix x = target, as a linear program (split variables)."""
    m, n = matrix.shape
    res = linprog(
        np.ones(2 * n),
        A_eq=np.hstack([matrix, -matrix]),
        b_eq=target,
        bounds=[(0, None)] * (2 * n),
        method="highs",
    )
    assert res.status == 0, res.message
    return res.x[:n] - res.x[n:]


def one_sparse_recovery_instances(count, m_rows=8, n_cols=12, base_seed=4000):
    """Well-posed noiseless 1-sparse recovery instances.

    Random sign matrices occasionally carry a duplicated (up to sign)
    column, or admit a dense vector of equal l1 norm; on such instances
    "the" sparse solution is not unique and comparing any solver to the
    1-sparse oracle is ill-posed.  Instances are therefore kept only
    when the exhaustive oracle finds a unique exact fit and an
    independent LP confirms the planted spike is the unique l1
    minimizer.  Both filters are solver-independent.
    """
    kept = []
    seed = base_seed
    while len(kept) < count:
        g = np.random.default_rng(seed)
        seed += 1
        matrix = g.choice([-1.0, 1.0], size=(m_rows, n_cols)) / math.sqrt(m_rows)
        planted = np.zeros(n_cols)
        col = int(g.integers(n_cols))
        planted[col] = float(g.uniform(0.5, 2.0)) * float(g.choice([-1.0, 1.0]))
        target = matrix @ planted
        _, exact = exhaustive_one_sparse(matrix, target)
        if len(exact) != 1 or exact[0][0] != col:
            continue
        if np.max(np.abs(_basis_pursuit_lp(matrix, target) - planted)) > 1e-7:
            continue
        kept.append((matrix, planted, target))
    return kept


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
