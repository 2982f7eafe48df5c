"""Independent reference computations used by the tests."""

from __future__ import annotations

from itertools import combinations

import numpy as np


def projection_oracle(g: np.ndarray, memories: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Brute-force projection onto ``{x : M x >= 0}`` by enumerating active sets.

    Independent of :func:`gem_project`: it works in the primal and checks
    every subset of constraints held at equality.
    """
    g = np.asarray(g, dtype=np.float64)
    m = np.atleast_2d(np.asarray(memories, dtype=np.float64))
    best, best_obj = None, np.inf
    for r in range(m.shape[0] + 1):
        for subset in combinations(range(m.shape[0]), r):
            if subset:
                ms = m[list(subset)]
                lam = np.linalg.lstsq(ms @ ms.T, ms @ g, rcond=None)[0]
                x = g - ms.T @ lam
            else:
                x = g.copy()
            if np.all(m @ x >= -tol * max(1.0, np.linalg.norm(x))):
                obj = 0.5 * float(np.sum((x - g) ** 2))
                if obj < best_obj - 1e-15:
                    best, best_obj = x, obj
    return best


def central_difference(f, x: np.ndarray, index: tuple, h: float = 1e-5) -> float:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` with ``x`` restored afterwards."""
    old = x[index]
    x[index] = old + h
    up = f()
    x[index] = old - h
    down = f()
    x[index] = old
    return (up - down) / (2 * h)


def relative_error(fd: float, an: float, floor: float = 1e-4) -> float:
    """Relative error with a denominator floor so that near-zero gradients
    are judged on absolute error instead of amplified roundoff."""
    return abs(fd - an) / max(abs(fd), abs(an), floor)


def random_accuracy_matrix(rng: np.random.Generator, b: int) -> list[list[float]]:
    return [list(rng.random(k)) for k in range(1, b + 1)]


def naive_aa(rows, k):
    total = 0.0
    for j in range(k):
        total += rows[k - 1][j]
    return total / k


def naive_af(rows, k):
    total = 0.0
    for j in range(k - 1):
        best = -1.0
        for l in range(j, k - 1):
            if rows[l][j] > best:
                best = rows[l][j]
        total += best - rows[k - 1][j]
    return total / (k - 1)


def naive_opd(orders, unit):
    lo, hi = 2.0, -1.0
    for o in orders:
        lo = min(lo, o[unit])
        hi = max(hi, o[unit])
    return hi - lo


def bound_fuzz_violations(rng: np.random.Generator, n: int, max_tasks: int = 6, tol: float = 1e-9,
                       slack: float = 0.0) -> int:
    """Vectorized fuzz of ``AF_k <= 1 - k/(k-1) AA_k + a_kk/(k-1)``.

    Draws ``n`` random lower-triangular matrices per task count and counts
    rows where the inequality fails.  Entries mix uniform values with exact
    0/1 so boundary cases are hit.  A positive ``slack`` tightens the bound,
    which must then produce violations (checks the oracle itself).
    """
    bad = 0
    per = n // (max_tasks - 1)
    for b in range(2, max_tasks + 1):
        a = rng.random((per, b, b))
        edge = rng.random((per, b, b))
        a = np.where(edge < 0.1, 0.0, np.where(edge > 0.9, 1.0, a))
        for k in range(2, b + 1):
            row = a[:, k - 1, :k]
            aa = row.mean(axis=1)
            # best earlier accuracy of task j: max over rows j..k-2 (0-based)
            best = np.stack([a[:, j:k - 1, j].max(axis=1) for j in range(k - 1)], axis=1)
            af = (best - row[:, :k - 1]).mean(axis=1)
            bound = 1 - (k / (k - 1)) * aa + row[:, k - 1] / (k - 1) - slack
            bad += int(np.sum(af > bound + tol))
    return bad
