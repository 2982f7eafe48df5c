"""Gradient projection for gradient episodic memory.

The projection of ``g`` onto ``{x : M x >= 0}`` is computed through its dual,
a small QP with lower-bound constraints::

    minimize_v  1/2 v^T (M M^T + eps I) v + (M g)^T v   s.t.  v >= margin
    g_tilde = M^T v* + g

solved here as the equivalent nonnegative least-squares problem
in ``u = v - margin`` with a Lawson-Hanson active-set method.
"""

from __future__ import annotations

import numpy as np


class GEMSolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (KKT residual {residual:.3e})")


def _kkt_residual(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> float:
    w = a.T @ (b - a @ u)  # negative gradient of 1/2 |a u - b|^2
    return float(max(np.max(-u, initial=0.0), np.max(w, initial=0.0),
                     np.max(np.abs(w[u > 0]), initial=0.0)))


def nnls(a: np.ndarray, b: np.ndarray, max_iter: int = 200, tol: float = 1e-12) -> np.ndarray:
    """Lawson-Hanson active set for ``min |a u - b|`` subject to ``u >= 0``.

    Subproblems are solved as least squares on the free columns, so
    rank-deficient ``a`` (more memories than parameters) is handled.
    """
    n = a.shape[1]
    u = np.zeros(n)
    free = np.zeros(n, dtype=bool)
    thresh = tol * max(1.0, float(np.linalg.norm(a)) * float(np.linalg.norm(b)))
    for _ in range(max_iter):
        w = a.T @ (b - a @ u)
        cand = (~free) & (w > thresh)
        if not cand.any():
            return u
        free[int(np.argmax(np.where(cand, w, -np.inf)))] = True
        for _ in range(n + 1):
            z = np.zeros(n)
            idx = np.flatnonzero(free)
            z[idx] = np.linalg.lstsq(a[:, idx], b, rcond=None)[0]
            if np.all(z[idx] > 0):
                u = z
                break
            neg = free & (z <= 0)
            alpha = np.min(u[neg] / (u[neg] - z[neg]))
            u = u + alpha * (z - u)
            free &= u > 0
            u[~free] = 0.0
        else:
            raise GEMSolverError("inner active-set loop did not settle", _kkt_residual(a, b, u))
    raise GEMSolverError("active-set solver hit its iteration cap", _kkt_residual(a, b, u))


def gem_project(
    g: np.ndarray,
    memories: np.ndarray,
    margin: float = 0.0,
    eps: float = 0.0,
    max_iter: int = 200,
) -> np.ndarray:
    """Project gradient ``g`` so it does not conflict with memory gradients.

    Args:
        g: flat gradient of the current loss.
        memories: ``[t, dim]`` rows of past-task memory gradients.
        margin: lower bound on the dual variables.
        eps: ridge added to ``M M^T``.

    Returns ``g`` itself (same object) when no constraint is violated and
    ``margin == 0``.
    """
    g = np.asarray(g, dtype=np.float64)
    m = np.atleast_2d(np.asarray(memories, dtype=np.float64))
    if m.shape[1] != g.size:
        raise ValueError(f"memory gradients have dim {m.shape[1]}, gradient has {g.size}")
    if margin == 0 and np.all(m @ g >= 0):
        return g
    t = m.shape[0]
    lower = np.full(t, float(margin))
    # dual objective = 1/2 |M^T v + g|^2 + eps/2 |v|^2 + const; substitute v = u + margin
    a = m.T
    b = -(g + m.T @ lower)
    if eps > 0:
        a = np.vstack([a, np.sqrt(eps) * np.eye(t)])
        b = np.concatenate([b, -np.sqrt(eps) * lower])
    u = nnls(a, b, max_iter=max_iter)
    return m.T @ (u + lower) + g
