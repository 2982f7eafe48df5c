"""Skeleton joint graphs and their normalized adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# 1-indexed bone lists as distributed with the public skeleton loaders.
_UCLA_BONES = [
    (1, 2), (2, 3), (4, 3), (5, 3), (6, 5), (7, 6), (8, 7), (9, 3), (10, 9),
    (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1),
    (18, 17), (19, 18), (20, 19),
]
_NTU_BONES = [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21),
    (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1),
    (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
]


def normalize_adjacency(num_joints: int, edges) -> np.ndarray:
    """Symmetric GCN normalization ``D^-1/2 (A + I) D^-1/2``."""
    a = np.eye(num_joints)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


@dataclass(frozen=True)
class SkeletonGraph:
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    normalized_adjacency: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_edges(cls, num_joints: int, edges) -> "SkeletonGraph":
        if num_joints < 1:
            raise ValueError("num_joints must be positive")
        edges = tuple((int(i), int(j)) for i, j in edges)
        for i, j in edges:
            if not (0 <= i < num_joints and 0 <= j < num_joints):
                raise ValueError(f"edge ({i}, {j}) outside [0, {num_joints})")
        adj = normalize_adjacency(num_joints, edges)
        adj.setflags(write=False)
        return cls(num_joints, edges, adj)

    def permuted(self, perm) -> "SkeletonGraph":
        """Relabel joints so that new joint ``k`` is old joint ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return SkeletonGraph.from_edges(
            self.num_joints, [(int(inv[i]), int(inv[j])) for i, j in self.edges]
        )


def ucla_graph() -> SkeletonGraph:
    return SkeletonGraph.from_edges(20, [(i - 1, j - 1) for i, j in _UCLA_BONES])


def ntu_graph() -> SkeletonGraph:
    return SkeletonGraph.from_edges(25, [(i - 1, j - 1) for i, j in _NTU_BONES])


def chain_graph(num_joints: int) -> SkeletonGraph:
    return SkeletonGraph.from_edges(num_joints, [(i, i + 1) for i in range(num_joints - 1)])


def graph_for_joints(num_joints: int) -> SkeletonGraph:
    """Skeleton for a known joint count, otherwise a simple chain."""
    if num_joints == 20:
        return ucla_graph()
    if num_joints == 25:
        return ntu_graph()
    return chain_graph(num_joints)
