"""Threshold the sample correlation matrix and split variables into connected components."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .linalg import correlation_from_covariance


@dataclass(frozen=True)
class Partition:
    """Groups of 0-based variable indices in canonical order.

    Groups are sorted by their smallest member and members are ascending.
    In ordered mode only components made of consecutive indices are kept,
    so the groups need not cover every variable.
    """

    groups: tuple[tuple[int, ...], ...]
    ordered_mode: bool
    threshold_used: float

    def __contains__(self, group) -> bool:
        return tuple(sorted(int(i) for i in group)) in self.groups

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i: int, j: int) -> None:
        a, b = self.find(i), self.find(j)
        if a == b:
            return
        if self.rank[a] < self.rank[b]:
            a, b = b, a
        self.parent[b] = a
        if self.rank[a] == self.rank[b]:
            self.rank[a] += 1


def components_from_adjacency(adj: np.ndarray) -> list[tuple[int, ...]]:
    p = adj.shape[0]
    uf = _UnionFind(p)
    for i, j in zip(*np.nonzero(np.triu(adj, 1))):
        uf.union(int(i), int(j))
    members: dict[int, list[int]] = {}
    for i in range(p):
        members.setdefault(uf.find(i), []).append(i)
    return sorted(tuple(m) for m in members.values())


def _check_threshold(c: float) -> float:
    c = float(c)
    if not 0.0 <= c < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {c}")
    return c


def select_components(S, c: float, ordered: bool = False) -> Partition:
    """Connected components of the graph with edges ``|R_ij| > c``.

    ``S`` may be a covariance or correlation matrix (array or wrapper);
    only its correlation matrix is used.
    """
    c = _check_threshold(c)
    R = correlation_from_covariance(S).R
    adj = np.abs(R) > c
    np.fill_diagonal(adj, False)
    groups = components_from_adjacency(adj)
    if ordered:
        groups = [g for g in groups if g[-1] - g[0] + 1 == len(g)]
    return Partition(tuple(groups), bool(ordered), c)


def group_complement(group: Iterable[int], p: int) -> tuple[int, ...]:
    members = set(int(i) for i in group)
    if not members:
        raise ValueError("group is empty")
    if any(i < 0 or i >= p for i in members):
        raise ValueError(f"group {sorted(members)} has indices outside 0..{p - 1}")
    if len(members) == p:
        raise ValueError("group covers every variable; its complement is empty")
    return tuple(i for i in range(p) if i not in members)
