"""Adaptive Grundmann-Moller cubature over collections of simplices."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable

import numpy as np

DEFAULT_REL_TOL = 1e-6
MAX_SUBDIVISIONS = 10_000


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def grundmann_moller_rules(dim: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Embedded Grundmann-Moller rules of degrees 1, 3, ..., 2s+1.

    Returns barycentric points of shape ``(k, dim + 1)`` and a weight matrix
    of shape ``(s + 1, k)`` whose row ``q`` is the degree ``2q + 1`` rule.
    Weights are normalized to integrate over a simplex of unit volume.
    """
    points: list[tuple[float, ...]] = []
    index: dict[tuple[int, int], int] = {}
    rows = []
    for q in range(s + 1):
        d = 2 * q + 1
        row: dict[int, float] = {}
        for i in range(q + 1):
            denom = d + dim - 2 * i
            w = (-1) ** i * 2.0 ** (-2 * q) * denom**d / (factorial(i) * factorial(d + dim - i))
            for beta in _compositions(q - i, dim + 1):
                key = (denom, beta)
                if key not in index:
                    index[key] = len(points)
                    points.append(tuple((2 * b + 1) / denom for b in beta))
                row[index[key]] = row.get(index[key], 0.0) + w
        rows.append(row)
    W = np.zeros((s + 1, len(points)))
    for q, row in enumerate(rows):
        for k, w in row.items():
            W[q, k] = w
    W *= factorial(dim)
    return np.array(points), W


@dataclass
class CubatureResult:
    value: np.ndarray
    error: np.ndarray
    converged: bool
    subdivisions: int
    n_simplices: int

    def __iter__(self):
        return iter((self.value, self.converged))


def simplex_volumes(simplices: np.ndarray) -> np.ndarray:
    """Volumes of simplices given as an array ``(N, dim + 1, dim)``."""
    simplices = np.asarray(simplices, dtype=float)
    dim = simplices.shape[-1]
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    return np.abs(np.linalg.det(edges)) / factorial(dim)


def _apply_rules(f, simplices, bary, W, chunk_points=None, error_floor=None):
    N, _, dim = simplices.shape
    pts = np.einsum("kv,nvd->nkd", bary, simplices).reshape(-1, dim)
    if chunk_points is None or len(pts) <= chunk_points:
        vals = np.asarray(f(pts), dtype=float)
    else:
        step = max(1, chunk_points // bary.shape[0]) * bary.shape[0]
        vals = np.concatenate([np.asarray(f(pts[i:i + step]), dtype=float)
                               for i in range(0, len(pts), step)])
    vals = vals.reshape(N, bary.shape[0], -1)
    vol = simplex_volumes(simplices)
    Q = np.einsum("qk,nkm->nqm", W, vals) * vol[:, None, None]
    est = Q[:, -1, :]
    e1 = np.abs(Q[:, -1, :] - Q[:, -2, :])
    if Q.shape[1] > 2:
        e2 = np.abs(Q[:, -2, :] - Q[:, -3, :])
        err = np.maximum(e1, 0.25 * e2)
    else:
        err = e1
    if error_floor is not None:
        err = np.maximum(err, error_floor(simplices, vals))
    return est, err


def _bisect(simplices: np.ndarray) -> np.ndarray:
    """Split each simplex across the midpoint of its longest edge."""
    N, nv, dim = simplices.shape
    iu, ju = np.triu_indices(nv, 1)
    lengths = np.sum((simplices[:, iu, :] - simplices[:, ju, :]) ** 2, axis=2)
    e = np.argmax(lengths, axis=1)
    a, b = iu[e], ju[e]
    rows = np.arange(N)
    mid = 0.5 * (simplices[rows, a] + simplices[rows, b])
    left = simplices.copy()
    right = simplices.copy()
    left[rows, b] = mid
    right[rows, a] = mid
    return np.concatenate([left, right])


def integrate_simplices(
    f: Callable[[np.ndarray], np.ndarray],
    simplices,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = 0.0,
    max_subdivisions: int | None = None,
    degree: int = 7,
    chunk_points: int | None = 50_000,
    error_floor: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> CubatureResult:
    """Globally adaptive integral of ``f`` over the union of ``simplices``.

    ``f`` maps points ``(k, dim)`` to values ``(k,)`` or ``(k, m)``. The
    iteration stops when the summed error of every component is at most
    ``max(abs_tol, rel_tol * max_j |I_j|)`` or when the subdivision budget
    (``max_subdivisions`` per input simplex) runs out. ``f`` is called on at
    most ``chunk_points`` points at a time.

    ``error_floor(simplices, values)``, given the simplices ``(N, dim + 1,
    dim)`` and the integrand at their rule points ``(N, k, m)``, returns
    lower bounds ``(N, m)`` for the error estimates. It lets the caller flag
    cells where the embedded rules cannot see a feature of the integrand.
    """
    simplices = np.asarray(simplices, dtype=float)
    if simplices.ndim == 2:
        simplices = simplices[None]
    N0, nv, dim = simplices.shape
    if nv != dim + 1:
        raise ValueError("each simplex needs dim + 1 vertices")
    budget = (MAX_SUBDIVISIONS if max_subdivisions is None else max_subdivisions) * N0
    bary, W = grundmann_moller_rules(dim, (degree - 1) // 2)

    est, err = _apply_rules(f, simplices, bary, W, chunk_points, error_floor)
    used = 0
    while True:
        total = est.sum(axis=0)
        total_err = err.sum(axis=0)
        tol = max(abs_tol, rel_tol * float(np.max(np.abs(total))))
        if np.all(total_err <= tol):
            converged = True
            break
        if used >= budget:
            converged = False
            break
        score = err.max(axis=1)
        n_split = int(min(budget - used, max(1, np.ceil(0.1 * len(score)))))
        order = np.argsort(-score, kind="stable")
        pick, keep = order[:n_split], order[n_split:]
        children = _bisect(simplices[pick])
        c_est, c_err = _apply_rules(f, children, bary, W, chunk_points, error_floor)
        simplices = np.concatenate([simplices[keep], children])
        est = np.concatenate([est[keep], c_est])
        err = np.concatenate([err[keep], c_err])
        used += n_split

    value = est.sum(axis=0)
    error = err.sum(axis=0)
    return CubatureResult(value, error, converged, used, len(simplices))


def integrate_simplex(f, simplex, rel_tol: float = DEFAULT_REL_TOL,
                      max_subdivisions: int = MAX_SUBDIVISIONS) -> CubatureResult:
    """Adaptive integral of ``f`` over one simplex ``(dim + 1, dim)``."""
    return integrate_simplices(f, np.asarray(simplex, dtype=float)[None], rel_tol,
                               max_subdivisions=max_subdivisions)
