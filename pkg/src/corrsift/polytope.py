"""The conditioning set as a polytope ``{lam : L lam <= g}`` and its geometry."""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .cca import CcaDecomposition
from .errors import DegenerateRegionError, EmptyRegionError
from .linalg import _matrix

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class PolytopeH:
    """Half-space description. The last ``r + 1`` rows are the ordering rows
    ``lam_1 <= 1``, ``lam_l - lam_{l-1} <= 0`` and ``-lam_r <= 0``."""

    L: np.ndarray
    g: np.ndarray

    @property
    def r(self) -> int:
        return self.L.shape[1]

    @property
    def m(self) -> int:
        return self.L.shape[0]

    def contains(self, lam, tol: float = 0.0):
        """Membership test for one point ``(r,)`` or many ``(k, r)``."""
        lam = np.asarray(lam, dtype=float)
        ok = np.all(lam @ self.L.T <= self.g + tol, axis=-1)
        return bool(ok) if ok.ndim == 0 else ok


def ordering_rows(r: int) -> tuple[np.ndarray, np.ndarray]:
    L = np.zeros((r + 1, r))
    L[0, 0] = 1.0
    for l in range(1, r):
        L[l, l] = 1.0
        L[l, l - 1] = -1.0
    L[r, r - 1] = -1.0
    g = np.zeros(r + 1)
    g[0] = 1.0
    return L, g


def ordered_simplex_vertices(r: int) -> np.ndarray:
    """Vertices of ``{1 >= lam_1 >= ... >= lam_r >= 0}``: 0, e_1, e_1 + e_2, ..."""
    return np.tril(np.ones((r + 1, r)), -1)


def cross_correlation_coefficients(S, cca: CcaDecomposition) -> np.ndarray:
    """Coefficients ``(r, card(P), card(P^c))`` of the perturbed cross correlations in lambda."""
    S = _matrix(S)
    d = np.sqrt(np.diag(S))
    P, Pc = cca.group, cca.complement
    scale = np.outer(d[list(P)], d[list(Pc)])
    return cca.rank_one_terms() / scale


def build_constraints(S, cca: CcaDecomposition, c: float) -> PolytopeH:
    coef = cross_correlation_coefficients(S, cca)
    r = coef.shape[0]
    cross = coef.reshape(r, -1).T
    Lo, go = ordering_rows(r)
    L = np.vstack([cross, -cross, Lo])
    g = np.concatenate([np.full(2 * cross.shape[0], float(c)), go])
    return PolytopeH(L, g)


def prune_redundant(poly: PolytopeH) -> PolytopeH:
    """Drop rows that can never bind inside the ordered simplex and merge parallel rows.

    Rows are rescaled to unit normals; ordering rows are always kept last.
    """
    r = poly.r
    Lo, go = ordering_rows(r)
    L, g = poly.L[: -(r + 1)], poly.g[: -(r + 1)]
    norms = np.linalg.norm(L, axis=1)
    zero = norms <= 1e-300
    if np.any(g[zero] < 0):
        raise EmptyRegionError("a constraint 0 <= g with negative g is infeasible")
    L, g, norms = L[~zero], g[~zero], norms[~zero]
    L = L / norms[:, None]
    g = g / norms
    worst = np.max(L @ ordered_simplex_vertices(r).T, axis=1)
    binding = worst > g + FEAS_TOL
    L, g = L[binding], g[binding]
    if len(g):
        keys = np.round(L, 12)
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        first = np.full(inverse.max() + 1, -1)
        for i, k in enumerate(inverse):
            if first[k] < 0 or g[i] < g[first[k]]:
                first[k] = i
        L, g = L[first], g[first]
        # most restrictive rows first: fewer intermediate vertices during cutting
        order = np.lexsort((np.arange(len(g)), g - np.max(L @ ordered_simplex_vertices(r).T, axis=1)))
        L, g = L[order], g[order]
    return PolytopeH(np.vstack([L, Lo]), np.concatenate([g, go]))


def enumerate_vertices(poly: PolytopeH, tol: float = FEAS_TOL, prune: bool = True) -> np.ndarray:
    """Extreme points of the polytope, shape ``(V, r)``.

    Double description by successive cuts: start from the ordered simplex,
    whose vertices and incidences are known, and intersect with one
    half-space at a time. New vertices come from adjacent (kept, cut) pairs;
    adjacency uses the combinatorial test on tight-constraint sets.
    """
    if prune:
        poly = prune_redundant(poly)
    r = poly.r
    L, g = poly.L, poly.g
    n_cross = poly.m - (r + 1)
    V = ordered_simplex_vertices(r)
    Lo, go = L[n_cross:], g[n_cross:]
    Z = np.zeros((r + 1, poly.m), dtype=bool)
    Z[:, n_cross:] = np.abs(V @ Lo.T - go) <= tol

    for h in range(n_cross):
        slack = g[h] - V @ L[h]
        plus = slack > tol
        minus = slack < -tol
        zero = ~plus & ~minus
        if not minus.any():
            Z[zero, h] = True
            continue
        if not (plus | zero).any():
            raise EmptyRegionError("constraint set is empty")
        ip, im = np.flatnonzero(plus), np.flatnonzero(minus)
        new_V, new_Z = [], []
        if ip.size:
            common = Z[ip][:, None, :] & Z[im][None, :, :]
            counts = common.sum(axis=2)
            cand = np.argwhere(counts >= r - 1)
            if cand.size:
                C = common[cand[:, 0], cand[:, 1]]
                # a pair is adjacent iff no third vertex is tight on all their common rows
                supers = (C.astype(np.int32) @ Z.T.astype(np.int32)) == C.sum(axis=1, keepdims=True)
                adjacent = supers.sum(axis=1) == 2
                for (a, b), cz in zip(cand[adjacent], C[adjacent]):
                    u, w = V[ip[a]], V[im[b]]
                    t = slack[ip[a]] / (slack[ip[a]] - slack[im[b]])
                    new_V.append(u + t * (w - u))
                    zz = cz.copy()
                    zz[h] = True
                    new_Z.append(zz)
        Z[zero, h] = True
        keep = ~minus
        V = np.vstack([V[keep]] + ([np.array(new_V)] if new_V else []))
        Z = np.vstack([Z[keep]] + ([np.array(new_Z)] if new_Z else []))
        V, Z = _merge_duplicates(V, Z, tol)

    if len(V) == 0:
        raise EmptyRegionError("constraint set is empty")
    order = np.lexsort(V.T[::-1])
    return V[order]


def _merge_duplicates(V: np.ndarray, Z: np.ndarray, tol: float):
    if len(V) < 2:
        return V, Z
    keyed = np.round(V / (10 * tol)).astype(np.int64)
    _, first, inverse = np.unique(keyed, axis=0, return_index=True, return_inverse=True)
    if len(first) == len(V):
        return V, Z
    inverse = inverse.ravel()
    Zm = np.zeros((len(first), Z.shape[1]), dtype=bool)
    np.logical_or.at(Zm, inverse, Z)
    return V[first], Zm


@dataclass(frozen=True)
class Simplex:
    vertices: np.ndarray

    @property
    def volume(self) -> float:
        v = self.vertices
        return float(abs(np.linalg.det(v[1:] - v[0])) / factorial(v.shape[1]))


def _hull_scale(V: np.ndarray) -> float:
    return float(np.max(np.ptp(V, axis=0))) if len(V) else 0.0


def triangulate(vertices, method: str = "pulling", apex: int = 0) -> list[Simplex]:
    """Interior-disjoint simplices covering the convex hull of ``vertices``.

    ``method="pulling"`` cones every hull facet from the vertex ``apex``,
    which is then the first vertex of every cell; ``method="delaunay"`` uses
    a Delaunay triangulation. Both are valid decompositions; zero-volume
    cells are dropped.
    """
    if method not in ("pulling", "delaunay"):
        raise ValueError(f"unknown triangulation method {method!r}")
    V = np.asarray(vertices, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    dim = V.shape[1]
    scale = _hull_scale(V)
    if len(V) < dim + 1 or scale <= 0:
        raise DegenerateRegionError("fewer than dim + 1 distinct vertices")
    if dim == 1:
        lo, hi = V[:, 0].min(), V[:, 0].max()
        return [Simplex(np.array([[lo], [hi]]))]
    try:
        if method == "pulling":
            hull = ConvexHull(V)
            cells = [np.concatenate([[apex], f]) for f in hull.simplices if apex not in f]
        else:
            cells = list(Delaunay(V).simplices)
    except QhullError as exc:
        raise DegenerateRegionError(f"convex hull is lower-dimensional: {exc}") from exc
    min_vol = 1e-12 * scale**dim
    out = [Simplex(V[np.asarray(cell)]) for cell in cells]
    out = [s for s in out if s.volume > min_vol]
    if not out:
        raise DegenerateRegionError("triangulation has no cell of positive volume")
    return out
