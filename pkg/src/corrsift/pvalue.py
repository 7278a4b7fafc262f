"""Selective p-values for a group chosen by correlation thresholding.

Routing by ``r = min(card(P), p - card(P))``:

* ``r == 1``: truncated Beta closed form,
* ``2 <= r <= 5``: ratio of density integrals over the triangulated
  conditioning polytope (Monte Carlo if the geometry is degenerate or the
  ratio leaves [0, 1]),
* ``r > 5``: Monte Carlo over null draws that land in the polytope.
"""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .cca import CcaDecomposition, cca_decompose, wilks_statistic
from .cubature import DEFAULT_REL_TOL, integrate_simplices, simplex_volumes
from .errors import (DegenerateRegionError, EmptyRegionError,
                     InsufficientAcceptanceError, SelectionMismatchError)
from .linalg import _matrix, correlation_from_covariance
from .nulldist import (DEFAULT_B, NullSpec, RngStream, beta_cdf, beta_sf, log_density_on_rays,
                       null_log_density_unnormalized,
                       sample_null_canonical_correlations)
from .polytope import FEAS_TOL, PolytopeH, build_constraints, enumerate_vertices, triangulate
from .results import Diagnostics, Method, PValueResult
from .selection import select_components

log = logging.getLogger(__name__)

MIN_ACCEPTED = 100
B_GROWTH = 10
B_MAX = 1_000_000
MAX_INTEGRATION_R = 5
_MC_CHUNK_ENTRIES = 2_000_000
_CELL_OFFSET = 3.0
POLICIES = ("auto", "closed", "integrate", "mc")
# Dispatcher tolerances on the (pessimistic) cubature error estimate. The
# outer integrand has kinks where the Wilks level set leaves the polytope,
# and at r >= 4 tighter targets cost minutes; the realized error at these
# settings is several times below the target.
SELECTIVE_REL_TOL = {2: 1e-5, 3: 1e-5, 4: 1e-3, 5: 1e-2}


def g_u(S, cca: CcaDecomposition, c: float) -> float:
    """Upper end of the feasible interval for the squared correlation when r = 1."""
    if cca.r != 1:
        raise ValueError(f"g_u is defined for r = 1, got r = {cca.r}")
    R = correlation_from_covariance(S).R
    max_cross = float(np.max(np.abs(R[np.ix_(cca.group, cca.complement)])))
    if max_cross == 0.0:
        return 1.0
    return min(1.0, (c * float(cca.lambdas[0]) / max_cross) ** 2)


def closed_form_selective_p(lambda1_hat: float, g_u: float, spec: NullSpec) -> float:
    """Survival probability of a Beta law truncated to ``[0, g_u]``."""
    if not g_u > 0:
        raise ValueError("g_u = 0: the conditioning set has measure zero")
    a, b = spec.beta_shapes
    x = min(g_u, float(lambda1_hat) ** 2)
    Fg = beta_cdf(g_u, a, b)
    if beta_cdf(x, a, b) > 0.5:
        num = beta_sf(x, a, b) - beta_sf(g_u, a, b)
    else:
        num = Fg - beta_cdf(x, a, b)
    return float(min(max(num / Fg, 0.0), 1.0))


def _count_in_polytope(poly: PolytopeH, lam: np.ndarray) -> np.ndarray:
    return np.all(lam @ poly.L.T <= poly.g, axis=1)


def mc_selective_p(poly: PolytopeH, lambdas_hat, spec: NullSpec, B: int = DEFAULT_B,
                   rng: RngStream | None = None) -> tuple[float, Diagnostics]:
    """Ratio of null draws in the polytope with a smaller Wilks statistic.

    If fewer than 100 of the first ``B`` draws are accepted the budget grows
    tenfold, up to one million draws.
    """
    if B < 1:
        raise ValueError("B must be positive")
    if rng is None:
        raise ValueError("a random stream is required")
    w_hat = wilks_statistic(np.asarray(lambdas_hat, dtype=float))
    chunk = max(1000, _MC_CHUNK_ENTRIES // (spec.r * spec.r))
    drawn = accepted = hits = 0
    target = int(B)
    while True:
        while drawn < target:
            k = min(chunk, target - drawn)
            lam = sample_null_canonical_correlations(spec, rng, size=k)
            inside = _count_in_polytope(poly, lam)
            accepted += int(inside.sum())
            hits += int(np.count_nonzero(inside & (wilks_statistic(lam) <= w_hat)))
            drawn += k
        if accepted >= MIN_ACCEPTED:
            break
        if target >= B_MAX:
            raise InsufficientAcceptanceError(accepted, drawn)
        target = min(target * B_GROWTH, B_MAX)
        log.debug("escalating MC budget to %d (accepted %d)", target, accepted)
    diag = Diagnostics(B_used=drawn, acceptance_count=accepted)
    if drawn > B:
        diag.fallback_reason = f"budget escalated from {B} to {drawn} draws"
    return hits / accepted, diag


def _log_density_shift(points: np.ndarray, spec: NullSpec) -> float:
    vals = null_log_density_unnormalized(points, spec)
    finite = vals[np.isfinite(vals)]
    return float(finite.max()) if finite.size else 0.0


def _radial_nodes(spec: NullSpec) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] sized for the radial profile of the density."""
    r = spec.r
    b = max((spec.n - spec.p - 2) / 2.0, 0.0)
    degree = r * (spec.p - 2 * r) + r * (r - 1) + (r - 1) + 2 * b * r
    k = int(np.clip(np.ceil(degree / 2.0) + 16, 24, 400))
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def _wilks_crossing(y: np.ndarray, w_hat: float, iters: int = 60) -> np.ndarray:
    """Smallest t in [0, 1] with prod(1 - t^2 y_i^2) <= w_hat, or 1 when there is none."""
    lo = np.zeros(y.shape[:-1])
    hi = np.ones(y.shape[:-1])
    target = np.log(w_hat) if w_hat > 0 else -np.inf
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        with np.errstate(divide="ignore"):
            val = np.sum(np.log1p(-(mid[..., None] * y) ** 2), axis=-1)
        below = val <= target
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
    return hi


def integrate_selective_p(poly: PolytopeH, lambdas_hat, spec: NullSpec,
                          rel_tol: float = DEFAULT_REL_TOL,
                          max_subdivisions: int | None = None) -> tuple[float, bool, Diagnostics]:
    """Ratio of null-density integrals over the polytope.

    The numerator restricts to ``prod(1 - lam^2) <= prod(1 - lam_hat^2)``.
    The polytope is coned from the origin (always a vertex); along every ray
    the Wilks statistic decreases, so the restricted region is ``t >= t*``
    and the radial integrals are taken by Gauss-Legendre on ``[0, 1]`` and
    ``[t*, 1]``. The outer integrals over the cone bases are adaptive
    Grundmann-Moller cubature, one domain per cone cell.

    Returns ``(p, converged, diagnostics)``; the ratio is not clipped, so a
    value outside [0, 1] tells the caller to fall back. Raises
    :class:`DegenerateRegionError` when the polytope has no volume.
    """
    lam_hat = np.asarray(lambdas_hat, dtype=float)
    r = spec.r
    w_hat = wilks_statistic(lam_hat)
    V = enumerate_vertices(poly)
    norms = np.linalg.norm(V, axis=1)
    origin = int(np.argmin(norms))
    if norms[origin] > FEAS_TOL:
        raise DegenerateRegionError("the origin is not a vertex of the conditioning set")
    cells = triangulate(V, method="pulling", apex=origin)
    bases = np.stack([s.vertices[1:] for s in cells])  # (F, r, r)
    dets = np.abs(np.linalg.det(bases))
    probe = np.concatenate([V, bases.mean(axis=1), lam_hat[None]])
    shift = _log_density_shift(probe, spec)
    t_nodes, t_weights = _radial_nodes(spec)

    # One copy of the standard (r-1)-simplex per cone cell, laid side by side
    # along the first axis, so refinement only touches cells that need it.
    def rays(y, cell):
        t_star = _wilks_crossing(y, w_hat)
        span = 1.0 - t_star
        # denominator on [0, 1], numerator on [t*, 1]
        t_all = np.concatenate([
            np.broadcast_to(t_nodes, (len(y),) + t_nodes.shape),
            t_star[:, None] + span[:, None] * t_nodes,
        ], axis=-1)
        logf = log_density_on_rays(y, t_all, spec)
        f = np.exp(logf - shift) * t_all ** (r - 1)
        g = len(t_nodes)
        den = f[:, :g] @ t_weights
        num = (f[:, g:] @ t_weights) * span
        return np.column_stack([num, den]) * dets[cell, None]

    def outer(x):
        cell = np.clip(np.floor(x[:, 0] / _CELL_OFFSET).astype(int), 0, len(bases) - 1)
        beta = x.copy()
        beta[:, 0] -= _CELL_OFFSET * cell
        bary = np.column_stack([1.0 - beta.sum(axis=1), beta])
        return rays(np.einsum("kv,kvd->kd", bary, bases[cell]), cell)  # y is (K, r)

    if r == 1:
        # the cone bases are single points, so only the radial integrals remain
        num, den = rays(bases[:, 0], np.arange(len(bases))).sum(axis=0)
        diag = Diagnostics(integration_converged=True, vertex_count=len(V),
                           simplex_count=len(cells))
        if not den > 0:
            raise DegenerateRegionError("null density integrates to zero over the polytope")
        return float(num / den), True, diag

    # The zero set of the numerator is convex in lambda, so an outer cell whose
    # corners disagree on it contains the kink. When every rule point lies on
    # one side the embedded rules all agree and report no error, although the
    # cell may hold a sliver of the other side; bound that by the cell
    # volume times the largest corner value.
    def numerator_floor(simplices, vals):
        N, nv, d = simplices.shape
        corner = outer(simplices.reshape(-1, d))[:, 0].reshape(N, nv)
        hit = corner > 0
        inside = vals[:, :, 0] > 0
        flag = hit.any(axis=1) & ~inside.any(axis=1)
        out = np.zeros((N, 2))
        out[flag, 0] = simplex_volumes(simplices[flag]) * corner[flag].max(axis=1)
        return out

    base = np.vstack([np.zeros(r - 1), np.eye(r - 1)])
    shifts = np.zeros((len(cells), 1, r - 1))
    shifts[:, 0, 0] = _CELL_OFFSET * np.arange(len(cells))
    res = integrate_simplices(outer, base[None] + shifts, rel_tol=rel_tol,
                              max_subdivisions=max_subdivisions, error_floor=numerator_floor)
    num, den = res.value
    diag = Diagnostics(integration_converged=res.converged, vertex_count=len(V),
                       simplex_count=len(cells))
    if not den > 0:
        raise DegenerateRegionError("null density integrates to zero over the polytope")
    return float(num / den), res.converged, diag


def _check_selected(S, group: Sequence[int], c: float, ordered: bool) -> tuple[int, ...]:
    P = tuple(sorted(int(i) for i in group))
    part = select_components(S, c, ordered=ordered)
    if P not in part.groups:
        raise SelectionMismatchError(
            f"group {list(P)} is not a selected component at threshold {c}")
    return P


def selective_p_value(S, n: int, group: Sequence[int], c: float, policy: str = "auto",
                      B: int = DEFAULT_B, rng: RngStream | None = None,
                      rel_tol: float | None = None, ordered: bool = False,
                      max_subdivisions: int | None = None) -> PValueResult:
    """Selective p-value for independence of ``group`` from the other variables.

    ``group`` holds 0-based indices and must be a component returned by
    :func:`select_components` at threshold ``c``. ``rel_tol`` defaults to
    :data:`SELECTIVE_REL_TOL` for the integration route.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    S = _matrix(S)
    P = _check_selected(S, group, c, ordered)
    cca = cca_decompose(S, P)
    spec = NullSpec(int(n), S.shape[0], cca.r)
    r = cca.r

    if policy == "closed" and r != 1:
        raise ValueError(f"closed form requires r = 1, got r = {r}")
    if policy == "integrate" and r > MAX_INTEGRATION_R:
        raise ValueError(f"integration supports r <= {MAX_INTEGRATION_R}, got r = {r}")

    if r == 1 and policy in ("auto", "closed"):
        gu = g_u(S, cca, c)
        p = closed_form_selective_p(cca.lambdas[0], gu, spec)
        return PValueResult(p, Method.CLOSED_FORM)

    poly = build_constraints(S, cca, c)
    fallback = None
    if policy == "integrate" or (policy == "auto" and r <= MAX_INTEGRATION_R):
        try:
            p, converged, diag = integrate_selective_p(
                poly, cca.lambdas, spec,
                rel_tol=SELECTIVE_REL_TOL.get(r, DEFAULT_REL_TOL) if rel_tol is None else rel_tol,
                max_subdivisions=max_subdivisions)
            if 0.0 <= p <= 1.0:
                return PValueResult(p, Method.INTEGRATION, diag)
            fallback = f"integration ratio {p!r} outside [0, 1]"
        except (DegenerateRegionError, EmptyRegionError) as exc:
            fallback = f"degenerate geometry: {exc}"
        log.info("falling back to Monte Carlo: %s", fallback)

    if rng is None:
        raise ValueError("a random stream is required for the Monte Carlo route")
    p, diag = mc_selective_p(poly, cca.lambdas, spec, B=B, rng=rng)
    if fallback:
        diag.fallback_reason = fallback if diag.fallback_reason is None else (
            f"{fallback}; {diag.fallback_reason}")
    return PValueResult(p, Method.MONTE_CARLO, diag)
