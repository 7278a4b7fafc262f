import math

import numpy as np
import pytest

from corrsift import (NullSpec, RngStream, build_constraints, cca_decompose, classical_p_value,
                      closed_form_selective_p, g_u, integrate_selective_p, mc_selective_p,
                      sample_covariance, sample_null_canonical_correlations, selective_p_value,
                      wilks_statistic)
from corrsift import pvalue as pv
from corrsift.errors import (DegenerateRegionError, InsufficientAcceptanceError,
                             SelectionMismatchError)
from corrsift.polytope import PolytopeH, ordering_rows
from corrsift.results import Method, PValueResult

from conftest import selected_instance
from oracles import binomial_se, mpmath_betainc


def _cube(r):
    return PolytopeH(*ordering_rows(r))


def _within(a, b, B, k=3.0):
    return abs(a - b) <= k * binomial_se(b, B)


def test_closed_form_examples():
    spec = NullSpec(30, 10, 1)
    assert closed_form_selective_p(0.0, 0.4, spec) == 1.0
    lam = 0.41
    assert closed_form_selective_p(lam, 1.0, spec) == pytest.approx(
        classical_p_value([lam], spec).p, abs=1e-14)
    with pytest.raises(ValueError):
        closed_form_selective_p(0.1, 0.0, spec)


def test_closed_form_against_mpmath():
    spec = NullSpec(22, 20, 1)
    a, b = spec.beta_shapes
    lam, gu = 0.9, 0.95
    F = lambda x: mpmath_betainc(x, a, b)
    ref = (F(gu) - F(lam ** 2)) / F(gu)
    assert closed_form_selective_p(lam, gu, spec) == pytest.approx(ref, rel=1e-9)


def test_closed_form_against_mc(rng):
    for _ in range(3):
        S, G = selected_instance(rng, 10, 20, 0.3, want_r=1)
        cca = cca_decompose(S, G)
        spec = NullSpec(20, 10, 1)
        closed = closed_form_selective_p(cca.lambdas[0], g_u(S, cca, 0.3), spec)
        mc, diag = mc_selective_p(build_constraints(S, cca, 0.3), cca.lambdas, spec,
                                  B=200_000, rng=RngStream(1, 0))
        assert _within(mc, closed, diag.acceptance_count)


def test_integration_trivial_and_unconstrained():
    spec = NullSpec(25, 8, 2)
    p, converged, diag = integrate_selective_p(_cube(2), [0.0, 0.0], spec)
    assert converged and p == pytest.approx(1.0, abs=1e-12)
    lam = np.array([0.6, 0.25])
    p, converged, _ = integrate_selective_p(_cube(2), lam, spec, rel_tol=1e-8)
    draws = sample_null_canonical_correlations(spec, RngStream(2, 0), size=200_000)
    ref = np.mean(wilks_statistic(draws) <= wilks_statistic(lam))
    assert converged and _within(p, ref, 200_000)


@pytest.mark.parametrize("r,seed", [(2, 1), (2, 2), (3, 3)])
def test_integration_against_mc(r, seed):
    rng = np.random.default_rng(seed)
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=r)
    cca = cca_decompose(S, G)
    spec = NullSpec(22, 10, r)
    poly = build_constraints(S, cca, 0.3)
    p, converged, diag = integrate_selective_p(poly, cca.lambdas, spec)
    assert converged and diag.vertex_count >= r + 1 and diag.simplex_count >= 1
    mc, mdiag = mc_selective_p(poly, cca.lambdas, spec, B=200_000, rng=RngStream(seed, 0))
    assert _within(mc, p, mdiag.acceptance_count)


def test_integration_decomposition_invariant():
    # the selective ratio does not depend on which tolerance or outer split is used
    rng = np.random.default_rng(5)
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=2)
    cca = cca_decompose(S, G)
    poly = build_constraints(S, cca, 0.3)
    spec = NullSpec(22, 10, 2)
    a, _, _ = integrate_selective_p(poly, cca.lambdas, spec, rel_tol=1e-6)
    b, _, _ = integrate_selective_p(poly, cca.lambdas, spec, rel_tol=1e-9)
    assert a == pytest.approx(b, rel=1e-5)


def test_integration_needs_origin_vertex():
    L, g = ordering_rows(2)
    poly = PolytopeH(np.vstack([[-1.0, 0.0], L]), np.concatenate([[-0.2], g]))
    with pytest.raises(DegenerateRegionError):
        integrate_selective_p(poly, [0.5, 0.1], NullSpec(25, 8, 2))


def test_mc_empty_numerator():
    p, diag = mc_selective_p(_cube(2), [1.0, 1.0], NullSpec(25, 8, 2), B=1000, rng=RngStream(0, 0))
    assert p == 0.0 and diag.acceptance_count == 1000 and diag.B_used == 1000


def test_mc_full_cube_equals_plain_mc():
    spec, lam = NullSpec(25, 8, 2), np.array([0.5, 0.2])
    p, diag = mc_selective_p(_cube(2), lam, spec, B=5000, rng=RngStream(3, 0))
    draws = sample_null_canonical_correlations(spec, RngStream(3, 0), size=5000)
    assert p == np.mean(wilks_statistic(draws) <= wilks_statistic(lam))


def _two_block_instance(seed, sizes=(6, 8), n=60, c=0.3):
    gen = np.random.default_rng(seed)
    p = sum(sizes)
    while True:
        Z = gen.standard_normal((n, len(sizes)))
        X = gen.standard_normal((n, p))
        start = 0
        for k, s in enumerate(sizes):
            X[:, start:start + s] += 1.5 * Z[:, [k]]
            start += s
        S = sample_covariance(X)
        G = tuple(range(sizes[0]))
        from corrsift import select_components
        if G in select_components(S, c):
            return S, G, n


def test_mc_self_consistency_r6():
    S, G, n = _two_block_instance(4)
    cca = cca_decompose(S, G)
    assert cca.r == 6
    poly = build_constraints(S, cca, 0.3)
    spec = NullSpec(n, S.shape[0], 6)
    p1, d1 = mc_selective_p(poly, cca.lambdas, spec, B=100_000, rng=RngStream(1, 0))
    p2, d2 = mc_selective_p(poly, cca.lambdas, spec, B=100_000, rng=RngStream(2, 0))
    pooled = (p1 * d1.acceptance_count + p2 * d2.acceptance_count) / (
        d1.acceptance_count + d2.acceptance_count)
    se = math.sqrt(pooled * (1 - pooled) * (1 / d1.acceptance_count + 1 / d2.acceptance_count))
    assert abs(p1 - p2) <= 3 * max(se, 1e-12)


def test_mc_budget_escalation_and_exhaustion():
    L, g = ordering_rows(2)
    spec = NullSpec(60, 8, 2)
    # acceptance of lambda_1 <= 0.2 is about 0.6%: 1000 draws are too few, 1e5 enough
    narrow = PolytopeH(np.vstack([[1.0, 0.0], L]), np.concatenate([[0.2], g]))
    p, diag = mc_selective_p(narrow, [0.15, 0.05], spec, B=1000, rng=RngStream(0, 0))
    assert diag.B_used > 1000 and diag.acceptance_count >= pv.MIN_ACCEPTED
    assert "escalated" in diag.fallback_reason
    tiny = PolytopeH(np.vstack([[1.0, 0.0], L]), np.concatenate([[0.01], g]))
    with pytest.raises(InsufficientAcceptanceError) as err:
        mc_selective_p(tiny, [0.005, 0.001], spec, B=1000, rng=RngStream(0, 0))
    assert err.value.draws == pv.B_MAX and err.value.rate < 1e-4
    with pytest.raises(ValueError):
        mc_selective_p(narrow, [0.15, 0.05], spec, B=0, rng=RngStream(0, 0))


def test_dispatch_routes():
    rng = np.random.default_rng(12)
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=1)
    res = selective_p_value(S, 22, G, 0.3)
    assert res.method is Method.CLOSED_FORM
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=3)
    res = selective_p_value(S, 22, G, 0.3, rng=RngStream(0, 0))
    assert res.method is Method.INTEGRATION and res.diagnostics.integration_converged
    S, G, n = _two_block_instance(9, sizes=(7, 8))
    res = selective_p_value(S, n, G, 0.3, rng=RngStream(0, 0))
    assert res.method is Method.MONTE_CARLO and res.diagnostics.B_used >= 1000
    assert res.diagnostics.acceptance_count >= pv.MIN_ACCEPTED


def test_dispatch_policies(rng):
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=2)
    forced = selective_p_value(S, 22, G, 0.3, policy="mc", B=2000, rng=RngStream(0, 0))
    assert forced.method is Method.MONTE_CARLO and forced.diagnostics.B_used >= 2000
    with pytest.raises(ValueError):
        selective_p_value(S, 22, G, 0.3, policy="closed")
    with pytest.raises(ValueError):
        selective_p_value(S, 22, G, 0.3, policy="exact")
    with pytest.raises(ValueError):
        selective_p_value(S, 22, G, 0.3, policy="mc")  # no random stream
    S1, G1 = selected_instance(rng, 10, 22, 0.3, want_r=1)
    via_int = selective_p_value(S1, 22, G1, 0.3, policy="integrate")
    closed = selective_p_value(S1, 22, G1, 0.3, policy="closed")
    assert via_int.method is Method.INTEGRATION
    assert via_int.p == pytest.approx(closed.p, rel=1e-6, abs=1e-12)


def test_dispatch_mismatch(rng):
    S, G = selected_instance(rng, 10, 22, 0.3)
    bad = tuple(sorted(set(range(10)) - set(G)))[:1] + G if len(G) < 9 else (0,)
    if bad in [tuple(sorted(g)) for g in [G]]:
        bad = (G[0],) if len(G) > 1 else (0, 1)
    with pytest.raises(SelectionMismatchError):
        selective_p_value(S, 22, bad, 0.3, rng=RngStream(0, 0))


def test_dispatch_fallbacks(monkeypatch, rng):
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=2)

    def degenerate(*args, **kwargs):
        raise DegenerateRegionError("flat")

    monkeypatch.setattr(pv, "integrate_selective_p", degenerate)
    res = selective_p_value(S, 22, G, 0.3, rng=RngStream(0, 0))
    assert res.method is Method.MONTE_CARLO and "degenerate" in res.diagnostics.fallback_reason

    monkeypatch.setattr(pv, "integrate_selective_p",
                        lambda *a, **k: (1.2, True, pv.Diagnostics()))
    res = selective_p_value(S, 22, G, 0.3, rng=RngStream(0, 0))
    assert res.method is Method.MONTE_CARLO and "outside" in res.diagnostics.fallback_reason


def test_dispatch_deterministic(rng):
    S, G = selected_instance(rng, 10, 22, 0.3, want_r=2)
    a = selective_p_value(S, 22, G, 0.3, policy="mc", rng=RngStream(5, 1))
    b = selective_p_value(S, 22, G, 0.3, policy="mc", rng=RngStream(5, 1))
    assert a == b
    c = selective_p_value(S, 22, G, 0.3)
    d = selective_p_value(S, 22, G, 0.3)
    assert c == d


def test_result_validation():
    with pytest.raises(ValueError):
        PValueResult(1.5, Method.CLOSED_FORM)
    res = PValueResult(0.25, Method.MONTE_CARLO)
    assert res.to_dict()["method"] == "monte_carlo"
