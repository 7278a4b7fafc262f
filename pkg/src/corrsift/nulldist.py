"""Null distribution of the sample canonical correlations.

Under independence of the two blocks the sorted canonical correlations
depend only on (n, p, r). This module evaluates their joint density up to
its constant, draws them through two independent Wishart matrices, and
computes the classical (unselected) likelihood-ratio p-value.

Random numbers come from numpy's Philox4x64 counter-based bit generator,
keyed by ``SeedSequence(seed, spawn_key=(stream,))``, so a (seed, stream)
pair always reproduces the same draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .cca import wilks_statistic
from .results import Diagnostics, Method, PValueResult

DEFAULT_B = 1000
_MAX_RESAMPLE = 10


@dataclass(frozen=True)
class NullSpec:
    n: int
    p: int
    r: int

    def __post_init__(self):
        if not self.n > self.p:
            raise ValueError(f"null distribution requires n > p (n={self.n}, p={self.p})")
        if not 1 <= self.r <= self.p / 2:
            raise ValueError(f"r must satisfy 1 <= r <= p/2 (r={self.r}, p={self.p})")

    @property
    def beta_shapes(self) -> tuple[float, float]:
        """Shapes of the Beta law of the squared correlation when r = 1."""
        return (self.p - 1) / 2.0, (self.n - self.p) / 2.0


class RngStream:
    """Exclusive random stream identified by (seed, stream id)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def null_log_density_unnormalized(lambdas, spec: NullSpec):
    """Log of the canonical-correlation density without its normalizing constant.

    Accepts one vector of length r or an array of shape (k, r); points
    outside ``1 >= l_1 >= ... >= l_r >= 0`` get ``-inf``.
    """
    lam = np.asarray(lambdas, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    if lam.shape[1] != spec.r:
        raise ValueError(f"expected {spec.r} coordinates, got {lam.shape[1]}")
    a = spec.p - 2 * spec.r
    b = (spec.n - spec.p - 2) / 2.0
    inside = (lam[:, 0] <= 1) & (lam[:, -1] >= 0) & np.all(np.diff(lam, axis=1) <= 0, axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.zeros(lam.shape[0])
        if a:
            out += a * np.sum(np.log(lam), axis=1)
        if b:
            out += b * np.sum(np.log1p(-lam * lam), axis=1)
        sq = lam * lam
        for i in range(spec.r):
            for j in range(i + 1, spec.r):
                out += np.log(sq[:, i] - sq[:, j])
    out = np.where(inside & ~np.isnan(out), out, -np.inf)
    return float(out[0]) if single else out


def log_density_on_rays(y: np.ndarray, t: np.ndarray, spec: NullSpec) -> np.ndarray:
    """Unnormalized log density at ``t * y`` for ordered directions ``y``.

    ``y`` has shape ``(..., r)`` and must satisfy ``1 >= y_1 >= ... >= y_r >= 0``;
    ``t`` has shape ``(..., k)`` with entries in [0, 1]. The result has the
    shape of ``t``. Equivalent to :func:`null_log_density_unnormalized` but
    evaluates the direction-only factors once per ray.
    """
    r = spec.r
    a = spec.p - 2 * r
    b = (spec.n - spec.p - 2) / 2.0
    sq = y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.zeros(y.shape[:-1])
        if a:
            base += a * np.sum(np.log(y), axis=-1)
        for i in range(r):
            for j in range(i + 1, r):
                base += np.log(sq[..., i] - sq[..., j])
        power = a * r + r * (r - 1)
        out = base[..., None] + (power * np.log(t) if power else 0.0)
        if b:
            out = out + b * np.sum(np.log1p(-(t[..., None] ** 2) * sq[..., None, :]), axis=-1)
    return np.where(np.isnan(out), -np.inf, out)


def _bartlett_factors(gen: np.random.Generator, dof: float, dim: int, size: int) -> np.ndarray:
    """Lower-triangular factors A with W = A A^T ~ Wishart_dim(I, dof)."""
    A = np.zeros((size, dim, dim))
    diag = np.sqrt(gen.chisquare(dof - np.arange(dim), size=(size, dim)))
    A[:, np.arange(dim), np.arange(dim)] = diag
    rows, cols = np.tril_indices(dim, -1)
    if rows.size:
        A[:, rows, cols] = gen.standard_normal((size, rows.size))
    return A


def sample_null_canonical_correlations(spec: NullSpec, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw sorted canonical correlations under the null.

    Uses eigenvalues Psi of W T^{-1} with W ~ Wishart_r(I, p - r) and
    T ~ Wishart_r(I, n - 1 - p + r), mapped through sqrt(Psi / (1 + Psi)).
    Returns shape (r,) when ``size`` is None, else (size, r).
    """
    k = 1 if size is None else int(size)
    r = spec.r
    dof_w = spec.p - r
    dof_t = spec.n - 1 - spec.p + r
    gen = rng.generator
    A = _bartlett_factors(gen, dof_w, r, k)
    Bt = _bartlett_factors(gen, dof_t, r, k)

    # T = Bt Bt^T is already Cholesky-factored; redraw the rare near-singular ones
    for _ in range(_MAX_RESAMPLE):
        bad = np.flatnonzero(np.min(np.abs(np.diagonal(Bt, axis1=1, axis2=2)), axis=1) < 1e-150)
        if not bad.size:
            break
        Bt[bad] = _bartlett_factors(gen, dof_t, r, bad.size)
    else:
        raise np.linalg.LinAlgError("Wishart factor remained singular after resampling")

    if r == 1:
        psi = (A[:, 0, 0] / Bt[:, 0, 0]) ** 2
        lam = np.sqrt(psi / (1.0 + psi))[:, None]
    else:
        C = np.linalg.solve(Bt, A)
        sv = np.linalg.svd(C, compute_uv=False)
        psi = sv * sv
        lam = np.sqrt(psi / (1.0 + psi))
        lam = -np.sort(-lam, axis=1)
    lam = np.clip(lam, 0.0, 1.0)
    return lam[0] if size is None else lam


def beta_cdf(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b), with x clamped to [0, 1]."""
    if not (a > 0 and b > 0):
        raise ValueError(f"beta shapes must be positive, got a={a}, b={b}")
    x = min(max(float(x), 0.0), 1.0)
    return float(special.betainc(a, b, x))


def beta_sf(x: float, a: float, b: float) -> float:
    """1 - I_x(a, b) evaluated without cancellation."""
    if not (a > 0 and b > 0):
        raise ValueError(f"beta shapes must be positive, got a={a}, b={b}")
    x = min(max(float(x), 0.0), 1.0)
    return float(special.betaincc(a, b, x))


def classical_p_value(lambdas_hat, spec: NullSpec, B: int = DEFAULT_B,
                      rng: RngStream | None = None) -> PValueResult:
    """Wilks' lambda p-value ignoring selection.

    Exact through the Beta law when r = 1; otherwise a Monte Carlo estimate
    ``(1 + hits) / (1 + B)`` from ``B`` null draws.
    """
    lam = np.asarray(lambdas_hat, dtype=float)
    if lam.shape != (spec.r,):
        raise ValueError(f"expected {spec.r} canonical correlations, got shape {lam.shape}")
    if spec.r == 1:
        a, b = spec.beta_shapes
        return PValueResult(beta_sf(lam[0] ** 2, a, b), Method.CLASSICAL_EXACT)
    if rng is None:
        raise ValueError("a random stream is required when r > 1")
    draws = sample_null_canonical_correlations(spec, rng, size=B)
    hits = int(np.count_nonzero(wilks_statistic(draws) <= wilks_statistic(lam)))
    diag = Diagnostics(B_used=B, acceptance_count=B, smoothing="add-one")
    return PValueResult((1 + hits) / (1 + B), Method.CLASSICAL_MC, diag)
