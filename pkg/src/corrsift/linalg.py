"""Dense symmetric linear algebra and sample moments.

Everything here works on plain ``numpy`` arrays; the small dataclasses carry
validated matrices between modules.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (DegenerateVariableError, DimensionError, InsufficientObservationsError,
                     SingularMatrixError)

PD_REL_TOL = 1e-10
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class DataMatrix:
    """n observations (rows) of p variables (columns)."""

    values: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"data must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DimensionError("data contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != values.shape[1]:
                raise DimensionError(
                    f"{len(labels)} labels for {values.shape[1]} columns")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def validate_for_inference(self) -> None:
        """Raise unless n > p and every column has positive variance."""
        if self.n <= self.p:
            raise InsufficientObservationsError(
                f"inference requires n > p, got n={self.n}, p={self.p}")
        var = self.values.var(axis=0)
        bad = np.flatnonzero(var <= 0)
        if bad.size:
            raise DegenerateVariableError(int(bad[0]), float(var[bad[0]]))


@dataclass(frozen=True)
class CovarianceMatrix:
    S: np.ndarray
    p: int = field(init=False)

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionError(f"covariance must be square, got {S.shape}")
        scale = max(np.max(np.abs(S)), np.finfo(float).tiny)
        if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
            raise DimensionError("covariance matrix is not symmetric")
        d = np.diag(S)
        bad = np.flatnonzero(~(d > 0))
        if bad.size:
            raise DegenerateVariableError(int(bad[0]), float(d[bad[0]]))
        S = (S + S.T) / 2
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "p", S.shape[0])

    def correlation(self) -> "CorrelationMatrix":
        return correlation_from_covariance(self)

    def block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        return self.S[np.ix_(rows, cols)]


@dataclass(frozen=True)
class CorrelationMatrix:
    R: np.ndarray

    @property
    def p(self) -> int:
        return self.R.shape[0]


def _matrix(M) -> np.ndarray:
    if isinstance(M, CovarianceMatrix):
        return M.S
    if isinstance(M, CorrelationMatrix):
        return M.R
    return np.asarray(M, dtype=float)


def sample_covariance(data) -> np.ndarray | CovarianceMatrix:
    """Centered cross-product divided by n (not n - 1).

    Returns a :class:`CovarianceMatrix` for :class:`DataMatrix` input and a
    bare array otherwise, so constant columns (zero variance) can still be
    inspected.
    """
    x = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise DimensionError(f"need at least 2 observations, got {n}")
    xc = x - x.mean(axis=0)
    S = xc.T @ xc / n
    S = (S + S.T) / 2
    if isinstance(data, DataMatrix):
        return CovarianceMatrix(S)
    return S


def correlation_from_covariance(S) -> CorrelationMatrix:
    S = _matrix(S)
    d = np.diag(S)
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise DegenerateVariableError(int(bad[0]), float(d[bad[0]]))
    s = 1.0 / np.sqrt(d)
    R = S * s[:, None] * s[None, :]
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R)


def _checked_eigh(M, rel_tol: float) -> tuple[np.ndarray, np.ndarray]:
    M = _matrix(M)
    M = (M + M.T) / 2
    w, V = np.linalg.eigh(M)
    top = w[-1]
    ratio = w[0] / top if top > 0 else -np.inf
    if not top > 0 or ratio <= rel_tol:
        raise SingularMatrixError(
            f"matrix is not safely positive definite (min/max eigenvalue ratio {ratio:.3g})",
            ratio=float(ratio),
        )
    return w, V


def sym_sqrt(M, rel_tol: float = PD_REL_TOL) -> np.ndarray:
    w, V = _checked_eigh(M, rel_tol)
    out = (V * np.sqrt(w)) @ V.T
    return (out + out.T) / 2


def sym_inv_sqrt(M, rel_tol: float = PD_REL_TOL) -> np.ndarray:
    w, V = _checked_eigh(M, rel_tol)
    out = (V / np.sqrt(w)) @ V.T
    return (out + out.T) / 2


def log_determinant(M) -> float:
    """log|M| from a Cholesky factor; raises for non-PD input."""
    M = _matrix(M)
    try:
        L = np.linalg.cholesky((M + M.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    return float(2.0 * np.sum(np.log(np.diag(L))))
