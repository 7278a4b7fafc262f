"""Canonical correlations of a group split, the Wilks statistic and the
covariance with a rebuilt cross block."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import CovarianceMatrix, _matrix, sym_inv_sqrt, sym_sqrt
from .selection import group_complement


@dataclass(frozen=True)
class CcaDecomposition:
    """Compact SVD of the whitened cross-covariance between a group and its complement.

    Internally the smaller of (group, complement) is the "left" block, so
    ``A_hat`` is ``card(small) x r`` and ``Gamma_hat`` is ``card(large) x r``
    with ``r = min(card(group), p - card(group))``. ``group_is_left`` records
    which side the caller's group landed on.
    """

    group: tuple[int, ...]
    complement: tuple[int, ...]
    lambdas: np.ndarray
    A_hat: np.ndarray
    Gamma_hat: np.ndarray
    sqrt_left: np.ndarray
    sqrt_right: np.ndarray
    group_is_left: bool

    @property
    def r(self) -> int:
        return len(self.lambdas)

    @property
    def left(self) -> tuple[int, ...]:
        return self.group if self.group_is_left else self.complement

    @property
    def right(self) -> tuple[int, ...]:
        return self.complement if self.group_is_left else self.group

    @property
    def sqrt_S_PP(self) -> np.ndarray:
        return self.sqrt_left if self.group_is_left else self.sqrt_right

    @property
    def sqrt_S_PcPc(self) -> np.ndarray:
        return self.sqrt_right if self.group_is_left else self.sqrt_left

    def cross_block(self, lambdas) -> np.ndarray:
        """``S_{P,P^c}`` rebuilt with the given canonical correlations (group rows)."""
        lam = np.asarray(lambdas, dtype=float)
        if lam.shape != (self.r,):
            raise ValueError(f"expected {self.r} canonical correlations, got shape {lam.shape}")
        block = self.sqrt_left @ (self.A_hat * lam) @ self.Gamma_hat.T @ self.sqrt_right
        return block if self.group_is_left else block.T

    def rank_one_terms(self) -> np.ndarray:
        """Array ``(r, card(P), card(P^c))`` whose k-th slice is the cross block for a unit k-th correlation."""
        left = self.sqrt_left @ self.A_hat
        right = self.sqrt_right @ self.Gamma_hat
        terms = np.einsum("ik,jk->kij", left, right)
        return terms if self.group_is_left else terms.transpose(0, 2, 1)


def cca_decompose(S, group: Sequence[int]) -> CcaDecomposition:
    S = _matrix(S)
    p = S.shape[0]
    P = tuple(sorted(int(i) for i in group))
    Pc = group_complement(P, p)
    group_is_left = len(P) <= len(Pc)
    left, right = (P, Pc) if group_is_left else (Pc, P)

    S_ll = S[np.ix_(left, left)]
    S_rr = S[np.ix_(right, right)]
    S_lr = S[np.ix_(left, right)]
    sqrt_l, isqrt_l = sym_sqrt(S_ll), sym_inv_sqrt(S_ll)
    sqrt_r, isqrt_r = sym_sqrt(S_rr), sym_inv_sqrt(S_rr)

    U, s, Vt = np.linalg.svd(isqrt_l @ S_lr @ isqrt_r, full_matrices=False)
    V = Vt.T
    # sign convention: largest-magnitude entry of each left vector is positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = V * signs
    s = np.clip(s, 0.0, 1.0)
    return CcaDecomposition(P, Pc, s, U, V, sqrt_l, sqrt_r, group_is_left)


def wilks_statistic(lambdas) -> float | np.ndarray:
    """``prod(1 - lambda_i^2)``; a 2-D input is reduced row by row."""
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam < 0) or np.any(lam > 1) or np.any(np.isnan(lam)):
        raise ValueError("canonical correlations must lie in [0, 1]")
    out = np.prod(1.0 - lam**2, axis=-1)
    return float(out) if out.ndim == 0 else out


def perturbed_covariance(S, cca: CcaDecomposition, lambdas) -> CovarianceMatrix:
    """Copy of ``S`` whose cross block is rebuilt from the observed singular vectors and ``lambdas``.

    ``lambdas`` is not required to be sorted or inside [0, 1]; the map is
    linear in it.
    """
    S = np.array(_matrix(S), dtype=float)
    block = cca.cross_block(lambdas)
    P, Pc = cca.group, cca.complement
    S[np.ix_(P, Pc)] = block
    S[np.ix_(Pc, P)] = block.T
    return CovarianceMatrix(S)
