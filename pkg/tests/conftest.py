import numpy as np
import pytest


def random_spd(rng: np.random.Generator, p: int, cond: float = 20.0) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    e = rng.uniform(1.0, cond, size=p)
    M = (Q * e) @ Q.T
    return 0.5 * (M + M.T)


def selected_instance(rng: np.random.Generator, p: int, n: int, c: float, want_r=None,
                      max_tries: int = 10_000):
    """Gaussian data whose selection at ``c`` has a proper group (with r == want_r if given)."""
    from corrsift import sample_covariance, select_components
    for _ in range(max_tries):
        X = rng.standard_normal((n, p))
        S = sample_covariance(X)
        groups = [g for g in select_components(S, c).groups if len(g) < p]
        if want_r is not None:
            groups = [g for g in groups if min(len(g), p - len(g)) == want_r]
        if groups:
            return S, groups[int(rng.integers(len(groups)))]
    raise RuntimeError("no instance found")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
