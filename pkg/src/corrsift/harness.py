"""Simulation studies: calibration under the global null and power.

Every replicate ``i`` draws from its own ``RngStream(seed, i)``, so a single
row can be reproduced in isolation and results do not depend on how the
replicates are scheduled over worker processes.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .cca import cca_decompose
from .errors import InsufficientAcceptanceError
from .linalg import CovarianceMatrix, _matrix, correlation_from_covariance, log_determinant
from .nulldist import DEFAULT_B, NullSpec, RngStream, classical_p_value
from .pvalue import selective_p_value
from .selection import select_components

log = logging.getLogger(__name__)

CAP = 1.0 - 1e-8
CAP_MODES = ("min", "paper_max")
SIGMA_MODES = ("random", "diagonal")
BIN_WIDTH = 0.1
TYPE1_COLUMNS = ("replicate", "group_size", "r", "p_selective", "p_classical",
                 "method_selective", "method_classical")
POWER_COLUMNS = ("replicate", "Delta", "Delta_bin", "r", "group_size", "c",
                 "p_selective", "p_classical", "rejected_selective", "rejected_classical")
_BATCH = 2000


@dataclass(frozen=True)
class SimConfig:
    """Settings shared by the type-I and power experiments.

    ``reps`` is the number of simulated datasets. When ``target_tested`` is
    set, datasets are drawn until that many replicates produced a testable
    group (at most ``max_draws``), which matters when selection often
    returns one all-covering component.
    """
    p: int = 20
    n_factor: float = 2.0
    reps: int = 2000
    c: float | str = 0.2
    alpha: float = 0.05
    seed: int = 0
    cap_mode: str = "min"
    B: int = DEFAULT_B
    rel_tol: float | None = None
    target_tested: int | None = None
    max_draws: int = 5_000_000
    min_count: int = 100
    threads: int = 1
    sigma_mode: str = "random"

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be at least 2, got {self.p}")
        if not self.n > self.p:
            raise ValueError(f"n = round({self.n_factor} * {self.p}) = {self.n} must exceed p")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if isinstance(self.c, str):
            if self.c != "adaptive":
                raise ValueError(f"c must be a number or 'adaptive', got {self.c!r}")
        elif not 0.0 <= self.c < 1.0:
            raise ValueError(f"threshold must lie in [0, 1), got {self.c}")
        if self.cap_mode not in CAP_MODES:
            raise ValueError(f"cap_mode must be one of {CAP_MODES}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
        if self.target_tested is not None and self.target_tested < 1:
            raise ValueError("target_tested must be positive")
        if self.B < 1 or self.threads < 1 or self.min_count < 1:
            raise ValueError("B, threads and min_count must be positive")

    @property
    def n(self) -> int:
        return int(round(self.n_factor * self.p))


@dataclass
class PowerRecord:
    replicate: int
    Delta: float
    Delta_bin: str
    rejected_selective: bool
    rejected_classical: bool
    r: int
    group_size: int
    c: float
    p_selective: float
    p_classical: float

    def __post_init__(self):
        if not 0.0 <= self.Delta < 1.0:
            raise ValueError(f"effect size must lie in [0, 1), got {self.Delta}")


@dataclass
class ThresholdChoice:
    c: float
    c_tilde: float
    components: int
    flagged: bool  # no grid value gave exactly two components


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def generate_sigma(p: int, rng: RngStream, w: float | None = None) -> CovarianceMatrix:
    """Random covariance ``Q diag(e) Q^T + w 11^T`` with Haar ``Q`` and ``e ~ U[1, 10]``."""
    if p < 2:
        raise ValueError("p must be at least 2")
    gen = rng.generator
    Q, Rq = np.linalg.qr(gen.standard_normal((p, p)))
    Q = Q * np.sign(np.diag(Rq))
    e = gen.uniform(1.0, 10.0, size=p)
    if w is None:
        w = gen.uniform(0.0, 1.0)
    Sigma = (Q * e) @ Q.T + w * np.ones((p, p))
    return CovarianceMatrix(0.5 * (Sigma + Sigma.T))


def _diagonal_sigma(p: int, rng: RngStream) -> CovarianceMatrix:
    return CovarianceMatrix(np.diag(rng.generator.uniform(1.0, 10.0, size=p)))


def _component_counts(absR: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Number of components of {|R_ij| > t} for every t in the descending grid."""
    p = absR.shape[0]
    iu, ju = np.triu_indices(p, 1)
    vals = absR[iu, ju]
    order = np.argsort(-vals, kind="stable")
    parent = list(range(p))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    counts = np.empty(len(grid), dtype=int)
    k, comps = 0, p
    for g, t in enumerate(grid):
        while k < len(order) and vals[order[k]] > t:
            a, b = find(iu[order[k]]), find(ju[order[k]])
            if a != b:
                parent[a] = b
                comps -= 1
            k += 1
        counts[g] = comps
    return counts


def population_threshold(Sigma, cap_mode: str = "min", n: int | None = None) -> ThresholdChoice:
    """Threshold that splits the population correlation graph into two components.

    ``c_tilde`` is the smallest off-diagonal ``|rho|`` giving exactly two
    components; if none does, the smallest one with the fewest components
    above two is used and ``flagged`` is set. The threshold adds
    ``sqrt(log p / n)`` and is then capped at ``1 - 1e-8`` with ``min``
    (``cap_mode="min"``) or combined by ``max`` (``cap_mode="paper_max"``).
    """
    if cap_mode not in CAP_MODES:
        raise ValueError(f"cap_mode must be one of {CAP_MODES}")
    R = correlation_from_covariance(Sigma).R
    p = R.shape[0]
    if p < 2:
        raise ValueError("p must be at least 2")
    absR = np.abs(R)
    grid = np.unique(absR[np.triu_indices(p, 1)])[::-1]
    counts = _component_counts(absR, grid)
    exact = np.flatnonzero(counts == 2)
    if exact.size:
        idx, flagged = exact[-1], False
    else:
        above = counts[counts > 2]
        if above.size:
            idx = np.flatnonzero(counts == above.min())[-1]
        else:
            idx = 0
        flagged = True
        log.debug("no threshold gives two population components; using %d", counts[idx])
    c_tilde = float(grid[idx])
    bump = math.sqrt(math.log(p) / n) if n else 0.0
    combine = min if cap_mode == "min" else max
    return ThresholdChoice(combine(c_tilde + bump, CAP), c_tilde, int(counts[idx]), flagged)


def effect_size(Sigma, group: Sequence[int]) -> float:
    """Population effect ``1 - |Sigma| / (|Sigma_PP| |Sigma_PcPc|)``."""
    M = _matrix(Sigma)
    P = sorted(int(i) for i in group)
    Pc = [i for i in range(M.shape[0]) if i not in set(P)]
    if not P or not Pc:
        raise ValueError("group and complement must both be nonempty")
    if not np.any(M[np.ix_(P, Pc)]):
        return 0.0
    log_ratio = (log_determinant(M) - log_determinant(M[np.ix_(P, P)])
                 - log_determinant(M[np.ix_(Pc, Pc)]))
    return float(min(max(-math.expm1(min(log_ratio, 0.0)), 0.0), np.nextafter(1.0, 0.0)))


def delta_bin(delta: float, width: float = BIN_WIDTH) -> str:
    k = int(math.floor(delta / width + 1e-12))
    return f"[{k * width:.1f},{(k + 1) * width:.1f})"


def _pick_group(S: np.ndarray, c: float, gen: np.random.Generator):
    part = select_components(S, c)
    candidates = [g for g in part.groups if len(g) < S.shape[0]]
    if not candidates:
        return None
    return candidates[int(gen.integers(len(candidates)))]


def _test_group(S, n, group, c, config: SimConfig, rng: RngStream):
    sel = selective_p_value(S, n, group, c, B=config.B, rng=rng, rel_tol=config.rel_tol)
    cca = cca_decompose(S, group)
    cls = classical_p_value(cca.lambdas, NullSpec(n, S.shape[0], cca.r), B=config.B, rng=rng)
    return cca.r, sel, cls


def type1_replicate(config: SimConfig, i: int) -> dict | str:
    """One null replicate; returns the table row or a skip reason."""
    rng = RngStream(config.seed, i)
    gen = rng.generator
    p, n = config.p, config.n
    c = float(config.c)
    X = gen.standard_normal((n, p))
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / n
    group = _pick_group(S, c, gen)
    if group is None:
        return "no_valid_group"
    try:
        r, sel, cls = _test_group(S, n, group, c, config, rng)
    except InsufficientAcceptanceError:
        return "mc_exhausted"
    return {"replicate": i, "group_size": len(group), "r": r, "p_selective": sel.p,
            "p_classical": cls.p, "method_selective": sel.method.value,
            "method_classical": cls.method.value}


def power_replicate(config: SimConfig, i: int) -> PowerRecord | str:
    """One replicate of the power study; returns a record or a skip reason."""
    rng = RngStream(config.seed, i)
    gen = rng.generator
    p, n = config.p, config.n
    if config.sigma_mode == "diagonal":
        Sigma = _diagonal_sigma(p, rng)
    else:
        Sigma = generate_sigma(p, rng)
    if config.c == "adaptive":
        c = population_threshold(Sigma, config.cap_mode, n).c
    else:
        c = float(config.c)
    X = gen.standard_normal((n, p)) @ np.linalg.cholesky(Sigma.S).T
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / n
    group = _pick_group(S, c, gen)
    if group is None:
        return "no_valid_group"
    try:
        r, sel, cls = _test_group(S, n, group, c, config, rng)
    except InsufficientAcceptanceError:
        return "mc_exhausted"
    delta = effect_size(Sigma, group)
    return PowerRecord(replicate=i, Delta=delta, Delta_bin=delta_bin(delta),
                       rejected_selective=sel.p <= config.alpha,
                       rejected_classical=cls.p <= config.alpha, r=r,
                       group_size=len(group), c=c, p_selective=sel.p, p_classical=cls.p)


_REPLICATES = {"type1": type1_replicate, "power": power_replicate}


def _run_block(kind: str, config: SimConfig, start: int, stop: int) -> list:
    fn = _REPLICATES[kind]
    return [fn(config, i) for i in range(start, stop)]


def _run_replicates(kind: str, config: SimConfig) -> tuple[list, dict]:
    """Rows in replicate order plus skip counts.

    Blocks of replicate indices are evaluated (in parallel when
    ``threads > 1``) until ``reps`` datasets, or ``target_tested`` tested
    rows, are reached; rows beyond the target are discarded so the output
    does not depend on the block schedule.
    """
    target = config.target_tested
    limit = config.reps if target is None else config.max_draws
    rows, skips = [], {}
    pool = ProcessPoolExecutor(config.threads) if config.threads > 1 else None
    start = 0
    try:
        while start < limit and (target is None or len(rows) < target):
            size = _BATCH
            if target is not None:
                # aim just past the target at the tested rate seen so far
                rate = len(rows) / start if start and rows else 0.0
                need = target - len(rows)
                guess = 1.2 * need / rate if rate else need
                size = int(min(_BATCH, max(16, math.ceil(guess / config.threads))))
            width = size * config.threads
            bounds = [(s, min(s + size, limit)) for s in range(start, min(start + width, limit), size)]
            if pool is None:
                results = [_run_block(kind, config, a, b) for a, b in bounds]
            else:
                results = list(pool.map(_run_block, [kind] * len(bounds), [config] * len(bounds),
                                        [a for a, _ in bounds], [b for _, b in bounds]))
            for block in results:
                for out in block:
                    if target is not None and len(rows) >= target:
                        break
                    if isinstance(out, str):
                        skips[out] = skips.get(out, 0) + 1
                    else:
                        rows.append(out)
            start = bounds[-1][1]
            log.info("%s: %d datasets drawn, %d tested", kind, start, len(rows))
    finally:
        if pool is not None:
            pool.shutdown()
    if target is not None and len(rows) < target:
        log.warning("%s: only %d of %d tested replicates within %d draws",
                    kind, len(rows), target, limit)
    drawn = len(rows) + sum(skips.values())
    return rows, {"datasets_drawn": drawn, "tested": len(rows), "skipped": skips}


def _config_echo(config: SimConfig) -> dict:
    out = asdict(config)
    out["n"] = config.n
    return out


def run_type1_experiment(config: SimConfig) -> ExperimentResult:
    """Selective and classical p-values under ``Sigma = I``.

    The summary holds KS statistics against Uniform(0, 1) and the
    empirical quantiles of both p-value columns.
    """
    if config.c == "adaptive":
        raise ValueError("the type-I experiment needs a fixed threshold")
    rows, counts = _run_replicates("type1", config)
    summary = {"experiment": "type1", "config": _config_echo(config), **counts}
    for col in ("p_selective", "p_classical"):
        vals = np.array([row[col] for row in rows], dtype=float)
        if vals.size:
            ks = stats.kstest(vals, "uniform")
            summary[col] = {
                "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
                "mean": float(vals.mean()),
                "quantiles": {str(q): float(np.quantile(vals, q)) for q in (0.25, 0.5, 0.75)},
            }
    methods = {}
    for row in rows:
        methods[row["method_selective"]] = methods.get(row["method_selective"], 0) + 1
    summary["selective_methods"] = methods
    return ExperimentResult(rows, summary)


def power_summary(records: Sequence[PowerRecord], min_count: int = 100) -> list[dict]:
    """Rejection rates per effect-size bin, keeping bins with at least ``min_count`` records."""
    bins: dict[str, list[PowerRecord]] = {}
    for rec in records:
        bins.setdefault(rec.Delta_bin, []).append(rec)
    out = []
    for label in sorted(bins, key=lambda s: float(s[1:].split(",")[0])):
        recs = bins[label]
        k = len(recs)
        if k < min_count:
            continue
        sel = sum(rec.rejected_selective for rec in recs) / k
        cls = sum(rec.rejected_classical for rec in recs) / k
        pooled = 0.5 * (sel + cls)
        se = math.sqrt(2.0 * pooled * (1.0 - pooled) / k)
        out.append({"Delta_bin": label, "count": k, "power_selective": sel,
                    "power_classical": cls, "difference": sel - cls, "pooled_se": se})
    return out


def run_power_experiment(config: SimConfig) -> ExperimentResult:
    """Rejection rates of both tests against the population effect size."""
    rows, counts = _run_replicates("power", config)
    summary = {"experiment": "power", "config": _config_echo(config), **counts,
               "cap_mode": config.cap_mode,
               "bins": power_summary(rows, config.min_count)}
    return ExperimentResult(rows, summary)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_table(rows: Sequence, columns: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            rec = row if isinstance(row, dict) else asdict(row)
            writer.writerow([_fmt(rec[col]) for col in columns])


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
