"""Pivotal statistics, confidence intervals, and the two-quantile test.

All inputs come from a finished pass: the averaged iterate and a finalized
random-scaling matrix.  No variance estimation, resampling, or density
estimation happens here; the statistics are studentized by the scaling matrix
and compared against the fixed pivotal critical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .critval import CriticalValueCache, critical_value
from .exceptions import (
    ContractViolationError,
    DegenerateScalingError,
    SingularScalingError,
    UsageError,
)
from .scaling import RandomScalingMatrix
from .sgd import DualPathResult, LearningRateSchedule, run_dual_path

SINGULARITY_RTOL = 1e-12


def t_statistic(beta_bar_j: float, hypothesized: float, v_jj: float, n: int) -> float:
    """sqrt(n) (estimate - hypothesized) / sqrt(v_jj)."""
    if n < 2:
        raise ContractViolationError(f"need n >= 2, got {n}")
    if not (v_jj > 0.0):
        raise DegenerateScalingError(
            f"scaling entry must be positive for a t-ratio, got {v_jj} "
            "(constant path or too few steps)"
        )
    return float(np.sqrt(n) * (beta_bar_j - hypothesized) / np.sqrt(v_jj))


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    critical_value: float
    degenerate: bool = False

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def confidence_interval(
    beta_bar_j: float,
    v_jj: float,
    n: int,
    level: float = 0.95,
    cache: CriticalValueCache | None = None,
) -> ConfidenceInterval:
    """Two-sided interval: estimate +/- cv(level) * sqrt(v_jj / n)."""
    if n < 2:
        raise ContractViolationError(f"need n >= 2, got {n}")
    if v_jj < 0.0:
        raise DegenerateScalingError(f"negative scaling entry {v_jj}")
    cv = critical_value(level, ell=1, form="t", cache=cache)
    half = cv.value * float(np.sqrt(v_jj / n))
    return ConfidenceInterval(
        lower=float(beta_bar_j - half),
        upper=float(beta_bar_j + half),
        level=level,
        critical_value=cv.value,
        degenerate=(v_jj == 0.0),
    )


def _solve_spd(M: np.ndarray, rhs: np.ndarray, allow_pseudo: bool = False) -> tuple[np.ndarray, bool]:
    """Solve M x = rhs for symmetric positive-definite M without forming an inverse.

    Cholesky first; if that fails, a symmetric eigen decomposition either
    raises (singular beyond tolerance) or, when ``allow_pseudo``, drops the
    negligible directions and flags it.
    """
    M = np.asarray(M, dtype=float)
    try:
        chol = scipy.linalg.cho_factor(M, lower=True)
        return scipy.linalg.cho_solve(chol, rhs), False
    except scipy.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    wmax = float(np.max(w)) if w.size else 0.0
    keep = w > SINGULARITY_RTOL * max(wmax, 0.0)
    if not np.any(keep):
        raise SingularScalingError("scaling matrix for the restriction is singular")
    if not np.all(keep) and not allow_pseudo:
        raise SingularScalingError(
            "scaling matrix for the restriction is singular beyond tolerance "
            "(rank-deficient restriction or degenerate contrast)"
        )
    coeff = (U[:, keep].T @ rhs) / w[keep]
    return U[:, keep] @ coeff, bool(not np.all(keep))


def wald_statistic(
    R: np.ndarray,
    c: np.ndarray,
    beta_bar: np.ndarray,
    V: RandomScalingMatrix | np.ndarray,
    n: int,
) -> float:
    """n (R beta_bar - c)' (R V R')^{-1} (R beta_bar - c) via an SPD solve."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    beta_bar = np.asarray(beta_bar, dtype=float)
    ell, d = R.shape
    if c.shape != (ell,):
        raise ContractViolationError(f"restriction vector must have length {ell}")
    if beta_bar.shape != (d,):
        raise ContractViolationError(f"R has {d} columns but the estimate has {beta_bar.shape[0]}")
    if ell > d:
        raise ContractViolationError(f"more restrictions ({ell}) than parameters ({d})")
    if isinstance(V, RandomScalingMatrix):
        support = [int(j) for j in np.nonzero(np.any(R != 0.0, axis=0))[0]]
        missing = [j for j in support if j not in V.coords]
        if missing:
            raise ContractViolationError(
                f"restriction touches coordinates {missing} not tracked by the scaling matrix"
            )
        Rv = R[:, list(V.coords)]
        Vm = np.diag(V.values) if V.diagonal_only else V.values
    else:
        Rv = R
        Vm = np.asarray(V, dtype=float)
        if Vm.shape != (d, d):
            raise ContractViolationError(f"V must be {d}x{d}, got {Vm.shape}")
    gap = R @ beta_bar - c
    M = Rv @ Vm @ Rv.T
    sol, _ = _solve_spd(M, gap)
    return float(n * (gap @ sol))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    critical_value: float
    level: float
    reject: bool
    ell: int
    cv_source: str

    def __post_init__(self):
        if self.reject != (self.statistic > self.critical_value):
            raise ContractViolationError("reject flag inconsistent with statistic")


def wald_test(
    R: np.ndarray,
    c: np.ndarray,
    beta_bar: np.ndarray,
    V: RandomScalingMatrix | np.ndarray,
    n: int,
    level: float = 0.95,
    cache: CriticalValueCache | None = None,
) -> TestResult:
    """Joint restriction test with the pivotal critical value at ``level``."""
    stat = wald_statistic(R, c, beta_bar, V, n)
    ell = np.atleast_2d(R).shape[0]
    cv = critical_value(level, ell=ell, form="wald", cache=cache)
    return TestResult(stat, cv.value, level, stat > cv.value, ell, cv.source)


def homogeneity_statistic(result: DualPathResult) -> float:
    """Contrast statistic for equality of the tracked subvector across two quantiles.

    With the stacked scaling matrix Vbar and G = (I, -I):
    n (bar1 - bar2)' (G Vbar G')^{-1} (bar1 - bar2).
    """
    s = len(result.coords)
    idx = np.asarray(result.coords, dtype=np.int64)
    diff = result.beta_bar_1[idx] - result.beta_bar_2[idx]
    Vs = result.stacked.values
    V11, V22 = Vs[:s, :s], Vs[s:, s:]
    V12, V21 = Vs[:s, s:], Vs[s:, :s]
    M = (V11 + V22) - (V12 + V21)
    try:
        sol, _ = _solve_spd(M, diff)
    except SingularScalingError as err:
        raise SingularScalingError(
            f"{err} (identical or nearly identical quantile paths make the contrast degenerate)"
        ) from None
    return float(result.n * (diff @ sol))


def homogeneity_test(
    data,
    tau1: float,
    tau2: float,
    schedule1: LearningRateSchedule,
    schedule2: LearningRateSchedule,
    beta0_1: np.ndarray,
    beta0_2: np.ndarray,
    coords,
    level: float = 0.95,
    cache: CriticalValueCache | None = None,
) -> tuple[TestResult, DualPathResult]:
    """One synchronized pass over an already-shuffled stream, then the contrast test.

    The critical value uses ell = dim(coords), the dimension of the quadratic
    form after the contrast is applied.
    """
    if tau1 == tau2:
        raise UsageError("quantile levels must differ (equal levels give a singular contrast)")
    result = run_dual_path(data, tau1, tau2, schedule1, schedule2, beta0_1, beta0_2, coords)
    stat = homogeneity_statistic(result)
    ell = len(result.coords)
    cv = critical_value(level, ell=ell, form="wald", cache=cache)
    return TestResult(stat, cv.value, level, stat > cv.value, ell, cv.source), result


@dataclass(frozen=True)
class SelectionPath:
    """Running fraction of steps at which each coordinate's |t| cleared lambda."""

    counts: np.ndarray
    i: int
    threshold: float
    coords: tuple[int, ...]

    DEFAULT_THRESHOLD = 6.747  # the 95% two-sided pivotal critical value

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if np.any(self.counts < 0) or (self.i >= 0 and np.any(self.counts > max(self.i, 0))):
            raise ContractViolationError("counts must lie in [0, i]")

    @property
    def fractions(self) -> np.ndarray:
        if self.i == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / float(self.i)

    @classmethod
    def start(cls, coords, threshold: float = DEFAULT_THRESHOLD) -> "SelectionPath":
        coords = tuple(int(c) for c in coords)
        return cls(np.zeros(len(coords), dtype=np.int64), 0, float(threshold), coords)

    @classmethod
    def from_counts(cls, counts: np.ndarray, n: int, threshold: float, coords) -> "SelectionPath":
        return cls(np.asarray(counts, dtype=np.int64), int(n), float(threshold), tuple(int(c) for c in coords))


def selection_path_update(sp: SelectionPath, t_values: np.ndarray, i: int) -> SelectionPath:
    """Fold step ``i``'s t-ratios into the selection counts (non-finite never selects)."""
    if i != sp.i + 1:
        raise ContractViolationError(f"expected step {sp.i + 1}, got {i}")
    t_values = np.asarray(t_values, dtype=float)
    if t_values.shape != sp.counts.shape:
        raise ContractViolationError("t-value vector must match the tracked coordinates")
    hits = np.where(np.isfinite(t_values), np.abs(t_values) > sp.threshold, False)
    return SelectionPath(sp.counts + hits.astype(np.int64), i, sp.threshold, sp.coords)
