"""Per-observation subgradient updates and the single-pass path driver.

The estimator consumes a randomized stream once.  Each observation moves the
iterate by a decaying step against the check-loss subgradient; the running
average of the iterates is the estimate, and scaling accumulators observe the
average after every step.  Everything downstream (intervals, tests) is a
function of what this pass produces.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels
from .exceptions import (
    ContractViolationError,
    DataError,
    DivergedPathError,
    InsufficientObservationsError,
    UsageError,
)
from .scaling import RandomScalingMatrix, finalize_from_sums

DEFAULT_CHUNK = 1 << 16


@dataclass(frozen=True)
class Observation:
    """One data row: regressor vector and response."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if x.ndim != 1 or x.size < 1:
            raise ContractViolationError("x must be a nonempty vector")
        if not np.all(np.isfinite(x)) or not np.isfinite(self.y):
            raise ContractViolationError("observation entries must be finite")


@dataclass(frozen=True)
class LearningRateSchedule:
    """Polynomially decaying step size ``gamma0 * i**(-a)``."""

    gamma0: float
    a: float = 0.501

    def __post_init__(self):
        if not (self.gamma0 > 0):
            raise UsageError(f"gamma0 must be positive, got {self.gamma0}")
        if not (0.5 < self.a < 1.0):
            raise UsageError(f"decay exponent a must lie in (0.5, 1), got {self.a}")

    def at(self, i: int) -> float:
        if i < 1:
            raise ContractViolationError(f"step index must be >= 1, got {i}")
        return self.gamma0 * float(i) ** (-self.a)


@dataclass(frozen=True)
class SgdConfig:
    """User-facing estimation settings for one quantile level.

    ``gamma0`` may be the string ``"auto"``, resolved to the rule-of-thumb
    value from a subsample before the pass starts.
    """

    tau: float
    gamma0: float | str = "auto"
    a: float = 0.501
    seed: int | None = None

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise UsageError(f"tau must lie strictly in (0, 1), got {self.tau}")
        if isinstance(self.gamma0, str):
            if self.gamma0 != "auto":
                raise UsageError(f"gamma0 must be a positive number or 'auto', got {self.gamma0!r}")
        elif not (self.gamma0 > 0):
            raise UsageError(f"gamma0 must be positive, got {self.gamma0}")
        if not (0.5 < self.a < 1.0):
            raise UsageError(f"decay exponent a must lie in (0.5, 1), got {self.a}")

    def schedule(self) -> LearningRateSchedule:
        if isinstance(self.gamma0, str):
            raise UsageError("gamma0 is 'auto'; resolve it from a subsample first")
        return LearningRateSchedule(self.gamma0, self.a)


@dataclass
class PathState:
    """Current iterate, running average, and step count of one path."""

    i: int
    beta: np.ndarray
    beta_bar: np.ndarray | None
    beta_ref: np.ndarray

    @classmethod
    def start(cls, beta0: np.ndarray) -> "PathState":
        beta0 = np.asarray(beta0, dtype=float)
        if not np.all(np.isfinite(beta0)):
            raise ContractViolationError("beta0 must be finite")
        return cls(i=0, beta=beta0.copy(), beta_bar=None, beta_ref=beta0.copy())


def subgradient(beta: np.ndarray, x: np.ndarray, y: float, tau: float) -> np.ndarray:
    """Check-loss subgradient at ``beta`` for one observation: x * (1{y <= x'beta} - tau)."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta.shape != x.shape:
        raise ContractViolationError(f"dimension mismatch: beta {beta.shape} vs x {x.shape}")
    ind = 1.0 if y <= float(x @ beta) else 0.0
    return x * (ind - tau)


def step(
    state: PathState,
    obs: Observation,
    schedule: LearningRateSchedule,
    tau: float,
    guard: float = _kernels.DIVERGENCE_GUARD,
) -> PathState:
    """Advance one observation: subgradient move, then average update."""
    i = state.i + 1
    g = subgradient(state.beta, obs.x, obs.y, tau)
    beta = state.beta - schedule.at(i) * g
    if not np.all(np.abs(beta) <= guard):
        raise DivergedPathError(i, float(np.nanmax(np.abs(beta))))
    from .scaling import update_average

    beta_bar = update_average(state.beta_bar, beta, i)
    return PathState(i=i, beta=beta, beta_bar=beta_bar, beta_ref=state.beta_ref)


@dataclass(frozen=True)
class ScalingRequest:
    """What to accumulate during the pass: mode and coordinate set."""

    mode: str = "full"
    coords: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("full", "subvector", "diagonal"):
            raise UsageError(f"unknown scaling mode {self.mode!r}")
        if self.mode == "subvector" and not self.coords:
            raise UsageError("subvector mode requires coords")
        if self.coords is not None:
            object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))

    def resolved_coords(self, d: int) -> tuple[int, ...]:
        coords = self.coords if self.coords is not None else tuple(range(d))
        if len(set(coords)) != len(coords):
            raise UsageError("scaling coords must be distinct")
        if any(c < 0 or c >= d for c in coords):
            raise UsageError(f"scaling coords out of range for d={d}")
        return coords


@dataclass(frozen=True)
class PathResult:
    """Everything the single pass produced."""

    n: int
    d: int
    beta: np.ndarray
    beta_bar: np.ndarray
    scalings: tuple[RandomScalingMatrix, ...]
    selection_counts: np.ndarray | None
    pass_seconds: float
    finalize_seconds: float


@dataclass(frozen=True)
class DualPathResult:
    """Two synchronized paths plus the stacked-subvector scaling matrix."""

    n: int
    d: int
    coords: tuple[int, ...]
    beta_bar_1: np.ndarray
    beta_bar_2: np.ndarray
    stacked: RandomScalingMatrix
    pass_seconds: float
    finalize_seconds: float


def _as_chunks(data, expect_d: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Normalize supported stream forms into validated (X, y) chunk pairs."""
    if isinstance(data, tuple) and len(data) == 2 and not isinstance(data[0], Observation):
        chunks: Iterable = [data]
    else:
        chunks = data

    d_seen = expect_d
    buffer_x: list[np.ndarray] = []
    buffer_y: list[float] = []

    def flush():
        X = np.ascontiguousarray(np.array(buffer_x, dtype=float))
        yv = np.asarray(buffer_y, dtype=float)
        buffer_x.clear()
        buffer_y.clear()
        return X, yv

    for item in chunks:
        if isinstance(item, Observation):
            if buffer_x and item.x.shape[0] != len(buffer_x[0]):
                raise DataError("dimension changed mid-stream")
            buffer_x.append(item.x)
            buffer_y.append(item.y)
            if len(buffer_x) >= DEFAULT_CHUNK:
                X, yv = flush()
                d_seen = _check_chunk(X, yv, d_seen)
                yield X, yv
            continue
        X, yv = item
        X = np.ascontiguousarray(np.asarray(X, dtype=float))
        yv = np.ascontiguousarray(np.asarray(yv, dtype=float))
        d_seen = _check_chunk(X, yv, d_seen)
        if X.shape[0]:
            yield X, yv
    if buffer_x:
        X, yv = flush()
        d_seen = _check_chunk(X, yv, d_seen)
        yield X, yv


def _check_chunk(X: np.ndarray, y: np.ndarray, d_seen: int | None) -> int:
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError(f"chunk shapes inconsistent: X {X.shape}, y {y.shape}")
    if d_seen is not None and X.shape[1] != d_seen:
        raise DataError(f"dimension changed mid-stream: {d_seen} -> {X.shape[1]}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DataError("non-finite value in observation stream")
    return X.shape[1]


def run_path(
    data,
    tau: float,
    schedule: LearningRateSchedule,
    beta0: np.ndarray,
    scaling: ScalingRequest | Sequence[ScalingRequest] = ScalingRequest("full"),
    selection_lambda: float | None = None,
    guard: float = _kernels.DIVERGENCE_GUARD,
) -> PathResult:
    """Single pass over the stream, feeding every requested accumulator.

    ``data`` may be a ``(X, y)`` array pair, an iterable of such chunk pairs,
    or an iterable of :class:`Observation`.  The average excludes ``beta0``
    and starts at the first observation.  At most one dense (full/subvector)
    and one diagonal accumulator can be fed per pass.
    """
    if not (0.0 < tau < 1.0):
        raise UsageError(f"tau must lie strictly in (0, 1), got {tau}")
    beta0 = np.asarray(beta0, dtype=float)
    if beta0.ndim != 1:
        raise ContractViolationError("beta0 must be a vector")
    if not np.all(np.isfinite(beta0)):
        raise ContractViolationError("beta0 must be finite")
    d = beta0.shape[0]

    requests = [scaling] if isinstance(scaling, ScalingRequest) else list(scaling)
    dense_req = [r for r in requests if r.mode in ("full", "subvector")]
    diag_req = [r for r in requests if r.mode == "diagonal"]
    if len(dense_req) > 1 or len(diag_req) > 1:
        raise UsageError("at most one dense and one diagonal accumulator per pass")

    dense_coords = dense_req[0].resolved_coords(d) if dense_req else ()
    diag_coords = diag_req[0].resolved_coords(d) if diag_req else ()
    if selection_lambda is not None and not diag_req:
        raise UsageError("selection path requires a diagonal accumulator")

    beta = beta0.copy()
    beta_bar = np.zeros(d)
    ref = beta0

    cd = np.asarray(dense_coords, dtype=np.int64)
    refd = ref[cd].copy()
    sd = cd.shape[0]
    A = np.zeros((sd, sd))
    cA = np.zeros((sd, sd))
    b = np.zeros(sd)
    cb = np.zeros(sd)

    cg = np.asarray(diag_coords, dtype=np.int64)
    refg = ref[cg].copy()
    sg = cg.shape[0]
    Ad = np.zeros(sg)
    cAd = np.zeros(sg)
    bd = np.zeros(sg)
    cbd = np.zeros(sg)
    sp_counts = np.zeros(sg, dtype=np.int64)
    sp_on = selection_lambda is not None
    sp_lambda = float(selection_lambda) if sp_on else 0.0

    n = 0
    pass_seconds = 0.0
    for X, yv in _as_chunks(data, expect_d=d):
        t0 = time.perf_counter()
        diverged = _kernels.advance_path(
            X, yv, float(tau), schedule.gamma0, schedule.a, n,
            beta, beta_bar,
            cd, refd, A, cA, b, cb,
            cg, refg, Ad, cAd, bd, cbd,
            sp_on, sp_lambda, sp_counts,
            guard,
        )
        pass_seconds += time.perf_counter() - t0
        if diverged:
            raise DivergedPathError(int(diverged), float(np.nanmax(np.abs(beta))))
        n += X.shape[0]

    if n < 2:
        raise InsufficientObservationsError(
            f"insufficient observations for inference (got {n}, need >= 2)"
        )

    t0 = time.perf_counter()
    scalings = []
    for req in requests:
        if req.mode == "diagonal":
            coords, sums, vec = diag_coords, (Ad, bd), True
        else:
            coords, sums, vec = dense_coords, (A, b), False
        delta_n = beta_bar[np.asarray(coords, dtype=np.int64)] - ref[np.asarray(coords, dtype=np.int64)]
        scalings.append(finalize_from_sums(sums[0], sums[1], delta_n, n, coords, diagonal_only=vec))
    finalize_seconds = time.perf_counter() - t0

    return PathResult(
        n=n,
        d=d,
        beta=beta,
        beta_bar=beta_bar,
        scalings=tuple(scalings),
        selection_counts=sp_counts if sp_on else None,
        pass_seconds=pass_seconds,
        finalize_seconds=finalize_seconds,
    )


def run_dual_path(
    data,
    tau1: float,
    tau2: float,
    schedule1: LearningRateSchedule,
    schedule2: LearningRateSchedule,
    beta0_1: np.ndarray,
    beta0_2: np.ndarray,
    coords: Sequence[int],
    guard: float = _kernels.DIVERGENCE_GUARD,
) -> DualPathResult:
    """Run two quantile paths over the same stream in one synchronized pass.

    Accumulates the stacked subvector (path-1 coords, then path-2 coords), the
    scaling object follow-up tests need.
    """
    if not (0.0 < tau1 < 1.0) or not (0.0 < tau2 < 1.0):
        raise UsageError("both quantile levels must lie strictly in (0, 1)")
    if tau1 == tau2:
        raise UsageError("quantile levels must differ (equal levels give a singular contrast)")
    beta0_1 = np.asarray(beta0_1, dtype=float)
    beta0_2 = np.asarray(beta0_2, dtype=float)
    if beta0_1.shape != beta0_2.shape or beta0_1.ndim != 1:
        raise ContractViolationError("initial iterates must be vectors of equal length")
    d = beta0_1.shape[0]
    coords = tuple(int(c) for c in coords)
    if not coords or len(set(coords)) != len(coords) or any(c < 0 or c >= d for c in coords):
        raise UsageError(f"invalid coordinate set {coords} for d={d}")
    s = len(coords)

    beta1, beta2 = beta0_1.copy(), beta0_2.copy()
    bar1, bar2 = np.zeros(d), np.zeros(d)
    ci = np.asarray(coords, dtype=np.int64)
    ref = np.concatenate([beta0_1[ci], beta0_2[ci]])
    A = np.zeros((2 * s, 2 * s))
    cA = np.zeros((2 * s, 2 * s))
    b = np.zeros(2 * s)
    cb = np.zeros(2 * s)

    n = 0
    pass_seconds = 0.0
    for X, yv in _as_chunks(data, expect_d=d):
        t0 = time.perf_counter()
        diverged = _kernels.advance_two_paths(
            X, yv, float(tau1), float(tau2),
            schedule1.gamma0, schedule2.gamma0, schedule1.a, schedule2.a,
            n, beta1, beta2, bar1, bar2, ci, ref, A, cA, b, cb, guard,
        )
        pass_seconds += time.perf_counter() - t0
        if diverged:
            worst = max(float(np.nanmax(np.abs(beta1))), float(np.nanmax(np.abs(beta2))))
            raise DivergedPathError(int(diverged), worst)
        n += X.shape[0]

    if n < 2:
        raise InsufficientObservationsError(
            f"insufficient observations for inference (got {n}, need >= 2)"
        )

    t0 = time.perf_counter()
    theta_n = np.concatenate([bar1[ci], bar2[ci]]) - ref
    stacked = finalize_from_sums(A, b, theta_n, n, tuple(range(2 * s)), diagonal_only=False)
    finalize_seconds = time.perf_counter() - t0

    return DualPathResult(
        n=n,
        d=d,
        coords=coords,
        beta_bar_1=bar1,
        beta_bar_2=bar2,
        stacked=stacked,
        pass_seconds=pass_seconds,
        finalize_seconds=finalize_seconds,
    )
