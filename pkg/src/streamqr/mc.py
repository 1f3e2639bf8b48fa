"""Simulation harness: synthetic designs, replication runner, aggregation.

The synthetic design places an intercept plus ``d`` independent standard
normal regressors, unit coefficients, and standard normal noise, so the
target slope is 1 at every quantile and intervals can be scored against a
known truth.  Replications run independently on hash-derived seeds and the
aggregation does not depend on completion order.
"""

from __future__ import annotations

import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .critval import CriticalValueCache, default_workers
from .exceptions import StreamqrError, UsageError
from .inference import confidence_interval, homogeneity_statistic, homogeneity_test
from .scaling import RandomScalingMatrix
from .sgd import LearningRateSchedule, ScalingRequest, run_path
from .warmstart import InitSpec, burn_in_init, estimate_sigma, rule_of_thumb_gamma0, smoothed_qr_init

TRUE_COEF = 1.0


@dataclass(frozen=True)
class McDesign:
    """One simulation cell; ``d`` counts the slope regressors (intercept extra)."""

    n: int
    d: int
    tau: float = 0.5
    reps: int = 1000
    seed: int = 0
    coord: int = 1  # the first slope; the design's conventional target
    level: float = 0.95
    gamma0: float | str = 1.0
    a: float = 0.501
    init: InitSpec = field(default_factory=lambda: InitSpec("smoothed_qr", fraction=0.10))

    def __post_init__(self):
        if self.n < 2:
            raise UsageError(f"need n >= 2, got {self.n}")
        if self.d < 1:
            raise UsageError(f"need d >= 1 slope regressors, got {self.d}")
        if self.reps < 1:
            raise UsageError(f"need reps >= 1, got {self.reps}")
        if not (0 <= self.coord <= self.d):
            raise UsageError(f"target coordinate {self.coord} outside 0..{self.d}")
        if not (0.0 < self.tau < 1.0):
            raise UsageError(f"tau must lie strictly in (0, 1), got {self.tau}")
        if not (0.0 < self.level < 1.0):
            raise UsageError(f"level must lie strictly in (0, 1), got {self.level}")


def generate_dgp(n: int, d: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw the synthetic design: X = (1, z) with z ~ N(0, I_d), y = X 1 + N(0,1)."""
    if n < 1:
        raise UsageError(f"need n >= 1, got {n}")
    if d < 1:
        raise UsageError(f"need d >= 1, got {d}")
    rng = np.random.Generator(np.random.PCG64(seed))
    X = np.empty((n, d + 1))
    X[:, 0] = 1.0
    X[:, 1:] = rng.standard_normal((n, d))
    # unit coefficients: X @ (1, ..., 1) is just the row sum
    y = X.sum(axis=1) + rng.standard_normal(n)
    return X, y


@dataclass(frozen=True)
class McRecord:
    rep: int
    covered: bool
    ci_length: float
    estimate: float
    error: float
    init_seconds: float
    path_seconds: float
    failed: str | None = None


def _resolve_start(design: McDesign, X: np.ndarray, y: np.ndarray, tau: float):
    """Initial iterate, schedule, and subsample info from the shuffled head."""
    n = X.shape[0]
    spec = design.init
    if spec.method == "smoothed_qr":
        m = max(2, int(np.ceil(spec.fraction * n)))
        Xs, ys = X[:m], y[:m]
    elif spec.method == "burn_in":
        m = spec.count
        Xs, ys = X[:m], y[:m]
    else:
        m = max(2, int(np.ceil(0.10 * n)))
        Xs, ys = X[:m], y[:m]

    gamma0 = design.gamma0
    if isinstance(gamma0, str):
        gamma0 = rule_of_thumb_gamma0(estimate_sigma(ys), tau)
    schedule = LearningRateSchedule(float(gamma0), design.a)

    if spec.method == "smoothed_qr":
        beta0 = smoothed_qr_init(Xs, ys, tau, bandwidth=spec.bandwidth).beta
        skip = 0
    elif spec.method == "burn_in":
        beta0 = burn_in_init(Xs, ys, tau, schedule)
        skip = m
    elif spec.method == "zero":
        beta0 = np.zeros(X.shape[1])
        skip = 0
    else:
        beta0 = np.asarray(spec.vector, dtype=float)
        skip = 0
    return beta0, schedule, skip


def run_replication(design: McDesign, rep_seed, rep: int = 0) -> McRecord:
    """One full cycle: draw data, shuffle, initialize, pass, score the interval."""
    ss = rep_seed if isinstance(rep_seed, np.random.SeedSequence) else np.random.SeedSequence(rep_seed)
    data_ss, shuffle_ss = ss.spawn(2)
    X, y = generate_dgp(design.n, design.d, data_ss)
    order = np.random.Generator(np.random.PCG64(shuffle_ss)).permutation(design.n)
    X, y = X[order], y[order]

    t0 = time.perf_counter()
    beta0, schedule, skip = _resolve_start(design, X, y, design.tau)
    init_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = run_path(
        (X[skip:], y[skip:]),
        design.tau,
        schedule,
        beta0,
        scaling=ScalingRequest("diagonal", (design.coord,)),
    )
    v = result.scalings[0].entry(design.coord)
    est = float(result.beta_bar[design.coord])
    ci = confidence_interval(est, v, result.n, design.level)
    path_seconds = time.perf_counter() - t0

    return McRecord(
        rep=rep,
        covered=ci.contains(TRUE_COEF),
        ci_length=ci.length,
        estimate=est,
        error=est - TRUE_COEF,
        init_seconds=init_seconds,
        path_seconds=path_seconds,
    )


@dataclass(frozen=True)
class McSummary:
    design: McDesign
    reps: int
    failures: int
    coverage: float
    mean_ci_length: float
    mean_abs_error: float
    mean_init_seconds: float
    mean_path_seconds: float
    invalid: bool

    def to_dict(self) -> dict:
        return {
            "n": self.design.n,
            "d": self.design.d,
            "tau": self.design.tau,
            "level": self.design.level,
            "reps": self.reps,
            "failures": self.failures,
            "coverage": self.coverage,
            "mean_ci_length": self.mean_ci_length,
            "mean_abs_error": self.mean_abs_error,
            "mean_init_seconds": self.mean_init_seconds,
            "mean_path_seconds": self.mean_path_seconds,
            "invalid": self.invalid,
        }


def coverage_experiment(design: McDesign, workers: int | None = None) -> tuple[McSummary, list[McRecord]]:
    """Run all replications (possibly concurrently) and aggregate order-independently."""
    children = np.random.SeedSequence(design.seed).spawn(design.reps)
    records: list[McRecord | None] = [None] * design.reps

    def one(rep: int) -> None:
        try:
            records[rep] = run_replication(design, children[rep], rep=rep)
        except StreamqrError as err:
            records[rep] = McRecord(
                rep=rep, covered=False, ci_length=float("nan"), estimate=float("nan"),
                error=float("nan"), init_seconds=0.0, path_seconds=0.0,
                failed=f"{err.category}: {err}",
            )

    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or design.reps == 1:
        for rep in range(design.reps):
            one(rep)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(design.reps)))

    done = [r for r in records if r is not None]
    ok = [r for r in done if r.failed is None]
    failures = len(done) - len(ok)
    invalid = failures > 0.01 * design.reps
    if not ok:
        return (
            McSummary(design, design.reps, failures, float("nan"), float("nan"),
                      float("nan"), float("nan"), float("nan"), True),
            done,
        )
    summary = McSummary(
        design=design,
        reps=design.reps,
        failures=failures,
        coverage=float(np.mean([r.covered for r in ok])),
        mean_ci_length=float(np.mean([r.ci_length for r in ok])),
        mean_abs_error=float(np.mean([abs(r.error) for r in ok])),
        mean_init_seconds=float(np.mean([r.init_seconds for r in ok])),
        mean_path_seconds=float(np.mean([r.path_seconds for r in ok])),
        invalid=invalid,
    )
    return summary, done


def records_to_csv(records: list[McRecord]) -> str:
    buf = io.StringIO()
    buf.write("rep,covered,ci_length,estimate,error,init_seconds,path_seconds,failed\n")
    for r in records:
        buf.write(
            f"{r.rep},{int(r.covered)},{r.ci_length!r},{r.estimate!r},{r.error!r},"
            f"{r.init_seconds!r},{r.path_seconds!r},{r.failed or ''}\n"
        )
    return buf.getvalue()


def run_homogeneity_replication(
    design: McDesign,
    tau1: float,
    tau2: float,
    coords,
    rep_seed,
    cache: CriticalValueCache | None = None,
) -> bool:
    """One two-quantile test on null data (all slopes quantile-invariant); True = reject."""
    ss = rep_seed if isinstance(rep_seed, np.random.SeedSequence) else np.random.SeedSequence(rep_seed)
    data_ss, shuffle_ss = ss.spawn(2)
    X, y = generate_dgp(design.n, design.d, data_ss)
    order = np.random.Generator(np.random.PCG64(shuffle_ss)).permutation(design.n)
    X, y = X[order], y[order]
    beta0_1, schedule1, _ = _resolve_start(design, X, y, tau1)
    beta0_2, schedule2, _ = _resolve_start(design, X, y, tau2)
    test, _ = homogeneity_test(
        (X, y), tau1, tau2, schedule1, schedule2, beta0_1, beta0_2, coords,
        level=design.level, cache=cache,
    )
    return test.reject


def homogeneity_experiment(
    design: McDesign,
    tau1: float,
    tau2: float,
    coords=(1,),
    workers: int | None = None,
    cache: CriticalValueCache | None = None,
) -> float:
    """Empirical rejection rate of the two-quantile test over the design's reps."""
    children = np.random.SeedSequence(design.seed).spawn(design.reps)
    rejects = np.zeros(design.reps, dtype=bool)

    def one(rep: int) -> None:
        rejects[rep] = run_homogeneity_replication(design, tau1, tau2, coords, children[rep], cache=cache)

    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or design.reps == 1:
        for rep in range(design.reps):
            one(rep)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(design.reps)))
    return float(np.mean(rejects))
