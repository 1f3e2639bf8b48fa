"""Critical values for the pivotal statistics.

The t-ratio built from the averaged path and its random-scaling variance is
asymptotically pivotal; its one-sided critical values are fixed constants
(``TABLE_T``).  Statistics for joint restrictions follow the law of

    W(1)' (int_0^1 Wbar(r) Wbar(r)' dr)^{-1} W(1),

with W an ell-dimensional standard Wiener process and Wbar the bridge
W(r) - r W(1).  ``simulate_limit_quantiles`` draws that functional on a grid;
quantiles for anything not covered by the table are served from a plain-text
cache generated by the same simulator (ship one, regenerate with
``streamqr cv``).
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .exceptions import MissingCriticalValueError, UsageError

# One-sided quantiles of the pivotal t-ratio: P(t <= c) = p.
TABLE_T = {0.90: 3.875, 0.95: 5.323, 0.975: 6.747, 0.99: 8.613}

# Two-sided confidence levels the table supports directly: P(|t| <= c) = L.
TABLE_TWO_SIDED = {round(2.0 * p - 1.0, 10): v for p, v in TABLE_T.items()}

CACHE_VERSION = "streamqr-cv-cache v1"
CACHE_ENV = "STREAMQR_CV_CACHE"
DEFAULT_PROBS = (0.80, 0.90, 0.95, 0.975, 0.98, 0.99)
DEFAULT_GRID = 2000
DEFAULT_REPS = 200_000
DEFAULT_SEED = 987654321
DEFAULT_ELLS = (1, 2, 3, 4, 5)
BUDGET_CELLS = 10_000_000_000  # reps * grid * sum(ells) guard for cmd_cv without --force


def default_workers() -> int:
    env = os.environ.get("STREAMQR_WORKERS", "")
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


def simulate_limit_statistics(ell: int, grid_steps: int, replications: int, seed: int,
                              workers: int | None = None) -> np.ndarray:
    """All Monte Carlo draws of the limiting quadratic form, deterministic in ``seed``.

    Random walks with N(0, 1/grid) increments stand in for W; the bridge
    integral uses the left-point rule (both endpoints of the bridge vanish, so
    left and right rules coincide).  Replications are split into seeded
    chunks merged by index, so the worker count never changes the result.
    """
    if ell < 1:
        raise UsageError(f"need ell >= 1, got {ell}")
    if grid_steps < 2:
        raise UsageError(f"need grid_steps >= 2, got {grid_steps}")
    if replications < 1:
        raise UsageError(f"need replications >= 1, got {replications}")
    workers = default_workers() if workers is None else max(1, workers)

    chunk = max(64, min(replications, 4_000_000 // (ell * grid_steps) + 1))
    n_chunks = (replications + chunk - 1) // chunk
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    out = np.empty(replications)

    def run_chunk(ci: int) -> None:
        lo = ci * chunk
        m = min(chunk, replications - lo)
        rng = np.random.Generator(np.random.PCG64(children[ci]))
        incr = rng.standard_normal((m, ell, grid_steps)) * np.sqrt(1.0 / grid_steps)
        walk = np.cumsum(incr, axis=2)
        w1 = walk[:, :, -1]
        # W at the left grid points r_k = k/grid, k = 0..grid-1 (starts at 0)
        walk[:, :, 1:] = walk[:, :, :-1]
        walk[:, :, 0] = 0.0
        r = np.arange(grid_steps) / grid_steps
        bridge = walk - w1[:, :, None] * r[None, None, :]
        M = np.einsum("mik,mjk->mij", bridge, bridge) / grid_steps
        sol = np.linalg.solve(M, w1[:, :, None])[:, :, 0]
        out[lo : lo + m] = np.einsum("mi,mi->m", w1, sol)

    if workers == 1 or n_chunks == 1:
        for ci in range(n_chunks):
            run_chunk(ci)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, range(n_chunks)))
    return out


def simulate_limit_quantiles(
    ell: int,
    grid_steps: int = DEFAULT_GRID,
    replications: int = DEFAULT_REPS,
    seed: int = DEFAULT_SEED,
    probs: tuple[float, ...] = DEFAULT_PROBS,
    workers: int | None = None,
) -> dict[float, float]:
    """Quantiles of the limiting quadratic form at the given probabilities."""
    for p in probs:
        if not (0.0 < p < 1.0):
            raise UsageError(f"probabilities must lie in (0, 1), got {p}")
    stats = simulate_limit_statistics(ell, grid_steps, replications, seed, workers=workers)
    qs = np.quantile(stats, list(probs))
    return {float(p): float(q) for p, q in zip(probs, qs)}


def t_quantiles_from_wald(wald_quantiles: dict[float, float], one_sided_probs) -> dict[float, float]:
    """One-sided t quantiles from quadratic-form quantiles (symmetry: P(|t|<=c) = 2p-1)."""
    out = {}
    for p in one_sided_probs:
        if not (0.5 < p < 1.0):
            raise UsageError(f"one-sided probability must lie in (0.5, 1), got {p}")
        key = round(2.0 * p - 1.0, 10)
        if key not in {round(k, 10) for k in wald_quantiles}:
            raise MissingCriticalValueError(f"no quadratic-form quantile at probability {key}")
        match = next(v for k, v in wald_quantiles.items() if round(k, 10) == key)
        out[p] = float(np.sqrt(match))
    return out


@dataclass(frozen=True)
class CacheRow:
    ell: int
    prob: float
    grid_steps: int
    replications: int
    seed: int
    value: float


class CriticalValueCache:
    """Simulated quadratic-form quantiles, keyed by (ell, prob)."""

    def __init__(self, rows: list[CacheRow], origin: str = "memory", raw: bytes | None = None):
        self.rows = list(rows)
        self.origin = origin
        self._by_key = {(r.ell, round(r.prob, 10)): r for r in self.rows}
        self.cache_id = hashlib.sha256(raw if raw is not None else self.dumps().encode()).hexdigest()[:12]

    def lookup(self, ell: int, prob: float) -> CacheRow | None:
        return self._by_key.get((ell, round(prob, 10)))

    def dumps(self) -> str:
        lines = [
            f"# {CACHE_VERSION}",
            "# quantiles of W(1)'(int Wbar Wbar')^{-1} W(1); regenerate: streamqr cv",
            "ell prob grid_steps replications seed value",
        ]
        for r in sorted(self.rows, key=lambda r: (r.ell, r.prob)):
            lines.append(f"{r.ell} {r.prob!r} {r.grid_steps} {r.replications} {r.seed} {r.value!r}")
        return "\n".join(lines) + "\n"

    def dump(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str, origin: str = "memory") -> "CriticalValueCache":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(f"# {CACHE_VERSION}"):
            raise MissingCriticalValueError(f"not a recognized critical-value cache: {origin}")
        rows: list[CacheRow] = []
        seen_header = False
        for line in lines[1:]:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not seen_header:
                if line.split() != ["ell", "prob", "grid_steps", "replications", "seed", "value"]:
                    raise MissingCriticalValueError(f"unexpected cache column header in {origin}")
                seen_header = True
                continue
            parts = line.split()
            if len(parts) != 6:
                raise MissingCriticalValueError(f"malformed cache row in {origin}: {line!r}")
            rows.append(
                CacheRow(
                    ell=int(parts[0]),
                    prob=float(parts[1]),
                    grid_steps=int(parts[2]),
                    replications=int(parts[3]),
                    seed=int(parts[4]),
                    value=float(parts[5]),
                )
            )
        return cls(rows, origin=origin, raw=text.encode())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CriticalValueCache":
        with open(path, "r", encoding="utf-8") as f:
            return cls.loads(f.read(), origin=os.fspath(path))


_default_cache: CriticalValueCache | None = None


def default_cache() -> CriticalValueCache:
    """Resolve the cache: $STREAMQR_CV_CACHE, else the copy shipped in the package."""
    global _default_cache
    env = os.environ.get(CACHE_ENV, "")
    if env:
        return CriticalValueCache.load(env)
    if _default_cache is None:
        ref = resources.files("streamqr").joinpath("data/cv_cache.txt")
        if not ref.is_file():
            raise MissingCriticalValueError(
                "no packaged critical-value cache; generate one with `streamqr cv`"
            )
        _default_cache = CriticalValueCache.loads(ref.read_text(encoding="utf-8"), origin="packaged")
    return _default_cache


def generate_cache(
    ells=DEFAULT_ELLS,
    grid_steps: int = DEFAULT_GRID,
    replications: int = DEFAULT_REPS,
    seed: int = DEFAULT_SEED,
    probs: tuple[float, ...] = DEFAULT_PROBS,
    workers: int | None = None,
    force: bool = False,
) -> CriticalValueCache:
    """Simulate quadratic-form quantiles for each ell and package them as a cache."""
    cells = int(replications) * int(grid_steps) * int(sum(ells))
    if cells > BUDGET_CELLS and not force:
        raise UsageError(
            f"requested simulation needs {cells:.2e} grid cells (> {BUDGET_CELLS:.0e}); "
            "pass force=True / --force to proceed"
        )
    rows = []
    for ell in ells:
        qs = simulate_limit_quantiles(ell, grid_steps, replications, seed + ell, probs, workers=workers)
        for p, v in sorted(qs.items()):
            rows.append(CacheRow(ell, p, grid_steps, replications, seed + ell, v))
    return CriticalValueCache(rows, origin="generated")


@dataclass(frozen=True)
class CriticalValue:
    value: float
    source: str  # "table" | "simulated"


def critical_value(level: float, ell: int = 1, form: str = "t",
                   cache: CriticalValueCache | None = None) -> CriticalValue:
    """Critical value for a two-sided test/CI at confidence ``level``.

    ``form="t"`` returns c with P(|t| <= c) = level (ell must be 1);
    ``form="wald"`` returns c with P(Q <= c) = level for the ell-dimensional
    quadratic form.  Exact table values are used where available (including
    the ell=1 identity wald = t^2); everything else needs a simulated cache.
    """
    if not (0.0 < level < 1.0):
        raise UsageError(f"level must lie strictly in (0, 1), got {level}")
    if ell < 1:
        raise UsageError(f"need ell >= 1, got {ell}")
    if form not in ("t", "wald"):
        raise UsageError(f"form must be 't' or 'wald', got {form!r}")
    if form == "t" and ell != 1:
        raise UsageError("the t form is one-dimensional; use form='wald' for ell > 1")

    key = round(level, 10)
    if ell == 1 and key in TABLE_TWO_SIDED:
        c = TABLE_TWO_SIDED[key]
        return CriticalValue(c if form == "t" else c * c, "table")

    if cache is None:
        cache = default_cache()
    row = cache.lookup(ell, key)
    if row is None:
        raise MissingCriticalValueError(
            f"no cached critical value for ell={ell}, level={level}; "
            "regenerate the cache with `streamqr cv` including this level"
        )
    return CriticalValue(row.value if form == "wald" else float(np.sqrt(row.value)), "simulated")
