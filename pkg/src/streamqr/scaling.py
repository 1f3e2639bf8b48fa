"""Online averaging and the random-scaling covariance recursion.

The covariance estimate for the averaged iterate path is assembled from three
running quantities over the selected coordinates::

    A_i = sum_{k<=i} k^2 * m_k m_k'      (dense or diagonal-only)
    b_i = sum_{k<=i} k^2 * m_k
    S_i = sum_{k<=i} k^2                 (exact integers, closed form)

where ``m_k`` is the running average after ``k`` steps.  The recursion here is
run on *centered* averages ``m_k - ref`` (``ref`` is the starting iterate).
The final matrix is invariant to that shift, while the raw accumulators are
not dominated by terms of magnitude ``n^3 * |beta|^2`` that would cancel
catastrophically for long streams.  Updates additionally use compensated
(Kahan) summation: a stream of 1e7 steps adds terms across ~20 orders of
magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolationError, DegenerateScalingError

MODES = ("full", "subvector", "diagonal")


def update_average(beta_bar_prev: np.ndarray | None, beta_i: np.ndarray, i: int) -> np.ndarray:
    """Running mean of the first ``i`` iterates; at i=1 the previous mean is ignored."""
    if i < 1:
        raise ContractViolationError(f"step index must be >= 1, got {i}")
    beta_i = np.asarray(beta_i, dtype=float)
    if i == 1:
        return beta_i.copy()
    if beta_bar_prev is None:
        raise ContractViolationError("previous average required for i > 1")
    beta_bar_prev = np.asarray(beta_bar_prev, dtype=float)
    # same expression the streaming kernels use, so paths agree bit-for-bit
    return beta_bar_prev * ((i - 1.0) / i) + beta_i * (1.0 / i)


def sum_of_squares(i: int) -> int:
    """1^2 + ... + i^2 in exact integer arithmetic."""
    if i < 0:
        raise ContractViolationError(f"need i >= 0, got {i}")
    i = int(i)
    return i * (i + 1) * (2 * i + 1) // 6


@dataclass(frozen=True)
class RandomScalingMatrix:
    """Finalized scaling matrix over ``coords``; immutable and shareable.

    ``values`` is (s, s) for dense modes and (s,) when only the diagonal was
    accumulated.
    """

    values: np.ndarray
    coords: tuple[int, ...]
    n: int
    diagonal_only: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        diag = v if self.diagonal_only else np.diagonal(v)
        scale = float(np.max(np.abs(diag))) if diag.size else 0.0
        if np.any(diag < -1e-8 * max(scale, 1e-300)):
            raise DegenerateScalingError("negative diagonal in finalized scaling matrix")

    @property
    def s(self) -> int:
        return len(self.coords)

    def _pos(self, coord: int) -> int:
        try:
            return self.coords.index(coord)
        except ValueError:
            raise ContractViolationError(f"coordinate {coord} not tracked by this matrix") from None

    def entry(self, coord: int) -> float:
        """Diagonal entry for an original-model coordinate."""
        p = self._pos(coord)
        return float(self.values[p] if self.diagonal_only else self.values[p, p])

    def diagonal(self) -> np.ndarray:
        return self.values.copy() if self.diagonal_only else np.diagonal(self.values).copy()

    def matrix(self) -> np.ndarray:
        if self.diagonal_only:
            raise ContractViolationError("off-diagonal entries were not accumulated")
        return self.values.copy()

    def submatrix(self, coords: list[int] | tuple[int, ...]) -> np.ndarray:
        pos = [self._pos(c) for c in coords]
        if self.diagonal_only:
            if len(set(pos)) != len(pos):
                raise ContractViolationError("duplicate coordinates")
            return np.diag(self.values[pos])
        return self.values[np.ix_(pos, pos)]


@dataclass
class ScalingAccumulator:
    """Sequential state behind the scaling matrix for one iterate path.

    Single-owner: only the path driver that created it may update it.  Feed it
    the running average after every step, in order, then ``finalize``.
    """

    d: int
    mode: str = "full"
    coords: tuple[int, ...] | None = None
    ref: np.ndarray | None = None

    i: int = field(default=0, init=False)
    A: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)
    _cA: np.ndarray = field(init=False)
    _cb: np.ndarray = field(init=False)
    _ref_sub: np.ndarray = field(init=False)
    _idx: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractViolationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.coords is None:
            if self.mode == "subvector":
                raise ContractViolationError("subvector mode requires explicit coords")
            self.coords = tuple(range(self.d))
        else:
            self.coords = tuple(int(c) for c in self.coords)
        if len(set(self.coords)) != len(self.coords):
            raise ContractViolationError("coords must be distinct")
        if any(c < 0 or c >= self.d for c in self.coords):
            raise ContractViolationError(f"coords out of range for d={self.d}")
        s = len(self.coords)
        self._idx = np.asarray(self.coords, dtype=np.int64)
        shape = (s,) if self.mode == "diagonal" else (s, s)
        self.A = np.zeros(shape)
        self._cA = np.zeros(shape)
        self.b = np.zeros(s)
        self._cb = np.zeros(s)
        ref = np.zeros(self.d) if self.ref is None else np.asarray(self.ref, dtype=float)
        if ref.shape != (self.d,):
            raise ContractViolationError(f"ref must have shape ({self.d},)")
        self._ref_sub = ref[self._idx].copy()

    @property
    def s(self) -> int:
        return len(self.coords)

    def update(self, beta_bar_i: np.ndarray, i: int) -> None:
        """Fold in the running average after step ``i``; steps must arrive in order."""
        if i != self.i + 1:
            raise ContractViolationError(f"expected step {self.i + 1}, got {i}")
        beta_bar_i = np.asarray(beta_bar_i, dtype=float)
        if beta_bar_i.shape != (self.d,):
            raise ContractViolationError(f"average must have shape ({self.d},)")
        delta = beta_bar_i[self._idx] - self._ref_sub
        w2 = float(i) * float(i)
        if self.mode == "diagonal":
            incr_a = (w2 * delta) * delta
        else:
            incr_a = np.outer(w2 * delta, delta)
        term = incr_a - self._cA
        tot = self.A + term
        self._cA = (tot - self.A) - term
        self.A = tot
        term_b = w2 * delta - self._cb
        tot_b = self.b + term_b
        self._cb = (tot_b - self.b) - term_b
        self.b = tot_b
        self.i = i

    def finalize(self, beta_bar_n: np.ndarray, n: int) -> RandomScalingMatrix:
        """Assemble the scaling matrix after ``n`` steps (requires n >= 2)."""
        if n != self.i:
            raise ContractViolationError(f"accumulator has seen {self.i} steps, finalize asked for {n}")
        beta_bar_n = np.asarray(beta_bar_n, dtype=float)
        delta = beta_bar_n[self._idx] - self._ref_sub
        return finalize_from_sums(self.A, self.b, delta, n, self.coords, self.mode == "diagonal")


def finalize_from_sums(
    A: np.ndarray,
    b: np.ndarray,
    delta_n: np.ndarray,
    n: int,
    coords: tuple[int, ...],
    diagonal_only: bool,
) -> RandomScalingMatrix:
    """Assemble V from the running sums and the centered final average."""
    if n < 2:
        raise DegenerateScalingError("scaling matrix is degenerate with fewer than 2 steps")
    s2 = float(sum_of_squares(n))
    inv_n2 = 1.0 / (float(n) * float(n))
    if diagonal_only:
        v = inv_n2 * (A - 2.0 * delta_n * b + delta_n * delta_n * s2)
        if _tiny_negative_ok(v):
            np.clip(v, 0.0, None, out=v)
        return RandomScalingMatrix(v, tuple(coords), n, diagonal_only=True)
    v = inv_n2 * (A - np.outer(delta_n, b) - np.outer(b, delta_n) + np.outer(delta_n, delta_n) * s2)
    v = 0.5 * (v + v.T)
    if _tiny_negative_ok(np.diagonal(v)):
        v[np.diag_indices_from(v)] = np.clip(np.diagonal(v), 0.0, None)
    return RandomScalingMatrix(v, tuple(coords), n, diagonal_only=False)


def _tiny_negative_ok(diag: np.ndarray) -> bool:
    """True when any negative diagonal entries are mere rounding noise."""
    neg = diag < 0
    if not np.any(neg):
        return False
    scale = max(float(np.max(np.abs(diag))), 1e-300)
    return bool(np.all(diag[neg] >= -1e-8 * scale))
