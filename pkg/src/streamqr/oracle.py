"""Desk-scale reference implementations used to cross-check the streaming path.

None of these are meant for production sizes.  ``batch_random_scaling``
re-derives the scaling matrix directly from a stored iterate path;
``exact_qr_small`` solves the quantile regression problem exactly, either by
enumerating basic solutions (tiny problems, no solver at all) or via a linear
program (desk-scale problems).
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csc_matrix, eye, hstack

from .exceptions import ContractViolationError, DataError, UsageError

ENUMERATION_MAX_N = 40
ENUMERATION_MAX_D = 3


def check_objective(beta: np.ndarray, X: np.ndarray, y: np.ndarray, tau: float) -> float:
    """Average check loss (1/n) sum (y - x'b) * (tau - 1{y - x'b <= 0})."""
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    res = y - X @ beta
    return float(np.mean(res * (tau - (res <= 0.0))))


def _enumerate_qr(X: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    n, d = X.shape
    best_obj = np.inf
    best_beta = None
    found = False
    for rows in combinations(range(n), d):
        sub = X[list(rows)]
        try:
            beta = np.linalg.solve(sub, y[list(rows)])
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(beta)):
            continue
        found = True
        obj = check_objective(beta, X, y, tau)
        if obj < best_obj - 1e-10 * (1.0 + abs(best_obj)):
            best_obj, best_beta = obj, beta
        elif obj <= best_obj + 1e-10 * (1.0 + abs(best_obj)):
            # objective tie: keep the lexicographically smallest vector
            if best_beta is None or tuple(beta) < tuple(best_beta):
                best_obj = min(best_obj, obj)
                best_beta = beta
    if not found:
        raise DataError("every d-row subset of the design is singular")
    return best_beta


def _lp_qr(X: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    """Exact quantile regression as an LP: min tau*1'u + (1-tau)*1'v, Xb + u - v = y."""
    n, d = X.shape
    cost = np.concatenate([np.zeros(2 * d), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye_n = eye(n, format="csc")
    A_eq = hstack([csc_matrix(X), csc_matrix(-X), eye_n, -eye_n], format="csc")
    bounds = [(0, None)] * (2 * d + 2 * n)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise DataError(f"exact QR linear program failed: {res.message}")
    return res.x[:d] - res.x[d : 2 * d]


def exact_qr_small(X: np.ndarray, y: np.ndarray, tau: float, method: str = "auto") -> np.ndarray:
    """Exact quantile regression coefficients at desk scale.

    ``enumerate`` tries every d-row interpolating basic solution (n <= 40,
    d <= 3) and breaks objective ties lexicographically; ``lp`` solves the
    equivalent linear program; ``auto`` enumerates when within budget and
    falls back to the LP otherwise.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ContractViolationError(f"bad shapes: X {X.shape}, y {y.shape}")
    if not (0.0 < tau < 1.0):
        raise UsageError(f"tau must lie strictly in (0, 1), got {tau}")
    n, d = X.shape
    if n < d:
        raise DataError(f"need at least d={d} observations, got {n}")
    if method == "auto":
        method = "enumerate" if (n <= ENUMERATION_MAX_N and d <= ENUMERATION_MAX_D) else "lp"
    if method == "enumerate":
        if n > ENUMERATION_MAX_N or d > ENUMERATION_MAX_D:
            raise UsageError(
                f"enumeration budget is n <= {ENUMERATION_MAX_N}, d <= {ENUMERATION_MAX_D}; "
                f"got n={n}, d={d} (use method='lp')"
            )
        return _enumerate_qr(X, y, tau)
    if method == "lp":
        return _lp_qr(X, y, tau)
    raise UsageError(f"unknown method {method!r}")


def batch_random_scaling(path: np.ndarray) -> np.ndarray:
    """Scaling matrix computed directly from a stored path of iterates.

    (1/n) sum_s u_s u_s' with u_s the centered partial sums scaled by
    1/sqrt(n); the sequential recursion must reproduce this.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    n = path.shape[0]
    if n < 2:
        raise ContractViolationError("need a path of length >= 2")
    centered = path - path.mean(axis=0)
    u = np.cumsum(centered, axis=0) / np.sqrt(n)
    return (u.T @ u) / n
