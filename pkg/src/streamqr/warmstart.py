"""Starting point and step-size selection for the sequential pass.

The pass itself needs two inputs chosen before any data streams: the initial
iterate ``beta0`` and the base learning rate ``gamma0``.  Both come from a
small subsample here: ``beta0`` from a kernel-smoothed quantile regression
(or a short burn-in run), ``gamma0`` from a normal-reference rule of thumb
based on the response scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import ContractViolationError, DataError, DegenerateScalingError, UsageError


def estimate_sigma(y: np.ndarray) -> float:
    """Sample standard deviation (divisor m-1) of a response subsample."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ContractViolationError("need at least 2 observations to estimate a scale")
    sigma = float(np.std(y, ddof=1))
    if sigma <= 0.0:
        raise DegenerateScalingError("response subsample has zero variance; rule-of-thumb scale undefined")
    return sigma


def rule_of_thumb_gamma0(sigma_hat: float, tau: float) -> float:
    """Normal-reference base learning rate: phi(Phi^{-1}(tau)) / (sigma * sqrt(tau(1-tau)))."""
    if not (sigma_hat > 0):
        raise UsageError(f"sigma_hat must be positive, got {sigma_hat}")
    if not (0.0 < tau < 1.0):
        raise UsageError(f"tau must lie strictly in (0, 1), got {tau}")
    return float(norm.pdf(norm.ppf(tau)) / (sigma_hat * np.sqrt(tau * (1.0 - tau))))


def default_bandwidth(m: int, d: int) -> float:
    """((d + log m) / m)^0.4, floored at 0.01."""
    return max(0.01, float(((d + np.log(m)) / m) ** 0.4))


@dataclass(frozen=True)
class SmoothedQrResult:
    beta: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float


def _smoothed_loss_grad(beta, X, y, tau, h):
    r = y - X @ beta
    z = r / h
    loss = float(np.mean((tau - norm.cdf(-z)) * r + h * norm.pdf(z)))
    grad = X.T @ (norm.cdf(-z) - tau) / X.shape[0]
    return loss, grad


def smoothed_qr_loss(beta: np.ndarray, X: np.ndarray, y: np.ndarray, tau: float, bandwidth: float) -> float:
    """Gaussian-kernel smoothed check loss (convex, differentiable surrogate)."""
    return _smoothed_loss_grad(np.asarray(beta, dtype=float), X, y, tau, bandwidth)[0]


def smoothed_qr_gradient(beta: np.ndarray, X: np.ndarray, y: np.ndarray, tau: float, bandwidth: float) -> np.ndarray:
    """Gradient of the smoothed loss: (1/m) sum x * (Phi((x'b - y)/h) - tau)."""
    return _smoothed_loss_grad(np.asarray(beta, dtype=float), X, y, tau, bandwidth)[1]


def smoothed_qr_init(
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    bandwidth: float | None = None,
    max_iters: int = 500,
    tol: float | None = None,
) -> SmoothedQrResult:
    """Minimize the smoothed check loss by gradient descent with backtracking.

    Stops when the gradient norm drops below ``tol`` (default 1e-6 * sqrt(d))
    or after ``max_iters`` iterations, whichever comes first; the returned
    flag says which.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ContractViolationError(f"bad shapes: X {X.shape}, y {y.shape}")
    if not (0.0 < tau < 1.0):
        raise UsageError(f"tau must lie strictly in (0, 1), got {tau}")
    m, d = X.shape
    if m < 2:
        raise DataError("smoothed initializer needs at least 2 subsample rows")
    h = default_bandwidth(m, d) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise UsageError(f"bandwidth must be positive, got {h}")
    if tol is None:
        tol = 1e-6 * np.sqrt(d)

    beta = np.zeros(d)
    # warm-start the intercept when the design carries one
    if np.all(X[:, 0] == 1.0):
        beta[0] = float(np.quantile(y, tau))
    loss, grad = _smoothed_loss_grad(beta, X, y, tau, h)
    if not np.isfinite(loss):
        raise DataError("smoothed loss is non-finite at the starting point")
    step_size = 1.0
    gnorm = float(np.linalg.norm(grad))
    it = 0
    while it < max_iters and gnorm >= tol:
        it += 1
        g2 = gnorm * gnorm
        step_size = min(step_size * 2.0, 1e8)
        while True:
            cand = beta - step_size * grad
            cand_loss, cand_grad = _smoothed_loss_grad(cand, X, y, tau, h)
            if np.isfinite(cand_loss) and cand_loss <= loss - 1e-4 * step_size * g2:
                break
            step_size *= 0.5
            if step_size < 1e-18:
                # flat to machine precision: treat as converged at this point
                return SmoothedQrResult(beta, True, it, gnorm)
        beta, loss, grad = cand, cand_loss, cand_grad
        gnorm = float(np.linalg.norm(grad))
    return SmoothedQrResult(beta, gnorm < tol, it, gnorm)


def burn_in_init(X_prefix: np.ndarray, y_prefix: np.ndarray, tau: float, schedule) -> np.ndarray:
    """Warm-start by running the sequential update itself over a prefix.

    Returns the final iterate (not the average); the caller must drop the
    prefix from the main pass.
    """
    from ._kernels import DIVERGENCE_GUARD, advance_path

    X_prefix = np.ascontiguousarray(np.asarray(X_prefix, dtype=float))
    y_prefix = np.ascontiguousarray(np.asarray(y_prefix, dtype=float))
    if X_prefix.ndim != 2 or X_prefix.shape[0] != y_prefix.shape[0]:
        raise ContractViolationError(f"bad shapes: X {X_prefix.shape}, y {y_prefix.shape}")
    if X_prefix.shape[0] < 1:
        raise UsageError("burn-in needs at least one observation")
    d = X_prefix.shape[1]
    beta = np.zeros(d)
    beta_bar = np.zeros(d)
    empty_i = np.zeros(0, dtype=np.int64)
    empty_f = np.zeros(0)
    empty_m = np.zeros((0, 0))
    diverged = advance_path(
        X_prefix, y_prefix, float(tau), schedule.gamma0, schedule.a, 0,
        beta, beta_bar,
        empty_i, empty_f, empty_m, empty_m.copy(), empty_f.copy(), empty_f.copy(),
        empty_i, empty_f.copy(), empty_f.copy(), empty_f.copy(), empty_f.copy(), empty_f.copy(),
        False, 0.0, np.zeros(0, dtype=np.int64),
        DIVERGENCE_GUARD,
    )
    if diverged:
        from .exceptions import DivergedPathError

        raise DivergedPathError(int(diverged), float(np.nanmax(np.abs(beta))))
    return beta


@dataclass(frozen=True)
class InitSpec:
    """How to produce ``beta0``: smoothed subsample fit, burn-in, zero, or a given vector."""

    method: str = "smoothed_qr"
    fraction: float = 0.10
    count: int = 0
    vector: np.ndarray | None = None
    bandwidth: float | None = None

    def __post_init__(self):
        if self.method not in ("smoothed_qr", "burn_in", "zero", "user"):
            raise UsageError(f"unknown init method {self.method!r}")
        if self.method == "smoothed_qr" and not (0.0 < self.fraction <= 1.0):
            raise UsageError(f"subsample fraction must lie in (0, 1], got {self.fraction}")
        if self.method == "burn_in" and self.count < 1:
            raise UsageError("burn-in needs a positive observation count")
        if self.method == "user":
            if self.vector is None:
                raise UsageError("user init requires a vector")
            object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))

    @classmethod
    def parse(cls, text: str) -> "InitSpec":
        """Parse CLI-style forms: ``smoothed:0.1``, ``burnin:1000``, ``zero``."""
        token = text.strip().lower()
        if token == "zero":
            return cls(method="zero")
        if token in ("smoothed", "smoothed_qr"):
            return cls(method="smoothed_qr")
        if token.startswith(("smoothed:", "smoothed_qr:")):
            return cls(method="smoothed_qr", fraction=float(token.split(":", 1)[1]))
        if token.startswith("burnin:"):
            return cls(method="burn_in", count=int(token.split(":", 1)[1]))
        raise UsageError(f"cannot parse init spec {text!r}")
