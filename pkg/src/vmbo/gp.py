"""Gaussian-process regression and Expected Improvement.

Targets are standardized before fitting and predictions are mapped back to
original units. Hyperparameters are fixed per fit; :func:`gp_fit_grid`
optionally picks a shared length scale by log marginal likelihood.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .errors import FitError, ModelStateError

JITTER_MAX = 1e-2
LENGTH_SCALE_GRID = (0.1, 0.3, 1.0, 3.0, 10.0)

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class KernelVariant(enum.Enum):
    RBF = "rbf"
    MATERN12 = "matern12"
    MATERN32 = "matern32"
    MATERN52 = "matern52"

    @classmethod
    def parse(cls, value) -> "KernelVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("/", "").replace("-", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown kernel {value!r}")


@dataclass(frozen=True)
class Kernel:
    variant: KernelVariant = KernelVariant.MATERN52
    signal_variance: float = 1.0
    length_scales: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "variant", KernelVariant.parse(self.variant))
        object.__setattr__(self, "length_scales", tuple(float(v) for v in self.length_scales))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.length_scales or any(not l > 0 for l in self.length_scales):
            raise ValueError("length scales must be positive")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    def with_length_scale(self, ell: float) -> "Kernel":
        return Kernel(self.variant, self.signal_variance, (ell,) * self.dim)

    def from_distance(self, r: np.ndarray) -> np.ndarray:
        """Covariance as a function of the scaled distance ``r``."""
        s2 = self.signal_variance
        if self.variant is KernelVariant.RBF:
            return s2 * np.exp(-0.5 * r * r)
        if self.variant is KernelVariant.MATERN12:
            return s2 * np.exp(-r)
        if self.variant is KernelVariant.MATERN32:
            a = _SQRT3 * r
            return s2 * (1.0 + a) * np.exp(-a)
        a = _SQRT5 * r
        return s2 * (1.0 + a + 5.0 * r * r / 3.0) * np.exp(-a)


def _check_dim(k: Kernel, x: np.ndarray) -> None:
    if x.shape[-1] != k.dim:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match kernel dimension {k.dim}")


def scaled_distances(k: Kernel, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    _check_dim(k, A)
    _check_dim(k, B)
    ell = np.asarray(k.length_scales)
    diff = (A[:, None, :] - B[None, :, :]) / ell
    return np.sqrt(np.sum(diff * diff, axis=-1))


def kernel_eval(k: Kernel, x, x2) -> float:
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.ndim != 1 or x2.ndim != 1:
        raise ValueError("kernel_eval expects two feature vectors")
    return float(kernel_matrix(k, x, x2)[0, 0])


def kernel_matrix(k: Kernel, A, B) -> np.ndarray:
    return k.from_distance(scaled_distances(k, A, B))


@dataclass(frozen=True)
class GpModel:
    train_inputs: np.ndarray
    train_targets: np.ndarray  # standardized
    kernel: Kernel
    noise_variance: float  # effective value, after any jitter escalation
    factorization: np.ndarray  # lower Cholesky factor of K + noise*I
    target_mean: float
    target_std: float
    alpha: np.ndarray = field(repr=False)

    def log_marginal_likelihood(self) -> float:
        n = len(self.train_targets)
        return float(
            -0.5 * self.train_targets @ self.alpha
            - np.sum(np.log(np.diag(self.factorization)))
            - 0.5 * n * math.log(2 * math.pi)
        )

    def predict(self, X) -> tuple:
        """Vectorized :func:`gp_predict` over the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Ks = kernel_matrix(self.kernel, self.train_inputs, X)
        mu = Ks.T @ self.alpha
        v = solve_triangular(self.factorization, Ks, lower=True, check_finite=False)
        var = self.kernel.signal_variance - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        return (
            mu * self.target_std + self.target_mean,
            var * self.target_std * self.target_std,
        )


def standardize(y: np.ndarray) -> tuple:
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not std > 0 or not math.isfinite(std):
        std = 1.0
    return (y - mean) / std, mean, std


def gp_fit(X, y, kernel: Kernel, noise_variance: float = 1e-4) -> GpModel:
    """Fit a zero-mean GP on standardized targets.

    The diagonal term starts at ``noise_variance`` and is multiplied by 10 on
    each failed Cholesky attempt, up to ``JITTER_MAX``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) != len(y) or len(y) < 1:
        raise ValueError("gp_fit needs |X| = |y| >= 1")
    _check_dim(kernel, X)
    if noise_variance < 0:
        raise ValueError("noise_variance must be nonnegative")
    ys, mean, std = standardize(y)
    K = kernel_matrix(kernel, X, X)
    noise = noise_variance
    while True:
        try:
            L = np.linalg.cholesky(K + noise * np.eye(len(y)))
            break
        except np.linalg.LinAlgError:
            if noise >= JITTER_MAX:
                cond = np.linalg.cond(K)
                raise FitError(
                    f"kernel matrix not positive definite after jitter {noise:g} "
                    f"(condition estimate {cond:.3g})"
                ) from None
            noise = min(JITTER_MAX, max(noise * 10.0, 1e-10))
    alpha = cho_solve((L, True), ys, check_finite=False)
    return GpModel(X, ys, kernel, noise, L, mean, std, alpha)


def gp_fit_grid(X, y, kernel: Kernel, noise_variance: float = 1e-4,
                grid: Sequence[float] = LENGTH_SCALE_GRID) -> GpModel:
    """Refit over a shared-length-scale grid, keeping the best marginal likelihood.
    Ties keep the earlier grid value."""
    best: Optional[GpModel] = None
    best_lml = -math.inf
    for ell in grid:
        try:
            model = gp_fit(X, y, kernel.with_length_scale(ell), noise_variance)
        except FitError:
            continue
        lml = model.log_marginal_likelihood()
        if lml > best_lml:
            best, best_lml = model, lml
    if best is None:
        raise FitError("no length scale on the grid produced a valid fit")
    return best


def gp_predict(m: Optional[GpModel], x) -> tuple:
    """Posterior (mean, variance) at one feature vector, in original units."""
    if m is None:
        raise ModelStateError("GP model has not been fitted")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("gp_predict expects a single feature vector")
    mean, var = m.predict(x[None, :])
    return float(mean[0]), float(var[0])


def expected_improvement(mean, variance, best_so_far: float, xi: float = 0.0):
    """Closed-form EI for minimization. Works elementwise on arrays."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    improve = best_so_far - mean - xi
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, improve / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(
            sigma > 0,
            improve * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z),
            np.maximum(improve, 0.0),
        )
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei
