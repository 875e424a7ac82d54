"""Gaussian Process regression on pipeline embeddings.

Matérn 5/2 kernel with a noisy covariance matrix, Cholesky-based posterior,
and the marginal-likelihood loss written exactly as y^T K^-1 y + log|K|
(no 1/2, no constant term) with gradients for the raw kernel parameters and
for the input embeddings, so the loss can be backpropagated into the
embedding network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, ValidationError

SQRT5 = math.sqrt(5.0)
NOISE_FLOOR = 1e-6
# escalating jitter, as multiples of the mean diagonal
JITTER_STEPS = (0.0, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class KernelParams:
    """Raw (unconstrained) kernel parameters.

    Positive quantities come from an exponential map: lengthscale
    exp(raw_lengthscale), outputscale exp(raw_outputscale), noise variance
    exp(raw_noise) + NOISE_FLOOR, so the floor never kills the gradient.
    """

    raw_lengthscale: float = 0.0
    raw_outputscale: float = 0.0
    raw_noise: float = math.log(1e-2)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.raw_lengthscale)

    @property
    def outputscale(self) -> float:
        return math.exp(self.raw_outputscale)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.raw_noise) + NOISE_FLOOR

    def to_array(self) -> np.ndarray:
        return np.array([self.raw_lengthscale, self.raw_outputscale, self.raw_noise])

    @classmethod
    def from_array(cls, raw: np.ndarray) -> "KernelParams":
        return cls(float(raw[0]), float(raw[1]), float(raw[2]))


def matern52(a: np.ndarray, b: np.ndarray, params: KernelParams) -> float:
    """Matérn 5/2 covariance between two points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("non-finite kernel inputs")
    r = float(np.linalg.norm(a - b))
    u = r / params.lengthscale
    return params.outputscale * (1.0 + SQRT5 * u + 5.0 * u * u / 3.0) * math.exp(-SQRT5 * u)


def _pairwise_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * x @ y.T
    )
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_matrix(x: np.ndarray, y: np.ndarray, params: KernelParams) -> np.ndarray:
    """Noise-free Matérn 5/2 cross-covariance matrix."""
    u = _pairwise_distances(np.atleast_2d(x), np.atleast_2d(y)) / params.lengthscale
    return params.outputscale * (1.0 + SQRT5 * u + 5.0 * u * u / 3.0) * np.exp(-SQRT5 * u)


def _symmetric_kernel(x: np.ndarray, params: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    """(K', u) with exact symmetry: the upper triangle is mirrored."""
    u = _pairwise_distances(x, x) / params.lengthscale
    u = np.triu(u, 1)
    u = u + u.T
    k = params.outputscale * (1.0 + SQRT5 * u + 5.0 * u * u / 3.0) * np.exp(-SQRT5 * u)
    return k, u


def _cholesky_with_jitter(k_noisy: np.ndarray) -> tuple[np.ndarray, float]:
    mean_diag = float(np.mean(np.diag(k_noisy)))
    for step in JITTER_STEPS:
        try:
            chol = np.linalg.cholesky(k_noisy + step * mean_diag * np.eye(k_noisy.shape[0]))
            return chol, step * mean_diag
        except np.linalg.LinAlgError:
            continue
    cond = float(np.linalg.cond(k_noisy))
    raise NumericalError(
        f"Cholesky failed after jitter escalation (condition estimate {cond:.3e})"
    )


@dataclass(frozen=True)
class GPState:
    """Fitted posterior state; immutable, safe to share across threads."""

    x: np.ndarray
    y: np.ndarray
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray


def fit(x: np.ndarray, y: np.ndarray, params: KernelParams) -> GPState:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise ValidationError("need matching, non-empty training inputs and targets")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite training data")
    k_prior, _ = _symmetric_kernel(x, params)
    k_noisy = k_prior + params.noise_variance * np.eye(x.shape[0])
    chol, _ = _cholesky_with_jitter(k_noisy)
    alpha = scipy.linalg.cho_solve((chol, True), y)
    return GPState(x.copy(), y.copy(), params, chol, alpha)


def predict(state: GPState, x_star: np.ndarray) -> tuple[float, float]:
    mean, var = predict_batch(state, np.atleast_2d(np.asarray(x_star, dtype=float)))
    return float(mean[0]), float(var[0])


def predict_batch(state: GPState, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance per row; variance clamped at zero."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    k_star = kernel_matrix(state.x, x_star, state.params)  # (Q, n)
    mean = k_star.T @ state.alpha
    v = scipy.linalg.solve_triangular(state.chol, k_star, lower=True)
    var = state.params.outputscale - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def nll(x: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    """y^T K^-1 y + log|K| via Cholesky."""
    state = fit(x, y, params)
    logdet = 2.0 * float(np.sum(np.log(np.diag(state.chol))))
    return float(state.y @ state.alpha) + logdet


def nll_grad(
    x: np.ndarray, y: np.ndarray, params: KernelParams
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients for the raw parameters and the input rows.

    Returns (loss, draw[3], dx) where draw is ordered like
    KernelParams.to_array() and dx has the shape of x.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite training data")
    dist = _pairwise_distances(x, x)
    dist = np.triu(dist, 1)
    dist = dist + dist.T
    loss, draw, dx = _nll_grad_from_distances(dist, y, params, x=x)
    return loss, draw, dx


def _nll_grad_from_distances(
    dist: np.ndarray,
    y: np.ndarray,
    params: KernelParams,
    x: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Gradient core on a precomputed symmetric distance matrix.

    Skips the input-gradient chain when ``x`` is omitted (kernel-only
    fine-tuning re-uses one distance matrix for every step).
    """
    q = dist.shape[0]
    u = dist / params.lengthscale
    decay = np.exp(-SQRT5 * u)
    k_prior = params.outputscale * (1.0 + SQRT5 * u + 5.0 * u * u / 3.0) * decay
    k_noisy = k_prior + params.noise_variance * np.eye(q)
    chol, _ = _cholesky_with_jitter(k_noisy)
    alpha = scipy.linalg.cho_solve((chol, True), y)
    k_inv = scipy.linalg.cho_solve((chol, True), np.eye(q))
    loss = float(y @ alpha) + 2.0 * float(np.sum(np.log(np.diag(chol))))

    # d loss / dK for loss = y^T K^-1 y + log|K|
    g = k_inv - np.outer(alpha, alpha)

    # d k / d raw_lengthscale = outputscale * (5/3) u^2 (1 + sqrt5 u) e^{-sqrt5 u}
    scale = params.outputscale * (5.0 / 3.0) * u * (1.0 + SQRT5 * u) * decay
    grad_len = float(np.sum(g * scale * u))
    grad_out = float(np.sum(g * k_prior))  # dK/draw_outputscale = K'
    grad_noise = math.exp(params.raw_noise) * float(np.trace(g))
    draw = np.array([grad_len, grad_out, grad_noise])

    if x is None:
        return loss, draw, None
    # d k / d u = -scale, chained into the inputs
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(u > 0.0, g * (-scale) / (u * params.lengthscale**2), 0.0)
    dx = 2.0 * (x * np.sum(w, axis=1)[:, None] - w @ x)
    return loss, draw, dx


def symmetric_distances(x: np.ndarray) -> np.ndarray:
    """Exactly symmetric pairwise distance matrix for repeated-fit loops."""
    dist = _pairwise_distances(x, x)
    dist = np.triu(dist, 1)
    return dist + dist.T


def standardize_targets(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Zero-mean unit-variance targets; constant targets map to zeros."""
    y = np.asarray(y, dtype=float).ravel()
    mean = float(y.mean())
    std = float(y.std())
    if std < 1e-12:
        return np.zeros_like(y), mean, 1.0
    return (y - mean) / std, mean, std
