"""Closed-form optimal denoiser over an empirical (multi-Dirac) dataset.

For data points ``y_1..y_N`` and kernel ``(s, sigma)`` the noised marginal is
the Gaussian mixture ``p_t(x) = (1/N) sum_i N(x; s y_i, s^2 sigma^2 I)``. The
minimiser of the noise-prediction loss is

    eps*(x) = (x - s * y_hat(x)) / (s * sigma),

where ``y_hat`` is the softmax-weighted posterior mean of the data points.
Weights are always formed in the log domain with the maximum subtracted.

All batched routines take ``x`` of shape ``(B, n)`` and per-row kernel
parameters, so one matrix product against the dataset serves a whole batch.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from stagecut.dataset import Dataset
from stagecut.errors import DegenerateKernelError
from stagecut.schedule import KernelParams

# exp(-745) underflows to zero in float64
LOG_WEIGHT_FLOOR = 745.0
NEAREST_SHORTCUT_MASS = 1.0 - 1e-12
_ROW_CHUNK = 256


@dataclasses.dataclass(frozen=True)
class DenoiserEval:
    eps_star: np.ndarray
    y_hat: np.ndarray
    log_partition: float
    max_log_weight: float


@dataclasses.dataclass(frozen=True)
class BatchEval:
    y_hat: np.ndarray
    log_partition: np.ndarray
    max_log_weight: np.ndarray


def _as_batch(d: Dataset, x, s, sigma):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d.dim:
        raise ValueError(f"query has shape {x.shape}, dataset dimension is {d.dim}")
    rows = x.shape[0]
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (rows,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (rows,))
    if np.any(sigma <= 0):
        raise DegenerateKernelError("sigma must be > 0 for the denoiser to be defined")
    if np.any(s <= 0):
        raise ValueError("s must be > 0")
    return x, s, sigma


def _log_weights(d: Dataset, x, s, sigma) -> np.ndarray:
    # ||x - s y||^2 in expanded form; one GEMM against the dataset.
    cross = x @ d.points.T
    xx = np.einsum("ij,ij->i", x, x)
    dist2 = xx[:, None] - 2.0 * s[:, None] * cross + np.square(s)[:, None] * d.sq_norms[None, :]
    np.maximum(dist2, 0.0, out=dist2)
    dist2 /= -2.0 * np.square(s * sigma)[:, None]
    return dist2


def posterior_batch(d: Dataset, x, s, sigma, *, nearest_shortcut: bool = False) -> BatchEval:
    """Posterior means for a batch of queries.

    `s` and `sigma` are scalars or one value per row of `x`.
    """
    x, s, sigma = _as_batch(d, x, s, sigma)
    rows = x.shape[0]
    y_hat = np.empty_like(x)
    log_z = np.empty(rows)
    max_lw = np.empty(rows)
    for start in range(0, rows, _ROW_CHUNK):
        sl = slice(start, start + _ROW_CHUNK)
        lw = _log_weights(d, x[sl], s[sl], sigma[sl])
        m = lw.max(axis=1)
        lw -= m[:, None]
        w = np.exp(lw)
        w[lw < -LOG_WEIGHT_FLOOR] = 0.0
        z = w.sum(axis=1)
        y_hat[sl] = (w @ d.points) / z[:, None]
        log_z[sl] = m + np.log(z)
        max_lw[sl] = m
        if nearest_shortcut:
            top = np.argmax(w, axis=1)
            # the max-subtracted top weight is exactly 1, so its mass is 1 / z
            hit = 1.0 / z > NEAREST_SHORTCUT_MASS
            if np.any(hit):
                idx = np.nonzero(hit)[0]
                y_hat[start + idx] = d.points[top[idx]]
    return BatchEval(y_hat=y_hat, log_partition=log_z, max_log_weight=max_lw)


def eps_batch(d: Dataset, x, s, sigma, *, nearest_shortcut: bool = False) -> np.ndarray:
    """Optimal noise prediction for each row of `x`."""
    x, s, sigma = _as_batch(d, x, s, sigma)
    post = posterior_batch(d, x, s, sigma, nearest_shortcut=nearest_shortcut)
    return (x - s[:, None] * post.y_hat) / (s * sigma)[:, None]


def posterior_mean(
    d: Dataset, k: KernelParams, x, *, nearest_shortcut: bool = False
) -> tuple[np.ndarray, tuple[float, float]]:
    """Return ``(y_hat, (log_partition, max_log_weight))`` for a single query."""
    post = posterior_batch(d, x, k.s, k.sigma, nearest_shortcut=nearest_shortcut)
    return post.y_hat[0], (float(post.log_partition[0]), float(post.max_log_weight[0]))


def optimal_eps(d: Dataset, k: KernelParams, x, *, nearest_shortcut: bool = False) -> DenoiserEval:
    x = np.asarray(x, dtype=np.float64)
    y_hat, (log_z, max_lw) = posterior_mean(d, k, x, nearest_shortcut=nearest_shortcut)
    eps = (x - k.s * y_hat) / (k.s * k.sigma)
    return DenoiserEval(eps_star=eps, y_hat=y_hat, log_partition=log_z, max_log_weight=max_lw)


def score(d: Dataset, k: KernelParams, x) -> np.ndarray:
    """Gradient of the log mixture density, ``-eps* / (s sigma)``."""
    return -optimal_eps(d, k, x).eps_star / (k.s * k.sigma)


def log_density(d: Dataset, k: KernelParams, x) -> float:
    """Exact log of ``(1/N) sum_i N(x; s y_i, s^2 sigma^2 I)``."""
    _, (log_z, _) = posterior_mean(d, k, x)
    var = (k.s * k.sigma) ** 2
    return log_z - math.log(d.size) - 0.5 * d.dim * math.log(2.0 * math.pi * var)
