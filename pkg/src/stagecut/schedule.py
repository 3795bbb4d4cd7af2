"""Perturbation-kernel schedules.

A schedule maps time ``t`` to the pair ``(s_t, sigma_t)`` of the kernel
``p_t(x_t | x_0) = N(x_t; s_t x_0, s_t^2 sigma_t^2 I)``. Two families are
provided:

* VP (variance preserving), with ``B(t) = beta_d t^2 / 2 + beta_min t``,
  ``s(t) = exp(-B/2)`` and ``sigma(t) = sqrt(exp(B) - 1)``, so that
  ``s^2 (1 + sigma^2) = 1``.
* VE (variance exploding), with ``s = 1`` and a geometric ``sigma(t)``.

The SNR used throughout is ``1 / sigma(t)^2``.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Union

import numpy as np

from stagecut.errors import DomainError


@dataclasses.dataclass(frozen=True)
class VpSchedule:
    beta_d: float = 19.9
    beta_min: float = 0.1
    t_min: float = 1e-3

    def __post_init__(self):
        if not self.beta_d > 0:
            raise ValueError(f"beta_d must be > 0, got {self.beta_d}")
        if not self.beta_min >= 0:
            raise ValueError(f"beta_min must be >= 0, got {self.beta_min}")
        if not 0 < self.t_min < 1:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")

    @property
    def t_lo(self) -> float:
        return self.t_min

    # Closed forms below accept any t >= 0 (including the t = 0 limit) and
    # broadcast over arrays; the module-level operations enforce the domain.
    def integrated_beta(self, t):
        return 0.5 * self.beta_d * np.square(t) + self.beta_min * np.asarray(t)

    def s(self, t):
        return np.exp(-0.5 * self.integrated_beta(t))

    def sigma(self, t):
        return np.sqrt(np.expm1(self.integrated_beta(t)))

    def drift(self, t):
        return -0.5 * (self.beta_d * np.asarray(t) + self.beta_min)

    def diffusion_sq(self, t):
        return self.beta_d * np.asarray(t) + self.beta_min


@dataclasses.dataclass(frozen=True)
class VeSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 100.0

    def __post_init__(self):
        if not self.sigma_min > 0:
            raise ValueError(f"sigma_min must be > 0, got {self.sigma_min}")
        if not self.sigma_max > self.sigma_min:
            raise ValueError(
                f"sigma_max must exceed sigma_min, got {self.sigma_max} <= {self.sigma_min}"
            )

    @property
    def t_lo(self) -> float:
        return 0.0

    def s(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def sigma(self, t):
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** np.asarray(t, dtype=float)


NoiseSchedule = Union[VpSchedule, VeSchedule]


@dataclasses.dataclass(frozen=True)
class KernelParams:
    s: float
    sigma: float
    t: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"s must be > 0, got {self.s}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def _check_time(schedule: NoiseSchedule, t: float) -> float:
    t = float(t)
    if not schedule.t_lo <= t <= 1.0:
        raise DomainError(f"t={t!r} outside [{schedule.t_lo}, 1]")
    return t


def kernel_at(schedule: NoiseSchedule, t: float) -> KernelParams:
    t = _check_time(schedule, t)
    return KernelParams(s=float(schedule.s(t)), sigma=float(schedule.sigma(t)), t=t)


def snr(schedule: NoiseSchedule, t: float) -> float:
    """Signal-to-noise ratio ``1 / sigma(t)^2``; strictly decreasing in t."""
    t = _check_time(schedule, t)
    if isinstance(schedule, VpSchedule):
        return 1.0 / math.expm1(float(schedule.integrated_beta(t)))
    return 1.0 / float(schedule.sigma(t)) ** 2


def t_of_snr(schedule: NoiseSchedule, target: float, *, tol: float = 1e-12) -> float:
    """Invert :func:`snr` by bisection on ``[t_lo, 1]``."""
    lo, hi = schedule.t_lo, 1.0
    snr_lo = snr(schedule, lo)
    snr_hi = snr(schedule, hi)
    if not snr_hi <= target <= snr_lo:
        raise DomainError(f"SNR target {target!r} outside [{snr_hi}, {snr_lo}]")
    if target == snr_lo:
        return lo
    if target == snr_hi:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if snr(schedule, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ve_sigma_equivalent(vp: VpSchedule, t: float) -> float:
    """VE noise level whose SNR equals the VP SNR at time t."""
    t = _check_time(vp, t)
    return float(vp.sigma(t))


def drift_diffusion(vp: VpSchedule, t: float) -> tuple[float, float]:
    """Forward-SDE coefficients ``(f(t), g(t)^2)`` of the VP schedule."""
    t = _check_time(vp, t)
    return float(vp.drift(t)), float(vp.diffusion_sq(t))


def schedule_table(schedule: NoiseSchedule, points: int) -> np.ndarray:
    """Rows ``(t, s, sigma, snr)`` on a uniform grid over ``[t_lo, 1]``."""
    if points < 2:
        raise ValueError(f"points must be >= 2, got {points}")
    ts = np.linspace(schedule.t_lo, 1.0, points)
    rows = []
    for t in ts:
        k = kernel_at(schedule, t)
        ratio = snr(schedule, t) if k.sigma > 0 else math.inf
        rows.append((k.t, k.s, k.sigma, ratio))
    return np.array(rows)
