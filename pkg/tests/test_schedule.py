import math

import numpy as np
import pytest

from stagecut.errors import DomainError
from stagecut.schedule import (
    VeSchedule,
    VpSchedule,
    drift_diffusion,
    kernel_at,
    schedule_table,
    snr,
    t_of_snr,
    ve_sigma_equivalent,
)

# 40-digit mpmath evaluations of the closed forms at the default VP parameters
S_AT_1 = 0.006571586494929615014
SIGMA_AT_1 = 152.1669702839464719207
SNR_AT_1 = 4.318761414980849145e-05
SNR_AT_TMIN = 9094.543210617706910
SIGMA_AT_0442 = 2.510267224975468458
T_SIGMA_ONE = 0.2589602624327965873


def quadratic_t(vp, target):
    """Closed-form inverse of the VP SNR: solve B(t) = log(1 + 1/target)."""
    b = math.log1p(1.0 / target)
    return (-vp.beta_min + math.sqrt(vp.beta_min**2 + 2 * vp.beta_d * b)) / vp.beta_d


def test_vp_limit_at_zero(vp):
    assert vp.s(0.0) == 1.0
    assert vp.sigma(0.0) == 0.0


def test_kernel_at_one(vp):
    k = kernel_at(vp, 1.0)
    assert k.s == pytest.approx(S_AT_1, rel=1e-13)
    assert k.sigma == pytest.approx(SIGMA_AT_1, rel=1e-13)
    assert float(vp.integrated_beta(1.0)) == pytest.approx(10.05, rel=1e-15)


def test_ve_midpoint():
    k = kernel_at(VeSchedule(0.01, 100.0), 0.5)
    assert k.s == 1.0
    assert k.sigma == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("t", [-0.1, 0.0, 5e-4, 1.0 + 1e-9])
def test_vp_domain(vp, t):
    with pytest.raises(DomainError):
        kernel_at(vp, t)
    with pytest.raises(DomainError):
        snr(vp, t)


def test_ve_domain():
    with pytest.raises(DomainError):
        kernel_at(VeSchedule(), 1.5)


def test_snr_values(vp):
    assert snr(vp, 1e-3) == pytest.approx(SNR_AT_TMIN, rel=1e-12)
    assert snr(vp, 1.0) == pytest.approx(SNR_AT_1, rel=1e-12)
    t_one = quadratic_t(vp, 1.0)
    assert snr(vp, t_one) == pytest.approx(1.0, rel=1e-12)
    assert snr(VeSchedule(0.01, 100.0), 0.5) == pytest.approx(1.0, rel=1e-13)


def test_variance_preservation_grid(vp):
    ts = np.linspace(vp.t_min, 1.0, 1000)
    s, sigma = vp.s(ts), vp.sigma(ts)
    assert np.max(np.abs(s**2 * (1 + sigma**2) - 1)) <= 1e-12


def test_snr_strictly_decreasing(vp):
    ts = np.linspace(vp.t_min, 1.0 - 1e-4, 1000)
    assert all(snr(vp, t + 1e-4) < snr(vp, t) for t in ts)


def test_t_of_snr_examples(vp):
    assert t_of_snr(vp, snr(vp, 0.5)) == pytest.approx(0.5, abs=1e-9)
    assert t_of_snr(vp, snr(vp, vp.t_min)) == vp.t_min
    assert t_of_snr(vp, 1.0) == pytest.approx(T_SIGMA_ONE, abs=1e-9)
    assert quadratic_t(vp, 1.0) == pytest.approx(T_SIGMA_ONE, abs=1e-14)


def test_t_of_snr_round_trip_random(vp):
    rng = np.random.default_rng(0)
    for t in rng.uniform(vp.t_min, 1.0, 100):
        target = snr(vp, t)
        back = t_of_snr(vp, target)
        assert abs(back - t) <= 1e-9
        assert abs(back - quadratic_t(vp, target)) <= 1e-9
        assert abs(snr(vp, back) - target) / target <= 1e-9


def test_t_of_snr_out_of_range(vp):
    with pytest.raises(DomainError):
        t_of_snr(vp, snr(vp, 1.0) / 2)
    with pytest.raises(DomainError):
        t_of_snr(vp, snr(vp, vp.t_min) * 2)


def test_ve_sigma_equivalent(vp):
    assert ve_sigma_equivalent(vp, 0.442) == pytest.approx(SIGMA_AT_0442, rel=1e-13)
    assert float(vp.integrated_beta(0.442)) == pytest.approx(1.9880718, rel=1e-14)
    assert ve_sigma_equivalent(vp, quadratic_t(vp, 1.0)) == pytest.approx(1.0, rel=1e-12)
    assert ve_sigma_equivalent(vp, 1.0) == pytest.approx(SIGMA_AT_1, rel=1e-13)
    # equal SNR across families
    ve = VeSchedule(0.01, 100.0)
    sigma = ve_sigma_equivalent(vp, 0.442)
    t_ve = math.log(sigma / ve.sigma_min) / math.log(ve.sigma_max / ve.sigma_min)
    assert snr(ve, t_ve) == pytest.approx(snr(vp, 0.442), rel=1e-12)


def test_drift_diffusion_values(vp):
    assert float(vp.drift(0.0)) == pytest.approx(-0.05)
    assert float(vp.diffusion_sq(0.0)) == pytest.approx(0.1)
    f, g2 = drift_diffusion(vp, 1.0)
    assert f == pytest.approx(-10.0, rel=1e-15)
    assert g2 == pytest.approx(20.0, rel=1e-15)


@pytest.mark.parametrize("t", np.linspace(0.01, 0.99, 25))
def test_drift_diffusion_finite_differences(vp, t):
    h = 1e-5
    f, g2 = drift_diffusion(vp, t)
    dlog_s = (np.log(vp.s(t + h)) - np.log(vp.s(t - h))) / (2 * h)
    dsig2 = (vp.sigma(t + h) ** 2 - vp.sigma(t - h) ** 2) / (2 * h)
    assert dlog_s == pytest.approx(f, rel=1e-6)
    assert vp.s(t) ** 2 * dsig2 == pytest.approx(g2, rel=1e-6)


def test_schedule_table_columns(vp):
    table = schedule_table(vp, 11)
    assert table.shape == (11, 4)
    assert table[0, 0] == vp.t_min and table[-1, 0] == 1.0
    assert np.allclose(table[:, 3], 1 / table[:, 2] ** 2, rtol=1e-12)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        VpSchedule(beta_d=0)
    with pytest.raises(ValueError):
        VpSchedule(t_min=0)
    with pytest.raises(ValueError):
        VeSchedule(sigma_min=1.0, sigma_max=0.5)
