import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from spatialpk.kinetics import OneComp, TwoComp
from spatialpk.lattice import build_lattice, pair_diff_sumsq
from spatialpk.model import (
    NoiseModel,
    SpatialPriorConfig,
    VoxelwisePriorConfig,
    elicit_noise_prior,
    log_likelihood_voxel,
    log_prior_spatial_local,
    log_prior_voxelwise,
)


def test_loglik_zero_residual():
    assert log_likelihood_voxel([0.3], [0.3], 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_loglik_residual_doubling():
    rng = np.random.default_rng(1)
    ctc = rng.normal(size=12)
    eps = rng.normal(size=12)
    tau = 3.0
    drop = log_likelihood_voxel(ctc + eps, ctc, tau) - log_likelihood_voxel(ctc + 2 * eps, ctc, tau)
    assert drop == pytest.approx(0.5 * tau * 3 * np.sum(eps ** 2), rel=1e-12)


def test_loglik_rejects_mismatch():
    with pytest.raises(ValueError):
        log_likelihood_voxel([1.0, 2.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        log_likelihood_voxel([1.0], [1.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.floats(0.1, 50), st.integers(0, 2**32 - 1))
def test_loglik_density_product(n, tau, seed):
    rng = np.random.default_rng(seed)
    # residuals on the noise scale keep the density product out of the subnormal range
    ctc = rng.normal(size=n)
    y = ctc + rng.normal(size=n) / math.sqrt(tau)
    oracle = math.log(np.prod(stats.norm.pdf(y, loc=ctc, scale=1 / math.sqrt(tau))))
    assert log_likelihood_voxel(y, ctc, tau) == pytest.approx(oracle, rel=1e-12, abs=1e-12)


def test_loglik_score_equation():
    rng = np.random.default_rng(2)
    eps = rng.normal(0, 0.1, size=40)
    res = optimize.minimize_scalar(lambda lt: -log_likelihood_voxel(eps, np.zeros(40), math.exp(lt)),
                                   bounds=(-5, 10), method="bounded", options={"xatol": 1e-10})
    assert math.exp(res.x) == pytest.approx(40 / np.sum(eps ** 2), rel=1e-6)


def test_voxelwise_prior_at_means():
    cfg = VoxelwisePriorConfig()
    p = TwoComp(0.0, math.log(5.0), 0.0, 0.0)
    assert log_prior_voxelwise(p, cfg) == pytest.approx(4 * 0.5 * math.log(1 / (2 * math.pi)))


def test_voxelwise_prior_caps_rates():
    # mass of k_ep1 = exp(theta1) below 20 under N(0, 1)
    assert stats.norm.cdf(math.log(20)) == pytest.approx(0.9986, abs=5e-5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_voxelwise_prior_density_product(v):
    cfg = VoxelwisePriorConfig(tau_theta1=2.0, tau_gamma2=0.5)
    mu, tau = cfg.arrays("2comp")
    oracle = math.log(np.prod(stats.norm.pdf(v, loc=mu, scale=1 / np.sqrt(tau))))
    assert log_prior_voxelwise(TwoComp(*v), cfg) == pytest.approx(oracle, rel=1e-12)
    one = OneComp(v[0], v[1])
    oracle1 = stats.norm.logpdf(v[0], 0, 1) + stats.norm.logpdf(v[1], 0, 1)
    assert log_prior_voxelwise(one, VoxelwisePriorConfig()) == pytest.approx(oracle1, rel=1e-12)


def test_spatial_kernel_examples():
    lat = build_lattice(3, 3)
    flat = np.full(9, 0.7)
    assert log_prior_spatial_local(4, flat, 5.0, lat) == 0.0
    field = np.random.default_rng(3).normal(size=9)
    assert log_prior_spatial_local(4, field, 2.0, lat) == pytest.approx(
        2 * log_prior_spatial_local(4, field, 1.0, lat))


def test_spatial_kernel_conjugate_gaussian():
    lat = build_lattice(3, 3)
    field = np.random.default_rng(4).normal(size=9)
    tau = 3.0
    for i in (0, 1, 4):
        nbrs = lat.neighbours(i)
        grid = np.linspace(-6, 6, 20001)
        logk = []
        for x in grid:
            f = field.copy()
            f[i] = x
            logk.append(log_prior_spatial_local(i, f, tau, lat))
        w = np.exp(np.array(logk) - max(logk))
        w /= np.trapezoid(w, grid)
        mean = np.trapezoid(grid * w, grid)
        var = np.trapezoid((grid - mean) ** 2 * w, grid)
        assert mean == pytest.approx(field[nbrs].mean(), abs=1e-6)
        assert 1 / var == pytest.approx(tau * nbrs.size, rel=1e-5)


def test_spatial_kernel_double_counts_edges():
    lat = build_lattice(4, 5)
    field = np.random.default_rng(5).normal(size=20)
    total = sum(log_prior_spatial_local(i, field, 1.7, lat) for i in range(20))
    assert total == pytest.approx(2 * (-0.5 * 1.7 * pair_diff_sumsq(lat, field)), rel=1e-12)


def test_elicitation_example():
    prior = elicit_noise_prior(10, 0.75, 15)
    assert prior.a == pytest.approx(2.0)
    assert prior.b == pytest.approx(0.0025)
    assert math.sqrt(prior.b / (prior.a - 1)) == pytest.approx(0.05)


@pytest.mark.parametrize("n", [1, 7, 625, 10000])
@pytest.mark.parametrize("snr", [10.0, 15.0, 20.0])
def test_elicited_mean_invariant_to_voxel_count(n, snr):
    prior = elicit_noise_prior(n, 0.85, snr)
    assert prior.b / (prior.a - 1) == pytest.approx((0.85 / snr) ** 2, rel=1e-12)


@pytest.mark.parametrize("args", [(0, 1.0, 15.0), (5, 0.0, 15.0), (5, 1.0, -1.0)])
def test_elicitation_rejects_nonpositive(args):
    with pytest.raises(ValueError):
        elicit_noise_prior(*args)


def test_config_validation():
    with pytest.raises(ValueError):
        NoiseModel(0.0, 1.0)
    with pytest.raises(ValueError):
        VoxelwisePriorConfig(tau_theta2=-1.0)
    with pytest.raises(ValueError):
        SpatialPriorConfig(a_theta1=0.0)
    a, b = SpatialPriorConfig().arrays("2comp")
    assert list(a) == [1000, 1000, 1e-4, 1e-4] and list(b) == [1, 1, 0.01, 0.01]
