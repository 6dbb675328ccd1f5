"""Gaussian likelihood, voxelwise and GMRF log-priors, and hyperprior constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .kinetics import PARAM_NAMES, KineticParams
from .lattice import Lattice, local_diff_sumsq

LOG_2PI = math.log(2.0 * math.pi)


def _check_positive(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class NoiseModel:
    """Inverse-Gamma(a, b) prior on the shared noise variance sigma^2."""

    a: float
    b: float

    def __post_init__(self):
        _check_positive(self, ("a", "b"))

    def mean_precision(self) -> float:
        # 1/sigma^2 ~ Gamma(a, rate=b)
        return self.a / self.b


@dataclass(frozen=True)
class VoxelwisePriorConfig:
    """Independent Gaussian priors on every log-parameter, fixed precisions."""

    mu_theta1: float = 0.0
    mu_theta2: float = math.log(5.0)
    mu_gamma1: float = 0.0
    mu_gamma2: float = 0.0
    mu_logit_vp: float = -3.0
    tau_theta1: float = 1.0
    tau_theta2: float = 1.0
    tau_gamma1: float = 1.0
    tau_gamma2: float = 1.0
    tau_logit_vp: float = 1.0

    def __post_init__(self):
        _check_positive(self, [f.name for f in fields(self) if f.name.startswith("tau_")])

    def arrays(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        names = PARAM_NAMES[kind]
        mu = np.array([getattr(self, "mu_" + n) for n in names])
        tau = np.array([getattr(self, "tau_" + n) for n in names])
        return mu, tau


@dataclass(frozen=True)
class SpatialPriorConfig:
    """Gamma(shape a, rate b) hyperpriors on the GMRF field precisions."""

    a_theta1: float = 1000.0
    b_theta1: float = 1.0
    a_theta2: float = 1000.0
    b_theta2: float = 1.0
    a_gamma1: float = 0.0001
    b_gamma1: float = 0.01
    a_gamma2: float = 0.0001
    b_gamma2: float = 0.01
    a_logit_vp: float = 0.0001
    b_logit_vp: float = 0.01

    def __post_init__(self):
        _check_positive(self, [f.name for f in fields(self)])

    def arrays(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        names = PARAM_NAMES[kind]
        a = np.array([getattr(self, "a_" + n) for n in names])
        b = np.array([getattr(self, "b_" + n) for n in names])
        return a, b


def log_likelihood_voxel(y, ctc, tau_eps: float) -> float:
    """Gaussian log-likelihood of one voxel's curve with noise precision tau_eps."""
    y = np.asarray(y, dtype=float)
    ctc = np.asarray(ctc, dtype=float)
    if y.shape != ctc.shape:
        raise ValueError(f"series lengths differ: {y.shape} vs {ctc.shape}")
    if not tau_eps > 0:
        raise ValueError("tau_eps must be positive")
    resid = y - ctc
    n = resid.size
    return 0.5 * n * (math.log(tau_eps) - LOG_2PI) - 0.5 * tau_eps * float(np.dot(resid, resid))


def log_normal(x, mu, tau):
    """Log-density of N(mu, 1/tau), elementwise."""
    return 0.5 * (np.log(tau) - LOG_2PI) - 0.5 * tau * (np.asarray(x) - mu) ** 2


def log_prior_voxelwise(params: KineticParams, cfg: VoxelwisePriorConfig) -> float:
    mu, tau = cfg.arrays(params.kind)
    return float(np.sum(log_normal(params.as_array(), mu, tau)))


def log_prior_spatial_local(i: int, values, tau_field: float, lattice: Lattice) -> float:
    """Log full-conditional kernel of one voxel's value under the GMRF prior."""
    return -0.5 * tau_field * local_diff_sumsq(lattice, i, values)


def elicit_noise_prior(num_voxels: int, expected_peak: float, target_snr: float) -> NoiseModel:
    """Inverse-Gamma prior whose mean noise sd is expected_peak / target_snr.

    The shape grows with the voxel count so the prior tightens on larger
    images while keeping the same mean.
    """
    if num_voxels < 1:
        raise ValueError("num_voxels must be >= 1")
    if not expected_peak > 0 or not target_snr > 0:
        raise ValueError("expected_peak and target_snr must be positive")
    a = 1.0 + 0.1 * num_voxels
    b = (a - 1.0) * (expected_peak / target_snr) ** 2
    return NoiseModel(a, b)
