"""Arterial input function and closed-form tissue concentration curves.

All times are in minutes. The AIF is a bi-exponential bolus starting at
``t0``; tissue curves are the AIF convolved with one or two exponential
impulse responses, evaluated analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

ONECOMP = "1comp"
TWOCOMP = "2comp"
EXTTOFTS = "exttofts"
MODEL_KINDS = (ONECOMP, TWOCOMP, EXTTOFTS)

# log-parameter column names per model kind, in sampler order
PARAM_NAMES = {
    ONECOMP: ("theta1", "gamma1"),
    TWOCOMP: ("theta1", "theta2", "gamma1", "gamma2"),
    EXTTOFTS: ("theta1", "gamma1", "logit_vp"),
}


@dataclass(frozen=True)
class AifParams:
    """Bi-exponential arterial input function D * sum_l a_l exp(-m_l (t - t0))."""

    dose: float = 0.1
    a1: float = 3.99
    a2: float = 4.78
    m1: float = 0.144
    m2: float = 0.0111
    t0: float = 0.0

    def __post_init__(self):
        for name in ("dose", "a1", "a2", "m1", "m2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"AIF constant {name} must be positive, got {value}")
        if not (math.isfinite(self.t0) and self.t0 >= 0):
            raise ValueError(f"AIF onset t0 must be >= 0, got {self.t0}")

    def amplitudes(self) -> np.ndarray:
        return np.array([self.dose * self.a1, self.dose * self.a2])

    def rates(self) -> np.ndarray:
        return np.array([self.m1, self.m2])


def time_grid(times) -> np.ndarray:
    """Validate acquisition times and return them as a float array."""
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("time grid needs at least two acquisition times")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ValueError("acquisition times must be finite and >= 0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("acquisition times must be strictly increasing")
    return t


@dataclass(frozen=True)
class OneComp:
    theta: float
    gamma: float

    kind = ONECOMP

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.gamma])


@dataclass(frozen=True)
class TwoComp:
    """Two tissue compartments on log scale; compartment 1 is the slow one."""

    theta1: float
    theta2: float
    gamma1: float
    gamma2: float

    kind = TWOCOMP

    def ordered(self) -> "TwoComp":
        if self.theta1 <= self.theta2:
            return self
        return TwoComp(self.theta2, self.theta1, self.gamma2, self.gamma1)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.gamma1, self.gamma2])

    def volumes(self) -> "DerivedVolumes":
        return DerivedVolumes(
            math.exp(self.gamma1 - self.theta1), math.exp(self.gamma2 - self.theta2)
        )


@dataclass(frozen=True)
class ExtTofts:
    theta: float
    gamma: float
    logit_vp: float

    kind = EXTTOFTS

    @property
    def vp(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.logit_vp))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.gamma, self.logit_vp])


KineticParams = OneComp | TwoComp | ExtTofts


def params_from_array(kind: str, values) -> KineticParams:
    values = [float(v) for v in values]
    if kind == ONECOMP:
        return OneComp(*values)
    if kind == TWOCOMP:
        return TwoComp(*values)
    if kind == EXTTOFTS:
        return ExtTofts(*values)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class DerivedVolumes:
    v_t1: float
    v_t2: float


def aif_value(aif: AifParams, t):
    """Plasma concentration at time(s) ``t``; zero before the bolus onset."""
    t = np.asarray(t, dtype=float)
    u = t - aif.t0
    pos = u >= 0
    us = np.where(pos, u, 0.0)
    value = aif.dose * (aif.a1 * np.exp(-aif.m1 * us) + aif.a2 * np.exp(-aif.m2 * us))
    out = np.where(pos, value, 0.0)
    return float(out) if out.ndim == 0 else out


@njit(cache=True, nogil=True)
def _relaxed_ratio(x):
    # (1 - exp(-x)) / x, stable through x = 0
    if x == 0.0:
        return 1.0
    return -math.expm1(-x) / x


@njit(cache=True, nogil=True)
def _conv_exp_kernel(amps, rates, u, k_trans, k_ep, out):
    """Write C_p * K exp(-k t) at offsets ``u`` (time since onset) into ``out``.

    Uses exp(-m u) * u * (1 - exp(-(k - m) u)) / ((k - m) u), which equals
    (exp(-m u) - exp(-k u)) / (k - m) and stays accurate as k -> m.
    """
    n = u.shape[0]
    for j in range(n):
        uj = u[j]
        if uj <= 0.0 or k_trans == 0.0:
            out[j] = 0.0
            continue
        s = 0.0
        for l in range(amps.shape[0]):
            s += amps[l] * math.exp(-rates[l] * uj) * uj * _relaxed_ratio((k_ep - rates[l]) * uj)
        out[j] = k_trans * s


def _offsets(aif: AifParams, t) -> np.ndarray:
    return np.atleast_1d(np.asarray(t, dtype=float)) - aif.t0


def conv_exp(aif: AifParams, k_trans: float, k_ep: float, t):
    """Closed-form convolution of the AIF with ``k_trans * exp(-k_ep t)``."""
    if not math.isfinite(k_ep) or k_ep < 0:
        raise ValueError(f"k_ep must be finite and nonnegative, got {k_ep}")
    if not math.isfinite(k_trans) or k_trans < 0:
        raise ValueError(f"k_trans must be finite and nonnegative, got {k_trans}")
    u = _offsets(aif, t)
    out = np.empty_like(u)
    _conv_exp_kernel(aif.amplitudes(), aif.rates(), u, float(k_trans), float(k_ep), out)
    return float(out[0]) if np.ndim(t) == 0 else out


def conv_exp_quadrature(aif: AifParams, k_trans: float, k_ep: float, t: float,
                        tol: float = 1e-10, limit: int = 200) -> float:
    """Adaptive-quadrature evaluation of the same convolution integral.

    Kept independent of the closed form; used as a reference in tests.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t = float(t)
    if t <= aif.t0 or k_trans == 0:
        return 0.0

    d, t0 = aif.dose, aif.t0

    def integrand(s):
        plasma = d * (aif.a1 * math.exp(-aif.m1 * (s - t0)) + aif.a2 * math.exp(-aif.m2 * (s - t0)))
        return plasma * k_trans * math.exp(-k_ep * (t - s))

    value, err, info = integrate.quad(
        integrand, aif.t0, t, epsabs=tol, epsrel=0.0, limit=limit, full_output=True
    )[:3]
    if err > tol:
        raise RuntimeError(
            f"quadrature did not converge: error estimate {err:.3g} > {tol:.3g}"
        )
    return value


@njit(cache=True, nogil=True)
def _component_curve(kind, comp, row, amps, rates, u, cp, out):
    """Fill ``out`` with component ``comp`` of the curve for log-params ``row``.

    kind: 0 = 1comp, 1 = 2comp, 2 = exttofts. For exttofts component 1 is the
    plasma term v_p * C_p.
    """
    if kind == 0:
        _conv_exp_kernel(amps, rates, u, math.exp(row[1]), math.exp(row[0]), out)
    elif kind == 1:
        # columns: theta1, theta2, gamma1, gamma2
        _conv_exp_kernel(amps, rates, u, math.exp(row[2 + comp]), math.exp(row[comp]), out)
    else:
        if comp == 0:
            _conv_exp_kernel(amps, rates, u, math.exp(row[1]), math.exp(row[0]), out)
        else:
            vp = 1.0 / (1.0 + math.exp(-row[2]))
            for j in range(u.shape[0]):
                out[j] = vp * cp[j]


KIND_CODES = {ONECOMP: 0, TWOCOMP: 1, EXTTOFTS: 2}
N_COMPONENTS = {ONECOMP: 1, TWOCOMP: 2, EXTTOFTS: 2}
# which cached component each log-parameter column feeds
PARAM_COMPONENT = {
    ONECOMP: np.array([0, 0]),
    TWOCOMP: np.array([0, 1, 0, 1]),
    EXTTOFTS: np.array([0, 0, 1]),
}


def model_ctc(params: KineticParams, aif: AifParams, times) -> np.ndarray:
    """Tissue concentration curve on ``times`` for any model variant."""
    t = np.asarray(times, dtype=float)
    u = t - aif.t0
    cp = np.asarray(aif_value(aif, t), dtype=float).reshape(t.shape)
    row = params.as_array()
    code = KIND_CODES[params.kind]
    total = np.zeros_like(u)
    part = np.empty_like(u)
    for comp in range(N_COMPONENTS[params.kind]):
        _component_curve(code, comp, row, aif.amplitudes(), aif.rates(), u, cp, part)
        total += part
    return total
